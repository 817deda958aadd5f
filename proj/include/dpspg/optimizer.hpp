#pragma once

#include "dpspg/common.hpp"
#include "dpspg/param_store.hpp"

#include <map>

namespace dpspg {

// Cosine-annealed learning rate with an optional linear warm-up ramp from
// warmup_lr to base_lr over the first warmup_steps steps. After warm-up,
// lr(t) = 0.5 * base_lr * (1 + cos(pi * t' / T')) with lr_min = 0.
struct CosineSchedule {
    double base_lr = 0.0;
    long total_steps = 1;
    long warmup_steps = 0;
    double warmup_lr = 0.0;

    double lr_at(long step) const;
};

enum class OptimizerKind { SgdCosine, AdamW };

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::SgdCosine;
    CosineSchedule schedule;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    struct Moments {
        Matrix m;
        Matrix v;
    };
    std::map<std::string, Moments> moments;  // AdamW only, keyed by entry name
};

OptimizerState make_sgd_cosine(double base_lr, long total_steps);
OptimizerState make_adamw(double base_lr, long total_steps, long warmup_steps, double warmup_lr,
                          double weight_decay, double beta1 = 0.9, double beta2 = 0.999);

// Applies one update to every unfrozen entry using its populated gradient,
// then clears gradients. step_index counts from 0; AdamW bias correction
// uses t = step_index + 1.
void optimizer_step(ParamStore& params, OptimizerState& state, long step_index);

}  // namespace dpspg
