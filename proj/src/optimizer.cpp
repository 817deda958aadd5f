#include "dpspg/optimizer.hpp"

#include <cmath>

namespace dpspg {

double CosineSchedule::lr_at(long step) const {
    if (!(base_lr >= 0.0)) throw InvalidParameterError("CosineSchedule: negative base_lr");
    if (total_steps <= 0) throw InvalidParameterError("CosineSchedule: total_steps must be positive");
    if (warmup_steps > 0 && step < warmup_steps) {
        const double frac = static_cast<double>(step) / static_cast<double>(warmup_steps);
        return warmup_lr + (base_lr - warmup_lr) * frac;
    }
    const long t = std::min(step, total_steps) - warmup_steps;
    const long horizon = total_steps - warmup_steps;
    if (horizon <= 0) return base_lr;
    const double phase = M_PI * static_cast<double>(t) / static_cast<double>(horizon);
    return 0.5 * base_lr * (1.0 + std::cos(phase));
}

OptimizerState make_sgd_cosine(double base_lr, long total_steps) {
    OptimizerState s;
    s.kind = OptimizerKind::SgdCosine;
    s.schedule = CosineSchedule{base_lr, total_steps, 0, 0.0};
    return s;
}

OptimizerState make_adamw(double base_lr, long total_steps, long warmup_steps, double warmup_lr,
                          double weight_decay, double beta1, double beta2) {
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
        throw InvalidParameterError("make_adamw: betas must lie in (0, 1)");
    }
    if (weight_decay < 0.0) throw InvalidParameterError("make_adamw: negative weight decay");
    OptimizerState s;
    s.kind = OptimizerKind::AdamW;
    s.schedule = CosineSchedule{base_lr, total_steps, warmup_steps, warmup_lr};
    s.weight_decay = weight_decay;
    s.beta1 = beta1;
    s.beta2 = beta2;
    return s;
}

void optimizer_step(ParamStore& params, OptimizerState& state, long step_index) {
    if (step_index < 0) throw InvalidParameterError("optimizer_step: negative step index");
    const double lr = state.schedule.lr_at(step_index);
    if (lr < 0.0) throw NumericFailureError("optimizer_step: negative scheduled lr");

    params.for_each_mutable([&](const std::string& name, ParamStore::Entry& e) {
        if (e.frozen) return;
        if (!e.grad) throw InvalidStateError("optimizer_step: missing gradient for " + name);
        const Matrix& g = *e.grad;
        require_finite(g, name.c_str());
        switch (state.kind) {
            case OptimizerKind::SgdCosine: {
                e.value -= lr * g;
                break;
            }
            case OptimizerKind::AdamW: {
                auto [it, inserted] = state.moments.try_emplace(name);
                if (inserted) {
                    it->second.m = Matrix::Zero(e.value.rows(), e.value.cols());
                    it->second.v = Matrix::Zero(e.value.rows(), e.value.cols());
                }
                auto& mo = it->second;
                if (mo.m.rows() != e.value.rows() || mo.m.cols() != e.value.cols()) {
                    throw InvalidShapeError("optimizer_step: moment shape mismatch for " + name);
                }
                const double t = static_cast<double>(step_index + 1);
                mo.m = state.beta1 * mo.m + (1.0 - state.beta1) * g;
                mo.v = state.beta2 * mo.v.array().matrix() + (1.0 - state.beta2) * g.cwiseProduct(g);
                const double bc1 = 1.0 - std::pow(state.beta1, t);
                const double bc2 = 1.0 - std::pow(state.beta2, t);
                const Matrix mhat = mo.m / bc1;
                const Matrix vhat = mo.v / bc2;
                e.value.array() -= lr * (mhat.array() / (vhat.array().sqrt() + state.eps) +
                                         state.weight_decay * e.value.array());
                break;
            }
        }
        require_finite(e.value, name.c_str());
        e.grad.reset();
    });
}

}  // namespace dpspg
