#pragma once

#include "dpspg/common.hpp"
#include "dpspg/param_store.hpp"

#include <functional>

namespace dpspg {

// Loss callback: evaluates the scalar loss; when want_grad is true it must
// also populate gradients for every unfrozen entry of the store.
using LossFn = std::function<double(ParamStore&, bool want_grad)>;

struct GradCheckOptions {
    int max_coords_per_param = 25;  // coordinates sampled per entry
    std::uint64_t seed = 1;
};

// Central finite-difference oracle for analytic gradients. Returns the max
// over sampled coordinates of |analytic - fd| / max(1, |analytic|, |fd|).
double grad_check(const LossFn& loss_fn, ParamStore& params, double epsilon,
                  const GradCheckOptions& options = {});

}  // namespace dpspg
