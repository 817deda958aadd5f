#include "dpspg/grad_check.hpp"

#include <cmath>
#include <vector>

namespace dpspg {

double grad_check(const LossFn& loss_fn, ParamStore& params, double epsilon,
                  const GradCheckOptions& options) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
        throw InvalidParameterError("grad_check: epsilon must lie in [1e-7, 1e-3]");
    }
    params.zero_grads();
    const double base_loss = loss_fn(params, /*want_grad=*/true);
    if (!std::isfinite(base_loss)) throw NumericFailureError("grad_check: non-finite loss");

    // Snapshot analytic gradients before the perturbation sweeps reset them.
    std::vector<std::pair<std::string, Matrix>> analytic;
    params.for_each([&](const std::string& name, const ParamStore::Entry& e) {
        if (e.frozen) return;
        if (!e.grad) throw InvalidStateError("grad_check: loss_fn left no gradient on " + name);
        analytic.emplace_back(name, *e.grad);
    });

    Rng rng(options.seed);
    double worst = 0.0;
    for (const auto& [name, g] : analytic) {
        const Eigen::Index n = g.size();
        std::vector<Eigen::Index> coords;
        if (n <= options.max_coords_per_param) {
            for (Eigen::Index i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (int i = 0; i < options.max_coords_per_param; ++i) {
                coords.push_back(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
            }
        }
        Matrix& value = params.mutable_value(name);
        for (const Eigen::Index c : coords) {
            const double original = value.data()[c];
            value.data()[c] = original + epsilon;
            params.zero_grads();
            const double up = loss_fn(params, /*want_grad=*/false);
            value.data()[c] = original - epsilon;
            params.zero_grads();
            const double down = loss_fn(params, /*want_grad=*/false);
            value.data()[c] = original;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericFailureError("grad_check: non-finite loss during perturbation");
            }
            const double fd = (up - down) / (2.0 * epsilon);
            const double an = g.data()[c];
            const double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
            worst = std::max(worst, rel);
        }
    }
    params.zero_grads();
    return worst;
}

}  // namespace dpspg
