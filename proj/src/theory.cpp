#include "dpspg/theory.hpp"

#include "dpspg/ops.hpp"

#include <cmath>
#include <sstream>

namespace dpspg::theory {

MarginReport margin_report(const Vector& s_pos, const Vector& s_neg, int true_class, double alpha) {
    const Eigen::Index k = s_pos.size();
    if (k < 2) throw InvalidInputError("margin_report: need at least 2 classes");
    if (s_neg.size() != k) throw InvalidShapeError("margin_report: score length mismatch");
    if (true_class < 0 || true_class >= k) throw InvalidInputError("margin_report: label out of range");

    MarginReport r;
    r.true_class = true_class;
    r.alpha = alpha;
    const Vector g = s_pos - alpha * s_neg;
    r.delta_constraint = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < k; ++i) {
        if (i == true_class) continue;
        r.incorrect_class.push_back(static_cast<int>(i));
        const double dp = s_pos(true_class) - s_pos(i);
        const double dc = g(true_class) - g(i);
        const double gap = s_neg(i) - s_neg(true_class);
        r.delta_plus.push_back(dp);
        r.delta_combined.push_back(dc);
        r.neg_gap.push_back(gap);
        r.delta_constraint = std::min(r.delta_constraint, gap);
        r.max_identity_error = std::max(r.max_identity_error, std::abs(dc - (dp + alpha * gap)));
    }
    r.bound_satisfied = true;
    for (std::size_t j = 0; j < r.delta_combined.size(); ++j) {
        // implied algebraically whenever neg_gap_j >= delta; asserted numerically
        if (r.neg_gap[j] >= r.delta_constraint &&
            r.delta_combined[j] < r.delta_plus[j] + alpha * r.delta_constraint - 1e-12) {
            r.bound_satisfied = false;
        }
    }
    return r;
}

JacobianReport binary_jacobian_bound_check(double delta, double tau) {
    if (!(tau > 0.0)) throw InvalidParameterError("binary_jacobian_bound_check: tau must be positive");
    JacobianReport r;
    r.margin = delta;
    const double z = delta / tau;
    // f_i = 1/(1+e^z) computed stably for either sign of z
    const double f_i = z >= 0.0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
    const double f_y = 1.0 - f_i;
    r.analytic_norm = f_y * f_i / tau;
    r.bound = std::exp(-z) / tau;
    r.bound_holds = r.analytic_norm <= r.bound + 1e-15;
    return r;
}

Vector binary_softmax_pair(const Vector& logits, int y, int i, double tau) {
    Vector two(2);
    two(0) = logits(y);
    two(1) = logits(i);
    return ops::softmax(two, tau);
}

namespace {

// Central-difference gradient of a scalar function of x.
Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double eps) {
    Vector g(x.size());
    Vector xp = x;
    for (Eigen::Index d = 0; d < x.size(); ++d) {
        const double orig = xp(d);
        xp(d) = orig + eps;
        const double up = f(xp);
        xp(d) = orig - eps;
        const double down = f(xp);
        xp(d) = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericFailureError("input_jacobian_report: non-finite finite-difference probe");
        }
        g(d) = (up - down) / (2.0 * eps);
    }
    return g;
}

}  // namespace

JacobianReport input_jacobian_report(const LogitFn& pipeline, const Vector& x, int y, int i,
                                     double tau, double fd_eps, int l_probe_count,
                                     std::uint64_t probe_seed) {
    const Vector g0 = pipeline(x);
    if (y < 0 || i < 0 || y >= g0.size() || i >= g0.size() || y == i) {
        throw InvalidInputError("input_jacobian_report: bad class pair");
    }
    JacobianReport r;
    r.margin = g0(y) - g0(i);

    const Vector f0 = binary_softmax_pair(g0, y, i, tau);
    r.analytic_norm = f0(0) * f0(1) / tau;
    r.bound = std::exp(-r.margin / tau) / tau;

    auto f_y_of = [&](const Vector& q) { return binary_softmax_pair(pipeline(q), y, i, tau)(0); };
    r.fd_norm = fd_gradient(f_y_of, x, fd_eps).norm();

    // empirical Lipschitz estimate of the binary logit gap x -> g_y - g_i
    auto gap_of = [&](const Vector& q) {
        const Vector g = pipeline(q);
        return g(y) - g(i);
    };
    Rng rng(probe_seed);
    double l_max = fd_gradient(gap_of, x, fd_eps).norm();
    for (int p = 0; p < l_probe_count; ++p) {
        Vector probe = x + 0.1 * rng.gaussian_matrix(x.size(), 1);
        l_max = std::max(l_max, fd_gradient(gap_of, probe, fd_eps).norm());
    }
    r.l_estimate = l_max;
    r.lipschitz_bound = l_max * std::exp(-r.margin / tau) / tau;
    // diagnostic only: L is an empirical max, not a certified constant
    r.bound_holds = r.fd_norm <= r.lipschitz_bound + 1e-9;
    return r;
}

std::vector<double> linearization_ratios(const LogitFn& pipeline, const Vector& x, int y, int i,
                                         double tau, double step, int n_directions,
                                         std::uint64_t seed) {
    auto f_pair = [&](const Vector& q) { return binary_softmax_pair(pipeline(q), y, i, tau); };
    const Vector f0 = f_pair(x);

    // FD Jacobian of the 2-vector f at x
    Matrix jac(2, x.size());
    {
        Vector xp = x;
        const double eps = 1e-5;
        for (Eigen::Index d = 0; d < x.size(); ++d) {
            const double orig = xp(d);
            xp(d) = orig + eps;
            const Vector up = f_pair(xp);
            xp(d) = orig - eps;
            const Vector down = f_pair(xp);
            xp(d) = orig;
            jac.col(d) = (up - down) / (2.0 * eps);
        }
    }

    Rng rng(seed);
    std::vector<double> ratios;
    for (int t = 0; t < n_directions; ++t) {
        Vector u = rng.gaussian_matrix(x.size(), 1);
        u /= u.norm();
        auto residual = [&](double h) {
            const Vector fx = f_pair(x + h * u);
            return (fx - f0 - jac * (h * u)).norm();
        };
        const double r_full = residual(step);
        const double r_half = residual(step / 2.0);
        if (r_half > 1e-13) {  // below this the quotient is round-off noise
            ratios.push_back(r_full / r_half);
        }
    }
    return ratios;
}

std::string checks_to_csv(const std::vector<CheckRow>& rows, std::uint64_t config_hash) {
    std::ostringstream os;
    os << "# config_hash=" << to_hex(config_hash) << "\n";
    os << "check,params,lhs,rhs,pass\n";
    for (const CheckRow& r : rows) {
        os << r.check << "," << r.params << "," << fmt_double(r.lhs) << "," << fmt_double(r.rhs)
           << "," << (r.pass ? "1" : "0") << "\n";
    }
    return os.str();
}

}  // namespace dpspg::theory
