#pragma once

#include "dpspg/common.hpp"

#include <functional>
#include <string>
#include <vector>

namespace dpspg::theory {

// Per-incorrect-class margin bookkeeping for one score tuple. delta_combined
// always equals delta_plus - alpha * (s-_y - s-_i) by rearrangement; the
// bound check evaluates the margin-enhancement inequality with the measured
// separation delta = min_i neg_gap_i.
struct MarginReport {
    int true_class = 0;
    double alpha = 0.0;
    std::vector<int> incorrect_class;
    std::vector<double> delta_plus;      // s+_y - s+_i
    std::vector<double> delta_combined;  // g_y - g_i
    std::vector<double> neg_gap;         // s-_i - s-_y
    double delta_constraint = 0.0;       // min over incorrect classes of neg_gap
    bool bound_satisfied = false;        // Delta_i >= Delta+_i + alpha*delta for all i
    double max_identity_error = 0.0;     // max |Delta_i - (Delta+_i + alpha*neg_gap_i)|
};

MarginReport margin_report(const Vector& s_pos, const Vector& s_neg, int true_class, double alpha);

// Binary-case softmax Jacobian facts: |df_y/dg_i| = (1/tau) f_y f_i with
// f_i = 1/(1 + exp(delta/tau)), against the exponential decay bound
// (1/tau) exp(-delta/tau).
struct JacobianReport {
    double analytic_norm = 0.0;
    double fd_norm = 0.0;
    double bound = 0.0;            // (1/tau) exp(-delta/tau)
    double lipschitz_bound = 0.0;  // (L/tau) exp(-delta/tau), empirical L
    double l_estimate = 0.0;
    double margin = 0.0;
    bool bound_holds = false;
};

JacobianReport binary_jacobian_bound_check(double delta, double tau);

// Full input-space diagnostics against a trained pipeline x -> logits g.
// The binary reduction restricts to classes (y, i); norms are measured by
// central finite differences; L is the empirical max gradient norm of
// g_y - g_i over `l_probe_count` seeded probe points near x.
using LogitFn = std::function<Vector(const Vector&)>;

JacobianReport input_jacobian_report(const LogitFn& pipeline, const Vector& x, int y, int i,
                                     double tau, double fd_eps = 1e-5, int l_probe_count = 8,
                                     std::uint64_t probe_seed = 1);

// First-order linearization residual r(t) = ||f(x + t u) - f(x) - J (t u)||
// for the binary softmax output; returns r(t)/r(t/2) ratios for seeded
// directions (second-order behavior gives ratios near 4).
std::vector<double> linearization_ratios(const LogitFn& pipeline, const Vector& x, int y, int i,
                                         double tau, double step, int n_directions,
                                         std::uint64_t seed);

// Binary softmax over (g_y, g_i)/tau returning (f_y, f_i).
Vector binary_softmax_pair(const Vector& logits, int y, int i, double tau);

struct CheckRow {
    std::string check;
    std::string params;
    double lhs = 0.0;
    double rhs = 0.0;
    bool pass = false;
};

std::string checks_to_csv(const std::vector<CheckRow>& rows, std::uint64_t config_hash);

}  // namespace dpspg::theory
