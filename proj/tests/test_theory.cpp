#include <doctest.h>

#include "dpspg/theory.hpp"
#include "dpspg/ops.hpp"

#include <cmath>

using namespace dpspg;

TEST_CASE("margin report: worked example, identities, degenerate cases") {
    // s+ = (2,1), s- = (0.5,1.5), y = 0, alpha = 0.2:
    // Delta+ = 1, delta = 1, Delta = 1.2 = Delta+ + alpha*delta
    Vector s_pos(2), s_neg(2);
    s_pos << 2.0, 1.0;
    s_neg << 0.5, 1.5;
    const auto r = theory::margin_report(s_pos, s_neg, 0, 0.2);
    REQUIRE(r.delta_plus.size() == 1);
    CHECK(r.delta_plus[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(r.delta_constraint == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(r.delta_combined[0] == doctest::Approx(1.2).epsilon(1e-15));
    CHECK(r.delta_combined[0] ==
          doctest::Approx(r.delta_plus[0] + 0.2 * r.delta_constraint).epsilon(1e-15));
    CHECK(r.bound_satisfied);
    CHECK(r.max_identity_error <= 1e-12);

    // alpha = 0 collapses the combined margin onto the positive margin
    const auto r0 = theory::margin_report(s_pos, s_neg, 0, 0.0);
    CHECK(r0.delta_combined[0] == doctest::Approx(r0.delta_plus[0]).epsilon(1e-15));

    // constant negative scores leave margins untouched for any alpha
    Vector s_neg_const(2);
    s_neg_const << 0.4, 0.4;
    const auto rc = theory::margin_report(s_pos, s_neg_const, 0, 0.9);
    CHECK(rc.delta_combined[0] == doctest::Approx(rc.delta_plus[0]).epsilon(1e-15));

    CHECK_THROWS_AS(theory::margin_report(Vector::Ones(1), Vector::Ones(1), 0, 0.2),
                    InvalidInputError);
}

TEST_CASE("margin identity and bound hold on random tuples") {
    Rng rng(71);
    for (int rep = 0; rep < 1000; ++rep) {
        const int k = 2 + static_cast<int>(rng.below(6));
        const Vector s_pos = rng.gaussian_matrix(k, 1);
        const Vector s_neg = rng.gaussian_matrix(k, 1);
        const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
        const double alpha = rng.uniform(0.0, 2.0);
        const auto r = theory::margin_report(s_pos, s_neg, y, alpha);
        CHECK(r.max_identity_error <= 1e-12);
        CHECK(r.bound_satisfied);
    }
}

TEST_CASE("binary jacobian bound: worked values and randomized sweep") {
    // Delta = 2, tau = 1: f_i = 0.11920, norm = 0.10499 <= e^-2 = 0.13534
    const auto r = theory::binary_jacobian_bound_check(2.0, 1.0);
    const double f_i = 1.0 / (1.0 + std::exp(2.0));
    CHECK(f_i == doctest::Approx(0.11920).epsilon(1e-4));
    CHECK(r.analytic_norm == doctest::Approx(f_i * (1.0 - f_i)).epsilon(1e-12));
    CHECK(r.analytic_norm == doctest::Approx(0.10499).epsilon(1e-4));
    CHECK(r.bound == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
    CHECK(r.bound == doctest::Approx(0.13534).epsilon(1e-4));
    CHECK(r.bound_holds);

    // Delta = 0, tau = 1: norm 0.25, bound 1
    const auto r0 = theory::binary_jacobian_bound_check(0.0, 1.0);
    CHECK(r0.analytic_norm == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(r0.bound == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r0.bound_holds);

    Rng rng(72);
    for (int rep = 0; rep < 1000; ++rep) {
        const double delta = rng.uniform(0.0, 10.0);
        const double tau = rng.uniform(0.05, 2.0);
        CHECK(theory::binary_jacobian_bound_check(delta, tau).bound_holds);
    }

    CHECK_THROWS_AS(theory::binary_jacobian_bound_check(1.0, 0.0), InvalidParameterError);
}

namespace {

// analytic quadratic pipeline: g(x) = A x + quadratic warp, smooth and cheap
theory::LogitFn toy_pipeline(int k, int d, std::uint64_t seed) {
    Rng rng(seed);
    const Matrix a = rng.gaussian_matrix(k, d);
    const Matrix b = rng.gaussian_matrix(k, d, 0.2);
    return [a, b](const Vector& x) {
        Vector g = a * x;
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            const double u = b.row(i).dot(x);
            g(i) += u * u;
        }
        return g;
    };
}

}  // namespace

TEST_CASE("input jacobian report on an analytic pipeline") {
    const auto pipeline = toy_pipeline(3, 5, 7);
    Rng rng(8);
    const Vector x = rng.gaussian_matrix(5, 1, 0.3);

    const auto r = theory::input_jacobian_report(pipeline, x, 0, 1, 0.5);
    // the FD norm factorizes as (1/tau) f_y f_i * ||grad(g_y - g_i)||
    const Vector g = pipeline(x);
    const Vector f = theory::binary_softmax_pair(g, 0, 1, 0.5);
    CHECK(r.analytic_norm == doctest::Approx(f(0) * f(1) / 0.5).epsilon(1e-12));
    CHECK(r.fd_norm > 0.0);
    CHECK(r.l_estimate > 0.0);
    // the probe set includes x itself, so the empirical bound must cover it
    CHECK(r.bound_holds);
    CHECK(r.fd_norm <= r.lipschitz_bound + 1e-9);

    CHECK_THROWS_AS(theory::input_jacobian_report(pipeline, x, 0, 0, 0.5), InvalidInputError);
}

TEST_CASE("linearization residuals decay quadratically (ratio about 4)") {
    const auto pipeline = toy_pipeline(3, 5, 17);
    Rng rng(9);
    const Vector x = rng.gaussian_matrix(5, 1, 0.3);

    const auto ratios = theory::linearization_ratios(pipeline, x, 0, 1, 0.5, 1e-2, 8, 3);
    REQUIRE(ratios.size() >= 3);
    double mean = 0.0;
    for (double r : ratios) mean += r;
    mean /= static_cast<double>(ratios.size());
    CHECK(mean >= 3.5);
    CHECK(mean <= 4.5);

    // zero perturbation reproduces f(x) exactly
    const Vector f0 = theory::binary_softmax_pair(pipeline(x), 0, 1, 0.5);
    const Vector f0_again = theory::binary_softmax_pair(pipeline(x), 0, 1, 0.5);
    CHECK((f0 - f0_again).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("check rows serialize to the pinned CSV layout") {
    std::vector<theory::CheckRow> rows = {{"demo_check", "n=3", 1.5, 2.0, true}};
    const std::string csv = theory::checks_to_csv(rows, 0x1f);
    CHECK(csv.find("check,params,lhs,rhs,pass") != std::string::npos);
    CHECK(csv.find("demo_check,n=3,1.5,2,1") != std::string::npos);
    CHECK(csv.find("# config_hash=000000000000001f") != std::string::npos);
}
