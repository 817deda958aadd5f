#include <doctest.h>

#include "dpspg/diagnostics.hpp"

#include <cmath>

using namespace dpspg;

namespace {
PromptVector point(double x, double y) {
    PromptVector p(1, 2);
    p << x, y;
    return p;
}
}  // namespace

TEST_CASE("variability: brute-force worked example") {
    // domain A {(0,0),(1,0)}, domain B {(4,0),(5,0)}:
    // R_A = R_B = 1, centroids (0.5,0) and (4.5,0), D = 4, lambda_A = 0.25
    std::map<int, std::vector<PromptVector>> sets;
    sets[0] = {point(0, 0), point(1, 0)};
    sets[1] = {point(4, 0), point(5, 0)};
    const VariabilityReport r = variability(sets, 0);
    CHECK(r.intra_domain.at(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.intra_domain.at(1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.inter_centroid == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(r.lambda == doctest::Approx(0.25).epsilon(1e-12));

    // identical prompts in a domain collapse R and lambda to zero
    sets[0] = {point(2, 2), point(2, 2), point(2, 2)};
    const VariabilityReport rz = variability(sets, 0);
    CHECK(rz.intra_domain.at(0) == 0.0);
    CHECK(rz.lambda == 0.0);

    std::map<int, std::vector<PromptVector>> singleton;
    singleton[0] = {point(0, 0)};
    singleton[1] = {point(1, 1), point(2, 2)};
    CHECK_THROWS_AS(variability(singleton, 0), InvalidInputError);
}

TEST_CASE("lambda is invariant under uniform prompt scaling") {
    Rng rng(6);
    std::map<int, std::vector<PromptVector>> sets, scaled;
    for (int d = 0; d < 3; ++d) {
        for (int i = 0; i < 4; ++i) {
            PromptVector p = rng.gaussian_matrix(2, 3);
            p.array() += 2.0 * d;
            sets[d].push_back(p);
            scaled[d].push_back(3.7 * p);
        }
    }
    const VariabilityReport a = variability(sets, 1);
    const VariabilityReport b = variability(scaled, 1);
    CHECK(b.intra_domain.at(1) == doctest::Approx(3.7 * a.intra_domain.at(1)).epsilon(1e-12));
    CHECK(b.inter_centroid == doctest::Approx(3.7 * a.inter_centroid).epsilon(1e-12));
    CHECK(b.lambda == doctest::Approx(a.lambda).epsilon(1e-12));
}

TEST_CASE("training stability: constant and alternating histories") {
    std::vector<double> constant(12, 0.75);  // exactly representable
    const StabilityReport c = training_stability(constant);
    CHECK(c.std_last_10 == 0.0);
    CHECK(c.final_accuracy == 0.75);

    // alternating 0/1 over the last ten epochs has population std 0.5
    std::vector<double> alt;
    for (int i = 0; i < 14; ++i) alt.push_back(i % 2 == 0 ? 0.0 : 1.0);
    const StabilityReport a = training_stability(alt);
    CHECK(a.std_last_10 == doctest::Approx(0.5).epsilon(1e-12));

    CHECK_THROWS_AS(training_stability(std::vector<double>(9, 0.5)), InvalidInputError);
}

TEST_CASE("project_2d: 2-D inputs map isometrically, collinear inputs flatten") {
    Rng rng(31);
    std::vector<PromptVector> flat;
    for (int i = 0; i < 8; ++i) flat.push_back(rng.gaussian_matrix(1, 2));

    const Projection2D proj = project_2d(flat);
    CHECK_FALSE(proj.rank_deficient);
    for (int i = 0; i < 8; ++i) {
        for (int j = i + 1; j < 8; ++j) {
            const double orig = (flat[static_cast<std::size_t>(i)] -
                                 flat[static_cast<std::size_t>(j)]).norm();
            const double mapped = (proj.coords.row(i) - proj.coords.row(j)).norm();
            CHECK(std::abs(orig - mapped) <= 1e-9);
        }
    }

    // deterministic sign convention
    const Projection2D proj2 = project_2d(flat);
    CHECK((proj.coords - proj2.coords).cwiseAbs().maxCoeff() == 0.0);

    std::vector<PromptVector> collinear;
    for (int i = 0; i < 5; ++i) {
        PromptVector p(1, 3);
        p << static_cast<double>(i), 2.0 * i, -static_cast<double>(i);
        collinear.push_back(p);
    }
    const Projection2D flat_proj = project_2d(collinear);
    CHECK(flat_proj.rank_deficient);
    CHECK(flat_proj.coords.col(1).cwiseAbs().maxCoeff() == 0.0);

    // top-2 reconstruction never exceeds total variance
    std::vector<PromptVector> cloud;
    for (int i = 0; i < 10; ++i) cloud.push_back(rng.gaussian_matrix(2, 4));
    const Projection2D p4 = project_2d(cloud);
    double total_var = 0.0, projected_var = 0.0;
    Matrix data(10, 8);
    for (int i = 0; i < 10; ++i) {
        Eigen::Index k = 0;
        for (Eigen::Index r = 0; r < 2; ++r) {
            for (Eigen::Index c = 0; c < 4; ++c) data(i, k++) = cloud[static_cast<std::size_t>(i)](r, c);
        }
    }
    const Matrix centered = data.rowwise() - data.colwise().mean();
    total_var = centered.squaredNorm();
    projected_var = (p4.coords.rowwise() - p4.coords.colwise().mean()).squaredNorm();
    CHECK(projected_var <= total_var + 1e-9);

    CHECK_THROWS_AS(project_2d(std::vector<PromptVector>{point(0, 0), point(1, 1)}),
                    InvalidInputError);
}

TEST_CASE("oracle prompt is tagged and deterministic") {
    EncoderDims d;
    d.d_raw = 6;
    d.d_tok = 12;
    d.d_feat = 10;
    d.context_len = 4;
    d.n_classes = 3;
    d.image_hidden = 8;
    d.text_heads = 3;
    d.text_ffn_hidden = 16;
    const EncoderSet enc = make_encoders(d, 3);

    DatasetSpec spec;
    spec.n_classes = 3;
    spec.n_domains = 3;
    spec.n_per_class_per_domain = 10;
    spec.d_raw = 6;
    spec.seed = 77;
    const DomainDataset ds = generate_dataset(spec);

    Stage1Config cfg;
    cfg.epochs = 5;
    cfg.seed = 2;
    const DomainPromptLabelPair o1 = oracle_prompt(ds, 1, enc, cfg);
    CHECK(o1.oracle_tag);
    CHECK(o1.domain == 1);
    const DomainPromptLabelPair o2 = oracle_prompt(ds, 1, enc, cfg);
    CHECK((o1.positive - o2.positive).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mean distance to a reference prompt") {
    std::vector<PromptVector> prompts = {point(0, 0), point(2, 0)};
    CHECK(mean_distance_to(prompts, point(1, 0)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(mean_distance_to({}, point(0, 0)), InvalidInputError);
}
