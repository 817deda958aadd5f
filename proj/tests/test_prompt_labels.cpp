#include <doctest.h>

#include "dpspg/grad_check.hpp"
#include "dpspg/prompt_labels.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

using namespace dpspg;

namespace {

EncoderDims tiny_dims() {
    EncoderDims d;
    d.d_raw = 6;
    d.d_tok = 12;
    d.d_feat = 10;
    d.context_len = 4;
    d.n_classes = 3;
    d.image_hidden = 8;
    d.text_heads = 3;
    d.text_ffn_hidden = 16;
    return d;
}

DatasetSpec tiny_task() {
    DatasetSpec s;
    s.n_classes = 3;
    s.n_domains = 3;
    s.n_per_class_per_domain = 20;
    s.d_raw = 6;
    s.prototype_separation = 3.0;
    s.noise_sigma = 0.3;
    s.seed = 31;
    return s;
}

}  // namespace

TEST_CASE("negative_target is the complement of the one-hot encoding") {
    const Vector t = negative_target(1, 3);  // the paper's [1, 0, 1] example
    CHECK(t(0) == 1.0);
    CHECK(t(1) == 0.0);
    CHECK(t(2) == 1.0);

    const Vector t2 = negative_target(0, 2);
    CHECK(t2(0) == 0.0);
    CHECK(t2(1) == 1.0);

    for (int k = 2; k <= 8; ++k) {
        for (int y = 0; y < k; ++y) {
            CHECK(negative_target(y, k).sum() == doctest::Approx(k - 1).epsilon(1e-15));
        }
    }
    CHECK_THROWS_AS(negative_target(3, 3), InvalidParameterError);
}

TEST_CASE("positive loss equals ln K under a uniform predictive distribution") {
    EncoderSet enc = make_encoders(tiny_dims(), 7);
    // identical class embeddings force identical text features, hence uniform
    // softmax regardless of the prompt
    for (int i = 0; i < enc.dims.n_classes; ++i) {
        enc.vocab.class_embeddings.row(i) = enc.vocab.class_embeddings.row(0);
    }
    Rng rng(3);
    const Matrix prompt = rng.gaussian_matrix(4, 12, 0.3);
    const Matrix embeds = encode_image(enc, rng.gaussian_matrix(5, 6));
    const double loss = positive_label_loss(enc, embeds, {0, 1, 2, 0, 1}, prompt, 0.1);
    CHECK(loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("cross-entropy arithmetic: -ln p at p = e/(e+1)") {
    // two classes, similarity gap of exactly tau gives true-class probability
    // e/(e+1) = 0.73106 and loss 0.31326
    ad::Tape tape;
    Matrix scores(1, 2);
    scores << 0.1, 0.0;
    ad::Var loss = tape.cross_entropy_rows(tape.constant(scores), {0}, 0.1);
    const double p = std::exp(1.0) / (std::exp(1.0) + 1.0);
    CHECK(tape.value(loss)(0, 0) == doctest::Approx(-std::log(p)).epsilon(1e-12));
    CHECK(tape.value(loss)(0, 0) == doctest::Approx(0.31326).epsilon(1e-4));
}

TEST_CASE("bce arithmetic: p = 0.5 everywhere costs ln 2 per class") {
    EncoderSet enc = make_encoders(tiny_dims(), 7);
    Rng rng(5);
    const Matrix prompt = rng.gaussian_matrix(4, 12, 0.3);
    // orthogonalize the image embedding against all text features so every
    // similarity is exactly zero -> sigmoid = 0.5
    const Matrix t = encode_text_all_classes(enc, prompt, enc.vocab.negative_template);
    Eigen::JacobiSVD<Matrix> svd(t, Eigen::ComputeFullV);
    const Matrix null_basis = svd.matrixV().rightCols(enc.dims.d_feat - 3);
    Matrix e = null_basis.col(0).transpose();
    e /= e.norm();
    REQUIRE((t * e.transpose()).cwiseAbs().maxCoeff() <= 1e-12);

    const double per_sample = std::log(2.0);            // class-averaged convention
    const double total_before_avg = 3.0 * std::log(2.0);  // 2.07944 per sample
    CHECK(total_before_avg == doctest::Approx(2.07944).epsilon(1e-5));

    ad::Tape tape;
    ad::Var scores = tape.constant(Matrix(Matrix::Zero(2, 3)));
    const Matrix targets = negative_target_matrix({0, 2}, 3);
    ad::Var loss = tape.bce_with_scores(scores, targets, 0.1);
    CHECK(tape.value(loss)(0, 0) == doctest::Approx(per_sample).epsilon(1e-12));

    // full encoder path with the orthogonal embedding
    const double path_loss = negative_label_loss(enc, e, {1}, prompt, 0.1);
    CHECK(path_loss == doctest::Approx(per_sample).epsilon(1e-9));
}

TEST_CASE("bce perfect-fit limit is bounded by the clamp") {
    // p == y exactly after clamping: loss <= K * 1e-6
    ad::Tape tape;
    Matrix scores(1, 3);
    scores << 10.0, -10.0, 10.0;  // sigmoid(10/0.1 = 100) ~ 1 within clamp
    const Matrix targets = negative_target_matrix({1}, 3);
    ad::Var loss = tape.bce_with_scores(tape.constant(scores), targets, 0.1);
    CHECK(tape.value(loss)(0, 0) <= 3.0 * 1e-6);
}

TEST_CASE("stage-1 losses pass the FD oracle on random batches") {
    const EncoderSet enc = make_encoders(tiny_dims(), 99);
    Rng rng(8);
    const Matrix embeds = encode_image(enc, rng.gaussian_matrix(6, 6));
    const std::vector<int> labels = {0, 1, 2, 1, 0, 2};

    for (const bool positive : {true, false}) {
        ParamStore store;
        store.add("v", rng.gaussian_matrix(4, 12, 0.3));
        const LossFn fn = [&](ParamStore& p, bool want_grad) {
            if (!want_grad) {
                return positive ? positive_label_loss(enc, embeds, labels, p.value("v"), 0.1)
                                : negative_label_loss(enc, embeds, labels, p.value("v"), 0.1);
            }
            ad::Tape tape;
            ad::Var v = tape.param(p, "v");
            ad::Var loss = positive ? positive_label_loss(tape, enc, embeds, labels, v, 0.1)
                                    : negative_label_loss(tape, enc, embeds, labels, v, 0.1);
            tape.backward(loss);
            tape.export_grads();
            return tape.value(loss)(0, 0);
        };
        CHECK(grad_check(fn, store, 1e-5) <= 1e-4);
    }
}

TEST_CASE("plain and tape loss values agree exactly") {
    const EncoderSet enc = make_encoders(tiny_dims(), 55);
    Rng rng(4);
    const Matrix embeds = encode_image(enc, rng.gaussian_matrix(5, 6));
    const std::vector<int> labels = {2, 0, 1, 1, 0};
    const Matrix v = rng.gaussian_matrix(4, 12, 0.4);

    ad::Tape tp;
    const double tape_pos = tp.value(positive_label_loss(tp, enc, embeds, labels,
                                                         tp.constant(v), 0.1))(0, 0);
    CHECK(positive_label_loss(enc, embeds, labels, v, 0.1) ==
          doctest::Approx(tape_pos).epsilon(1e-15));

    ad::Tape tn;
    const double tape_neg = tn.value(negative_label_loss(tn, enc, embeds, labels,
                                                         tn.constant(v), 0.1))(0, 0);
    CHECK(negative_label_loss(enc, embeds, labels, v, 0.1) ==
          doctest::Approx(tape_neg).epsilon(1e-15));
}

TEST_CASE("loss preconditions: empty or mixed-domain batches rejected") {
    const EncoderSet enc = make_encoders(tiny_dims(), 55);
    const Matrix v = Matrix::Zero(4, 12);
    CHECK_THROWS_AS(positive_label_loss(enc, std::vector<Sample>{}, v, 0.1), InvalidInputError);

    Sample a, b;
    a.x = Vector::Zero(6);
    a.label = 0;
    a.domain = 0;
    b.x = Vector::Ones(6);
    b.label = 1;
    b.domain = 2;
    CHECK_THROWS_AS(positive_label_loss(enc, std::vector<Sample>{a, b}, v, 0.1),
                    InvalidInputError);
}

TEST_CASE("train_domain_labels fits a separable domain and selects by validation") {
    const EncoderSet enc = make_encoders(tiny_dims(), 17);
    const DomainDataset ds = generate_dataset(tiny_task());
    Stage1Config cfg;
    cfg.epochs = 40;
    cfg.seed = 5;

    const DomainPromptLabelPair pair = train_domain_labels(ds, 0, enc, cfg);
    CHECK(pair.domain == 0);
    CHECK(pair.val_accuracy >= 1.0 / 3.0);  // beats chance on the val split
    CHECK(pair.epoch_selected >= 1);
    CHECK((pair.positive - pair.negative).norm() > 0.0);

    // training losses decreased
    REQUIRE(pair.pos_loss_history.size() == 40);
    CHECK(pair.pos_loss_history.back() < pair.pos_loss_history.front());
    CHECK(pair.neg_loss_history.back() < pair.neg_loss_history.front());

    // high within-domain fit on the separable spec
    std::vector<Sample> train_samples;
    for (int i : ds.train_idx[0]) train_samples.push_back(ds.samples[static_cast<std::size_t>(i)]);
    Matrix x(static_cast<Eigen::Index>(train_samples.size()), 6);
    std::vector<int> y;
    for (std::size_t i = 0; i < train_samples.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)) = train_samples[i].x.transpose();
        y.push_back(train_samples[i].label);
    }
    const Matrix embeds = encode_image(enc, x);
    CHECK(prompt_accuracy(enc, pair.positive, embeds, y, cfg.tau) >= 0.95);

    // validation-selected snapshot beats (or ties) epoch 1 by construction:
    // retrain with 1 epoch and compare metrics
    Stage1Config one = cfg;
    one.epochs = 1;
    const DomainPromptLabelPair first = train_domain_labels(ds, 0, enc, one);
    CHECK(pair.val_accuracy >= first.val_accuracy);
    CHECK(pair.val_bce <= first.val_bce);

    // the negative-path Eq.-11 analogue (true class's negative similarity
    // lowest on average) is asserted on the default spec in the integration
    // suite; at this miniature scale just confirm the negative path moved
    // similarities away from the uniform start
    const Matrix t_neg = encode_text_all_classes(enc, pair.negative, enc.vocab.negative_template);
    const Matrix sims = embeds * t_neg.transpose();
    CHECK(sims.allFinite());
    CHECK(pair.val_bce < 1.0);  // no divergence; the fit bound lives in the integration suite
}

TEST_CASE("stage-1 training is bit-deterministic given the seed") {
    const EncoderSet enc = make_encoders(tiny_dims(), 17);
    const DomainDataset ds = generate_dataset(tiny_task());
    Stage1Config cfg;
    cfg.epochs = 6;
    cfg.seed = 44;
    const DomainPromptLabelPair a = train_domain_labels(ds, 1, enc, cfg);
    const DomainPromptLabelPair b = train_domain_labels(ds, 1, enc, cfg);
    CHECK((a.positive - b.positive).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.negative - b.negative).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.val_accuracy == b.val_accuracy);
    CHECK(a.epoch_selected == b.epoch_selected);
}

TEST_CASE("label checkpoint round trip preserves the pair") {
    const EncoderSet enc = make_encoders(tiny_dims(), 17);
    const DomainDataset ds = generate_dataset(tiny_task());
    Stage1Config cfg;
    cfg.epochs = 3;
    DomainPromptLabelPair pair = train_domain_labels(ds, 2, enc, cfg);
    pair.oracle_tag = true;

    const std::string path =
        (std::filesystem::temp_directory_path() / "pair_test.dpl").string();
    save_label_pair(pair, path, 0x55);
    const DomainPromptLabelPair loaded = load_label_pair(path, 0x55);
    CHECK(loaded.domain == pair.domain);
    CHECK(loaded.oracle_tag);
    CHECK((loaded.positive - pair.positive).cwiseAbs().maxCoeff() == 0.0);
    CHECK((loaded.negative - pair.negative).cwiseAbs().maxCoeff() == 0.0);
    CHECK(loaded.val_accuracy == pair.val_accuracy);
    CHECK(loaded.epoch_selected_neg == pair.epoch_selected_neg);
    CHECK_THROWS_AS(load_label_pair(path, 0x56), ValidationError);
    std::remove(path.c_str());
}
