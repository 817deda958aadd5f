#include <doctest.h>

#include "dpspg/encoders.hpp"
#include "dpspg/grad_check.hpp"

#include <cstdio>
#include <filesystem>

using namespace dpspg;

namespace {
EncoderDims small_dims() {
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
}  // namespace

TEST_CASE("build_vocabulary: shapes, determinism, seed sensitivity, guards") {
    const ClassVocabulary v = build_vocabulary(7, 32, 5);
    CHECK(v.class_embeddings.rows() == 7);
    CHECK(v.class_embeddings.cols() == 32);
    CHECK(v.positive_template.rows() == 4);
    CHECK(v.negative_template.rows() == 4);
    CHECK((v.positive_template - v.negative_template).norm() > 0.0);

    const ClassVocabulary v2 = build_vocabulary(7, 32, 5);
    CHECK((v.class_embeddings - v2.class_embeddings).cwiseAbs().maxCoeff() == 0.0);
    CHECK((v.positive_template - v2.positive_template).cwiseAbs().maxCoeff() == 0.0);

    const ClassVocabulary v3 = build_vocabulary(7, 32, 6);
    CHECK((v.positive_template - v3.positive_template).norm() > 0.0);

    CHECK_THROWS_AS(build_vocabulary(1, 32, 5), InvalidParameterError);
    CHECK_THROWS_AS(build_vocabulary(3, 2, 5), InvalidParameterError);
}

TEST_CASE("encode_image: unit norm, determinism, nonlinearity, shape guard") {
    const EncoderSet enc = make_encoders(small_dims(), 77);
    Rng rng(3);
    const Matrix x = rng.gaussian_matrix(5, 6);

    const Matrix e = encode_image(enc, x);
    CHECK(e.rows() == 5);
    CHECK(e.cols() == 10);
    for (int r = 0; r < 5; ++r) {
        CHECK(std::abs(e.row(r).norm() - 1.0) <= 1e-9);
    }

    const Matrix e2 = encode_image(enc, x);
    CHECK((e - e2).cwiseAbs().maxCoeff() == 0.0);

    // tanh nonlinearity: x and 2x map to genuinely different directions
    const Matrix ed = encode_image(enc, Matrix(2.0 * x));
    CHECK((e - ed).cwiseAbs().maxCoeff() > 1e-6);

    CHECK_THROWS_AS(encode_image(enc, Matrix::Zero(2, 5)), InvalidShapeError);
}

TEST_CASE("encode_text: unit norm, determinism, distinct classes, batched = single") {
    const EncoderSet enc = make_encoders(small_dims(), 77);
    Rng rng(11);
    const Matrix prompt = rng.gaussian_matrix(4, 12, 0.3);

    const Matrix t_all = encode_text_all_classes(enc, prompt, enc.vocab.positive_template);
    CHECK(t_all.rows() == 3);
    CHECK(t_all.cols() == 10);
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(t_all.row(i).norm() - 1.0) <= 1e-9);
        const Matrix ti = encode_text(enc, prompt, enc.vocab.positive_template,
                                      enc.vocab.class_embeddings.row(i));
        // the batched pass shares one block matrix; agreement to fp noise
        CHECK((ti.row(0) - t_all.row(i)).cwiseAbs().maxCoeff() <= 1e-12);
    }

    // distinct class embeddings keep distinct features
    double min_dist = 1e9;
    for (int i = 0; i < 3; ++i) {
        for (int j = i + 1; j < 3; ++j) {
            min_dist = std::min(min_dist, (t_all.row(i) - t_all.row(j)).norm());
        }
    }
    CHECK(min_dist > 0.0);

    const Matrix t_again = encode_text_all_classes(enc, prompt, enc.vocab.positive_template);
    CHECK((t_all - t_again).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(encode_text_all_classes(enc, Matrix::Zero(2, 12), enc.vocab.positive_template),
                    InvalidShapeError);
}

TEST_CASE("encode_text gradient w.r.t. the prompt passes the FD oracle") {
    const EncoderSet enc = make_encoders(small_dims(), 77);
    Rng rng(13);
    ParamStore store;
    store.add("prompt", rng.gaussian_matrix(4, 12, 0.3));
    const Matrix weights = rng.gaussian_matrix(3, 10);

    const LossFn fn = [&](ParamStore& p, bool want_grad) {
        ad::Tape tape;
        ad::Var prompt = tape.param(p, "prompt");
        ad::Var t = encode_text_all_classes(tape, enc, prompt, enc.vocab.positive_template);
        ad::Var loss = tape.mean_all(tape.cwise_mul(t, tape.constant(weights)));
        if (want_grad) {
            tape.backward(loss);
            tape.export_grads();
        }
        return tape.value(loss)(0, 0);
    };
    CHECK(grad_check(fn, store, 1e-5) <= 1e-4);
}

TEST_CASE("frozen encoder parameters never change and similarities stay bounded") {
    EncoderSet enc = make_encoders(small_dims(), 123);
    const std::uint64_t before = enc.params.fingerprint();

    Rng rng(5);
    const Matrix prompt = rng.gaussian_matrix(4, 12, 0.5);
    const Matrix x = rng.gaussian_matrix(20, 6);
    const Matrix e = encode_image(enc, x);
    const Matrix t = encode_text_all_classes(enc, prompt, enc.vocab.negative_template);
    const Matrix sims = e * t.transpose();
    CHECK(sims.maxCoeff() <= 1.0 + 1e-12);
    CHECK(sims.minCoeff() >= -1.0 - 1e-12);

    CHECK(enc.params.fingerprint() == before);
}

TEST_CASE("encoder checkpoint round-trips byte-for-byte state") {
    const EncoderSet enc = make_encoders(small_dims(), 2024);
    const std::string path = (std::filesystem::temp_directory_path() / "enc_test.dpv").string();
    save_encoders(enc, path, 0xabcdef);
    const EncoderSet loaded = load_encoders(path, 0xabcdef);
    CHECK(loaded.dims.d_tok == enc.dims.d_tok);
    CHECK(loaded.params.fingerprint() == enc.params.fingerprint());
    CHECK((loaded.vocab.class_embeddings - enc.vocab.class_embeddings).cwiseAbs().maxCoeff() == 0.0);

    // behavioral equality after reload
    Rng rng(9);
    const Matrix x = rng.gaussian_matrix(3, 6);
    CHECK((encode_image(enc, x) - encode_image(loaded, x)).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(load_encoders(path, 0x1234), ValidationError);
    std::remove(path.c_str());
}
