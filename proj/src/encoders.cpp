#include "dpspg/encoders.hpp"

namespace dpspg {

ClassVocabulary build_vocabulary(int n_classes, int d_tok, std::uint64_t seed) {
    if (n_classes < 2) throw InvalidParameterError("build_vocabulary: need at least 2 classes");
    if (d_tok < 4) throw InvalidParameterError("build_vocabulary: d_tok must be >= 4");
    Rng rng(derive_seed(seed, "vocab"));
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_tok));
    ClassVocabulary v;
    v.seed = seed;
    v.class_embeddings = rng.gaussian_matrix(n_classes, d_tok, scale);
    v.positive_template = rng.gaussian_matrix(EncoderDims::kTemplateLen, d_tok, scale);
    v.negative_template = rng.gaussian_matrix(EncoderDims::kTemplateLen, d_tok, scale);
    if ((v.positive_template - v.negative_template).norm() == 0.0) {
        throw NumericFailureError("build_vocabulary: degenerate template draw");
    }
    for (int i = 0; i < n_classes; ++i) {
        for (int j = i + 1; j < n_classes; ++j) {
            if ((v.class_embeddings.row(i) - v.class_embeddings.row(j)).norm() == 0.0) {
                throw NumericFailureError("build_vocabulary: duplicate class embedding draw");
            }
        }
    }
    return v;
}

namespace {

void cache_plain_weights(EncoderSet& enc) {
    enc.phi_w1 = enc.params.value("phi.w1");
    enc.phi_b1 = enc.params.value("phi.b1");
    enc.phi_w2 = enc.params.value("phi.w2");
    enc.phi_b2 = enc.params.value("phi.b2");
    enc.psi.posemb = enc.params.value("psi.posemb");
    enc.psi.layer0 = load_layer_weights(enc.params, "psi.layer0.", enc.dims.text_heads);
    enc.psi.layer1 = load_layer_weights(enc.params, "psi.layer1.", enc.dims.text_heads);
    enc.psi.proj = enc.params.value("psi.proj");
}

}  // namespace

EncoderSet make_encoders(const EncoderDims& dims, std::uint64_t seed) {
    if (dims.d_raw <= 0 || dims.d_tok < 4 || dims.d_feat <= 0 || dims.context_len <= 0) {
        throw InvalidParameterError("make_encoders: bad dimensions");
    }
    if (dims.d_tok % dims.text_heads != 0) {
        throw InvalidParameterError("make_encoders: d_tok must be divisible by text_heads");
    }
    EncoderSet enc;
    enc.dims = dims;
    enc.seed = seed;
    enc.vocab = build_vocabulary(dims.n_classes, dims.d_tok, seed);

    Rng phi_rng(derive_seed(seed, "phi"));
    enc.params.add("phi.w1",
                   phi_rng.gaussian_matrix(dims.d_raw, dims.image_hidden,
                                           1.0 / std::sqrt(static_cast<double>(dims.d_raw))),
                   /*frozen=*/true);
    enc.params.add("phi.b1", Matrix::Zero(1, dims.image_hidden), true);
    enc.params.add("phi.w2",
                   phi_rng.gaussian_matrix(dims.image_hidden, dims.d_feat,
                                           1.0 / std::sqrt(static_cast<double>(dims.image_hidden))),
                   true);
    enc.params.add("phi.b2", Matrix::Zero(1, dims.d_feat), true);

    Rng psi_rng(derive_seed(seed, "psi"));
    enc.params.add("psi.posemb",
                   psi_rng.gaussian_matrix(dims.seq_len(), dims.d_tok,
                                           1.0 / std::sqrt(static_cast<double>(dims.d_tok))),
                   true);
    const TransformerLayerConfig layer_cfg{dims.d_tok, dims.text_heads, dims.text_ffn_hidden};
    init_transformer_layer(enc.params, "psi.layer0.", layer_cfg, psi_rng, /*frozen=*/true);
    init_transformer_layer(enc.params, "psi.layer1.", layer_cfg, psi_rng, /*frozen=*/true);
    enc.params.add("psi.proj",
                   psi_rng.gaussian_matrix(dims.d_tok, dims.d_feat,
                                           1.0 / std::sqrt(static_cast<double>(dims.d_tok))),
                   true);

    cache_plain_weights(enc);
    return enc;
}

Matrix encode_image(const EncoderSet& enc, const Matrix& x_raw) {
    if (x_raw.cols() != enc.dims.d_raw) {
        throw InvalidShapeError("encode_image: raw dimension mismatch");
    }
    Matrix h = ((x_raw * enc.phi_w1).rowwise() + enc.phi_b1.row(0)).array().tanh();
    Matrix out = (h * enc.phi_w2).rowwise() + enc.phi_b2.row(0);
    out = ops::l2_normalize_rows(out);
    require_finite(out, "encode_image output");
    return out;
}

Matrix assemble_text_sequences(const EncoderSet& enc, const Matrix& prompt, const Matrix& tmpl,
                               const Matrix& class_embeds) {
    if (prompt.rows() != enc.dims.context_len || prompt.cols() != enc.dims.d_tok) {
        throw InvalidShapeError("assemble_text_sequences: prompt must be M x d_tok");
    }
    if (tmpl.rows() != EncoderDims::kTemplateLen || tmpl.cols() != enc.dims.d_tok) {
        throw InvalidShapeError("assemble_text_sequences: template must be 4 x d_tok");
    }
    if (class_embeds.cols() != enc.dims.d_tok) {
        throw InvalidShapeError("assemble_text_sequences: class embedding width mismatch");
    }
    const Eigen::Index k = class_embeds.rows();
    const Eigen::Index block = enc.dims.seq_len();
    Matrix seq(k * block, enc.dims.d_tok);
    for (Eigen::Index i = 0; i < k; ++i) {
        seq.middleRows(i * block, prompt.rows()) = prompt;
        seq.middleRows(i * block + prompt.rows(), tmpl.rows()) = tmpl;
        seq.row(i * block + block - 1) = class_embeds.row(i);
    }
    return seq;
}

Matrix encode_text(const EncoderSet& enc, const Matrix& prompt, const Matrix& tmpl,
                   const Matrix& class_embed) {
    if (class_embed.rows() != 1) throw InvalidShapeError("encode_text: class embedding must be one row");
    PlainEngine eng;
    Matrix seq = assemble_text_sequences(enc, prompt, tmpl, class_embed);
    Matrix out = text_encode_core(eng, seq, enc.psi, enc.dims.seq_len());
    require_finite(out, "encode_text output");
    return out;
}

Matrix encode_text_all_classes(const EncoderSet& enc, const Matrix& prompt, const Matrix& tmpl) {
    PlainEngine eng;
    Matrix seq = assemble_text_sequences(enc, prompt, tmpl, enc.vocab.class_embeddings);
    Matrix out = text_encode_core(eng, seq, enc.psi, enc.dims.seq_len());
    require_finite(out, "encode_text output");
    return out;
}

ad::Var encode_text_all_classes(ad::Tape& tape, const EncoderSet& enc, ad::Var prompt,
                                const Matrix& tmpl) {
    const Matrix& pv = tape.value(prompt);
    if (pv.rows() != enc.dims.context_len || pv.cols() != enc.dims.d_tok) {
        throw InvalidShapeError("encode_text_all_classes: prompt must be M x d_tok");
    }
    TapeEngine eng(tape);
    const Eigen::Index k = enc.vocab.class_embeddings.rows();
    const Eigen::Index block = enc.dims.seq_len();
    ad::Var tmpl_c = tape.constant(tmpl);
    std::vector<ad::Var> parts;
    parts.reserve(static_cast<std::size_t>(k) * 3);
    for (Eigen::Index i = 0; i < k; ++i) {
        parts.push_back(prompt);
        parts.push_back(tmpl_c);
        parts.push_back(tape.constant(enc.vocab.class_embeddings.row(i)));
    }
    ad::Var seq = tape.concat_rows(parts);

    // frozen encoder weights appear as constants on the tape
    TextEncoderWeights<ad::Var> w;
    // const_cast is safe: param() on frozen entries only reads the value
    auto& store = const_cast<ParamStore&>(enc.params);
    w.posemb = tape.param(store, "psi.posemb");
    w.layer0 = load_layer_weights(tape, store, "psi.layer0.", enc.dims.text_heads);
    w.layer1 = load_layer_weights(tape, store, "psi.layer1.", enc.dims.text_heads);
    w.proj = tape.param(store, "psi.proj");
    return text_encode_core(eng, seq, w, block);
}

void save_encoders(const EncoderSet& enc, const std::string& path, std::uint64_t config_hash) {
    auto os = io::open_out(path);
    io::write_magic(os, "DPV1");
    io::write_u64(os, config_hash);
    io::write_u32(os, static_cast<std::uint32_t>(enc.dims.d_raw));
    io::write_u32(os, static_cast<std::uint32_t>(enc.dims.d_tok));
    io::write_u32(os, static_cast<std::uint32_t>(enc.dims.d_feat));
    io::write_u32(os, static_cast<std::uint32_t>(enc.dims.n_classes));
    io::write_u32(os, static_cast<std::uint32_t>(enc.dims.context_len));
    io::write_u32(os, static_cast<std::uint32_t>(enc.dims.image_hidden));
    io::write_u32(os, static_cast<std::uint32_t>(enc.dims.text_heads));
    io::write_u32(os, static_cast<std::uint32_t>(enc.dims.text_ffn_hidden));
    io::write_u64(os, enc.seed);
    io::write_matrix(os, enc.vocab.class_embeddings);
    io::write_matrix(os, enc.vocab.positive_template);
    io::write_matrix(os, enc.vocab.negative_template);
    io::write_param_store(os, enc.params);
}

EncoderSet load_encoders(const std::string& path, std::uint64_t expect_config_hash) {
    auto is = io::open_in(path);
    io::expect_magic(is, "DPV1", path);
    const std::uint64_t hash = io::read_u64(is);
    if (expect_config_hash != 0 && hash != expect_config_hash) {
        throw ValidationError("encoder checkpoint config hash mismatch: " + path);
    }
    EncoderSet enc;
    enc.dims.d_raw = static_cast<int>(io::read_u32(is));
    enc.dims.d_tok = static_cast<int>(io::read_u32(is));
    enc.dims.d_feat = static_cast<int>(io::read_u32(is));
    enc.dims.n_classes = static_cast<int>(io::read_u32(is));
    enc.dims.context_len = static_cast<int>(io::read_u32(is));
    enc.dims.image_hidden = static_cast<int>(io::read_u32(is));
    enc.dims.text_heads = static_cast<int>(io::read_u32(is));
    enc.dims.text_ffn_hidden = static_cast<int>(io::read_u32(is));
    enc.seed = io::read_u64(is);
    enc.vocab.class_embeddings = io::read_matrix(is);
    enc.vocab.positive_template = io::read_matrix(is);
    enc.vocab.negative_template = io::read_matrix(is);
    enc.vocab.seed = enc.seed;
    enc.params = io::read_param_store(is);
    cache_plain_weights(enc);
    return enc;
}

}  // namespace dpspg
