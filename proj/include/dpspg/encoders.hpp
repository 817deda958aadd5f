#pragma once

#include "dpspg/transformer.hpp"
#include "dpspg/serialize.hpp"

#include <string>

namespace dpspg {

struct EncoderDims {
    int d_raw = 16;
    int d_tok = 32;
    int d_feat = 64;
    int context_len = 4;  // M, learnable prompt tokens
    int n_classes = 5;    // K
    int image_hidden = 64;
    int text_heads = 4;
    int text_ffn_hidden = 64;

    static constexpr int kTemplateLen = 4;  // "a photo of a" / "a photo without a"
    int seq_len() const { return context_len + kTemplateLen + 1; }
};

// Synthetic token stand-ins for class names and the two fixed templates.
struct ClassVocabulary {
    Matrix class_embeddings;   // K x d_tok
    Matrix positive_template;  // 4 x d_tok
    Matrix negative_template;  // 4 x d_tok
    std::uint64_t seed = 0;
};

ClassVocabulary build_vocabulary(int n_classes, int d_tok, std::uint64_t seed);

template <typename V>
struct TextEncoderWeights {
    V posemb;  // seq_len x d_tok
    TransformerLayerWeights<V> layer0, layer1;
    V proj;  // d_tok x d_feat
};

// Frozen image/text encoder pair plus vocabulary. Immutable after
// construction; safe to share read-only across threads.
struct EncoderSet {
    EncoderDims dims;
    std::uint64_t seed = 0;
    ClassVocabulary vocab;
    ParamStore params;  // every entry frozen

    // plain-weight caches so evaluation skips store lookups
    Matrix phi_w1, phi_b1, phi_w2, phi_b2;
    TextEncoderWeights<Matrix> psi;
};

EncoderSet make_encoders(const EncoderDims& dims, std::uint64_t seed);

// phi: rows of x_raw (B x d_raw) -> unit-norm rows (B x d_feat).
Matrix encode_image(const EncoderSet& enc, const Matrix& x_raw);

// Stacks the per-class sequences [prompt | template | class_i] for the given
// classes into one sample-major block matrix (block = seq_len rows).
Matrix assemble_text_sequences(const EncoderSet& enc, const Matrix& prompt, const Matrix& tmpl,
                               const Matrix& class_embeds);

// Shared forward: positional terms, two frozen layers, mean pool, projection,
// L2 normalization. `block` is the per-sequence row count.
template <typename E, typename V = typename E::V>
V text_encode_core(const E& eng, V seq, const TextEncoderWeights<V>& w, Eigen::Index block) {
    V x = eng.add_tiled_rows(seq, w.posemb);
    x = transformer_layer(eng, x, w.layer0, block);
    x = transformer_layer(eng, x, w.layer1, block);
    V pooled = eng.block_mean_rows(x, block);
    return eng.l2_normalize_rows(eng.matmul(pooled, w.proj));
}

// psi: one class embedding (1 x d_tok) -> unit-norm text feature (1 x d_feat).
Matrix encode_text(const EncoderSet& enc, const Matrix& prompt, const Matrix& tmpl,
                   const Matrix& class_embed);

// All K class features in one pass (K x d_feat).
Matrix encode_text_all_classes(const EncoderSet& enc, const Matrix& prompt, const Matrix& tmpl);

// Differentiable variant: gradient flows to `prompt` only (encoder weights
// enter the tape as constants).
ad::Var encode_text_all_classes(ad::Tape& tape, const EncoderSet& enc, ad::Var prompt,
                                const Matrix& tmpl);

void save_encoders(const EncoderSet& enc, const std::string& path, std::uint64_t config_hash);
EncoderSet load_encoders(const std::string& path, std::uint64_t expect_config_hash);

}  // namespace dpspg
