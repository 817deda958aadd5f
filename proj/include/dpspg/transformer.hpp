#pragma once

#include "dpspg/engine.hpp"
#include "dpspg/param_store.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace dpspg {

// Pre-norm encoder layer: x + MHSA(LN(x)), then h + FFN(LN(h)) with a
// GELU two-layer feed-forward. Heads carry separate q/k/v projections so no
// column slicing is needed; outputs are concatenated and mixed by wo.
struct TransformerLayerConfig {
    int dim = 32;
    int heads = 4;
    int ffn_hidden = 64;
};

template <typename V>
struct AttentionHeadWeights {
    V wq, wk, wv;  // dim x head_dim each
};

template <typename V>
struct TransformerLayerWeights {
    V ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;  // 1 x dim
    std::vector<AttentionHeadWeights<V>> heads;
    V wo, bo;      // dim x dim, 1 x dim
    V w1, b1;      // dim x ffn, 1 x ffn
    V w2, b2;      // ffn x dim, 1 x dim
};

// Registers all tensors of one layer under `prefix` (e.g. "layer0.").
void init_transformer_layer(ParamStore& store, const std::string& prefix,
                            const TransformerLayerConfig& cfg, Rng& rng, bool frozen);

// Name list in forward order; serialization and loaders share it.
std::vector<std::string> transformer_layer_param_names(const std::string& prefix, int heads);

TransformerLayerWeights<Matrix> load_layer_weights(const ParamStore& store, const std::string& prefix,
                                                   int heads);
TransformerLayerWeights<ad::Var> load_layer_weights(ad::Tape& tape, ParamStore& store,
                                                    const std::string& prefix, int heads);

inline double head_dim_of(const PlainEngine&, const Matrix& wq) {
    return static_cast<double>(wq.cols());
}
inline double head_dim_of(const TapeEngine& eng, ad::Var wq) {
    return static_cast<double>(eng.tape->value(wq).cols());
}

// attn_block: rows per independent sequence when several sequences are
// batched into one matrix (attention never crosses block boundaries). For a
// single sequence pass x.rows().
template <typename E, typename V = typename E::V>
V transformer_layer(const E& eng, V x, const TransformerLayerWeights<V>& w, Eigen::Index attn_block) {
    const auto n_heads = w.heads.size();
    V normed = eng.layer_norm_rows(x, w.ln1_gamma, w.ln1_beta);
    std::vector<V> head_outs;
    head_outs.reserve(n_heads);
    for (const auto& h : w.heads) {
        V q = eng.matmul(normed, h.wq);
        V k = eng.matmul(normed, h.wk);
        V v = eng.matmul(normed, h.wv);
        V scores = eng.scale(eng.matmul_nt(q, k), 1.0 / std::sqrt(head_dim_of(eng, h.wq)));
        V attn = eng.block_softmax_rows(scores, attn_block, 1.0);
        head_outs.push_back(eng.matmul(attn, v));
    }
    V mixed = eng.add_rowvec(eng.matmul(eng.concat_cols(head_outs), w.wo), w.bo);
    V h1 = eng.add(x, mixed);
    V normed2 = eng.layer_norm_rows(h1, w.ln2_gamma, w.ln2_beta);
    V ff = eng.add_rowvec(eng.matmul(eng.gelu(eng.add_rowvec(eng.matmul(normed2, w.w1), w.b1)), w.w2), w.b2);
    return eng.add(h1, ff);
}

// Spec-facing wrapper over a single sequence: params must hold one layer
// under `prefix`; input is S x dim with dim divisible by `heads`.
Matrix transformer_layer_forward(const Matrix& x, const ParamStore& params,
                                 const std::string& prefix = "", int heads = 4);

}  // namespace dpspg
