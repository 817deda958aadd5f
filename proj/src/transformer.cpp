#include "dpspg/transformer.hpp"

namespace dpspg {

void init_transformer_layer(ParamStore& store, const std::string& prefix,
                            const TransformerLayerConfig& cfg, Rng& rng, bool frozen) {
    if (cfg.dim <= 0 || cfg.heads <= 0 || cfg.dim % cfg.heads != 0) {
        throw InvalidParameterError("init_transformer_layer: dim must be divisible by heads");
    }
    const int hd = cfg.dim / cfg.heads;
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
    const double ffn_scale = 1.0 / std::sqrt(static_cast<double>(cfg.ffn_hidden));

    store.add(prefix + "ln1.gamma", Matrix::Ones(1, cfg.dim), frozen);
    store.add(prefix + "ln1.beta", Matrix::Zero(1, cfg.dim), frozen);
    store.add(prefix + "ln2.gamma", Matrix::Ones(1, cfg.dim), frozen);
    store.add(prefix + "ln2.beta", Matrix::Zero(1, cfg.dim), frozen);
    for (int h = 0; h < cfg.heads; ++h) {
        const std::string hp = prefix + "attn.h" + std::to_string(h) + ".";
        store.add(hp + "wq", rng.gaussian_matrix(cfg.dim, hd, attn_scale), frozen);
        store.add(hp + "wk", rng.gaussian_matrix(cfg.dim, hd, attn_scale), frozen);
        store.add(hp + "wv", rng.gaussian_matrix(cfg.dim, hd, attn_scale), frozen);
    }
    store.add(prefix + "attn.wo", rng.gaussian_matrix(cfg.dim, cfg.dim, attn_scale), frozen);
    store.add(prefix + "attn.bo", Matrix::Zero(1, cfg.dim), frozen);
    store.add(prefix + "ffn.w1", rng.gaussian_matrix(cfg.dim, cfg.ffn_hidden, attn_scale), frozen);
    store.add(prefix + "ffn.b1", Matrix::Zero(1, cfg.ffn_hidden), frozen);
    store.add(prefix + "ffn.w2", rng.gaussian_matrix(cfg.ffn_hidden, cfg.dim, ffn_scale), frozen);
    store.add(prefix + "ffn.b2", Matrix::Zero(1, cfg.dim), frozen);
}

std::vector<std::string> transformer_layer_param_names(const std::string& prefix, int heads) {
    std::vector<std::string> names = {prefix + "ln1.gamma", prefix + "ln1.beta",
                                      prefix + "ln2.gamma", prefix + "ln2.beta"};
    for (int h = 0; h < heads; ++h) {
        const std::string hp = prefix + "attn.h" + std::to_string(h) + ".";
        names.push_back(hp + "wq");
        names.push_back(hp + "wk");
        names.push_back(hp + "wv");
    }
    names.insert(names.end(), {prefix + "attn.wo", prefix + "attn.bo", prefix + "ffn.w1",
                               prefix + "ffn.b1", prefix + "ffn.w2", prefix + "ffn.b2"});
    return names;
}

TransformerLayerWeights<Matrix> load_layer_weights(const ParamStore& store, const std::string& prefix,
                                                   int heads) {
    TransformerLayerWeights<Matrix> w;
    w.ln1_gamma = store.value(prefix + "ln1.gamma");
    w.ln1_beta = store.value(prefix + "ln1.beta");
    w.ln2_gamma = store.value(prefix + "ln2.gamma");
    w.ln2_beta = store.value(prefix + "ln2.beta");
    for (int h = 0; h < heads; ++h) {
        const std::string hp = prefix + "attn.h" + std::to_string(h) + ".";
        w.heads.push_back({store.value(hp + "wq"), store.value(hp + "wk"), store.value(hp + "wv")});
    }
    w.wo = store.value(prefix + "attn.wo");
    w.bo = store.value(prefix + "attn.bo");
    w.w1 = store.value(prefix + "ffn.w1");
    w.b1 = store.value(prefix + "ffn.b1");
    w.w2 = store.value(prefix + "ffn.w2");
    w.b2 = store.value(prefix + "ffn.b2");
    return w;
}

TransformerLayerWeights<ad::Var> load_layer_weights(ad::Tape& tape, ParamStore& store,
                                                    const std::string& prefix, int heads) {
    TransformerLayerWeights<ad::Var> w;
    w.ln1_gamma = tape.param(store, prefix + "ln1.gamma");
    w.ln1_beta = tape.param(store, prefix + "ln1.beta");
    w.ln2_gamma = tape.param(store, prefix + "ln2.gamma");
    w.ln2_beta = tape.param(store, prefix + "ln2.beta");
    for (int h = 0; h < heads; ++h) {
        const std::string hp = prefix + "attn.h" + std::to_string(h) + ".";
        w.heads.push_back({tape.param(store, hp + "wq"), tape.param(store, hp + "wk"),
                           tape.param(store, hp + "wv")});
    }
    w.wo = tape.param(store, prefix + "attn.wo");
    w.bo = tape.param(store, prefix + "attn.bo");
    w.w1 = tape.param(store, prefix + "ffn.w1");
    w.b1 = tape.param(store, prefix + "ffn.b1");
    w.w2 = tape.param(store, prefix + "ffn.w2");
    w.b2 = tape.param(store, prefix + "ffn.b2");
    return w;
}

Matrix transformer_layer_forward(const Matrix& x, const ParamStore& params,
                                 const std::string& prefix, int heads) {
    const Matrix& wq = params.value(prefix + "attn.h0.wq");
    if (x.cols() != wq.rows()) throw InvalidShapeError("transformer_layer_forward: width mismatch");
    if (x.cols() % heads != 0) throw InvalidShapeError("transformer_layer_forward: width not divisible by heads");
    PlainEngine eng;
    auto w = load_layer_weights(params, prefix, heads);
    Matrix out = transformer_layer(eng, x, w, x.rows());
    require_finite(out, "transformer_layer_forward output");
    return out;
}

}  // namespace dpspg
