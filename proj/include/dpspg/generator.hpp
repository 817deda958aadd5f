#pragma once

#include "dpspg/datagen.hpp"
#include "dpspg/encoders.hpp"
#include "dpspg/prompt_labels.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace dpspg {

enum class Polarity { Positive, Negative };

struct GeneratorConfig {
    int context_len = 4;  // M
    int d_tok = 32;
    int d_feat = 64;
    int n_layers = 4;
    int heads = 4;
    int ffn_hidden = 64;
};

template <typename V>
struct GeneratorWeights {
    std::vector<V> inproj_w, inproj_b;  // per position: d_feat x d_tok, 1 x d_tok
    V posemb;                           // M x d_tok
    std::vector<TransformerLayerWeights<V>> layers;
    std::vector<V> head_w, head_b;  // per position: d_tok x d_tok, 1 x d_tok
};

// Image embedding -> M x d_tok soft prompt. M per-position input projections
// followed by learned positional embeddings, four transformer layers and a
// per-position linear head.
struct GeneratorModel {
    GeneratorConfig cfg;
    Polarity polarity = Polarity::Positive;
    ParamStore params;
    GeneratorWeights<Matrix> cache;

    void refresh_cache();
};

GeneratorModel make_generator(const GeneratorConfig& cfg, Polarity polarity, std::uint64_t seed);

// Core forward shared by evaluation and training. embeds holds one image
// embedding per row; the result is one matrix per prompt position, each
// holding that position's token for every sample.
template <typename E, typename V = typename E::V>
std::vector<V> generator_core(const E& eng, V embeds, const GeneratorWeights<V>& w,
                              Eigen::Index context_len) {
    std::vector<V> rows;
    rows.reserve(static_cast<std::size_t>(context_len));
    for (Eigen::Index m = 0; m < context_len; ++m) {
        rows.push_back(eng.add_rowvec(eng.matmul(embeds, w.inproj_w[static_cast<std::size_t>(m)]),
                                      w.inproj_b[static_cast<std::size_t>(m)]));
    }
    V x = eng.interleave_rows(rows);
    x = eng.add_tiled_rows(x, w.posemb);
    for (const auto& layer : w.layers) {
        x = transformer_layer(eng, x, layer, context_len);
    }
    std::vector<V> out;
    out.reserve(static_cast<std::size_t>(context_len));
    for (Eigen::Index m = 0; m < context_len; ++m) {
        V pos = eng.gather_stride_rows(x, context_len, m);
        out.push_back(eng.add_rowvec(eng.matmul(pos, w.head_w[static_cast<std::size_t>(m)]),
                                     w.head_b[static_cast<std::size_t>(m)]));
    }
    return out;
}

// Deterministic single-image forward; image_embed is 1 x d_feat, unit norm.
PromptVector generate_prompt(const GeneratorModel& g, const Matrix& image_embed);

// Batched differentiable forward; returns per-position outputs (B x d_tok).
std::vector<ad::Var> generator_forward_batch(ad::Tape& tape, GeneratorModel& g,
                                             const Matrix& embeds);

// Eq.-style alignment loss on a single sample quadruple: mean squared error
// over all M*d_tok entries of the positive pair plus alpha times the same
// for the negative pair.
double generator_loss(const PromptVector& pred_pos, const PromptVector& pred_neg,
                      const PromptVector& label_pos, const PromptVector& label_neg, double alpha);

struct Stage2Config {
    double alpha_loss = 0.2;
    int epochs = 50;
    double lr = 2e-3;          // per-dataset choice from the documented [2e-5, 2e-3] range
    int warmup_epochs = 4;
    double warmup_lr = 1e-5;
    double weight_decay = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int batch_size = 32;
    std::uint64_t seed = 1;
    GeneratorConfig arch;
    // single-path baseline knobs (SPG-style stochastic generation emulation)
    bool negative_enabled = true;
    double input_noise_scale = 0.0;  // gaussian noise added to phi(x), in units of 1/sqrt(d_feat)
};

// Per-epoch diagnostic: fusion accuracy of the current generators on the
// held-out source validation samples (the target stays unseen).
using EpochEvalFn = std::function<double(const GeneratorModel& g_pos, const GeneratorModel* g_neg,
                                         int epoch)>;

struct TrainedGenerators {
    GeneratorModel g_pos;
    GeneratorModel g_neg;  // untrained placeholder when negative path disabled
    bool has_negative = true;
    std::vector<int> provenance;           // source domains seen in training
    std::vector<double> loss_history;      // per-epoch mean combined loss
    std::vector<double> val_acc_history;   // per-epoch eval accuracy (if EpochEvalFn given)
};

TrainedGenerators train_generators(const DomainDataset& ds, const LodoSplit& split,
                                   const std::map<int, DomainPromptLabelPair>& label_pairs,
                                   const EncoderSet& enc, const Stage2Config& cfg,
                                   const EpochEvalFn& epoch_eval = nullptr);

void save_generator(const GeneratorModel& g, const std::string& path, std::uint64_t config_hash);
GeneratorModel load_generator(const std::string& path, std::uint64_t expect_config_hash);

void save_history_csv(const std::vector<double>& loss_history,
                      const std::vector<double>& val_history, const std::string& path,
                      std::uint64_t config_hash);

}  // namespace dpspg
