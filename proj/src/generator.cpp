#include "dpspg/generator.hpp"

#include "dpspg/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dpspg {

namespace {

std::string pos_name(const char* stem, int m, const char* leaf) {
    return std::string(stem) + std::to_string(m) + "." + leaf;
}

GeneratorWeights<Matrix> load_generator_weights(const ParamStore& store, const GeneratorConfig& cfg) {
    GeneratorWeights<Matrix> w;
    for (int m = 0; m < cfg.context_len; ++m) {
        w.inproj_w.push_back(store.value(pos_name("inproj", m, "w")));
        w.inproj_b.push_back(store.value(pos_name("inproj", m, "b")));
    }
    w.posemb = store.value("posemb");
    for (int l = 0; l < cfg.n_layers; ++l) {
        w.layers.push_back(load_layer_weights(store, "layer" + std::to_string(l) + ".", cfg.heads));
    }
    for (int m = 0; m < cfg.context_len; ++m) {
        w.head_w.push_back(store.value(pos_name("head", m, "w")));
        w.head_b.push_back(store.value(pos_name("head", m, "b")));
    }
    return w;
}

GeneratorWeights<ad::Var> load_generator_weights(ad::Tape& tape, ParamStore& store,
                                                 const GeneratorConfig& cfg) {
    GeneratorWeights<ad::Var> w;
    for (int m = 0; m < cfg.context_len; ++m) {
        w.inproj_w.push_back(tape.param(store, pos_name("inproj", m, "w")));
        w.inproj_b.push_back(tape.param(store, pos_name("inproj", m, "b")));
    }
    w.posemb = tape.param(store, "posemb");
    for (int l = 0; l < cfg.n_layers; ++l) {
        w.layers.push_back(load_layer_weights(tape, store, "layer" + std::to_string(l) + ".", cfg.heads));
    }
    for (int m = 0; m < cfg.context_len; ++m) {
        w.head_w.push_back(tape.param(store, pos_name("head", m, "w")));
        w.head_b.push_back(tape.param(store, pos_name("head", m, "b")));
    }
    return w;
}

}  // namespace

void GeneratorModel::refresh_cache() { cache = load_generator_weights(params, cfg); }

GeneratorModel make_generator(const GeneratorConfig& cfg, Polarity polarity, std::uint64_t seed) {
    if (cfg.n_layers != 4) {
        throw InvalidParameterError("make_generator: the generator uses exactly 4 transformer layers");
    }
    if (cfg.d_tok % cfg.heads != 0) {
        throw InvalidParameterError("make_generator: d_tok must be divisible by heads");
    }
    GeneratorModel g;
    g.cfg = cfg;
    g.polarity = polarity;
    Rng rng(derive_seed(seed, polarity == Polarity::Positive ? "gen.pos" : "gen.neg"));
    const double in_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_feat));
    const double tok_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_tok));
    for (int m = 0; m < cfg.context_len; ++m) {
        g.params.add(pos_name("inproj", m, "w"), rng.gaussian_matrix(cfg.d_feat, cfg.d_tok, in_scale));
        g.params.add(pos_name("inproj", m, "b"), Matrix::Zero(1, cfg.d_tok));
    }
    g.params.add("posemb", rng.gaussian_matrix(cfg.context_len, cfg.d_tok, tok_scale));
    const TransformerLayerConfig layer_cfg{cfg.d_tok, cfg.heads, cfg.ffn_hidden};
    for (int l = 0; l < cfg.n_layers; ++l) {
        init_transformer_layer(g.params, "layer" + std::to_string(l) + ".", layer_cfg, rng,
                               /*frozen=*/false);
    }
    for (int m = 0; m < cfg.context_len; ++m) {
        g.params.add(pos_name("head", m, "w"), rng.gaussian_matrix(cfg.d_tok, cfg.d_tok, tok_scale));
        g.params.add(pos_name("head", m, "b"), Matrix::Zero(1, cfg.d_tok));
    }
    g.refresh_cache();
    return g;
}

PromptVector generate_prompt(const GeneratorModel& g, const Matrix& image_embed) {
    if (image_embed.rows() != 1 || image_embed.cols() != g.cfg.d_feat) {
        throw InvalidShapeError("generate_prompt: image embedding must be 1 x d_feat");
    }
    PlainEngine eng;
    std::vector<Matrix> out = generator_core(eng, Matrix(image_embed), g.cache, g.cfg.context_len);
    PromptVector prompt(g.cfg.context_len, g.cfg.d_tok);
    for (int m = 0; m < g.cfg.context_len; ++m) {
        prompt.row(m) = out[static_cast<std::size_t>(m)].row(0);
    }
    require_finite(prompt, "generate_prompt output");
    return prompt;
}

std::vector<ad::Var> generator_forward_batch(ad::Tape& tape, GeneratorModel& g, const Matrix& embeds) {
    if (embeds.cols() != g.cfg.d_feat) {
        throw InvalidShapeError("generator_forward_batch: embedding width mismatch");
    }
    TapeEngine eng(tape);
    GeneratorWeights<ad::Var> w = load_generator_weights(tape, g.params, g.cfg);
    return generator_core(eng, tape.constant(embeds), w, g.cfg.context_len);
}

double generator_loss(const PromptVector& pred_pos, const PromptVector& pred_neg,
                      const PromptVector& label_pos, const PromptVector& label_neg, double alpha) {
    if (pred_pos.rows() != label_pos.rows() || pred_pos.cols() != label_pos.cols() ||
        pred_neg.rows() != label_neg.rows() || pred_neg.cols() != label_neg.cols() ||
        pred_pos.rows() != pred_neg.rows() || pred_pos.cols() != pred_neg.cols()) {
        throw InvalidShapeError("generator_loss: prompt shape mismatch");
    }
    if (alpha < 0.0) throw InvalidParameterError("generator_loss: alpha must be nonnegative");
    const double pos = (pred_pos - label_pos).squaredNorm() / static_cast<double>(pred_pos.size());
    const double neg = (pred_neg - label_neg).squaredNorm() / static_cast<double>(pred_neg.size());
    return pos + alpha * neg;
}

namespace {

// Per-position target matrices: row b of targets[m] is row m of the label
// prompt of sample b's domain.
std::vector<Matrix> stack_targets(const std::vector<const PromptVector*>& labels_by_sample,
                                  int context_len, int d_tok) {
    const auto b = static_cast<Eigen::Index>(labels_by_sample.size());
    std::vector<Matrix> targets(static_cast<std::size_t>(context_len));
    for (int m = 0; m < context_len; ++m) {
        targets[static_cast<std::size_t>(m)] = Matrix(b, d_tok);
        for (Eigen::Index i = 0; i < b; ++i) {
            targets[static_cast<std::size_t>(m)].row(i) =
                labels_by_sample[static_cast<std::size_t>(i)]->row(m);
        }
    }
    return targets;
}

ad::Var batch_alignment_loss(ad::Tape& tape, const std::vector<ad::Var>& preds,
                             const std::vector<Matrix>& targets) {
    // mean over positions of per-position MSE == per-sample MSE over M*d_tok
    ad::Var total = tape.mse(preds[0], tape.constant(targets[0]));
    for (std::size_t m = 1; m < preds.size(); ++m) {
        total = tape.add(total, tape.mse(preds[m], tape.constant(targets[m])));
    }
    return tape.scale(total, 1.0 / static_cast<double>(preds.size()));
}

}  // namespace

TrainedGenerators train_generators(const DomainDataset& ds, const LodoSplit& split,
                                   const std::map<int, DomainPromptLabelPair>& label_pairs,
                                   const EncoderSet& enc, const Stage2Config& cfg,
                                   const EpochEvalFn& epoch_eval) {
    for (int d : split.source_domains) {
        auto it = label_pairs.find(d);
        if (it == label_pairs.end()) {
            throw InvalidStateError("train_generators: missing label pair for source domain " +
                                    std::to_string(d));
        }
        if (it->second.oracle_tag) {
            throw ContaminationError("train_generators: oracle-tagged label pair offered as a training target");
        }
    }
    if (split.source_train.empty()) throw InvalidInputError("train_generators: no source samples");

    // frozen image embeddings, computed once
    const auto n = static_cast<int>(split.source_train.size());
    Matrix x_raw(n, ds.spec.d_raw);
    std::vector<int> sample_domain(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Sample& s = ds.samples[static_cast<std::size_t>(split.source_train[static_cast<std::size_t>(i)])];
        x_raw.row(i) = s.x.transpose();
        sample_domain[static_cast<std::size_t>(i)] = s.domain;
    }
    const Matrix embeds = encode_image(enc, x_raw);

    TrainedGenerators out;
    out.provenance = split.source_domains;
    out.has_negative = cfg.negative_enabled;
    out.g_pos = make_generator(cfg.arch, Polarity::Positive, derive_seed(cfg.seed, "stage2", 0));
    out.g_neg = make_generator(cfg.arch, Polarity::Negative, derive_seed(cfg.seed, "stage2", 1));

    const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const long total_steps = static_cast<long>(cfg.epochs) * steps_per_epoch;
    const long warmup_steps = static_cast<long>(cfg.warmup_epochs) * steps_per_epoch;
    OptimizerState opt_pos = make_adamw(cfg.lr, total_steps, warmup_steps, cfg.warmup_lr,
                                        cfg.weight_decay, cfg.beta1, cfg.beta2);
    OptimizerState opt_neg = make_adamw(cfg.lr, total_steps, warmup_steps, cfg.warmup_lr,
                                        cfg.weight_decay, cfg.beta1, cfg.beta2);

    Rng batch_rng(derive_seed(cfg.seed, "stage2.batches"));
    Rng noise_rng(derive_seed(cfg.seed, "stage2.noise"));
    const double noise_std = cfg.input_noise_scale / std::sqrt(static_cast<double>(enc.dims.d_feat));

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        batch_rng.shuffle(order);
        double epoch_loss = 0.0;
        int batches = 0;
        for (int b0 = 0; b0 < n; b0 += cfg.batch_size) {
            const int bn = std::min(cfg.batch_size, n - b0);
            Matrix e_batch(bn, enc.dims.d_feat);
            std::vector<const PromptVector*> pos_labels(static_cast<std::size_t>(bn));
            std::vector<const PromptVector*> neg_labels(static_cast<std::size_t>(bn));
            for (int i = 0; i < bn; ++i) {
                const int src = order[static_cast<std::size_t>(b0 + i)];
                e_batch.row(i) = embeds.row(src);
                const auto& pair = label_pairs.at(sample_domain[static_cast<std::size_t>(src)]);
                pos_labels[static_cast<std::size_t>(i)] = &pair.positive;
                neg_labels[static_cast<std::size_t>(i)] = &pair.negative;
            }
            if (noise_std > 0.0) {
                e_batch += noise_rng.gaussian_matrix(bn, enc.dims.d_feat, noise_std);
            }

            ad::Tape tape;
            auto pos_preds = generator_forward_batch(tape, out.g_pos, e_batch);
            ad::Var loss = batch_alignment_loss(
                tape, pos_preds, stack_targets(pos_labels, cfg.arch.context_len, cfg.arch.d_tok));
            if (cfg.negative_enabled) {
                auto neg_preds = generator_forward_batch(tape, out.g_neg, e_batch);
                ad::Var neg_loss = batch_alignment_loss(
                    tape, neg_preds, stack_targets(neg_labels, cfg.arch.context_len, cfg.arch.d_tok));
                loss = tape.add(loss, tape.scale(neg_loss, cfg.alpha_loss));
            }
            const double loss_value = tape.value(loss)(0, 0);
            if (!std::isfinite(loss_value)) {
                throw TrainingFailureError("stage-2 loss diverged", epoch);
            }
            tape.backward(loss);
            tape.export_grads();
            optimizer_step(out.g_pos.params, opt_pos, step);
            if (cfg.negative_enabled) optimizer_step(out.g_neg.params, opt_neg, step);
            ++step;
            epoch_loss += loss_value;
            ++batches;
        }
        out.loss_history.push_back(epoch_loss / batches);
        if (epoch_eval) {
            out.g_pos.refresh_cache();
            out.g_neg.refresh_cache();
            out.val_acc_history.push_back(
                epoch_eval(out.g_pos, cfg.negative_enabled ? &out.g_neg : nullptr, epoch));
        }
    }
    out.g_pos.refresh_cache();
    out.g_neg.refresh_cache();
    return out;
}

void save_generator(const GeneratorModel& g, const std::string& path, std::uint64_t config_hash) {
    auto os = io::open_out(path);
    io::write_magic(os, "DPG1");
    io::write_u64(os, config_hash);
    io::write_u32(os, g.polarity == Polarity::Positive ? 0u : 1u);
    io::write_u32(os, static_cast<std::uint32_t>(g.cfg.context_len));
    io::write_u32(os, static_cast<std::uint32_t>(g.cfg.d_tok));
    io::write_u32(os, static_cast<std::uint32_t>(g.cfg.d_feat));
    io::write_u32(os, static_cast<std::uint32_t>(g.cfg.n_layers));
    io::write_u32(os, static_cast<std::uint32_t>(g.cfg.heads));
    io::write_u32(os, static_cast<std::uint32_t>(g.cfg.ffn_hidden));
    io::write_param_store(os, g.params);
}

GeneratorModel load_generator(const std::string& path, std::uint64_t expect_config_hash) {
    auto is = io::open_in(path);
    io::expect_magic(is, "DPG1", path);
    const std::uint64_t hash = io::read_u64(is);
    if (expect_config_hash != 0 && hash != expect_config_hash) {
        throw ValidationError("generator checkpoint config hash mismatch: " + path);
    }
    GeneratorModel g;
    g.polarity = io::read_u32(is) == 0 ? Polarity::Positive : Polarity::Negative;
    g.cfg.context_len = static_cast<int>(io::read_u32(is));
    g.cfg.d_tok = static_cast<int>(io::read_u32(is));
    g.cfg.d_feat = static_cast<int>(io::read_u32(is));
    g.cfg.n_layers = static_cast<int>(io::read_u32(is));
    g.cfg.heads = static_cast<int>(io::read_u32(is));
    g.cfg.ffn_hidden = static_cast<int>(io::read_u32(is));
    g.params = io::read_param_store(is);
    g.refresh_cache();
    return g;
}

void save_history_csv(const std::vector<double>& loss_history,
                      const std::vector<double>& val_history, const std::string& path,
                      std::uint64_t config_hash) {
    std::ostringstream os;
    os << "# config_hash=" << to_hex(config_hash) << "\n";
    os << "epoch,loss,val_metric\n";
    for (std::size_t e = 0; e < loss_history.size(); ++e) {
        os << (e + 1) << "," << fmt_double(loss_history[e]) << ",";
        os << (e < val_history.size() ? fmt_double(val_history[e]) : "");
        os << "\n";
    }
    io::write_text_file(path, os.str());
}

}  // namespace dpspg
