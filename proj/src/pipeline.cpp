#include "dpspg/pipeline.hpp"

#include "dpspg/grad_check.hpp"
#include "dpspg/serialize.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <thread>

namespace dpspg {

namespace fs = std::filesystem;

namespace paths {
std::string dataset_csv(const std::string& dir) { return dir + "/dataset.csv"; }
std::string dataset_spec(const std::string& dir) { return dir + "/dataset.spec.json"; }
std::string encoders(const std::string& dir) { return dir + "/encoders.dpv"; }
std::string manifest(const std::string& dir) { return dir + "/manifest.json"; }
std::string label_pair(const std::string& dir, int domain) {
    return dir + "/labels_domain" + std::to_string(domain) + ".dpl";
}
std::string pooled_prompt(const std::string& dir, int target) {
    return dir + "/pooled_prompt_target" + std::to_string(target) + ".dpl";
}
std::string generator(const std::string& dir, int target, Polarity polarity) {
    return dir + "/generator_" + (polarity == Polarity::Positive ? "pos" : "neg") + "_target" +
           std::to_string(target) + ".dpg";
}
std::string history(const std::string& dir, int target) {
    return dir + "/stage2_history_target" + std::to_string(target) + ".csv";
}
std::string eval_csv(const std::string& dir, int target, EvalMode mode) {
    return dir + "/eval_target" + std::to_string(target) + "_" + eval_mode_name(mode) + ".csv";
}
std::string verification_csv(const std::string& dir) { return dir + "/verification.csv"; }
std::string report_txt(const std::string& dir) { return dir + "/report.txt"; }
std::string sweep_dir(const std::string& dir) { return dir + "/sweep"; }
}  // namespace paths

std::string resolve_output_dir(const RunConfig& cfg) {
    const char* root = std::getenv("DPSPG_OUTPUT_ROOT");
    if (root != nullptr && root[0] != '\0' && !fs::path(cfg.output_dir).is_absolute()) {
        return std::string(root) + "/" + cfg.output_dir;
    }
    return cfg.output_dir;
}

namespace {

RunManifest require_manifest(const RunConfig& cfg, const std::string& dir) {
    RunManifest m = load_manifest(paths::manifest(dir));
    if (m.config_hash_hex != to_hex(config_hash(cfg))) {
        throw ValidationError("manifest config hash " + m.config_hash_hex +
                              " does not match the current config " + to_hex(config_hash(cfg)) +
                              "; rerun gen-data");
    }
    return m;
}

struct RunArtifacts {
    DomainDataset ds;
    EncoderSet enc;
};

RunArtifacts load_run_artifacts(const RunConfig& cfg, const std::string& dir) {
    const std::uint64_t hash = config_hash(cfg);
    RunArtifacts a{load_dataset(paths::dataset_csv(dir), paths::dataset_spec(dir), hash),
                   load_encoders(paths::encoders(dir), hash)};
    return a;
}

std::map<int, DomainPromptLabelPair> load_source_label_pairs(const RunConfig& cfg,
                                                             const std::string& dir,
                                                             const RunManifest& manifest,
                                                             const LodoSplit& split) {
    const std::uint64_t hash = config_hash(cfg);
    std::map<int, DomainPromptLabelPair> pairs;
    for (int d : split.source_domains) {
        const auto& info = manifest.artifact_for_use("labels.domain" + std::to_string(d));
        pairs[d] = load_label_pair(info.path, hash);
    }
    return pairs;
}

// Per-epoch diagnostic accuracy on the pooled source validation split.
EpochEvalFn make_epoch_eval(const DomainDataset& ds, const LodoSplit& split, const EncoderSet& enc,
                            double alpha, double tau, double noise_scale, std::uint64_t seed) {
    auto xs = std::make_shared<std::vector<Matrix>>();
    auto ys = std::make_shared<std::vector<int>>();
    for (int idx : split.source_val) {
        const Sample& s = ds.samples[static_cast<std::size_t>(idx)];
        xs->push_back(s.x.transpose());
        ys->push_back(s.label);
    }
    const int d_feat = enc.dims.d_feat;
    const EncoderSet* enc_ptr = &enc;
    return [xs, ys, enc_ptr, alpha, tau, noise_scale, seed, d_feat](
               const GeneratorModel& g_pos, const GeneratorModel* g_neg, int epoch) {
        Rng rng(derive_seed(seed, "epoch_eval", static_cast<std::uint64_t>(epoch)));
        const double noise_std = noise_scale / std::sqrt(static_cast<double>(d_feat));
        int correct = 0;
        for (std::size_t i = 0; i < xs->size(); ++i) {
            Matrix noise;
            const Matrix* noise_ptr = nullptr;
            if (noise_scale > 0.0) {
                noise = rng.gaussian_matrix(1, d_feat, noise_std);
                noise_ptr = &noise;
            }
            const FusionScores fs =
                fuse_and_classify(*enc_ptr, g_pos, g_neg, (*xs)[i], alpha, tau, noise_ptr);
            if (fs.predicted == (*ys)[i]) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(xs->size());
    };
}

}  // namespace

void run_gen_data(const RunConfig& cfg) {
    const std::string dir = resolve_output_dir(cfg);
    fs::create_directories(dir);
    const std::uint64_t hash = config_hash(cfg);

    DomainDataset ds = generate_dataset(cfg.dataset);
    save_dataset(ds, paths::dataset_csv(dir), paths::dataset_spec(dir), hash);

    EncoderSet enc = make_encoders(cfg.encoders, cfg.encoder_seed);
    save_encoders(enc, paths::encoders(dir), hash);

    RunManifest m;
    m.config_hash_hex = to_hex(hash);
    m.data_done = true;
    m.register_artifact("dataset", {paths::dataset_csv(dir), {}, false});
    m.register_artifact("encoders", {paths::encoders(dir), {}, false});
    save_manifest(m, paths::manifest(dir));
}

void run_train_labels(const RunConfig& cfg) {
    const std::string dir = resolve_output_dir(cfg);
    RunManifest m = require_manifest(cfg, dir);
    if (!m.data_done) {
        throw StageOrderError("train-labels requires gen-data artifacts: " + paths::dataset_csv(dir));
    }
    const std::uint64_t hash = config_hash(cfg);
    RunArtifacts a = load_run_artifacts(cfg, dir);

    for (int d = 0; d < cfg.dataset.n_domains; ++d) {
        DomainPromptLabelPair pair = train_domain_labels(a.ds, d, a.enc, cfg.stage1);
        const std::string path = paths::label_pair(dir, d);
        save_label_pair(pair, path, hash);
        m.register_artifact("labels.domain" + std::to_string(d), {path, {d}, false});
    }
    for (int t : cfg.targets) {
        const LodoSplit split = leave_one_out_split(a.ds, t);
        DomainPromptLabelPair pooled = train_pooled_prompt(a.ds, split.source_domains, a.enc, cfg.stage1);
        const std::string path = paths::pooled_prompt(dir, t);
        save_label_pair(pooled, path, hash);
        m.register_artifact("pooled.target" + std::to_string(t),
                            {path, split.source_domains, false});
    }
    m.labels_done = true;
    save_manifest(m, paths::manifest(dir));
}

void run_train_generators(const RunConfig& cfg) {
    const std::string dir = resolve_output_dir(cfg);
    RunManifest m = require_manifest(cfg, dir);
    if (!m.labels_done) {
        throw StageOrderError("train-generators requires label checkpoints: " +
                              paths::label_pair(dir, 0));
    }
    const std::uint64_t hash = config_hash(cfg);
    RunArtifacts a = load_run_artifacts(cfg, dir);

    for (int t : cfg.targets) {
        const LodoSplit split = leave_one_out_split(a.ds, t);
        const auto pairs = load_source_label_pairs(cfg, dir, m, split);
        const EpochEvalFn eval_fn =
            make_epoch_eval(a.ds, split, a.enc, cfg.alpha_fuse, cfg.tau, 0.0, cfg.stage2.seed);
        TrainedGenerators gens = train_generators(a.ds, split, pairs, a.enc, cfg.stage2, eval_fn);

        const std::string pos_path = paths::generator(dir, t, Polarity::Positive);
        const std::string neg_path = paths::generator(dir, t, Polarity::Negative);
        save_generator(gens.g_pos, pos_path, hash);
        save_generator(gens.g_neg, neg_path, hash);
        save_history_csv(gens.loss_history, gens.val_acc_history, paths::history(dir, t), hash);
        m.register_artifact("generator.pos.target" + std::to_string(t),
                            {pos_path, split.source_domains, false});
        m.register_artifact("generator.neg.target" + std::to_string(t),
                            {neg_path, split.source_domains, false});
        if (!m.generators_done(t)) m.generators_done_targets.push_back(t);
    }
    std::sort(m.generators_done_targets.begin(), m.generators_done_targets.end());
    save_manifest(m, paths::manifest(dir));
}

namespace {

TrainedModels load_models_for_target(const RunConfig& cfg, const std::string& dir,
                                     const RunManifest& m, int target, bool want_fixed_prompt) {
    const std::uint64_t hash = config_hash(cfg);
    if (!m.generators_done(target)) {
        throw StageOrderError("eval requires trained generators: " +
                              paths::generator(dir, target, Polarity::Positive));
    }
    const auto& pos_info = m.artifact_for_use("generator.pos.target" + std::to_string(target));
    const auto& neg_info = m.artifact_for_use("generator.neg.target" + std::to_string(target));
    TrainedModels models;
    models.g_pos = load_generator(pos_info.path, hash);
    models.g_neg = load_generator(neg_info.path, hash);
    models.has_negative = true;
    models.provenance = pos_info.provenance;
    if (want_fixed_prompt) {
        const auto& pooled_info = m.artifact_for_use("pooled.target" + std::to_string(target));
        models.fixed_prompt = load_label_pair(pooled_info.path, hash).positive;
    }
    return models;
}

}  // namespace

EvalReport run_eval(const RunConfig& cfg, int target, EvalMode mode) {
    const std::string dir = resolve_output_dir(cfg);
    RunManifest m = require_manifest(cfg, dir);
    RunArtifacts a = load_run_artifacts(cfg, dir);
    TrainedModels models = load_models_for_target(cfg, dir, m, target, mode == EvalMode::FixedPrompt);
    EvalReport report = evaluate_lodo(a.ds, target, models, a.enc, mode, cfg.alpha_fuse, cfg.tau);
    save_eval_report(report, cfg.stage2.seed, paths::eval_csv(dir, target, mode), config_hash(cfg));
    return report;
}

// ---------------------------------------------------------------------------
// Verification battery
// ---------------------------------------------------------------------------

namespace {

theory::CheckRow softmax_jacobian_fd_check() {
    double worst = 0.0;
    Rng rng(20240501);
    const double taus[3] = {0.05, 0.1, 1.0};
    for (int rep = 0; rep < 100; ++rep) {
        const int k = 2 + static_cast<int>(rng.below(9));
        const double tau = taus[rng.below(3)];
        Vector logits = rng.gaussian_matrix(k, 1);
        const Vector probs = ops::softmax(logits, tau);
        const Matrix analytic = ops::softmax_jacobian(probs, tau);
        const double eps = 1e-6;
        for (int j = 0; j < k; ++j) {
            Vector up = logits, down = logits;
            up(j) += eps;
            down(j) -= eps;
            const Vector fd = (ops::softmax(up, tau) - ops::softmax(down, tau)) / (2.0 * eps);
            for (int i = 0; i < k; ++i) {
                worst = std::max(worst, std::abs(fd(i) - analytic(i, j)));
            }
        }
    }
    return {"eq13_softmax_jacobian_fd", "n=100;K=2..10;tau={0.05,0.1,1};eps=1e-6", worst, 1e-6,
            worst <= 1e-6};
}

std::pair<theory::CheckRow, theory::CheckRow> margin_identity_and_bound_checks() {
    Rng rng(20240502);
    double worst_identity = 0.0;
    int bound_violations = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const int k = 2 + static_cast<int>(rng.below(7));
        Vector s_pos = rng.gaussian_matrix(k, 1);
        Vector s_neg = rng.gaussian_matrix(k, 1);
        const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
        const double alpha = rng.uniform(0.0, 1.0);
        const auto r = theory::margin_report(s_pos, s_neg, y, alpha);
        worst_identity = std::max(worst_identity, r.max_identity_error);
        if (!r.bound_satisfied) ++bound_violations;
    }
    theory::CheckRow identity{"eq10_margin_identity", "n=1000", worst_identity, 1e-12,
                              worst_identity <= 1e-12};
    theory::CheckRow bound{"eq12_margin_bound", "n=1000", static_cast<double>(bound_violations), 0.0,
                           bound_violations == 0};
    return {identity, bound};
}

theory::CheckRow gradient_norm_bound_check() {
    Rng rng(20240503);
    double worst_excess = -std::numeric_limits<double>::infinity();
    for (int rep = 0; rep < 1000; ++rep) {
        const double delta = rng.uniform(0.0, 10.0);
        const double tau = rng.uniform(0.05, 2.0);
        const auto r = theory::binary_jacobian_bound_check(delta, tau);
        worst_excess = std::max(worst_excess, r.analytic_norm - r.bound);
    }
    return {"eq15_gradient_norm_bound", "n=1000;delta=[0,10];tau=[0.05,2]", worst_excess, 0.0,
            worst_excess <= 0.0};
}

theory::CheckRow binary_jacobian_fd_check() {
    Rng rng(20240504);
    double worst = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        const double delta = rng.uniform(-3.0, 6.0);
        const double tau = rng.uniform(0.05, 2.0);
        // FD of f_y over the two-logit softmax with logits (delta, 0)
        Vector logits(2);
        logits(0) = delta;
        logits(1) = 0.0;
        const double eps = 1e-6;
        Vector up = logits, down = logits;
        up(1) += eps;
        down(1) -= eps;
        const double fd =
            std::abs((ops::softmax(up, tau)(0) - ops::softmax(down, tau)(0)) / (2.0 * eps));
        const double analytic = theory::binary_jacobian_bound_check(delta, tau).analytic_norm;
        worst = std::max(worst, std::abs(fd - analytic));
    }
    return {"eq14_binary_jacobian_fd", "n=50;eps=1e-6", worst, 1e-5, worst <= 1e-5};
}

// Fresh miniature task per seed; the losses are checked against the central
// finite-difference oracle.
double grad_check_stage1(bool positive, std::uint64_t seed) {
    EncoderDims dims;
    dims.d_raw = 8;
    dims.d_tok = 16;
    dims.d_feat = 16;
    dims.context_len = 3;
    dims.n_classes = 4;
    dims.image_hidden = 12;
    dims.text_heads = 4;
    dims.text_ffn_hidden = 24;
    EncoderSet enc = make_encoders(dims, derive_seed(seed, "gc.enc"));
    Rng rng(derive_seed(seed, "gc.data"));
    const int batch = 6;
    Matrix x = rng.gaussian_matrix(batch, dims.d_raw);
    Matrix embeds = encode_image(enc, x);
    std::vector<int> labels;
    for (int i = 0; i < batch; ++i) {
        labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(dims.n_classes))));
    }
    ParamStore store;
    store.add("v", rng.gaussian_matrix(dims.context_len, dims.d_tok, 0.05));
    LossFn fn = [&](ParamStore& p, bool want_grad) {
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
    GradCheckOptions opts;
    opts.max_coords_per_param = 24;
    opts.seed = derive_seed(seed, "gc.coords");
    return grad_check(fn, store, 1e-5, opts);
}

double grad_check_stage2(std::uint64_t seed) {
    GeneratorConfig gcfg;
    gcfg.context_len = 3;
    gcfg.d_tok = 8;
    gcfg.d_feat = 12;
    gcfg.heads = 2;
    gcfg.ffn_hidden = 16;
    GeneratorModel g_pos = make_generator(gcfg, Polarity::Positive, derive_seed(seed, "gc.gp"));
    GeneratorModel g_neg = make_generator(gcfg, Polarity::Negative, derive_seed(seed, "gc.gn"));
    Rng rng(derive_seed(seed, "gc.batch"));
    const int batch = 5;
    Matrix embeds = ops::l2_normalize_rows(rng.gaussian_matrix(batch, gcfg.d_feat));
    Matrix label_pos = rng.gaussian_matrix(gcfg.context_len, gcfg.d_tok, 0.3);
    Matrix label_neg = rng.gaussian_matrix(gcfg.context_len, gcfg.d_tok, 0.3);
    const double alpha = 0.2;

    auto batch_loss = [&](ad::Tape& tape, GeneratorModel& gp, GeneratorModel& gn) {
        auto tile = [&](const Matrix& label, int m) {
            Matrix t(batch, gcfg.d_tok);
            for (int b = 0; b < batch; ++b) t.row(b) = label.row(m);
            return t;
        };
        auto preds_p = generator_forward_batch(tape, gp, embeds);
        ad::Var total = tape.mse(preds_p[0], tape.constant(tile(label_pos, 0)));
        for (int m = 1; m < gcfg.context_len; ++m) {
            total = tape.add(total,
                             tape.mse(preds_p[static_cast<std::size_t>(m)],
                                      tape.constant(tile(label_pos, m))));
        }
        auto preds_n = generator_forward_batch(tape, gn, embeds);
        ad::Var total_n = tape.mse(preds_n[0], tape.constant(tile(label_neg, 0)));
        for (int m = 1; m < gcfg.context_len; ++m) {
            total_n = tape.add(total_n,
                               tape.mse(preds_n[static_cast<std::size_t>(m)],
                                        tape.constant(tile(label_neg, m))));
        }
        const double inv_m = 1.0 / static_cast<double>(gcfg.context_len);
        return tape.add(tape.scale(total, inv_m), tape.scale(tape.scale(total_n, inv_m), alpha));
    };

    // check gradients of both generators' parameters through the combined loss
    double worst = 0.0;
    for (GeneratorModel* g : {&g_pos, &g_neg}) {
        LossFn fn = [&](ParamStore& p, bool want_grad) {
            (void)p;  // the store IS g->params
            ad::Tape tape;
            ad::Var loss = batch_loss(tape, g_pos, g_neg);
            if (want_grad) {
                tape.backward(loss);
                tape.export_grads();
            }
            return tape.value(loss)(0, 0);
        };
        GradCheckOptions opts;
        opts.max_coords_per_param = 2;
        opts.seed = derive_seed(seed, "gc.coords2");
        worst = std::max(worst, grad_check(fn, g->params, 1e-5, opts));
    }
    return worst;
}

// Walks toward the decision boundary until the binary softmax is
// non-degenerate (f_y * f_i above the curvature floor).
bool pick_linearization_point(const DomainDataset& ds, const std::vector<int>& target_idx,
                              const theory::LogitFn& pipeline, double tau, Vector& x_out, int& y_out,
                              int& i_out) {
    auto top_two = [&](const Vector& g, int& a, int& b) {
        a = 0;
        for (int c = 1; c < g.size(); ++c) {
            if (g(c) > g(a)) a = c;
        }
        b = a == 0 ? 1 : 0;
        for (int c = 0; c < g.size(); ++c) {
            if (c != a && g(c) > g(b)) b = c;
        }
    };
    auto curvature = [&](const Vector& x, int y, int i) {
        const Vector f = theory::binary_softmax_pair(pipeline(x), y, i, tau);
        return f(0) * f(1);
    };
    constexpr double kFloor = 0.05;
    for (int idx : target_idx) {
        const Vector& x = ds.samples[static_cast<std::size_t>(idx)].x;
        int y = 0, i = 0;
        top_two(pipeline(x), y, i);
        if (curvature(x, y, i) >= kFloor) {
            x_out = x;
            y_out = y;
            i_out = i;
            return true;
        }
    }
    // no sample sits near the boundary; bisect between two samples whose
    // predictions differ until the pairwise softmax is soft
    for (std::size_t a = 0; a < target_idx.size(); ++a) {
        for (std::size_t b = a + 1; b < target_idx.size(); ++b) {
            const Vector& xa = ds.samples[static_cast<std::size_t>(target_idx[a])].x;
            const Vector& xb = ds.samples[static_cast<std::size_t>(target_idx[b])].x;
            int ya = 0, ia = 0, yb = 0, ib = 0;
            top_two(pipeline(xa), ya, ia);
            top_two(pipeline(xb), yb, ib);
            if (ya == yb) continue;
            double lo = 0.0, hi = 1.0;
            for (int it = 0; it < 60; ++it) {
                const double mid = 0.5 * (lo + hi);
                const Vector xm = (1.0 - mid) * xa + mid * xb;
                int ym = 0, im = 0;
                top_two(pipeline(xm), ym, im);
                if (curvature(xm, ym, im) >= kFloor) {
                    x_out = xm;
                    y_out = ym;
                    i_out = im;
                    return true;
                }
                if (ym == ya) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
    }
    return false;
}

double spearman_rank_correlation(std::vector<double> a, std::vector<double> b) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        for (std::size_t pos = 0; pos < idx.size(); ++pos) {
            r[idx[pos]] = static_cast<double>(pos);
        }
        return r;
    };
    const std::vector<double> ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(ra.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

}  // namespace

std::vector<theory::CheckRow> run_verify(const RunConfig& cfg) {
    const std::string dir = resolve_output_dir(cfg);
    RunManifest m = require_manifest(cfg, dir);

    std::vector<theory::CheckRow> rows;
    rows.push_back(softmax_jacobian_fd_check());
    auto [identity, bound] = margin_identity_and_bound_checks();
    rows.push_back(identity);
    rows.push_back(bound);
    rows.push_back(gradient_norm_bound_check());
    rows.push_back(binary_jacobian_fd_check());

    for (const char* name : {"eq4", "eq5", "eq6"}) {
        double worst = 0.0;
        for (std::uint64_t s = 1; s <= 3; ++s) {
            if (std::string(name) == "eq4") {
                worst = std::max(worst, grad_check_stage1(true, s));
            } else if (std::string(name) == "eq5") {
                worst = std::max(worst, grad_check_stage1(false, s));
            } else {
                worst = std::max(worst, grad_check_stage2(s));
            }
        }
        rows.push_back({std::string(name) + "_grad_check", "seeds=3;eps=1e-5", worst, 1e-4,
                        worst <= 1e-4});
    }

    // trained-pipeline section
    const int target = cfg.targets.front();
    RunArtifacts a = load_run_artifacts(cfg, dir);
    TrainedModels models = load_models_for_target(cfg, dir, m, target, /*want_fixed_prompt=*/false);
    const theory::LogitFn pipeline = [&](const Vector& x) {
        const FusionScores fs = fuse_and_classify(a.enc, models.g_pos,
                                                  models.has_negative ? &models.g_neg : nullptr,
                                                  x.transpose(), cfg.alpha_fuse, cfg.tau);
        return fs.g;
    };
    const std::vector<int> target_idx = a.ds.domain_indices(target);

    Vector x_lin;
    int y_lin = 0, i_lin = 0;
    if (!pick_linearization_point(a.ds, target_idx, pipeline, cfg.tau, x_lin, y_lin, i_lin)) {
        rows.push_back({"eq18_linearization_ratio", "no-nondegenerate-point", 0.0, 0.0, false});
    } else {
        const auto ratios =
            theory::linearization_ratios(pipeline, x_lin, y_lin, i_lin, cfg.tau, 1e-2, 8, 99);
        double mean_ratio = 0.0;
        for (double r : ratios) mean_ratio += r;
        mean_ratio = ratios.empty() ? 0.0 : mean_ratio / static_cast<double>(ratios.size());
        const bool pass = ratios.size() >= 3 && mean_ratio >= 3.5 && mean_ratio <= 4.5;
        rows.push_back({"eq18_linearization_ratio", "step=1e-2;dirs=8", mean_ratio, 4.0, pass});

        const auto jr = theory::input_jacobian_report(pipeline, x_lin, y_lin, i_lin, cfg.tau);
        rows.push_back({"eq16_input_jacobian_bound", "empirical-L", jr.fd_norm, jr.lipschitz_bound,
                        jr.bound_holds});
    }

    // gradient norms shrink as margins grow (sampled over target points)
    {
        std::vector<double> margins, norms;
        const std::size_t step = std::max<std::size_t>(1, target_idx.size() / 24);
        for (std::size_t i = 0; i < target_idx.size() && margins.size() < 24; i += step) {
            const Sample& s = a.ds.samples[static_cast<std::size_t>(target_idx[i])];
            const Vector g = pipeline(s.x);
            int yb = 0;
            for (int c = 1; c < g.size(); ++c) {
                if (g(c) > g(yb)) yb = c;
            }
            int ib = yb == 0 ? 1 : 0;
            for (int c = 0; c < g.size(); ++c) {
                if (c != yb && g(c) > g(ib)) ib = c;
            }
            const auto jr = theory::input_jacobian_report(pipeline, s.x, yb, ib, cfg.tau, 1e-5, 0);
            margins.push_back(jr.margin);
            norms.push_back(jr.fd_norm);
        }
        const double rho = spearman_rank_correlation(margins, norms);
        rows.push_back({"margin_vs_gradnorm_rank_corr", "n=" + std::to_string(margins.size()), rho,
                        0.0, rho < 0.0});
    }

    io::write_text_file(paths::verification_csv(dir), theory::checks_to_csv(rows, config_hash(cfg)));
    return rows;
}

// ---------------------------------------------------------------------------
// Seed sweep
// ---------------------------------------------------------------------------

namespace {

std::vector<int> variability_subset(const DomainDataset& ds, int domain, int count) {
    std::vector<int> idx = ds.domain_indices(domain);
    if (static_cast<int>(idx.size()) > count) idx.resize(static_cast<std::size_t>(count));
    return idx;
}

// Everything one sweep seed produces for one target.
SweepCell run_sweep_cell(const RunConfig& cfg, const DomainDataset& ds, const EncoderSet& enc,
                         const std::map<int, DomainPromptLabelPair>& pairs,
                         const DomainPromptLabelPair& pooled,
                         const DomainPromptLabelPair& oracle_pair, std::uint64_t seed, int target) {
    SweepCell cell;
    cell.seed = seed;
    cell.target = target;
    const LodoSplit split = leave_one_out_split(ds, target);

    Stage1Config s1 = cfg.stage1;
    s1.seed = seed;
    Stage2Config s2_dual = cfg.stage2;
    s2_dual.seed = seed;
    s2_dual.negative_enabled = true;
    s2_dual.input_noise_scale = 0.0;
    Stage2Config s2_single = cfg.stage2;
    s2_single.seed = seed;
    s2_single.negative_enabled = false;
    s2_single.input_noise_scale = cfg.baseline_noise_scale;

    const EpochEvalFn eval_dual =
        make_epoch_eval(ds, split, enc, cfg.alpha_fuse, cfg.tau, 0.0, derive_seed(seed, "ev.dual"));
    const EpochEvalFn eval_single = make_epoch_eval(ds, split, enc, 0.0, cfg.tau,
                                                    cfg.baseline_noise_scale,
                                                    derive_seed(seed, "ev.single"));

    TrainedGenerators dual = train_generators(ds, split, pairs, enc, s2_dual, eval_dual);
    TrainedGenerators single = train_generators(ds, split, pairs, enc, s2_single, eval_single);

    TrainedModels dual_models;
    dual_models.g_pos = dual.g_pos;
    dual_models.g_neg = dual.g_neg;
    dual_models.has_negative = true;
    dual_models.provenance = split.source_domains;
    dual_models.fixed_prompt = pooled.positive;

    TrainedModels single_models;
    single_models.g_pos = single.g_pos;
    single_models.g_neg = single.g_neg;
    single_models.has_negative = false;
    single_models.provenance = split.source_domains;
    single_models.input_noise_scale = cfg.baseline_noise_scale;
    single_models.noise_seed = derive_seed(seed, "inference.noise");

    cell.acc_full =
        evaluate_lodo(ds, target, dual_models, enc, EvalMode::Full, cfg.alpha_fuse, cfg.tau).accuracy;
    cell.acc_positive_only =
        evaluate_lodo(ds, target, dual_models, enc, EvalMode::PositiveOnly, cfg.alpha_fuse, cfg.tau)
            .accuracy;
    cell.acc_fixed_prompt =
        evaluate_lodo(ds, target, dual_models, enc, EvalMode::FixedPrompt, cfg.alpha_fuse, cfg.tau)
            .accuracy;
    cell.acc_single_noisy =
        evaluate_lodo(ds, target, single_models, enc, EvalMode::PositiveOnly, cfg.alpha_fuse, cfg.tau)
            .accuracy;

    cell.stability_dual = training_stability(dual.val_acc_history);
    cell.stability_single = training_stability(single.val_acc_history);

    // prompt clouds for variability / projection / oracle distance
    Rng noise_rng(derive_seed(seed, "variability.noise", static_cast<std::uint64_t>(target)));
    const double noise_std =
        cfg.baseline_noise_scale / std::sqrt(static_cast<double>(enc.dims.d_feat));
    for (int d = 0; d < ds.spec.n_domains; ++d) {
        for (int idx : variability_subset(ds, d, cfg.variability_samples_per_domain)) {
            const Matrix x_row = ds.samples[static_cast<std::size_t>(idx)].x.transpose();
            const Matrix e = encode_image(enc, x_row);
            cell.prompts_dual[d].push_back(generate_prompt(dual.g_pos, e));
            cell.prompts_dual_negative[d].push_back(generate_prompt(dual.g_neg, e));
            const Matrix e_noisy = e + noise_rng.gaussian_matrix(1, enc.dims.d_feat, noise_std);
            cell.prompts_single[d].push_back(generate_prompt(single.g_pos, e_noisy));
        }
    }
    cell.oracle_dist_dual = mean_distance_to(cell.prompts_dual.at(target), oracle_pair.positive);
    cell.oracle_dist_single = mean_distance_to(cell.prompts_single.at(target), oracle_pair.positive);
    return cell;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    return v.empty() ? 0.0 : std::sqrt(var / static_cast<double>(v.size()));
}

}  // namespace

SweepOutcome run_sweep(const RunConfig& cfg) {
    const std::string dir = resolve_output_dir(cfg);
    RunManifest manifest = require_manifest(cfg, dir);
    if (!manifest.data_done) {
        throw StageOrderError("sweep requires gen-data artifacts: " + paths::dataset_csv(dir));
    }
    const std::string sdir = paths::sweep_dir(dir);
    fs::create_directories(sdir);
    RunArtifacts a = load_run_artifacts(cfg, dir);

    // oracle reference prompts, one per target, shared across sweep seeds
    std::map<int, DomainPromptLabelPair> oracles;
    for (int t : cfg.targets) {
        Stage1Config s1 = cfg.stage1;
        s1.seed = derive_seed(cfg.stage1.seed, "oracle", static_cast<std::uint64_t>(t));
        oracles[t] = oracle_prompt(a.ds, t, a.enc, s1);
    }

    struct SeedTask {
        std::uint64_t seed;
        std::vector<SweepCell> cells;
        std::string error;
    };
    std::vector<SeedTask> tasks;
    for (std::uint64_t s : cfg.sweep_seeds) tasks.push_back({s, {}, {}});

    auto run_one_seed = [&](SeedTask& task) {
        try {
            Stage1Config s1 = cfg.stage1;
            s1.seed = task.seed;
            std::map<int, DomainPromptLabelPair> pairs;
            for (int d = 0; d < cfg.dataset.n_domains; ++d) {
                pairs[d] = train_domain_labels(a.ds, d, a.enc, s1);
            }
            std::map<int, DomainPromptLabelPair> pooled;
            for (int t : cfg.targets) {
                const LodoSplit split = leave_one_out_split(a.ds, t);
                pooled[t] = train_pooled_prompt(a.ds, split.source_domains, a.enc, s1);
            }
            for (int t : cfg.targets) {
                task.cells.push_back(run_sweep_cell(cfg, a.ds, a.enc, pairs, pooled.at(t),
                                                    oracles.at(t), task.seed, t));
            }
        } catch (const std::exception& e) {
            task.error = e.what();
        }
    };

    const int jobs = std::min<int>(cfg.sweep_jobs, static_cast<int>(tasks.size()));
    if (jobs <= 1) {
        for (SeedTask& t : tasks) run_one_seed(t);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        for (int w = 0; w < jobs; ++w) {
            workers.emplace_back([&] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= tasks.size()) return;
                    run_one_seed(tasks[i]);
                }
            });
        }
        for (auto& w : workers) w.join();
    }

    SweepOutcome out;
    std::vector<std::string> failures;
    for (const SeedTask& t : tasks) {
        if (!t.error.empty()) {
            failures.push_back("seed " + std::to_string(t.seed) + ": " + t.error);
            continue;
        }
        out.cells.insert(out.cells.end(), t.cells.begin(), t.cells.end());
    }
    std::sort(out.cells.begin(), out.cells.end(), [](const SweepCell& x, const SweepCell& y) {
        return std::tie(x.seed, x.target) < std::tie(y.seed, y.target);
    });

    // pooled variability per target
    for (int t : cfg.targets) {
        std::map<int, std::vector<PromptVector>> dual_sets, dual_neg_sets, single_sets;
        std::vector<std::pair<std::uint64_t, double>> lam_dual, lam_single;
        for (const SweepCell& c : out.cells) {
            if (c.target != t) continue;
            for (const auto& [d, ps] : c.prompts_dual) {
                dual_sets[d].insert(dual_sets[d].end(), ps.begin(), ps.end());
            }
            for (const auto& [d, ps] : c.prompts_dual_negative) {
                dual_neg_sets[d].insert(dual_neg_sets[d].end(), ps.begin(), ps.end());
            }
            for (const auto& [d, ps] : c.prompts_single) {
                single_sets[d].insert(single_sets[d].end(), ps.begin(), ps.end());
            }
            lam_dual.emplace_back(c.seed, variability(c.prompts_dual, t).lambda);
            lam_single.emplace_back(c.seed, variability(c.prompts_single, t).lambda);
        }
        if (dual_sets.empty()) continue;
        out.variability_dual[t] = variability(dual_sets, t);
        out.variability_dual_negative[t] = variability(dual_neg_sets, t);
        out.variability_single[t] = variability(single_sets, t);
        out.lambda_per_seed_dual[t] = lam_dual;
        out.lambda_per_seed_single[t] = lam_single;
    }

    // headline means
    std::vector<double> accf, accp, accx, accs, l_dual, l_single, s_dual, s_single;
    for (const SweepCell& c : out.cells) {
        accf.push_back(c.acc_full);
        accp.push_back(c.acc_positive_only);
        accx.push_back(c.acc_fixed_prompt);
        accs.push_back(c.acc_single_noisy);
        s_dual.push_back(c.stability_dual.std_last_10);
        s_single.push_back(c.stability_single.std_last_10);
    }
    for (const auto& [t, v] : out.variability_dual) l_dual.push_back(v.lambda);
    for (const auto& [t, v] : out.variability_single) l_single.push_back(v.lambda);
    out.mean_acc_full = mean_of(accf);
    out.mean_acc_positive_only = mean_of(accp);
    out.mean_acc_fixed_prompt = mean_of(accx);
    out.mean_acc_single_noisy = mean_of(accs);
    out.mean_lambda_dual = mean_of(l_dual);
    out.mean_lambda_single = mean_of(l_single);
    out.mean_std10_dual = mean_of(s_dual);
    out.mean_std10_single = mean_of(s_single);

    // ---- CSV family -------------------------------------------------------
    const std::uint64_t hash = config_hash(cfg);
    const std::string stamp = "# config_hash=" + to_hex(hash) + "\n";

    {
        std::ostringstream os;
        os << stamp << "arm,target,mode,alpha,tau,seed,accuracy\n";
        for (const SweepCell& c : out.cells) {
            os << "dual," << c.target << ",full," << fmt_double(cfg.alpha_fuse) << ","
               << fmt_double(cfg.tau) << "," << c.seed << "," << fmt_double(c.acc_full) << "\n";
            os << "dual," << c.target << ",positive_only,0," << fmt_double(cfg.tau) << "," << c.seed
               << "," << fmt_double(c.acc_positive_only) << "\n";
            os << "dual," << c.target << ",fixed_prompt,0," << fmt_double(cfg.tau) << "," << c.seed
               << "," << fmt_double(c.acc_fixed_prompt) << "\n";
            os << "single_noisy," << c.target << ",positive_only,0," << fmt_double(cfg.tau) << ","
               << c.seed << "," << fmt_double(c.acc_single_noisy) << "\n";
        }
        io::write_text_file(sdir + "/eval_results.csv", os.str());
    }
    {
        std::ostringstream os;
        os << stamp << "arm,mode,target,mean_accuracy,std_accuracy,n_seeds\n";
        auto emit = [&](const std::string& arm, const std::string& mode, int t,
                        const std::vector<double>& vals) {
            os << arm << "," << mode << "," << (t < 0 ? std::string("all") : std::to_string(t))
               << "," << fmt_double(mean_of(vals)) << "," << fmt_double(std_of(vals)) << ","
               << vals.size() << "\n";
        };
        for (int t : cfg.targets) {
            std::vector<double> f, p, x, s;
            for (const SweepCell& c : out.cells) {
                if (c.target != t) continue;
                f.push_back(c.acc_full);
                p.push_back(c.acc_positive_only);
                x.push_back(c.acc_fixed_prompt);
                s.push_back(c.acc_single_noisy);
            }
            emit("dual", "full", t, f);
            emit("dual", "positive_only", t, p);
            emit("dual", "fixed_prompt", t, x);
            emit("single_noisy", "positive_only", t, s);
        }
        emit("dual", "full", -1, accf);
        emit("dual", "positive_only", -1, accp);
        emit("dual", "fixed_prompt", -1, accx);
        emit("single_noisy", "positive_only", -1, accs);
        io::write_text_file(sdir + "/aggregate.csv", os.str());
    }
    {
        std::ostringstream os;
        os << stamp << "arm,target,seed,std_last_10,final_accuracy\n";
        for (const SweepCell& c : out.cells) {
            os << "dual," << c.target << "," << c.seed << ","
               << fmt_double(c.stability_dual.std_last_10) << ","
               << fmt_double(c.stability_dual.final_accuracy) << "\n";
            os << "single_noisy," << c.target << "," << c.seed << ","
               << fmt_double(c.stability_single.std_last_10) << ","
               << fmt_double(c.stability_single.final_accuracy) << "\n";
        }
        io::write_text_file(sdir + "/stability.csv", os.str());
    }
    {
        std::ostringstream os;
        os << stamp << "scope,arm,target,R_target,D,lambda\n";
        auto emit_pooled = [&](const char* arm, const std::map<int, VariabilityReport>& reports) {
            for (const auto& [t, v] : reports) {
                os << "pooled," << arm << "," << t << "," << fmt_double(v.intra_domain.at(t)) << ","
                   << fmt_double(v.inter_centroid) << "," << fmt_double(v.lambda) << "\n";
            }
        };
        emit_pooled("dual", out.variability_dual);
        emit_pooled("dual_negative", out.variability_dual_negative);
        emit_pooled("single_noisy", out.variability_single);
        for (const auto& [t, per_seed] : out.lambda_per_seed_dual) {
            for (const auto& [s, lam] : per_seed) {
                os << "seed_" << s << ",dual," << t << ",,," << fmt_double(lam) << "\n";
            }
        }
        for (const auto& [t, per_seed] : out.lambda_per_seed_single) {
            for (const auto& [s, lam] : per_seed) {
                os << "seed_" << s << ",single_noisy," << t << ",,," << fmt_double(lam) << "\n";
            }
        }
        io::write_text_file(sdir + "/variability.csv", os.str());
    }
    {
        std::ostringstream os;
        os << stamp << "arm,target,seed,mean_distance\n";
        for (const SweepCell& c : out.cells) {
            os << "dual," << c.target << "," << c.seed << "," << fmt_double(c.oracle_dist_dual)
               << "\n";
            os << "single_noisy," << c.target << "," << c.seed << ","
               << fmt_double(c.oracle_dist_single) << "\n";
        }
        io::write_text_file(sdir + "/oracle_distance.csv", os.str());
    }
    {
        // 2-D projection of dual-arm positive prompt clouds, one block per target
        std::ostringstream os;
        os << stamp << "target,domain,seed,x,y\n";
        for (int t : cfg.targets) {
            std::vector<PromptVector> prompts;
            std::vector<std::pair<int, std::uint64_t>> tags;
            for (int d = 0; d < cfg.dataset.n_domains; ++d) {
                for (const SweepCell& c : out.cells) {
                    if (c.target != t) continue;
                    auto it = c.prompts_dual.find(d);
                    if (it == c.prompts_dual.end()) continue;
                    for (const PromptVector& p : it->second) {
                        prompts.push_back(p);
                        tags.emplace_back(d, c.seed);
                    }
                }
            }
            if (prompts.size() < 3) continue;
            const Projection2D proj = project_2d(prompts);
            for (std::size_t i = 0; i < prompts.size(); ++i) {
                os << t << "," << tags[i].first << "," << tags[i].second << ","
                   << fmt_double(proj.coords(static_cast<Eigen::Index>(i), 0)) << ","
                   << fmt_double(proj.coords(static_cast<Eigen::Index>(i), 1)) << "\n";
            }
        }
        io::write_text_file(sdir + "/projection.csv", os.str());
    }
    {
        nlohmann::json j;
        j["config_hash"] = to_hex(hash);
        j["seeds"] = cfg.sweep_seeds;
        j["targets"] = cfg.targets;
        j["jobs"] = cfg.sweep_jobs;
        j["versions"] = {{"artifact", "dpspg-1.0"},
                         {"formats", {"DPV1", "DPL1", "DPG1"}}};
        j["failures"] = failures;
        io::write_text_file(sdir + "/sweep_manifest.json", j.dump(2) + "\n");
    }

    if (!failures.empty()) {
        throw NumericFailureError("sweep finished with " + std::to_string(failures.size()) +
                                  " failed seed(s); partial results and failure manifest written to " +
                                  sdir);
    }
    return out;
}

std::string run_report(const RunConfig& cfg) {
    const std::string dir = resolve_output_dir(cfg);
    RunManifest m = require_manifest(cfg, dir);
    std::ostringstream os;
    os << "dpspg run report\n";
    os << "config_hash: " << m.config_hash_hex << "\n";
    os << "output_dir: " << dir << "\n";
    os << "stages: data=" << (m.data_done ? "done" : "pending")
       << " labels=" << (m.labels_done ? "done" : "pending") << " generators=[";
    for (std::size_t i = 0; i < m.generators_done_targets.size(); ++i) {
        os << (i ? "," : "") << m.generators_done_targets[i];
    }
    os << "]\n";

    if (m.labels_done) {
        const std::uint64_t hash = config_hash(cfg);
        os << "\nstage-1 label pairs (validation-selected):\n";
        for (int d = 0; d < cfg.dataset.n_domains; ++d) {
            const auto pair = load_label_pair(paths::label_pair(dir, d), hash);
            os << "  domain " << d << ": val_accuracy=" << fmt_double(pair.val_accuracy)
               << " (epoch " << pair.epoch_selected << "), val_bce=" << fmt_double(pair.val_bce)
               << " (epoch " << pair.epoch_selected_neg << ")\n";
        }
    }
    for (int t : cfg.targets) {
        for (EvalMode mode : {EvalMode::Full, EvalMode::PositiveOnly, EvalMode::FixedPrompt}) {
            const std::string path = paths::eval_csv(dir, t, mode);
            if (fs::exists(path)) {
                os << "eval " << eval_mode_name(mode) << " target " << t << ": "
                   << io::read_text_file(path);
            }
        }
    }
    const std::string agg = paths::sweep_dir(dir) + "/aggregate.csv";
    if (fs::exists(agg)) {
        os << "\nsweep aggregate:\n" << io::read_text_file(agg);
    }
    const std::string ver = paths::verification_csv(dir);
    if (fs::exists(ver)) {
        os << "\nverification:\n" << io::read_text_file(ver);
    }
    const std::string text = os.str();
    io::write_text_file(paths::report_txt(dir), text);
    return text;
}

}  // namespace dpspg
