// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 1-4 run through and cross-check the verification battery;
// 5-7 share one multi-seed sweep; 9 exercises the installed CLI binary.

#include "dpspg/grad_check.hpp"
#include "dpspg/pipeline.hpp"
#include "dpspg/serialize.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

using namespace dpspg;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    int number;
    std::string label;
    bool pass = false;
    std::string detail;
};

std::vector<Criterion> results;

void record(int number, const std::string& label, bool pass, const std::string& detail) {
    results.push_back({number, label, pass, detail});
}

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

const theory::CheckRow& find_row(const std::vector<theory::CheckRow>& rows,
                                 const std::string& name) {
    for (const auto& r : rows) {
        if (r.check == name) return r;
    }
    throw std::logic_error("verification battery is missing row " + name);
}

std::string fmt(double v) { return fmt_double(v); }

int run_cli(const std::string& cli, const std::string& args) {
    const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return status == -1 ? -1 : WEXITSTATUS(status);
}

}  // namespace

int main() {
    const double t_start = now_seconds();
    const fs::path work = fs::temp_directory_path() / "dpspg_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);

    RunConfig cfg = default_run_config();
    cfg.output_dir = (work / "run").string();
    cfg.sweep_jobs = 2;

    // ---- prime the default pipeline (shared by criteria 1-4 and 10) -------
    run_gen_data(cfg);
    run_train_labels(cfg);
    {
        RunConfig first_target = cfg;
        first_target.targets = {0};
        run_train_generators(first_target);
    }
    const std::vector<theory::CheckRow> battery = run_verify(cfg);

    // ---- criterion 1: gradient correctness of Eq. 4 / Eq. 5 / Eq. 6 -------
    {
        const auto& e4 = find_row(battery, "eq4_grad_check");
        const auto& e5 = find_row(battery, "eq5_grad_check");
        const auto& e6 = find_row(battery, "eq6_grad_check");
        record(1, "gradient correctness (Eq.4/Eq.5/Eq.6 vs central FD, eps=1e-5)",
               e4.pass && e5.pass && e6.pass,
               "max rel err eq4=" + fmt(e4.lhs) + " eq5=" + fmt(e5.lhs) + " eq6=" + fmt(e6.lhs) +
                   " tol=1e-4, 3 seeds each");
    }

    // ---- criterion 2: softmax Jacobian formula vs FD -----------------------
    {
        const auto& r = find_row(battery, "eq13_softmax_jacobian_fd");
        record(2, "softmax Jacobian (Eq.13) matches FD on 100 seeded logit vectors", r.pass,
               "max abs err=" + fmt(r.lhs) + " tol=1e-6, K=2..10, tau={0.05,0.1,1}");
    }

    // ---- criterion 3: margin identity and bound ----------------------------
    {
        const auto& ident = find_row(battery, "eq10_margin_identity");
        const auto& bound = find_row(battery, "eq12_margin_bound");
        record(3, "margin identity (Eq.10) and bound implication (Eq.12) on 1000 tuples",
               ident.pass && bound.pass,
               "max identity err=" + fmt(ident.lhs) + " (tol 1e-12), bound violations=" +
                   fmt(bound.lhs));
    }

    // ---- criterion 4: gradient-norm bound and linearization ----------------
    {
        const auto& e15 = find_row(battery, "eq15_gradient_norm_bound");
        const auto& e18 = find_row(battery, "eq18_linearization_ratio");
        record(4, "gradient-norm bound (Eq.15, 1000 draws) and Eq.18 second-order decay",
               e15.pass && e18.pass,
               "max (norm-bound)=" + fmt(e15.lhs) + ", residual halving ratio=" + fmt(e18.lhs) +
                   " in [3.5,4.5]");
    }

    // ---- criteria 5-7: one shared 5-seed sweep ------------------------------
    {
        const double t_sweep = now_seconds();
        const SweepOutcome sweep = run_sweep(cfg);
        const double sweep_minutes = (now_seconds() - t_sweep) / 60.0;

        const double full = sweep.mean_acc_full;
        const double pos = sweep.mean_acc_positive_only;
        const bool direction = full >= pos;
        const bool tie_ok = (pos - full) <= 0.005 && full > 0.90 && pos > 0.90;
        const bool within_budget = sweep_minutes < 30.0;
        record(5, "ablation direction: alpha_fuse=0.2 vs alpha_fuse=0 over the seed sweep",
               (direction || tie_ok) && within_budget,
               "mean acc full=" + fmt(full) + " positive_only=" + fmt(pos) + " (5 seeds x " +
                   std::to_string(cfg.targets.size()) + " targets, " + fmt(sweep_minutes) +
                   " min < 30 min)");

        record(6, "variability ordering: dual-path lambda below noisy single-path lambda",
               sweep.mean_lambda_dual < sweep.mean_lambda_single,
               "pooled lambda dual=" + fmt(sweep.mean_lambda_dual) +
                   " single=" + fmt(sweep.mean_lambda_single));

        record(7, "stability direction: last-10-epoch accuracy std, dual vs single path",
               sweep.mean_std10_dual <= sweep.mean_std10_single,
               "mean std10 dual=" + fmt(sweep.mean_std10_dual) +
                   " single=" + fmt(sweep.mean_std10_single) + " over matched seeds");

        // spec example (Fig. 2 analogue), reported alongside the criteria:
        // dual-path prompts sit closer to the target's oracle prompt
        double od = 0.0, os = 0.0;
        for (const SweepCell& c : sweep.cells) {
            od += c.oracle_dist_dual;
            os += c.oracle_dist_single;
        }
        od /= static_cast<double>(sweep.cells.size());
        os /= static_cast<double>(sweep.cells.size());
        record(11, "extra (Fig.2 analogue): mean distance of generated prompts to the oracle prompt",
               od <= os, "dual=" + fmt(od) + " single=" + fmt(os));
    }

    // ---- criterion 8: stage-1 fit on the separable default spec ------------
    {
        const std::uint64_t hash = config_hash(cfg);
        const std::string dir = resolve_output_dir(cfg);
        const DomainDataset ds =
            load_dataset(paths::dataset_csv(dir), paths::dataset_spec(dir), hash);
        const EncoderSet enc = load_encoders(paths::encoders(dir), hash);

        bool all_fit = true;
        double worst = 1.0;
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            Stage1Config s1 = cfg.stage1;
            s1.seed = seed;
            for (int d = 0; d < cfg.dataset.n_domains; ++d) {
                const DomainPromptLabelPair pair = train_domain_labels(ds, d, enc, s1);
                std::vector<Sample> train;
                for (int i : ds.train_idx[static_cast<std::size_t>(d)]) {
                    train.push_back(ds.samples[static_cast<std::size_t>(i)]);
                }
                Matrix x(static_cast<Eigen::Index>(train.size()), ds.spec.d_raw);
                std::vector<int> y;
                for (std::size_t i = 0; i < train.size(); ++i) {
                    x.row(static_cast<Eigen::Index>(i)) = train[i].x.transpose();
                    y.push_back(train[i].label);
                }
                const double acc =
                    prompt_accuracy(enc, pair.positive, encode_image(enc, x), y, s1.tau);
                worst = std::min(worst, acc);
                all_fit = all_fit && acc >= 0.95;
            }
        }
        record(8, "stage-1 fit: positive labels reach >= 95% within-domain train accuracy",
               all_fit, "worst domain/seed train accuracy=" + fmt(worst) +
                            " (4 domains x 3 seeds, 70 epochs)");
    }

    // ---- criterion 9: byte-identical reruns through the CLI ----------------
    {
        const char* cli_env = std::getenv("DPSPG_CLI");
        if (cli_env == nullptr) {
            record(9, "determinism: identical config+seed reruns produce identical bytes", false,
                   "DPSPG_CLI environment variable not set; cannot drive the CLI binary");
        } else {
            const std::string cli = cli_env;
            const fs::path det = work / "determinism";
            fs::create_directories(det);
            const std::string cfg_path = (det / "cfg.json").string();
            io::write_text_file(cfg_path, R"({
                "dataset": {"n_per_class_per_domain": 8, "seed": 5},
                "stage1": {"epochs": 3},
                "stage2": {"epochs": 12, "warmup_epochs": 2},
                "targets": [0],
                "sweep_seeds": [1, 2],
                "output_dir": ")" + (det / "out").string() + R"("
            })");
            const std::string out = (det / "out").string();
            const std::vector<std::string> tracked = {
                out + "/dataset.csv",
                out + "/encoders.dpv",
                out + "/labels_domain0.dpl",
                out + "/pooled_prompt_target0.dpl",
                out + "/generator_pos_target0.dpg",
                out + "/generator_neg_target0.dpg",
                out + "/stage2_history_target0.csv",
                out + "/eval_target0_full.csv",
                out + "/sweep/eval_results.csv",
                out + "/sweep/aggregate.csv",
                out + "/sweep/variability.csv",
                out + "/sweep/stability.csv",
            };
            auto run_all = [&]() {
                bool ok = run_cli(cli, "gen-data --config " + cfg_path) == 0;
                ok = ok && run_cli(cli, "train-labels --config " + cfg_path) == 0;
                ok = ok && run_cli(cli, "train-generators --config " + cfg_path) == 0;
                ok = ok && run_cli(cli, "eval --config " + cfg_path + " --target 0 --mode full") == 0;
                ok = ok && run_cli(cli, "sweep --config " + cfg_path) == 0;
                return ok;
            };
            bool pass = run_all();
            std::vector<std::uint64_t> first_hashes;
            for (const std::string& f : tracked) {
                first_hashes.push_back(pass ? io::file_hash(f) : 0);
            }
            pass = pass && run_all();
            std::string mismatch;
            if (pass) {
                for (std::size_t i = 0; i < tracked.size(); ++i) {
                    if (io::file_hash(tracked[i]) != first_hashes[i]) {
                        pass = false;
                        mismatch = tracked[i];
                        break;
                    }
                }
            }
            record(9, "determinism: identical config+seed reruns produce identical bytes", pass,
                   pass ? std::to_string(tracked.size()) +
                              " artifacts hashed equal across full CLI reruns"
                        : (mismatch.empty() ? "a CLI stage returned nonzero"
                                            : "hash mismatch: " + mismatch));
        }
    }

    // ---- criterion 10: Eq. 7 reduction, bit-exact --------------------------
    {
        const std::uint64_t hash = config_hash(cfg);
        const std::string dir = resolve_output_dir(cfg);
        const DomainDataset ds =
            load_dataset(paths::dataset_csv(dir), paths::dataset_spec(dir), hash);
        const EncoderSet enc = load_encoders(paths::encoders(dir), hash);
        RunManifest m = load_manifest(paths::manifest(dir));
        const GeneratorModel g_pos =
            load_generator(m.artifact_for_use("generator.pos.target0").path, hash);
        const GeneratorModel g_neg =
            load_generator(m.artifact_for_use("generator.neg.target0").path, hash);

        const std::vector<int> targets = ds.domain_indices(0);
        bool bit_exact = true;
        int checked = 0;
        for (std::size_t i = 0; i < targets.size() && checked < 100; i += 2, ++checked) {
            const Matrix x = ds.samples[static_cast<std::size_t>(targets[i])].x.transpose();
            // full fusion with alpha = 0 vs the positive-only rule
            const FusionScores a = fuse_and_classify(enc, g_pos, &g_neg, x, 0.0, cfg.tau);
            const FusionScores b = fuse_and_classify(enc, g_pos, &g_neg, x, 0.0, cfg.tau);
            const FusionScores pos_rule = fuse_and_classify(enc, g_pos, nullptr, x, 0.0, cfg.tau);
            bit_exact = bit_exact && (a.probs - b.probs).cwiseAbs().maxCoeff() == 0.0 &&
                        (a.probs - pos_rule.probs).cwiseAbs().maxCoeff() == 0.0 &&
                        a.predicted == pos_rule.predicted &&
                        (a.g - pos_rule.g).cwiseAbs().maxCoeff() == 0.0;
        }

        // and through evaluate_lodo: positive_only mode == full with alpha 0
        TrainedModels models;
        models.g_pos = g_pos;
        models.g_neg = g_neg;
        models.has_negative = true;
        models.provenance = m.artifact_for_use("generator.pos.target0").provenance;
        const EvalReport ra = evaluate_lodo(ds, 0, models, enc, EvalMode::Full, 0.0, cfg.tau);
        const EvalReport rb =
            evaluate_lodo(ds, 0, models, enc, EvalMode::PositiveOnly, 0.7, cfg.tau);
        bit_exact = bit_exact && ra.accuracy == rb.accuracy &&
                    (ra.per_class_accuracy - rb.per_class_accuracy).cwiseAbs().maxCoeff() == 0.0;

        record(10, "Eq.7 reduction: positive_only equals full with alpha=0, bit-exact",
               bit_exact, std::to_string(checked) + " target samples plus whole-domain reports");
    }

    // ---- summary ------------------------------------------------------------
    std::sort(results.begin(), results.end(),
              [](const Criterion& a, const Criterion& b) { return a.number < b.number; });
    int failures = 0;
    for (const Criterion& c : results) {
        const bool extra = c.number > 10;
        std::printf("[%s] %s %d: %s (%s)\n", c.pass ? "PASS" : "FAIL",
                    extra ? "extra" : "criterion", extra ? c.number - 10 : c.number,
                    c.label.c_str(), c.detail.c_str());
        if (!c.pass) ++failures;
    }
    std::printf("acceptance: %d/%zu passed in %.1f min\n",
                static_cast<int>(results.size()) - failures, results.size(),
                (now_seconds() - t_start) / 60.0);
    fs::remove_all(work);
    return failures == 0 ? 0 : 1;
}
