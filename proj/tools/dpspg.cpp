// dpspg command-line driver: gen-data, train-labels, train-generators, eval,
// sweep, verify, report. One JSON config file feeds every stage; scalar flags
// override file values. Exit codes: 0 ok, 2 validation, 3 stage order,
// 4 numeric/training failure, 5 contamination.

#include "dpspg/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

struct Overrides {
    std::string config_path;
    std::string output_dir;
    double alpha_fuse = -1.0;
    double tau = -1.0;
    long stage1_seed = -1;
    long stage2_seed = -1;
    long dataset_seed = -1;
    int stage1_epochs = -1;
    int stage2_epochs = -1;
    int jobs = -1;
};

dpspg::RunConfig load_with_overrides(const Overrides& ov) {
    dpspg::RunConfig cfg = ov.config_path.empty() ? dpspg::default_run_config()
                                                  : dpspg::load_run_config(ov.config_path);
    if (!ov.output_dir.empty()) cfg.output_dir = ov.output_dir;
    if (ov.alpha_fuse >= 0.0) cfg.alpha_fuse = ov.alpha_fuse;
    if (ov.tau > 0.0) cfg.tau = ov.tau;
    if (ov.stage1_seed >= 0) cfg.stage1.seed = static_cast<std::uint64_t>(ov.stage1_seed);
    if (ov.stage2_seed >= 0) cfg.stage2.seed = static_cast<std::uint64_t>(ov.stage2_seed);
    if (ov.dataset_seed >= 0) cfg.dataset.seed = static_cast<std::uint64_t>(ov.dataset_seed);
    if (ov.stage1_epochs > 0) cfg.stage1.epochs = ov.stage1_epochs;
    if (ov.stage2_epochs > 0) cfg.stage2.epochs = ov.stage2_epochs;
    if (ov.jobs > 0) cfg.sweep_jobs = ov.jobs;
    cfg.validate();
    return cfg;
}

void add_common_flags(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--config", ov.config_path, "JSON config file (defaults used when omitted)");
    cmd->add_option("--out", ov.output_dir, "output directory override");
    cmd->add_option("--alpha-fuse", ov.alpha_fuse, "fusion weight alpha override");
    cmd->add_option("--tau", ov.tau, "softmax temperature override");
    cmd->add_option("--stage1-seed", ov.stage1_seed, "stage-1 training seed override");
    cmd->add_option("--stage2-seed", ov.stage2_seed, "stage-2 training seed override");
    cmd->add_option("--dataset-seed", ov.dataset_seed, "dataset generation seed override");
    cmd->add_option("--stage1-epochs", ov.stage1_epochs, "stage-1 epoch count override");
    cmd->add_option("--stage2-epochs", ov.stage2_epochs, "stage-2 epoch count override");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-path stable soft prompt generation (desk-scale pipeline)"};
    app.require_subcommand(1);
    app.allow_extras(false);

    Overrides ov;
    int target = 0;
    std::string mode_name = "full";

    CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset and frozen encoders");
    add_common_flags(gen, ov);

    CLI::App* labels = app.add_subcommand("train-labels", "stage 1: train per-domain prompt label pairs");
    add_common_flags(labels, ov);

    CLI::App* gens = app.add_subcommand("train-generators", "stage 2: train the dual prompt generators");
    add_common_flags(gens, ov);

    CLI::App* eval = app.add_subcommand("eval", "leave-one-domain-out evaluation on a target domain");
    add_common_flags(eval, ov);
    eval->add_option("--target", target, "held-out target domain index")->required();
    eval->add_option("--mode", mode_name, "full | positive_only | fixed_prompt");

    CLI::App* sweep = app.add_subcommand("sweep", "multi-seed sweep with dual and noisy single-path arms");
    add_common_flags(sweep, ov);
    sweep->add_option("--jobs", ov.jobs, "parallel seed workers");

    CLI::App* verify = app.add_subcommand("verify", "run the margin/Jacobian/gradient verification battery");
    add_common_flags(verify, ov);

    CLI::App* report = app.add_subcommand("report", "consolidated summary of all artifacts");
    add_common_flags(report, ov);

    CLI11_PARSE(app, argc, argv);

    try {
        const dpspg::RunConfig cfg = load_with_overrides(ov);
        if (gen->parsed()) {
            dpspg::run_gen_data(cfg);
            std::printf("gen-data: wrote dataset and encoders under %s\n",
                        dpspg::resolve_output_dir(cfg).c_str());
        } else if (labels->parsed()) {
            dpspg::run_train_labels(cfg);
            std::printf("train-labels: wrote label checkpoints under %s\n",
                        dpspg::resolve_output_dir(cfg).c_str());
        } else if (gens->parsed()) {
            dpspg::run_train_generators(cfg);
            std::printf("train-generators: wrote generator checkpoints under %s\n",
                        dpspg::resolve_output_dir(cfg).c_str());
        } else if (eval->parsed()) {
            const dpspg::EvalReport r =
                dpspg::run_eval(cfg, target, dpspg::eval_mode_from_name(mode_name));
            std::printf("eval: target=%d mode=%s accuracy=%.4f (n=%d)\n", r.target_domain,
                        dpspg::eval_mode_name(r.mode).c_str(), r.accuracy, r.n_test);
        } else if (sweep->parsed()) {
            const dpspg::SweepOutcome s = dpspg::run_sweep(cfg);
            std::printf("sweep: full=%.4f positive_only=%.4f fixed_prompt=%.4f single_noisy=%.4f\n",
                        s.mean_acc_full, s.mean_acc_positive_only, s.mean_acc_fixed_prompt,
                        s.mean_acc_single_noisy);
            std::printf("sweep: lambda dual=%.4f single=%.4f | std10 dual=%.4f single=%.4f\n",
                        s.mean_lambda_dual, s.mean_lambda_single, s.mean_std10_dual,
                        s.mean_std10_single);
        } else if (verify->parsed()) {
            const auto rows = dpspg::run_verify(cfg);
            bool all_pass = true;
            for (const auto& r : rows) {
                std::printf("%-34s %s (lhs=%.3g rhs=%.3g)\n", r.check.c_str(),
                            r.pass ? "PASS" : "FAIL", r.lhs, r.rhs);
                all_pass = all_pass && r.pass;
            }
            if (!all_pass) {
                std::fprintf(stderr, "verify: one or more checks failed\n");
                return 4;
            }
        } else if (report->parsed()) {
            std::fputs(dpspg::run_report(cfg).c_str(), stdout);
        }
        return 0;
    } catch (const dpspg::ValidationError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return 2;
    } catch (const dpspg::InvalidParameterError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return 2;
    } catch (const dpspg::StageOrderError& e) {
        std::fprintf(stderr, "stage-order error: %s\n", e.what());
        return 3;
    } catch (const dpspg::ContaminationError& e) {
        std::fprintf(stderr, "contamination error: %s\n", e.what());
        return 5;
    } catch (const dpspg::TrainingFailureError& e) {
        std::fprintf(stderr, "training failure: %s\n", e.what());
        return 4;
    } catch (const dpspg::NumericFailureError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
