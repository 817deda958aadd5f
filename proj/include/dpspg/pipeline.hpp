#pragma once

#include "dpspg/config.hpp"
#include "dpspg/diagnostics.hpp"
#include "dpspg/inference.hpp"
#include "dpspg/theory.hpp"

namespace dpspg {

// Canonical artifact paths under the run's output directory.
namespace paths {
std::string dataset_csv(const std::string& dir);
std::string dataset_spec(const std::string& dir);
std::string encoders(const std::string& dir);
std::string manifest(const std::string& dir);
std::string label_pair(const std::string& dir, int domain);
std::string pooled_prompt(const std::string& dir, int target);
std::string generator(const std::string& dir, int target, Polarity polarity);
std::string history(const std::string& dir, int target);
std::string eval_csv(const std::string& dir, int target, EvalMode mode);
std::string verification_csv(const std::string& dir);
std::string report_txt(const std::string& dir);
std::string sweep_dir(const std::string& dir);
}  // namespace paths

// Applies the DPSPG_OUTPUT_ROOT environment override to a relative
// output_dir.
std::string resolve_output_dir(const RunConfig& cfg);

void run_gen_data(const RunConfig& cfg);
void run_train_labels(const RunConfig& cfg);
void run_train_generators(const RunConfig& cfg);
EvalReport run_eval(const RunConfig& cfg, int target, EvalMode mode);

// Theory verification battery; writes verification.csv and returns the rows.
// The linearization / input-Jacobian sections need trained generators for
// cfg.targets.front().
std::vector<theory::CheckRow> run_verify(const RunConfig& cfg);

// One full-pipeline training/evaluation bundle for a given sweep seed.
struct SweepCell {
    std::uint64_t seed = 0;
    int target = 0;
    // accuracy per evaluation lane
    double acc_full = 0.0;            // dual generators, alpha = alpha_fuse
    double acc_positive_only = 0.0;   // dual generators, alpha = 0
    double acc_fixed_prompt = 0.0;    // pooled CoOp-style prompt
    double acc_single_noisy = 0.0;    // noisy single-path baseline, alpha = 0
    StabilityReport stability_dual;
    StabilityReport stability_single;
    double oracle_dist_dual = 0.0;    // mean distance of generated target prompts
    double oracle_dist_single = 0.0;  //   to the target's oracle prompt
    // flattened positive prompts per domain for variability pooling
    std::map<int, std::vector<PromptVector>> prompts_dual;
    std::map<int, std::vector<PromptVector>> prompts_dual_negative;
    std::map<int, std::vector<PromptVector>> prompts_single;
};

struct SweepOutcome {
    std::vector<SweepCell> cells;  // sorted by (seed, target)
    // pooled-over-seeds variability per target
    std::map<int, VariabilityReport> variability_dual;
    std::map<int, VariabilityReport> variability_dual_negative;
    std::map<int, VariabilityReport> variability_single;
    // per-seed lambdas per target
    std::map<int, std::vector<std::pair<std::uint64_t, double>>> lambda_per_seed_dual;
    std::map<int, std::vector<std::pair<std::uint64_t, double>>> lambda_per_seed_single;

    double mean_acc_full = 0.0;
    double mean_acc_positive_only = 0.0;
    double mean_acc_fixed_prompt = 0.0;
    double mean_acc_single_noisy = 0.0;
    double mean_lambda_dual = 0.0;    // mean over targets of pooled lambda
    double mean_lambda_single = 0.0;
    double mean_std10_dual = 0.0;
    double mean_std10_single = 0.0;
};

// Full seed sweep: dataset and encoders stay fixed, training re-seeds per
// sweep seed, dual and noisy single-path arms run on matched seeds. Writes
// the aggregate CSV family plus a JSON manifest under <out>/sweep/.
SweepOutcome run_sweep(const RunConfig& cfg);

std::string run_report(const RunConfig& cfg);

}  // namespace dpspg
