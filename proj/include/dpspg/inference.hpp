#pragma once

#include "dpspg/generator.hpp"

#include <optional>

namespace dpspg {

enum class EvalMode { Full, PositiveOnly, FixedPrompt };

std::string eval_mode_name(EvalMode mode);
EvalMode eval_mode_from_name(const std::string& name);

// Dual-path fusion for one image: g_i = s+_i - alpha * s-_i, probabilities
// softmax(g / tau).
struct FusionScores {
    Vector s_pos;  // <t+_i, phi(x)> per class
    Vector s_neg;  // <t-_i, phi(x)> per class (zero when no negative path)
    Vector g;
    Vector probs;
    int predicted = 0;
    double alpha = 0.0;
    double tau = 1.0;
};

// Everything evaluate_lodo needs, with training provenance for the
// contamination guard.
struct TrainedModels {
    GeneratorModel g_pos;
    GeneratorModel g_neg;
    bool has_negative = true;
    std::optional<PromptVector> fixed_prompt;  // pooled CoOp prompt (FixedPrompt mode)
    std::vector<int> provenance;               // domains whose data trained these models
    bool oracle = false;
    double input_noise_scale = 0.0;  // SPG-emulation noise at inference
    std::uint64_t noise_seed = 0;
};

// Per-image dual-path classification. x_raw is one raw sample (1 x d_raw).
// When `noise` is non-null it is added to the generator input embedding only;
// similarities always use the clean phi(x).
FusionScores fuse_and_classify(const EncoderSet& enc, const GeneratorModel& g_pos,
                               const GeneratorModel* g_neg, const Matrix& x_raw, double alpha,
                               double tau, const Matrix* noise = nullptr);

struct EvalReport {
    int target_domain = 0;
    EvalMode mode = EvalMode::Full;
    double alpha = 0.0;
    double tau = 1.0;
    double accuracy = 0.0;
    Vector per_class_accuracy;
    int n_test = 0;
};

// Leave-one-domain-out evaluation over every target-domain sample. Rejects
// models whose provenance includes the target (contamination guard).
EvalReport evaluate_lodo(const DomainDataset& ds, int target_domain, const TrainedModels& models,
                         const EncoderSet& enc, EvalMode mode, double alpha, double tau);

// CSV row: target,mode,alpha,tau,seed,accuracy,per_class...
std::string eval_report_csv_header(int n_classes);
std::string eval_report_csv_row(const EvalReport& report, std::uint64_t seed);
void save_eval_report(const EvalReport& report, std::uint64_t seed, const std::string& path,
                      std::uint64_t config_hash);

}  // namespace dpspg
