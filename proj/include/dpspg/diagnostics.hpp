#pragma once

#include "dpspg/inference.hpp"

#include <map>

namespace dpspg {

// Prompt-variability metrics: R_d is the mean pairwise Euclidean distance
// among flattened prompts generated for domain-d samples (pooled over seeds),
// D the mean pairwise distance between per-domain prompt centroids, and
// lambda = R_target / D.
struct VariabilityReport {
    std::map<int, double> intra_domain;  // R_d
    double inter_centroid = 0.0;         // D
    double lambda = 0.0;
    int target_domain = 0;
};

VariabilityReport variability(const std::map<int, std::vector<PromptVector>>& prompt_sets,
                              int target_domain);

// Std of the last ten per-epoch eval accuracies (population convention).
struct StabilityReport {
    std::vector<double> accuracy_history;
    double std_last_10 = 0.0;
    double final_accuracy = 0.0;
};

StabilityReport training_stability(const std::vector<double>& history);

// Principal-component projection of flattened prompts onto the top two
// components. Sign convention: the first nonzero loading entry of each
// component is nonnegative. Rank-deficient inputs zero the second coordinate.
struct Projection2D {
    Matrix coords;  // N x 2
    bool rank_deficient = false;
};

Projection2D project_2d(const std::vector<PromptVector>& prompts);

// Stage-1 training on the held-out target domain itself. Diagnostic
// reference only: the result is ORACLE-tagged so the contamination guard
// rejects it anywhere evaluation models are expected.
DomainPromptLabelPair oracle_prompt(const DomainDataset& ds, int target_domain,
                                    const EncoderSet& enc, const Stage1Config& cfg);

double mean_distance_to(const std::vector<PromptVector>& prompts, const PromptVector& reference);

}  // namespace dpspg
