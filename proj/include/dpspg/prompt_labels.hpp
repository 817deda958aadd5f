#pragma once

#include "dpspg/datagen.hpp"
#include "dpspg/encoders.hpp"

#include <vector>

namespace dpspg {

struct Stage1Config {
    int epochs = 70;
    double lr = 0.3;  // the frozen synthetic encoders need a larger step than CLIP-scale prompt tuning
    int batch_size = 32;
    double tau = 0.1;      // softmax temperature over cosine similarities
    double tau_bce = 0.05;  // sigmoid temperature for the negative path
    // Prompts start from the matching template embeddings ("a photo of a" /
    // "a photo without a"); init_jitter adds seeded noise on top when nonzero.
    double init_jitter = 0.0;
    std::uint64_t seed = 1;
};

// Per-domain trained positive/negative prompt labels. val_accuracy and
// epoch_selected describe the positive path's validation-best snapshot;
// the negative path is selected by lowest validation BCE.
struct DomainPromptLabelPair {
    int domain = -1;  // -1 marks the pooled-source CoOp-style prompt
    PromptVector positive;
    PromptVector negative;
    double val_accuracy = 0.0;
    int epoch_selected = 0;  // 1-based
    double val_bce = 0.0;
    int epoch_selected_neg = 0;
    bool oracle_tag = false;  // trained on a held-out target; never evaluable
    std::vector<double> pos_loss_history;  // per-epoch mean training loss
    std::vector<double> neg_loss_history;
};

// Complement of the one-hot encoding: bits[i] = 1 for i != label.
Vector negative_target(int label, int n_classes);
Matrix negative_target_matrix(const std::vector<int>& labels, int n_classes);

// Mean over the batch of -log softmax(<t+_i, phi(x)>/tau)[y].
double positive_label_loss(const EncoderSet& enc, const Matrix& image_embeds,
                           const std::vector<int>& labels, const PromptVector& v_pos, double tau);
ad::Var positive_label_loss(ad::Tape& tape, const EncoderSet& enc, const Matrix& image_embeds,
                            const std::vector<int>& labels, ad::Var v_pos, double tau);

// BCE of sigmoid(<t-_i, phi(x)>/tau_bce) against complement-of-one-hot
// targets, averaged over classes then batch; probabilities clamped to
// [1e-7, 1-1e-7] before the logs.
double negative_label_loss(const EncoderSet& enc, const Matrix& image_embeds,
                           const std::vector<int>& labels, const PromptVector& v_neg, double tau_bce);
ad::Var negative_label_loss(ad::Tape& tape, const EncoderSet& enc, const Matrix& image_embeds,
                            const std::vector<int>& labels, ad::Var v_neg, double tau_bce);

// Spec-facing overloads over raw samples of one domain.
double positive_label_loss(const EncoderSet& enc, const std::vector<Sample>& batch,
                           const PromptVector& v_pos, double tau);
double negative_label_loss(const EncoderSet& enc, const std::vector<Sample>& batch,
                           const PromptVector& v_neg, double tau_bce);

// Classification accuracy of a positive prompt on the given samples.
double prompt_accuracy(const EncoderSet& enc, const PromptVector& v_pos, const Matrix& image_embeds,
                       const std::vector<int>& labels, double tau);

// Mean negative-path BCE of a prompt on the given samples.
double prompt_bce(const EncoderSet& enc, const PromptVector& v_neg, const Matrix& image_embeds,
                  const std::vector<int>& labels, double tau_bce);

// Algorithm: independent SGD loops (cosine annealing, default 70 epochs,
// batch 32) over one domain's train split; the epoch snapshot with the best
// validation metric is returned.
DomainPromptLabelPair train_domain_labels(const DomainDataset& ds, int domain,
                                          const EncoderSet& enc, const Stage1Config& cfg);

// Same loop over pooled samples from several domains (Table-4 row-1 style
// fixed prompt); result carries domain = -1.
DomainPromptLabelPair train_pooled_prompt(const DomainDataset& ds, const std::vector<int>& domains,
                                          const EncoderSet& enc, const Stage1Config& cfg);

void save_label_pair(const DomainPromptLabelPair& pair, const std::string& path,
                     std::uint64_t config_hash);
DomainPromptLabelPair load_label_pair(const std::string& path, std::uint64_t expect_config_hash);

}  // namespace dpspg
