#include "dpspg/prompt_labels.hpp"

#include "dpspg/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace dpspg {

Vector negative_target(int label, int n_classes) {
    if (label < 0 || label >= n_classes) {
        throw InvalidParameterError("negative_target: label out of range");
    }
    Vector bits = Vector::Ones(n_classes);
    bits(label) = 0.0;
    return bits;
}

Matrix negative_target_matrix(const std::vector<int>& labels, int n_classes) {
    Matrix t(static_cast<Eigen::Index>(labels.size()), n_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        t.row(static_cast<Eigen::Index>(i)) = negative_target(labels[i], n_classes).transpose();
    }
    return t;
}

namespace {

constexpr double kBceClamp = 1e-7;

Matrix similarity_scores(const EncoderSet& enc, const PromptVector& v, const Matrix& tmpl,
                         const Matrix& image_embeds) {
    const Matrix text = encode_text_all_classes(enc, v, tmpl);
    return image_embeds * text.transpose();  // batch x K cosine similarities
}

double ce_from_scores(const Matrix& scores, const std::vector<int>& labels, double tau) {
    double loss = 0.0;
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        const Vector row = scores.row(r).transpose() / tau;
        loss += ops::log_sum_exp(row) - row(labels[static_cast<std::size_t>(r)]);
    }
    return loss / static_cast<double>(scores.rows());
}

double bce_from_scores(const Matrix& scores, const Matrix& targets, double tau_bce) {
    const Matrix p = ops::sigmoid(scores / tau_bce);
    double loss = 0.0;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        for (Eigen::Index c = 0; c < p.cols(); ++c) {
            const double pc = std::min(std::max(p(r, c), kBceClamp), 1.0 - kBceClamp);
            loss -= targets(r, c) * std::log(pc) + (1.0 - targets(r, c)) * std::log(1.0 - pc);
        }
    }
    return loss / static_cast<double>(p.size());
}

void check_one_domain(const std::vector<Sample>& batch) {
    if (batch.empty()) throw InvalidInputError("prompt label loss: empty batch");
    for (const Sample& s : batch) {
        if (s.domain != batch.front().domain) {
            throw InvalidInputError("prompt label loss: batch mixes domains");
        }
    }
}

Matrix stack_embeddings(const EncoderSet& enc, const std::vector<Sample>& batch) {
    Matrix x(static_cast<Eigen::Index>(batch.size()), enc.dims.d_raw);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)) = batch[i].x.transpose();
    }
    return encode_image(enc, x);
}

std::vector<int> stack_labels(const std::vector<Sample>& batch) {
    std::vector<int> y;
    y.reserve(batch.size());
    for (const Sample& s : batch) y.push_back(s.label);
    return y;
}

}  // namespace

double positive_label_loss(const EncoderSet& enc, const Matrix& image_embeds,
                           const std::vector<int>& labels, const PromptVector& v_pos, double tau) {
    if (image_embeds.rows() == 0) throw InvalidInputError("positive_label_loss: empty batch");
    return ce_from_scores(similarity_scores(enc, v_pos, enc.vocab.positive_template, image_embeds),
                          labels, tau);
}

ad::Var positive_label_loss(ad::Tape& tape, const EncoderSet& enc, const Matrix& image_embeds,
                            const std::vector<int>& labels, ad::Var v_pos, double tau) {
    if (image_embeds.rows() == 0) throw InvalidInputError("positive_label_loss: empty batch");
    ad::Var text = encode_text_all_classes(tape, enc, v_pos, enc.vocab.positive_template);
    ad::Var scores = tape.matmul_nt(tape.constant(image_embeds), text);
    return tape.cross_entropy_rows(scores, labels, tau);
}

double negative_label_loss(const EncoderSet& enc, const Matrix& image_embeds,
                           const std::vector<int>& labels, const PromptVector& v_neg, double tau_bce) {
    if (image_embeds.rows() == 0) throw InvalidInputError("negative_label_loss: empty batch");
    const Matrix targets = negative_target_matrix(labels, enc.dims.n_classes);
    return bce_from_scores(similarity_scores(enc, v_neg, enc.vocab.negative_template, image_embeds),
                           targets, tau_bce);
}

ad::Var negative_label_loss(ad::Tape& tape, const EncoderSet& enc, const Matrix& image_embeds,
                            const std::vector<int>& labels, ad::Var v_neg, double tau_bce) {
    if (image_embeds.rows() == 0) throw InvalidInputError("negative_label_loss: empty batch");
    ad::Var text = encode_text_all_classes(tape, enc, v_neg, enc.vocab.negative_template);
    ad::Var scores = tape.matmul_nt(tape.constant(image_embeds), text);
    const Matrix targets = negative_target_matrix(labels, enc.dims.n_classes);
    return tape.bce_with_scores(scores, targets, tau_bce, kBceClamp);
}

double positive_label_loss(const EncoderSet& enc, const std::vector<Sample>& batch,
                           const PromptVector& v_pos, double tau) {
    check_one_domain(batch);
    return positive_label_loss(enc, stack_embeddings(enc, batch), stack_labels(batch), v_pos, tau);
}

double negative_label_loss(const EncoderSet& enc, const std::vector<Sample>& batch,
                           const PromptVector& v_neg, double tau_bce) {
    check_one_domain(batch);
    return negative_label_loss(enc, stack_embeddings(enc, batch), stack_labels(batch), v_neg, tau_bce);
}

double prompt_accuracy(const EncoderSet& enc, const PromptVector& v_pos, const Matrix& image_embeds,
                       const std::vector<int>& labels, double tau) {
    (void)tau;  // argmax of softmax(s/tau) equals argmax of s for any tau > 0
    const Matrix scores = similarity_scores(enc, v_pos, enc.vocab.positive_template, image_embeds);
    int correct = 0;
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        Eigen::Index pred = 0;
        scores.row(r).maxCoeff(&pred);
        if (pred == labels[static_cast<std::size_t>(r)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(scores.rows());
}

double prompt_bce(const EncoderSet& enc, const PromptVector& v_neg, const Matrix& image_embeds,
                  const std::vector<int>& labels, double tau_bce) {
    const Matrix targets = negative_target_matrix(labels, enc.dims.n_classes);
    return bce_from_scores(similarity_scores(enc, v_neg, enc.vocab.negative_template, image_embeds),
                           targets, tau_bce);
}

namespace {

struct PathResult {
    PromptVector best;
    double best_metric = 0.0;
    int best_epoch = 0;
    std::vector<double> loss_history;
};

// One independent SGD loop (positive CE or negative BCE path).
PathResult train_prompt_path(const EncoderSet& enc, const Matrix& e_train,
                             const std::vector<int>& y_train, const Matrix& e_val,
                             const std::vector<int>& y_val, const Stage1Config& cfg, bool positive,
                             std::uint64_t path_seed) {
    const auto n = static_cast<int>(y_train.size());
    const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const long total_steps = static_cast<long>(cfg.epochs) * steps_per_epoch;

    // every domain starts from the same template anchor, so trained labels
    // stay in one basin and remain comparable across domains
    Matrix v0 = positive ? enc.vocab.positive_template : enc.vocab.negative_template;
    if (v0.rows() != enc.dims.context_len) {
        // context length other than the 4-token template: seeded fallback init
        Rng fallback(derive_seed(path_seed, "init"));
        v0 = fallback.gaussian_matrix(enc.dims.context_len, enc.dims.d_tok,
                                      1.0 / std::sqrt(static_cast<double>(enc.dims.d_tok)));
    }
    if (cfg.init_jitter > 0.0) {
        Rng init_rng(derive_seed(path_seed, "init"));
        v0 += init_rng.gaussian_matrix(enc.dims.context_len, enc.dims.d_tok, cfg.init_jitter);
    }
    ParamStore store;
    store.add("v", std::move(v0));

    OptimizerState opt = make_sgd_cosine(cfg.lr, total_steps);
    Rng batch_rng(derive_seed(path_seed, "batches"));
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    PathResult result;
    long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        batch_rng.shuffle(order);
        double epoch_loss = 0.0;
        int batches = 0;
        for (int b0 = 0; b0 < n; b0 += cfg.batch_size) {
            const int bn = std::min(cfg.batch_size, n - b0);
            Matrix e_batch(bn, e_train.cols());
            std::vector<int> y_batch(static_cast<std::size_t>(bn));
            for (int i = 0; i < bn; ++i) {
                const int src = order[static_cast<std::size_t>(b0 + i)];
                e_batch.row(i) = e_train.row(src);
                y_batch[static_cast<std::size_t>(i)] = y_train[static_cast<std::size_t>(src)];
            }
            ad::Tape tape;
            ad::Var v = tape.param(store, "v");
            ad::Var loss = positive
                               ? positive_label_loss(tape, enc, e_batch, y_batch, v, cfg.tau)
                               : negative_label_loss(tape, enc, e_batch, y_batch, v, cfg.tau_bce);
            const double loss_value = tape.value(loss)(0, 0);
            if (!std::isfinite(loss_value)) {
                throw TrainingFailureError("stage-1 loss diverged", epoch);
            }
            tape.backward(loss);
            tape.export_grads();
            optimizer_step(store, opt, step++);
            epoch_loss += loss_value;
            ++batches;
        }
        result.loss_history.push_back(epoch_loss / batches);

        const double metric = positive
                                  ? prompt_accuracy(enc, store.value("v"), e_val, y_val, cfg.tau)
                                  : prompt_bce(enc, store.value("v"), e_val, y_val, cfg.tau_bce);
        const bool better = positive ? (metric > result.best_metric) : (metric < result.best_metric);
        if (epoch == 1 || better) {
            result.best = store.value("v");
            result.best_metric = metric;
            result.best_epoch = epoch;
        }
    }
    return result;
}

DomainPromptLabelPair train_labels_on(const EncoderSet& enc, const Matrix& e_train,
                                      const std::vector<int>& y_train, const Matrix& e_val,
                                      const std::vector<int>& y_val, const Stage1Config& cfg,
                                      int domain_tag, std::uint64_t seed_tag, bool with_negative) {
    if (y_train.empty() || y_val.empty()) {
        throw InvalidInputError("train_domain_labels: empty train or val split");
    }
    DomainPromptLabelPair pair;
    pair.domain = domain_tag;

    PathResult pos = train_prompt_path(enc, e_train, y_train, e_val, y_val, cfg, /*positive=*/true,
                                       derive_seed(cfg.seed, "stage1.pos", seed_tag));
    pair.positive = pos.best;
    pair.val_accuracy = pos.best_metric;
    pair.epoch_selected = pos.best_epoch;
    pair.pos_loss_history = std::move(pos.loss_history);

    if (with_negative) {
        PathResult neg = train_prompt_path(enc, e_train, y_train, e_val, y_val, cfg,
                                           /*positive=*/false,
                                           derive_seed(cfg.seed, "stage1.neg", seed_tag));
        pair.negative = neg.best;
        pair.val_bce = neg.best_metric;
        pair.epoch_selected_neg = neg.best_epoch;
        pair.neg_loss_history = std::move(neg.loss_history);
        if ((pair.positive - pair.negative).norm() == 0.0) {
            throw NumericFailureError("train_domain_labels: positive and negative labels coincide");
        }
    } else {
        pair.negative = Matrix::Zero(enc.dims.context_len, enc.dims.d_tok);
    }
    return pair;
}

}  // namespace

DomainPromptLabelPair train_domain_labels(const DomainDataset& ds, int domain,
                                          const EncoderSet& enc, const Stage1Config& cfg) {
    if (domain < 0 || domain >= ds.spec.n_domains) {
        throw InvalidParameterError("train_domain_labels: domain out of range");
    }
    const auto& tr = ds.train_idx[static_cast<std::size_t>(domain)];
    const auto& va = ds.val_idx[static_cast<std::size_t>(domain)];

    std::vector<Sample> train_samples, val_samples;
    for (int i : tr) train_samples.push_back(ds.samples[static_cast<std::size_t>(i)]);
    for (int i : va) val_samples.push_back(ds.samples[static_cast<std::size_t>(i)]);
    if (train_samples.empty() || val_samples.empty()) {
        throw InvalidInputError("train_domain_labels: empty train or val split");
    }
    const Matrix e_train = stack_embeddings(enc, train_samples);
    const Matrix e_val = stack_embeddings(enc, val_samples);
    return train_labels_on(enc, e_train, stack_labels(train_samples), e_val,
                           stack_labels(val_samples), cfg, domain,
                           static_cast<std::uint64_t>(domain), /*with_negative=*/true);
}

DomainPromptLabelPair train_pooled_prompt(const DomainDataset& ds, const std::vector<int>& domains,
                                          const EncoderSet& enc, const Stage1Config& cfg) {
    std::vector<Sample> train_samples, val_samples;
    for (int d : domains) {
        for (int i : ds.train_idx[static_cast<std::size_t>(d)]) {
            train_samples.push_back(ds.samples[static_cast<std::size_t>(i)]);
        }
        for (int i : ds.val_idx[static_cast<std::size_t>(d)]) {
            val_samples.push_back(ds.samples[static_cast<std::size_t>(i)]);
        }
    }
    if (train_samples.empty() || val_samples.empty()) {
        throw InvalidInputError("train_pooled_prompt: empty pooled splits");
    }
    const Matrix e_train = stack_embeddings(enc, train_samples);
    const Matrix e_val = stack_embeddings(enc, val_samples);
    std::uint64_t tag = 0x706f6f6cULL;  // distinct seed stream from per-domain runs
    for (int d : domains) tag = derive_seed(tag, "pool", static_cast<std::uint64_t>(d));
    // CoOp-style fixed prompt is positive-path only
    return train_labels_on(enc, e_train, stack_labels(train_samples), e_val,
                           stack_labels(val_samples), cfg, /*domain_tag=*/-1, tag,
                           /*with_negative=*/false);
}

void save_label_pair(const DomainPromptLabelPair& pair, const std::string& path,
                     std::uint64_t config_hash) {
    auto os = io::open_out(path);
    io::write_magic(os, "DPL1");
    io::write_u64(os, config_hash);
    io::write_i32(os, pair.domain);
    io::write_u32(os, static_cast<std::uint32_t>(pair.positive.rows()));
    io::write_u32(os, static_cast<std::uint32_t>(pair.positive.cols()));
    io::write_u32(os, pair.oracle_tag ? 1u : 0u);
    io::write_matrix(os, pair.positive);
    io::write_matrix(os, pair.negative);
    io::write_f64(os, pair.val_accuracy);
    io::write_u32(os, static_cast<std::uint32_t>(pair.epoch_selected));
    io::write_f64(os, pair.val_bce);
    io::write_u32(os, static_cast<std::uint32_t>(pair.epoch_selected_neg));
}

DomainPromptLabelPair load_label_pair(const std::string& path, std::uint64_t expect_config_hash) {
    auto is = io::open_in(path);
    io::expect_magic(is, "DPL1", path);
    const std::uint64_t hash = io::read_u64(is);
    if (expect_config_hash != 0 && hash != expect_config_hash) {
        throw ValidationError("label checkpoint config hash mismatch: " + path);
    }
    DomainPromptLabelPair pair;
    pair.domain = io::read_i32(is);
    const std::uint32_t rows = io::read_u32(is);
    const std::uint32_t cols = io::read_u32(is);
    pair.oracle_tag = io::read_u32(is) != 0;
    pair.positive = io::read_matrix(is);
    pair.negative = io::read_matrix(is);
    if (pair.positive.rows() != static_cast<Eigen::Index>(rows) ||
        pair.positive.cols() != static_cast<Eigen::Index>(cols)) {
        throw InvalidInputError("label checkpoint header/tensor mismatch: " + path);
    }
    pair.val_accuracy = io::read_f64(is);
    pair.epoch_selected = static_cast<int>(io::read_u32(is));
    pair.val_bce = io::read_f64(is);
    pair.epoch_selected_neg = static_cast<int>(io::read_u32(is));
    return pair;
}

}  // namespace dpspg
