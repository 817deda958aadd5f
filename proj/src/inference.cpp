#include "dpspg/inference.hpp"

#include <algorithm>
#include <sstream>

namespace dpspg {

std::string eval_mode_name(EvalMode mode) {
    switch (mode) {
        case EvalMode::Full: return "full";
        case EvalMode::PositiveOnly: return "positive_only";
        case EvalMode::FixedPrompt: return "fixed_prompt";
    }
    throw InvalidParameterError("eval_mode_name: unknown mode");
}

EvalMode eval_mode_from_name(const std::string& name) {
    if (name == "full") return EvalMode::Full;
    if (name == "positive_only") return EvalMode::PositiveOnly;
    if (name == "fixed_prompt") return EvalMode::FixedPrompt;
    throw ValidationError("unknown eval mode: " + name + " (expected full|positive_only|fixed_prompt)");
}

FusionScores fuse_and_classify(const EncoderSet& enc, const GeneratorModel& g_pos,
                               const GeneratorModel* g_neg, const Matrix& x_raw, double alpha,
                               double tau, const Matrix* noise) {
    if (alpha < 0.0) throw InvalidParameterError("fuse_and_classify: alpha must be nonnegative");
    if (!(tau > 0.0)) throw InvalidParameterError("fuse_and_classify: tau must be positive");
    const Matrix e = encode_image(enc, x_raw.rows() == 1 ? x_raw : Matrix(x_raw.transpose()));
    Matrix e_gen = e;
    if (noise != nullptr) e_gen += *noise;

    const int k = enc.dims.n_classes;
    FusionScores out;
    out.alpha = alpha;
    out.tau = tau;

    const PromptVector v_pos = generate_prompt(g_pos, e_gen);
    const Matrix t_pos = encode_text_all_classes(enc, v_pos, enc.vocab.positive_template);
    out.s_pos = (t_pos * e.transpose()).col(0);

    if (g_neg != nullptr) {
        const PromptVector v_neg = generate_prompt(*g_neg, e_gen);
        const Matrix t_neg = encode_text_all_classes(enc, v_neg, enc.vocab.negative_template);
        out.s_neg = (t_neg * e.transpose()).col(0);
    } else {
        out.s_neg = Vector::Zero(k);
    }

    out.g = out.s_pos - alpha * out.s_neg;
    out.probs = ops::softmax(out.g, tau);
    Eigen::Index pred = 0;
    out.probs.maxCoeff(&pred);
    out.predicted = static_cast<int>(pred);
    return out;
}

namespace {

// Classification with one fixed prompt shared by every image (CoOp-style
// Table-4 row 1 analogue); text features are computed once.
struct FixedPromptClassifier {
    Matrix text;  // K x d_feat
    double tau;

    FusionScores classify(const EncoderSet& enc, const Matrix& x_raw) const {
        const Matrix e = encode_image(enc, x_raw);
        FusionScores out;
        out.alpha = 0.0;
        out.tau = tau;
        out.s_pos = (text * e.transpose()).col(0);
        out.s_neg = Vector::Zero(text.rows());
        out.g = out.s_pos;
        out.probs = ops::softmax(out.g, tau);
        Eigen::Index pred = 0;
        out.probs.maxCoeff(&pred);
        out.predicted = static_cast<int>(pred);
        return out;
    }
};

}  // namespace

EvalReport evaluate_lodo(const DomainDataset& ds, int target_domain, const TrainedModels& models,
                         const EncoderSet& enc, EvalMode mode, double alpha, double tau) {
    if (target_domain < 0 || target_domain >= ds.spec.n_domains) {
        throw InvalidParameterError("evaluate_lodo: target domain out of range");
    }
    if (models.oracle) {
        throw ContaminationError("evaluate_lodo: oracle-tagged models cannot be evaluated");
    }
    if (std::find(models.provenance.begin(), models.provenance.end(), target_domain) !=
        models.provenance.end()) {
        throw ContaminationError("evaluate_lodo: target domain " + std::to_string(target_domain) +
                                 " appears in model provenance");
    }

    EvalReport report;
    report.target_domain = target_domain;
    report.mode = mode;
    report.tau = tau;
    report.alpha = (mode == EvalMode::Full) ? alpha : 0.0;

    std::optional<FixedPromptClassifier> fixed;
    if (mode == EvalMode::FixedPrompt) {
        if (!models.fixed_prompt) {
            throw InvalidStateError("evaluate_lodo: fixed_prompt mode without a pooled prompt");
        }
        fixed = FixedPromptClassifier{
            encode_text_all_classes(enc, *models.fixed_prompt, enc.vocab.positive_template), tau};
    }

    const std::vector<int> targets = ds.domain_indices(target_domain);
    if (targets.empty()) throw InvalidInputError("evaluate_lodo: target domain has no samples");

    const int k = enc.dims.n_classes;
    Vector correct_per_class = Vector::Zero(k);
    Vector count_per_class = Vector::Zero(k);
    int correct = 0;

    Rng noise_rng(derive_seed(models.noise_seed, "inference.noise",
                              static_cast<std::uint64_t>(target_domain)));
    const double noise_std =
        models.input_noise_scale / std::sqrt(static_cast<double>(enc.dims.d_feat));

    for (std::size_t i = 0; i < targets.size(); ++i) {
        const Sample& s = ds.samples[static_cast<std::size_t>(targets[i])];
        const Matrix x_row = s.x.transpose();
        FusionScores fs;
        if (mode == EvalMode::FixedPrompt) {
            fs = fixed->classify(enc, x_row);
        } else {
            Matrix noise;
            const Matrix* noise_ptr = nullptr;
            if (noise_std > 0.0) {
                noise = noise_rng.gaussian_matrix(1, enc.dims.d_feat, noise_std);
                noise_ptr = &noise;
            }
            const GeneratorModel* g_neg = models.has_negative ? &models.g_neg : nullptr;
            fs = fuse_and_classify(enc, models.g_pos, g_neg, x_row, report.alpha, tau, noise_ptr);
        }
        count_per_class(s.label) += 1.0;
        if (fs.predicted == s.label) {
            ++correct;
            correct_per_class(s.label) += 1.0;
        }
    }

    report.n_test = static_cast<int>(targets.size());
    report.accuracy = static_cast<double>(correct) / static_cast<double>(targets.size());
    report.per_class_accuracy = Vector::Zero(k);
    for (int c = 0; c < k; ++c) {
        report.per_class_accuracy(c) =
            count_per_class(c) > 0 ? correct_per_class(c) / count_per_class(c) : 0.0;
    }
    return report;
}

std::string eval_report_csv_header(int n_classes) {
    std::ostringstream os;
    os << "target,mode,alpha,tau,seed,accuracy";
    for (int c = 0; c < n_classes; ++c) os << ",per_class_" << c;
    return os.str();
}

std::string eval_report_csv_row(const EvalReport& report, std::uint64_t seed) {
    std::ostringstream os;
    os << report.target_domain << "," << eval_mode_name(report.mode) << ","
       << fmt_double(report.alpha) << "," << fmt_double(report.tau) << "," << seed << ","
       << fmt_double(report.accuracy);
    for (Eigen::Index c = 0; c < report.per_class_accuracy.size(); ++c) {
        os << "," << fmt_double(report.per_class_accuracy(c));
    }
    return os.str();
}

void save_eval_report(const EvalReport& report, std::uint64_t seed, const std::string& path,
                      std::uint64_t config_hash) {
    std::ostringstream os;
    os << "# config_hash=" << to_hex(config_hash) << "\n";
    os << eval_report_csv_header(static_cast<int>(report.per_class_accuracy.size())) << "\n";
    os << eval_report_csv_row(report, seed) << "\n";
    io::write_text_file(path, os.str());
}

}  // namespace dpspg
