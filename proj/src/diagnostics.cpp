#include "dpspg/diagnostics.hpp"

#include <cmath>

namespace dpspg {

namespace {

Vector flatten_prompt(const PromptVector& p) {
    Vector v(p.size());
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        for (Eigen::Index c = 0; c < p.cols(); ++c) v(k++) = p(r, c);
    }
    return v;
}

double mean_pairwise_distance(const std::vector<Vector>& points) {
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t j = i + 1; j < points.size(); ++j) {
            total += (points[i] - points[j]).norm();
            ++pairs;
        }
    }
    return total / static_cast<double>(pairs);
}

}  // namespace

VariabilityReport variability(const std::map<int, std::vector<PromptVector>>& prompt_sets,
                              int target_domain) {
    if (prompt_sets.size() < 2) throw InvalidInputError("variability: need at least 2 domains");
    if (prompt_sets.find(target_domain) == prompt_sets.end()) {
        throw InvalidInputError("variability: target domain has no prompt set");
    }
    VariabilityReport report;
    report.target_domain = target_domain;
    std::vector<Vector> centroids;
    for (const auto& [domain, prompts] : prompt_sets) {
        if (prompts.size() < 2) {
            throw InvalidInputError("variability: domain " + std::to_string(domain) +
                                    " has fewer than 2 prompts");
        }
        std::vector<Vector> flat;
        flat.reserve(prompts.size());
        Vector centroid = Vector::Zero(prompts.front().size());
        for (const PromptVector& p : prompts) {
            flat.push_back(flatten_prompt(p));
            centroid += flat.back();
        }
        centroid /= static_cast<double>(flat.size());
        centroids.push_back(centroid);
        report.intra_domain[domain] = mean_pairwise_distance(flat);
    }
    report.inter_centroid = mean_pairwise_distance(centroids);
    if (report.inter_centroid <= 0.0) {
        throw NumericFailureError("variability: coincident domain centroids (D = 0)");
    }
    report.lambda = report.intra_domain.at(target_domain) / report.inter_centroid;
    return report;
}

StabilityReport training_stability(const std::vector<double>& history) {
    if (history.size() < 10) {
        throw InvalidInputError("training_stability: need at least 10 recorded epochs");
    }
    StabilityReport r;
    r.accuracy_history = history;
    r.final_accuracy = history.back();
    double mean = 0.0;
    for (std::size_t i = history.size() - 10; i < history.size(); ++i) mean += history[i];
    mean /= 10.0;
    double var = 0.0;
    for (std::size_t i = history.size() - 10; i < history.size(); ++i) {
        var += (history[i] - mean) * (history[i] - mean);
    }
    r.std_last_10 = std::sqrt(var / 10.0);  // population convention
    return r;
}

Projection2D project_2d(const std::vector<PromptVector>& prompts) {
    if (prompts.size() < 3) throw InvalidInputError("project_2d: need at least 3 prompts");
    const auto n = static_cast<Eigen::Index>(prompts.size());
    const Eigen::Index dim = prompts.front().size();
    Matrix data(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        data.row(i) = flatten_prompt(prompts[static_cast<std::size_t>(i)]).transpose();
    }
    const Matrix centered = data.rowwise() - data.colwise().mean();
    const Matrix cov = centered.transpose() * centered / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
    if (solver.info() != Eigen::Success) {
        throw NumericFailureError("project_2d: eigendecomposition failed");
    }
    // eigenvalues ascend; take the last two columns
    Vector top1 = solver.eigenvectors().col(dim - 1);
    Vector top2 = solver.eigenvectors().col(dim - 2);
    const double ev1 = solver.eigenvalues()(dim - 1);
    const double ev2 = solver.eigenvalues()(dim - 2);

    auto fix_sign = [](Vector& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            if (std::abs(v(i)) > 1e-12) {
                if (v(i) < 0.0) v = -v;
                return;
            }
        }
    };
    fix_sign(top1);
    fix_sign(top2);

    Projection2D out;
    out.coords = Matrix(n, 2);
    out.coords.col(0) = centered * top1;
    const bool deficient = ev2 <= 1e-12 * std::max(ev1, 1e-300);
    out.rank_deficient = deficient;
    out.coords.col(1) = deficient ? Vector(Vector::Zero(n)) : Vector(centered * top2);
    return out;
}

DomainPromptLabelPair oracle_prompt(const DomainDataset& ds, int target_domain,
                                    const EncoderSet& enc, const Stage1Config& cfg) {
    DomainPromptLabelPair pair = train_domain_labels(ds, target_domain, enc, cfg);
    pair.oracle_tag = true;
    return pair;
}

double mean_distance_to(const std::vector<PromptVector>& prompts, const PromptVector& reference) {
    if (prompts.empty()) throw InvalidInputError("mean_distance_to: no prompts");
    const Vector ref = flatten_prompt(reference);
    double total = 0.0;
    for (const PromptVector& p : prompts) total += (flatten_prompt(p) - ref).norm();
    return total / static_cast<double>(prompts.size());
}

}  // namespace dpspg
