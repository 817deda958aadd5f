#include "dpspg/datagen.hpp"

#include "dpspg/serialize.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace dpspg {

namespace {

void validate_spec(const DatasetSpec& s) {
    if (s.n_classes < 2) throw InvalidParameterError("dataset: need at least 2 classes");
    if (s.n_domains < 3) throw InvalidParameterError("dataset: need at least 3 domains (2 sources + 1 target)");
    if (s.n_per_class_per_domain < 2) throw InvalidParameterError("dataset: need at least 2 samples per cell");
    if (s.d_raw < 2) throw InvalidParameterError("dataset: d_raw must be at least 2");
    if (s.prototype_separation < 0 || s.domain_shift_scale < 0 || s.noise_sigma < 0) {
        throw InvalidParameterError("dataset: scales must be nonnegative");
    }
    if (!(s.val_fraction > 0.0 && s.val_fraction < 1.0)) {
        throw InvalidParameterError("dataset: val_fraction must lie in (0, 1)");
    }
}

Matrix givens_rotation(int d, Rng& rng, double max_angle) {
    Matrix r = Matrix::Identity(d, d);
    const int pairs = d / 2;
    for (int p = 0; p < pairs; ++p) {
        const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(d)));
        auto j = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(d - 1)));
        if (j >= i) ++j;
        const double angle = rng.uniform(-max_angle, max_angle);
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        Matrix g = Matrix::Identity(d, d);
        g(i, i) = c;
        g(j, j) = c;
        g(i, j) = -s;
        g(j, i) = s;
        r = g * r;
    }
    return r;
}

}  // namespace

int DomainDataset::sample_count(int domain) const {
    int n = 0;
    for (const Sample& s : samples) {
        if (s.domain == domain) ++n;
    }
    return n;
}

std::vector<int> DomainDataset::domain_indices(int domain) const {
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
        if (samples[static_cast<std::size_t>(i)].domain == domain) idx.push_back(i);
    }
    return idx;
}

DomainDataset generate_dataset(const DatasetSpec& spec) {
    validate_spec(spec);
    DomainDataset ds;
    ds.spec = spec;

    Rng proto_rng(derive_seed(spec.seed, "prototypes"));
    ds.prototypes = Matrix(spec.n_classes, spec.d_raw);
    for (int c = 0; c < spec.n_classes; ++c) {
        Vector dir = proto_rng.gaussian_matrix(spec.d_raw, 1);
        ds.prototypes.row(c) = (spec.prototype_separation * dir / dir.norm()).transpose();
    }

    for (int d = 0; d < spec.n_domains; ++d) {
        Rng dom_rng(derive_seed(spec.seed, "domain", static_cast<std::uint64_t>(d)));
        DomainDescriptor desc;
        Matrix rot = givens_rotation(spec.d_raw, dom_rng, spec.domain_rotation_angle);
        desc.scale = 1.0 + 0.05 * spec.domain_shift_scale * dom_rng.gaussian();
        desc.transform = desc.scale * rot;
        Vector shift_dir = dom_rng.gaussian_matrix(spec.d_raw, 1);
        const double n = shift_dir.norm();
        desc.shift = (n > 0 && spec.domain_shift_scale > 0)
                         ? Vector(spec.domain_shift_scale * shift_dir / n)
                         : Vector(Vector::Zero(spec.d_raw));
        ds.domains.push_back(desc);

        Rng noise_rng(derive_seed(spec.seed, "noise", static_cast<std::uint64_t>(d)));
        for (int c = 0; c < spec.n_classes; ++c) {
            for (int i = 0; i < spec.n_per_class_per_domain; ++i) {
                Vector eps = spec.noise_sigma * noise_rng.gaussian_matrix(spec.d_raw, 1);
                Sample s;
                s.x = desc.transform * (ds.prototypes.row(c).transpose() + eps) + desc.shift;
                s.label = c;
                s.domain = d;
                ds.samples.push_back(std::move(s));
            }
        }
    }

    // per-domain train/val split; LODO consumes whole target domains so the
    // per-domain test list stays empty
    ds.train_idx.assign(static_cast<std::size_t>(spec.n_domains), {});
    ds.val_idx.assign(static_cast<std::size_t>(spec.n_domains), {});
    ds.test_idx.assign(static_cast<std::size_t>(spec.n_domains), {});
    for (int d = 0; d < spec.n_domains; ++d) {
        std::vector<int> idx = ds.domain_indices(d);
        Rng split_rng(derive_seed(spec.seed, "split", static_cast<std::uint64_t>(d)));
        split_rng.shuffle(idx);
        const auto n_val = static_cast<std::size_t>(
            std::round(spec.val_fraction * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (i < idx.size() - n_val) {
                ds.train_idx[static_cast<std::size_t>(d)].push_back(idx[i]);
            } else {
                ds.val_idx[static_cast<std::size_t>(d)].push_back(idx[i]);
            }
        }
    }
    return ds;
}

LodoSplit leave_one_out_split(const DomainDataset& ds, int target_domain) {
    if (target_domain < 0 || target_domain >= ds.spec.n_domains) {
        throw InvalidParameterError("leave_one_out_split: target domain out of range");
    }
    LodoSplit split;
    split.target_domain = target_domain;
    for (int d = 0; d < ds.spec.n_domains; ++d) {
        if (d == target_domain) continue;
        split.source_domains.push_back(d);
        const auto& tr = ds.train_idx[static_cast<std::size_t>(d)];
        const auto& va = ds.val_idx[static_cast<std::size_t>(d)];
        split.source_train.insert(split.source_train.end(), tr.begin(), tr.end());
        split.source_val.insert(split.source_val.end(), va.begin(), va.end());
    }
    split.target_all = ds.domain_indices(target_domain);
    return split;
}

void save_dataset(const DomainDataset& ds, const std::string& csv_path,
                  const std::string& spec_json_path, std::uint64_t config_hash) {
    std::ostringstream csv;
    csv << "domain,label";
    for (int i = 0; i < ds.spec.d_raw; ++i) csv << ",x" << i;
    csv << "\n";
    for (const Sample& s : ds.samples) {
        csv << s.domain << "," << s.label;
        for (Eigen::Index i = 0; i < s.x.size(); ++i) csv << "," << fmt_double(s.x(i));
        csv << "\n";
    }
    io::write_text_file(csv_path, csv.str());

    nlohmann::json j;
    j["config_hash"] = to_hex(config_hash);
    j["n_classes"] = ds.spec.n_classes;
    j["n_domains"] = ds.spec.n_domains;
    j["n_per_class_per_domain"] = ds.spec.n_per_class_per_domain;
    j["d_raw"] = ds.spec.d_raw;
    j["prototype_separation"] = ds.spec.prototype_separation;
    j["domain_rotation_angle"] = ds.spec.domain_rotation_angle;
    j["domain_shift_scale"] = ds.spec.domain_shift_scale;
    j["noise_sigma"] = ds.spec.noise_sigma;
    j["val_fraction"] = ds.spec.val_fraction;
    j["seed"] = ds.spec.seed;
    io::write_text_file(spec_json_path, j.dump(2) + "\n");
}

DomainDataset load_dataset(const std::string& csv_path, const std::string& spec_json_path,
                           std::uint64_t expect_config_hash) {
    nlohmann::json j = nlohmann::json::parse(io::read_text_file(spec_json_path));
    if (expect_config_hash != 0) {
        const std::string h = j.at("config_hash").get<std::string>();
        if (h != to_hex(expect_config_hash)) {
            throw ValidationError("dataset spec config hash mismatch: " + spec_json_path);
        }
    }
    DatasetSpec spec;
    spec.n_classes = j.at("n_classes").get<int>();
    spec.n_domains = j.at("n_domains").get<int>();
    spec.n_per_class_per_domain = j.at("n_per_class_per_domain").get<int>();
    spec.d_raw = j.at("d_raw").get<int>();
    spec.prototype_separation = j.at("prototype_separation").get<double>();
    spec.domain_rotation_angle = j.at("domain_rotation_angle").get<double>();
    spec.domain_shift_scale = j.at("domain_shift_scale").get<double>();
    spec.noise_sigma = j.at("noise_sigma").get<double>();
    spec.val_fraction = j.at("val_fraction").get<double>();
    spec.seed = j.at("seed").get<std::uint64_t>();

    // regenerating from the echoed spec reproduces descriptors and splits;
    // samples are then replaced by the CSV of record
    DomainDataset ds = generate_dataset(spec);

    std::istringstream csv(io::read_text_file(csv_path));
    std::string line;
    if (!std::getline(csv, line)) throw InvalidInputError("dataset CSV empty: " + csv_path);
    std::size_t row = 0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        if (row >= ds.samples.size()) throw InvalidInputError("dataset CSV has extra rows: " + csv_path);
        std::istringstream ls(line);
        std::string cell;
        Sample& s = ds.samples[row];
        std::getline(ls, cell, ',');
        s.domain = std::stoi(cell);
        std::getline(ls, cell, ',');
        s.label = std::stoi(cell);
        s.x = Vector(spec.d_raw);
        for (int i = 0; i < spec.d_raw; ++i) {
            if (!std::getline(ls, cell, ',')) throw InvalidInputError("dataset CSV truncated row");
            s.x(i) = std::stod(cell);
        }
        ++row;
    }
    if (row != ds.samples.size()) throw InvalidInputError("dataset CSV row count mismatch: " + csv_path);
    return ds;
}

}  // namespace dpspg
