#pragma once

#include "dpspg/common.hpp"

#include <string>
#include <vector>

namespace dpspg {

// Synthetic multi-domain classification task. Class c in domain d is sampled
// as A_d * (mu_c + eps) + b_d with eps ~ N(0, sigma^2 I); A_d is a seeded
// composition of Givens rotations scaled near 1 and b_d a seeded shift, so
// the shift is label-preserving and leave-one-domain-out transfer is
// meaningful.
struct DatasetSpec {
    int n_classes = 5;             // K
    int n_domains = 4;             // S_total (>= 2 sources + 1 target)
    int n_per_class_per_domain = 40;
    int d_raw = 16;
    double prototype_separation = 3.0;
    double domain_rotation_angle = 0.3;  // radians, per Givens pair
    double domain_shift_scale = 0.5;     // translation magnitude and scale jitter
    double noise_sigma = 0.3;
    double val_fraction = 0.2;
    std::uint64_t seed = 7;
};

struct Sample {
    Vector x;
    int label = 0;
    int domain = 0;
};

struct DomainDescriptor {
    Matrix transform;  // A_d (scale * rotation)
    Vector shift;      // b_d
    double scale = 1.0;
};

struct DomainDataset {
    DatasetSpec spec;
    std::vector<Sample> samples;
    Matrix prototypes;  // K x d_raw
    std::vector<DomainDescriptor> domains;
    // disjoint per-domain index lists covering all samples of that domain
    std::vector<std::vector<int>> train_idx, val_idx, test_idx;

    int sample_count(int domain) const;
    std::vector<int> domain_indices(int domain) const;
};

DomainDataset generate_dataset(const DatasetSpec& spec);

// All non-target domains' train/val indices vs. every target-domain sample.
struct LodoSplit {
    int target_domain = 0;
    std::vector<int> source_domains;
    std::vector<int> source_train;
    std::vector<int> source_val;
    std::vector<int> target_all;
};

LodoSplit leave_one_out_split(const DomainDataset& ds, int target_domain);

// CSV with header domain,label,x0..x{d_raw-1}; spec echoed to a JSON sidecar.
void save_dataset(const DomainDataset& ds, const std::string& csv_path,
                  const std::string& spec_json_path, std::uint64_t config_hash);
DomainDataset load_dataset(const std::string& csv_path, const std::string& spec_json_path,
                           std::uint64_t expect_config_hash);

}  // namespace dpspg
