#pragma once

#include "dpspg/datagen.hpp"
#include "dpspg/encoders.hpp"
#include "dpspg/generator.hpp"
#include "dpspg/prompt_labels.hpp"

#include <map>
#include <string>
#include <vector>

namespace dpspg {

// Whole-run configuration: one JSON file with per-stage sections; scalar
// fields may be overridden by CLI flags (flag > file > default).
struct RunConfig {
    DatasetSpec dataset;
    EncoderDims encoders;
    std::uint64_t encoder_seed = 11;
    Stage1Config stage1;
    Stage2Config stage2;
    double alpha_fuse = 0.2;
    double tau = 0.1;
    std::vector<int> targets;             // LODO rotations to materialize
    std::vector<std::uint64_t> sweep_seeds = {1, 2, 3, 4, 5};
    int sweep_jobs = 1;
    int variability_samples_per_domain = 12;
    double baseline_noise_scale = 1.0;    // SPG-emulation input noise (units of embedding RMS)
    std::string output_dir = "out";

    void validate() const;  // throws ValidationError naming the offending field
};

RunConfig default_run_config();
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);
std::uint64_t config_hash(const RunConfig& cfg);

// Stage bookkeeping persisted as manifest.json in the output directory.
// Evaluation refuses to run unless the upstream flags are set and the
// requested artifacts' provenance excludes the target domain.
struct ArtifactInfo {
    std::string path;
    std::vector<int> provenance;  // domains whose data produced the artifact
    bool oracle = false;
};

struct RunManifest {
    std::string config_hash_hex;
    bool data_done = false;
    bool labels_done = false;
    std::vector<int> generators_done_targets;
    std::map<std::string, ArtifactInfo> artifacts;

    bool generators_done(int target) const;
    void register_artifact(const std::string& key, const ArtifactInfo& info);
    // Fetch an artifact for use in training/evaluation; oracle-tagged
    // entries are rejected with a ContaminationError.
    const ArtifactInfo& artifact_for_use(const std::string& key) const;
};

void save_manifest(const RunManifest& m, const std::string& path);
RunManifest load_manifest(const std::string& path);

}  // namespace dpspg
