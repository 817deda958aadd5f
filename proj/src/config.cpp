#include "dpspg/config.hpp"

#include "dpspg/serialize.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>

namespace dpspg {

using nlohmann::json;

void RunConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ValidationError("config field '" + field + "': " + why);
    };
    if (dataset.n_classes < 2) fail("dataset.n_classes", "must be >= 2");
    if (dataset.n_domains < 3) fail("dataset.n_domains", "must be >= 3");
    if (dataset.n_per_class_per_domain < 2) fail("dataset.n_per_class_per_domain", "must be >= 2");
    if (dataset.d_raw < 2) fail("dataset.d_raw", "must be >= 2");
    if (dataset.noise_sigma < 0) fail("dataset.noise_sigma", "must be nonnegative");
    if (dataset.prototype_separation < 0) fail("dataset.prototype_separation", "must be nonnegative");
    if (dataset.domain_shift_scale < 0) fail("dataset.domain_shift_scale", "must be nonnegative");
    if (!(dataset.val_fraction > 0 && dataset.val_fraction < 1)) {
        fail("dataset.val_fraction", "must lie in (0, 1)");
    }
    if (encoders.n_classes != dataset.n_classes) {
        fail("encoders.n_classes", "must match dataset.n_classes");
    }
    if (encoders.d_raw != dataset.d_raw) fail("encoders.d_raw", "must match dataset.d_raw");
    if (encoders.d_tok < 4) fail("encoders.d_tok", "must be >= 4");
    if (encoders.d_feat < 1) fail("encoders.d_feat", "must be >= 1");
    if (encoders.context_len < 1) fail("encoders.context_len", "must be >= 1");
    if (encoders.d_tok % encoders.text_heads != 0) {
        fail("encoders.text_heads", "must divide d_tok");
    }
    if (stage1.epochs < 1) fail("stage1.epochs", "must be >= 1");
    if (!(stage1.lr > 0)) fail("stage1.lr", "must be positive");
    if (stage1.batch_size < 1) fail("stage1.batch_size", "must be >= 1");
    if (!(stage1.tau > 0)) fail("stage1.tau", "must be positive");
    if (!(stage1.tau_bce > 0)) fail("stage1.tau_bce", "must be positive");
    if (stage2.alpha_loss < 0) fail("stage2.alpha_loss", "must be nonnegative");
    if (stage2.epochs < 1) fail("stage2.epochs", "must be >= 1");
    if (!(stage2.lr >= 2e-5 && stage2.lr <= 2e-3)) {
        fail("stage2.lr", "must lie in [2e-5, 2e-3]");
    }
    if (stage2.warmup_epochs < 0) fail("stage2.warmup_epochs", "must be nonnegative");
    if (stage2.weight_decay < 0) fail("stage2.weight_decay", "must be nonnegative");
    if (!(stage2.beta1 > 0 && stage2.beta1 < 1)) fail("stage2.beta1", "must lie in (0, 1)");
    if (!(stage2.beta2 > 0 && stage2.beta2 < 1)) fail("stage2.beta2", "must lie in (0, 1)");
    if (stage2.batch_size < 1) fail("stage2.batch_size", "must be >= 1");
    if (stage2.arch.context_len != encoders.context_len) {
        fail("stage2.arch.context_len", "must match encoders.context_len");
    }
    if (stage2.arch.d_tok != encoders.d_tok) fail("stage2.arch.d_tok", "must match encoders.d_tok");
    if (stage2.arch.d_feat != encoders.d_feat) {
        fail("stage2.arch.d_feat", "must match encoders.d_feat");
    }
    if (stage2.arch.d_tok % stage2.arch.heads != 0) fail("stage2.arch.heads", "must divide d_tok");
    if (stage2.input_noise_scale < 0) fail("stage2.input_noise_scale", "must be nonnegative");
    if (alpha_fuse < 0) fail("alpha_fuse", "must be nonnegative");
    if (!(tau > 0)) fail("tau", "must be positive");
    for (int t : targets) {
        if (t < 0 || t >= dataset.n_domains) fail("targets", "domain index out of range");
    }
    if (sweep_seeds.empty()) fail("sweep_seeds", "must not be empty");
    if (sweep_jobs < 1) fail("sweep_jobs", "must be >= 1");
    if (variability_samples_per_domain < 2) {
        fail("variability_samples_per_domain", "must be >= 2");
    }
    if (baseline_noise_scale < 0) fail("baseline_noise_scale", "must be nonnegative");
    if (output_dir.empty()) fail("output_dir", "must not be empty");
}

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.targets = {0, 1, 2, 3};
    return cfg;
}

namespace {

// with_execution_fields=false drops knobs that select what to run or where
// to write without changing any artifact's bytes (targets, jobs, output
// location); the config hash stamps experiment identity, not run shape.
json config_to_json_obj(const RunConfig& c, bool with_execution_fields = true) {
    json j;
    j["dataset"] = {{"n_classes", c.dataset.n_classes},
                    {"n_domains", c.dataset.n_domains},
                    {"n_per_class_per_domain", c.dataset.n_per_class_per_domain},
                    {"d_raw", c.dataset.d_raw},
                    {"prototype_separation", c.dataset.prototype_separation},
                    {"domain_rotation_angle", c.dataset.domain_rotation_angle},
                    {"domain_shift_scale", c.dataset.domain_shift_scale},
                    {"noise_sigma", c.dataset.noise_sigma},
                    {"val_fraction", c.dataset.val_fraction},
                    {"seed", c.dataset.seed}};
    j["encoders"] = {{"d_tok", c.encoders.d_tok},
                     {"d_feat", c.encoders.d_feat},
                     {"context_len", c.encoders.context_len},
                     {"image_hidden", c.encoders.image_hidden},
                     {"text_heads", c.encoders.text_heads},
                     {"text_ffn_hidden", c.encoders.text_ffn_hidden},
                     {"seed", c.encoder_seed}};
    j["stage1"] = {{"epochs", c.stage1.epochs},
                   {"lr", c.stage1.lr},
                   {"batch_size", c.stage1.batch_size},
                   {"tau", c.stage1.tau},
                   {"tau_bce", c.stage1.tau_bce},
                   {"init_jitter", c.stage1.init_jitter},
                   {"seed", c.stage1.seed}};
    j["stage2"] = {{"alpha_loss", c.stage2.alpha_loss},
                   {"epochs", c.stage2.epochs},
                   {"lr", c.stage2.lr},
                   {"warmup_epochs", c.stage2.warmup_epochs},
                   {"warmup_lr", c.stage2.warmup_lr},
                   {"weight_decay", c.stage2.weight_decay},
                   {"beta1", c.stage2.beta1},
                   {"beta2", c.stage2.beta2},
                   {"batch_size", c.stage2.batch_size},
                   {"seed", c.stage2.seed},
                   {"heads", c.stage2.arch.heads},
                   {"ffn_hidden", c.stage2.arch.ffn_hidden}};
    j["alpha_fuse"] = c.alpha_fuse;
    j["tau"] = c.tau;
    j["sweep_seeds"] = c.sweep_seeds;
    j["variability_samples_per_domain"] = c.variability_samples_per_domain;
    j["baseline_noise_scale"] = c.baseline_noise_scale;
    if (with_execution_fields) {
        j["targets"] = c.targets;
        j["sweep_jobs"] = c.sweep_jobs;
        j["output_dir"] = c.output_dir;
    }
    return j;
}

template <typename T>
void read_field(const json& j, const char* section, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(std::string("config field '") + section + "." + key +
                              "': wrong type");
    }
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
    json j;
    try {
        j = json::parse(io::read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ValidationError("config parse error in " + path + ": " + e.what());
    } catch (const StageOrderError&) {
        throw ValidationError("config file not found: " + path);
    }
    RunConfig c = default_run_config();
    if (j.contains("dataset")) {
        const json& d = j["dataset"];
        read_field(d, "dataset", "n_classes", c.dataset.n_classes);
        read_field(d, "dataset", "n_domains", c.dataset.n_domains);
        read_field(d, "dataset", "n_per_class_per_domain", c.dataset.n_per_class_per_domain);
        read_field(d, "dataset", "d_raw", c.dataset.d_raw);
        read_field(d, "dataset", "prototype_separation", c.dataset.prototype_separation);
        read_field(d, "dataset", "domain_rotation_angle", c.dataset.domain_rotation_angle);
        read_field(d, "dataset", "domain_shift_scale", c.dataset.domain_shift_scale);
        read_field(d, "dataset", "noise_sigma", c.dataset.noise_sigma);
        read_field(d, "dataset", "val_fraction", c.dataset.val_fraction);
        read_field(d, "dataset", "seed", c.dataset.seed);
    }
    if (j.contains("encoders")) {
        const json& d = j["encoders"];
        read_field(d, "encoders", "d_tok", c.encoders.d_tok);
        read_field(d, "encoders", "d_feat", c.encoders.d_feat);
        read_field(d, "encoders", "context_len", c.encoders.context_len);
        read_field(d, "encoders", "image_hidden", c.encoders.image_hidden);
        read_field(d, "encoders", "text_heads", c.encoders.text_heads);
        read_field(d, "encoders", "text_ffn_hidden", c.encoders.text_ffn_hidden);
        read_field(d, "encoders", "seed", c.encoder_seed);
    }
    if (j.contains("stage1")) {
        const json& d = j["stage1"];
        read_field(d, "stage1", "epochs", c.stage1.epochs);
        read_field(d, "stage1", "lr", c.stage1.lr);
        read_field(d, "stage1", "batch_size", c.stage1.batch_size);
        read_field(d, "stage1", "tau", c.stage1.tau);
        read_field(d, "stage1", "tau_bce", c.stage1.tau_bce);
        read_field(d, "stage1", "init_jitter", c.stage1.init_jitter);
        read_field(d, "stage1", "seed", c.stage1.seed);
    }
    if (j.contains("stage2")) {
        const json& d = j["stage2"];
        read_field(d, "stage2", "alpha_loss", c.stage2.alpha_loss);
        read_field(d, "stage2", "epochs", c.stage2.epochs);
        read_field(d, "stage2", "lr", c.stage2.lr);
        read_field(d, "stage2", "warmup_epochs", c.stage2.warmup_epochs);
        read_field(d, "stage2", "warmup_lr", c.stage2.warmup_lr);
        read_field(d, "stage2", "weight_decay", c.stage2.weight_decay);
        read_field(d, "stage2", "beta1", c.stage2.beta1);
        read_field(d, "stage2", "beta2", c.stage2.beta2);
        read_field(d, "stage2", "batch_size", c.stage2.batch_size);
        read_field(d, "stage2", "seed", c.stage2.seed);
        read_field(d, "stage2", "heads", c.stage2.arch.heads);
        read_field(d, "stage2", "ffn_hidden", c.stage2.arch.ffn_hidden);
    }
    read_field(j, "", "alpha_fuse", c.alpha_fuse);
    read_field(j, "", "tau", c.tau);
    read_field(j, "", "targets", c.targets);
    read_field(j, "", "sweep_seeds", c.sweep_seeds);
    read_field(j, "", "sweep_jobs", c.sweep_jobs);
    read_field(j, "", "variability_samples_per_domain", c.variability_samples_per_domain);
    read_field(j, "", "baseline_noise_scale", c.baseline_noise_scale);
    read_field(j, "", "output_dir", c.output_dir);

    // unknown top-level keys are configuration mistakes, not extensions
    static const std::vector<std::string> known = {
        "dataset", "encoders", "stage1", "stage2", "alpha_fuse", "tau", "targets",
        "sweep_seeds", "sweep_jobs", "variability_samples_per_domain",
        "baseline_noise_scale", "output_dir"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw ValidationError("config field '" + it.key() + "': unknown key");
        }
    }

    // derived couplings: encoder dims echo the dataset geometry
    c.encoders.d_raw = c.dataset.d_raw;
    c.encoders.n_classes = c.dataset.n_classes;
    c.stage2.arch.context_len = c.encoders.context_len;
    c.stage2.arch.d_tok = c.encoders.d_tok;
    c.stage2.arch.d_feat = c.encoders.d_feat;
    if (c.targets.empty()) {
        for (int t = 0; t < c.dataset.n_domains; ++t) c.targets.push_back(t);
    }
    return c;
}

std::string run_config_to_json(const RunConfig& cfg) { return config_to_json_obj(cfg).dump(2) + "\n"; }

std::uint64_t config_hash(const RunConfig& cfg) {
    // nlohmann objects serialize with sorted keys, so this dump is canonical
    return fnv1a(config_to_json_obj(cfg, /*with_execution_fields=*/false).dump());
}

bool RunManifest::generators_done(int target) const {
    return std::find(generators_done_targets.begin(), generators_done_targets.end(), target) !=
           generators_done_targets.end();
}

void RunManifest::register_artifact(const std::string& key, const ArtifactInfo& info) {
    artifacts[key] = info;
}

const ArtifactInfo& RunManifest::artifact_for_use(const std::string& key) const {
    auto it = artifacts.find(key);
    if (it == artifacts.end()) {
        throw StageOrderError("manifest has no artifact '" + key + "'");
    }
    if (it->second.oracle) {
        throw ContaminationError("artifact '" + key + "' is ORACLE-tagged and cannot feed training or evaluation");
    }
    return it->second;
}

void save_manifest(const RunManifest& m, const std::string& path) {
    json j;
    j["config_hash"] = m.config_hash_hex;
    j["data_done"] = m.data_done;
    j["labels_done"] = m.labels_done;
    j["generators_done_targets"] = m.generators_done_targets;
    json arts = json::object();
    for (const auto& [key, info] : m.artifacts) {
        arts[key] = {{"path", info.path}, {"provenance", info.provenance}, {"oracle", info.oracle}};
    }
    j["artifacts"] = arts;
    io::write_text_file(path, j.dump(2) + "\n");
}

RunManifest load_manifest(const std::string& path) {
    if (!std::filesystem::exists(path)) {
        throw StageOrderError("missing manifest (run gen-data first): " + path);
    }
    json j = json::parse(io::read_text_file(path));
    RunManifest m;
    m.config_hash_hex = j.at("config_hash").get<std::string>();
    m.data_done = j.at("data_done").get<bool>();
    m.labels_done = j.at("labels_done").get<bool>();
    m.generators_done_targets = j.at("generators_done_targets").get<std::vector<int>>();
    for (auto it = j.at("artifacts").begin(); it != j.at("artifacts").end(); ++it) {
        ArtifactInfo info;
        info.path = it.value().at("path").get<std::string>();
        info.provenance = it.value().at("provenance").get<std::vector<int>>();
        info.oracle = it.value().at("oracle").get<bool>();
        m.artifacts[it.key()] = info;
    }
    return m;
}

}  // namespace dpspg
