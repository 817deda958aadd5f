#include <doctest.h>

#include "dpspg/config.hpp"
#include "dpspg/serialize.hpp"

#include <cstdlib>
#include <filesystem>
#include <string>

using namespace dpspg;

namespace {

std::string cli_path() {
    const char* p = std::getenv("DPSPG_CLI");
    REQUIRE(p != nullptr);
    return p;
}

int run_cli(const std::string& args, const std::string& log = "/dev/null") {
    const std::string cmd = cli_path() + " " + args + " > " + log + " 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

struct CliFixture {
    std::filesystem::path dir;
    std::string cfg_path;

    CliFixture() {
        dir = std::filesystem::temp_directory_path() / "dpspg_cli_test";
        std::filesystem::remove_all(dir);
        std::filesystem::create_directories(dir);
        cfg_path = (dir / "cfg.json").string();
        io::write_text_file(cfg_path, R"({
            "dataset": {"n_per_class_per_domain": 8, "seed": 3},
            "stage1": {"epochs": 3},
            "stage2": {"epochs": 10, "warmup_epochs": 2},
            "targets": [0],
            "sweep_seeds": [1, 2],
            "output_dir": ")" + (dir / "out").string() + R"("
        })");
    }
    ~CliFixture() { std::filesystem::remove_all(dir); }
};

}  // namespace

TEST_CASE("help output enumerates the verbs; unknown flags are hard errors") {
    CliFixture fx;
    const std::string log = (fx.dir / "help.log").string();
    CHECK(run_cli("--help", log) == 0);
    const std::string text = io::read_text_file(log);
    for (const char* verb : {"gen-data", "train-labels", "train-generators", "eval", "sweep",
                             "verify", "report"}) {
        CHECK(text.find(verb) != std::string::npos);
    }
    CHECK(run_cli("eval --target 0 --no-such-flag 1") != 0);
    CHECK(run_cli("not-a-verb") != 0);
}

TEST_CASE("exit codes: validation 2, stage order 3, contamination 5") {
    CliFixture fx;

    const std::string bad_cfg = (fx.dir / "bad.json").string();
    io::write_text_file(bad_cfg, R"({"stage2": {"lr": 0.5}})");
    CHECK(run_cli("gen-data --config " + bad_cfg) == 2);

    // eval before anything exists: stage order
    CHECK(run_cli("eval --config " + fx.cfg_path + " --target 0") == 3);
    CHECK(run_cli("gen-data --config " + fx.cfg_path) == 0);
    CHECK(run_cli("eval --config " + fx.cfg_path + " --target 0") == 3);
    CHECK(run_cli("train-labels --config " + fx.cfg_path) == 0);
    CHECK(run_cli("eval --config " + fx.cfg_path + " --target 0") == 3);
    CHECK(run_cli("train-generators --config " + fx.cfg_path) == 0);
    CHECK(run_cli("eval --config " + fx.cfg_path + " --target 0 --mode full") == 0);
    CHECK(run_cli("eval --config " + fx.cfg_path + " --target 0 --mode fixed_prompt") == 0);

    // tampering the manifest to mark the pooled prompt as oracle output
    const RunConfig cfg = load_run_config(fx.cfg_path);
    const std::string manifest_path = cfg.output_dir + "/manifest.json";
    RunManifest m = load_manifest(manifest_path);
    m.artifacts.at("pooled.target0").oracle = true;
    save_manifest(m, manifest_path);
    CHECK(run_cli("eval --config " + fx.cfg_path + " --target 0 --mode fixed_prompt") == 5);
}

TEST_CASE("reruns with identical config and seed are byte-identical") {
    CliFixture fx;
    REQUIRE(run_cli("gen-data --config " + fx.cfg_path) == 0);
    const RunConfig cfg = load_run_config(fx.cfg_path);
    const std::string ds_csv = cfg.output_dir + "/dataset.csv";
    const std::string enc_path = cfg.output_dir + "/encoders.dpv";
    const std::uint64_t ds_h = io::file_hash(ds_csv);
    const std::uint64_t enc_h = io::file_hash(enc_path);

    REQUIRE(run_cli("train-labels --config " + fx.cfg_path) == 0);
    const std::string lbl = cfg.output_dir + "/labels_domain0.dpl";
    const std::uint64_t lbl_h = io::file_hash(lbl);

    REQUIRE(run_cli("train-generators --config " + fx.cfg_path) == 0);
    const std::string gen = cfg.output_dir + "/generator_pos_target0.dpg";
    const std::uint64_t gen_h = io::file_hash(gen);

    // full rerun of every stage
    REQUIRE(run_cli("gen-data --config " + fx.cfg_path) == 0);
    REQUIRE(run_cli("train-labels --config " + fx.cfg_path) == 0);
    REQUIRE(run_cli("train-generators --config " + fx.cfg_path) == 0);
    CHECK(io::file_hash(ds_csv) == ds_h);
    CHECK(io::file_hash(enc_path) == enc_h);
    CHECK(io::file_hash(lbl) == lbl_h);
    CHECK(io::file_hash(gen) == gen_h);
}

TEST_CASE("flag overrides change the config hash and are honored") {
    CliFixture fx;
    // a different dataset seed produces a different dataset file
    REQUIRE(run_cli("gen-data --config " + fx.cfg_path) == 0);
    const RunConfig cfg = load_run_config(fx.cfg_path);
    const std::uint64_t h1 = io::file_hash(cfg.output_dir + "/dataset.csv");
    REQUIRE(run_cli("gen-data --config " + fx.cfg_path + " --dataset-seed 12345") == 0);
    const std::uint64_t h2 = io::file_hash(cfg.output_dir + "/dataset.csv");
    CHECK(h1 != h2);
}

TEST_CASE("DPSPG_OUTPUT_ROOT reroots relative output directories") {
    CliFixture fx;
    const std::string rel_cfg = (fx.dir / "rel.json").string();
    io::write_text_file(rel_cfg, R"({
        "dataset": {"n_per_class_per_domain": 8, "seed": 3},
        "targets": [0],
        "output_dir": "rooted_out"
    })");
    const std::string root = (fx.dir / "root").string();
    const std::string cmd = "DPSPG_OUTPUT_ROOT=" + root + " " + cli_path() +
                            " gen-data --config " + rel_cfg + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    CHECK(WEXITSTATUS(status) == 0);
    CHECK(std::filesystem::exists(root + "/rooted_out/dataset.csv"));
}
