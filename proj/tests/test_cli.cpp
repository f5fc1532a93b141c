#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "isore/pipeline.hpp"

using namespace isore;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
};

void write_config(const fs::path& p, const json& j) {
    std::ofstream f(p);
    f << j.dump(2);
}

json tiny_phantom_section() {
    return json{{"kind", "beads"},
                {"dims", {40, 40, 40}},
                {"voxel_um", 0.5},
                {"count", 6},
                {"radius_um", 0.5},
                {"amplitude", 2000.0},
                {"min_separation_um", 6.0},
                {"edge_margin_um", 4.0},
                {"degrade",
                 {{"psf_sigma_um", {1.5, 0.8, 0.8}},
                  {"axial_step_um", 1.0},
                  {"gaussian_sigma", 0.5}}}};
}

json tiny_train_section(const std::string& input) {
    return json{{"input", input},
                {"crop", 32},
                {"iterations", 2},
                {"checkpoint_every", 0},
                {"log_every", 1},
                {"generator", {{"kind", "unet3d"}, {"base_channels", 2}}},
                {"backward_generator", {{"kind", "dlg3d"}, {"dlg_channels", 2}}},
                {"discriminator", {{"channels", {4, 4, 8, 8}}}}};
}

}  // namespace

TEST_CASE("config loading, overrides and strict keys") {
    TempDir dir("isore_cli_cfg");
    write_config(dir.path / "c.json", json{{"seed", 5}, {"phantom", {{"count", 3}}}});
    RunConfig rc = load_run_config((dir.path / "c.json").string(), {"phantom.count=9"},
                                   std::nullopt, std::nullopt);
    CHECK(rc.seed == 5);
    CHECK(rc.section("phantom").at("count") == 9);

    RunConfig rc2 = load_run_config((dir.path / "c.json").string(), {}, 77, std::string("o2"));
    CHECK(rc2.seed == 77);
    CHECK(rc2.output_dir == "o2");

    write_config(dir.path / "bad.json", json{{"phantomm", json::object()}});
    CHECK_THROWS_AS(load_run_config((dir.path / "bad.json").string(), {}, std::nullopt,
                                    std::nullopt),
                    ConfigError);
    CHECK_THROWS_AS(apply_override(rc.root, "no_equals_sign"), ConfigError);
}

TEST_CASE("unknown CLI flags and commands exit with the config code") {
    CHECK(run_cli({"frobnicate"}) == 2);
    CHECK(run_cli({"phantom", "--bogus"}) == 2);
    CHECK(run_cli({"restore", "--config", "/nonexistent/c.json"}) == 3);
}

TEST_CASE("phantom command writes volumes, objects and a manifest") {
    TempDir dir("isore_cli_phantom");
    json cfg{{"seed", 11},
             {"output_dir", (dir.path / "out").string()},
             {"phantom", tiny_phantom_section()}};
    write_config(dir.path / "c.json", cfg);
    CHECK(run_cli({"phantom", "--config", (dir.path / "c.json").string()}) == 0);
    CHECK(fs::exists(dir.path / "out" / "truth.tif"));
    CHECK(fs::exists(dir.path / "out" / "degraded.tif"));
    CHECK(fs::exists(dir.path / "out" / "phantom_objects.txt"));
    CHECK(fs::exists(dir.path / "out" / "phantom_manifest.json"));
    Volume truth = load_volume((dir.path / "out" / "truth.tif").string());
    CHECK(truth.nz == 40);

    // zero beads is a config error (exit code 2)
    CHECK(run_cli({"phantom", "--config", (dir.path / "c.json").string(), "--set",
                   "phantom.count=0"}) == 2);
}

TEST_CASE("identical seeds reproduce phantom bytes; different seeds do not") {
    TempDir dir("isore_cli_repro");
    json cfg{{"seed", 21}, {"phantom", tiny_phantom_section()}};
    write_config(dir.path / "c.json", cfg);
    const std::string c = (dir.path / "c.json").string();
    REQUIRE(run_cli({"phantom", "--config", c, "--output-dir", (dir.path / "a").string()}) == 0);
    REQUIRE(run_cli({"phantom", "--config", c, "--output-dir", (dir.path / "b").string()}) == 0);
    REQUIRE(run_cli({"phantom", "--config", c, "--output-dir", (dir.path / "d").string(),
                     "--seed", "22"}) == 0);
    CHECK(hash_file((dir.path / "a" / "degraded.tif").string()) ==
          hash_file((dir.path / "b" / "degraded.tif").string()));
    CHECK(hash_file((dir.path / "a" / "degraded.tif").string()) !=
          hash_file((dir.path / "d" / "degraded.tif").string()));
    // manifests of identical runs are byte-identical up to the output paths
    CHECK(hash_file((dir.path / "a" / "phantom_manifest.json").string()) !=
          hash_file((dir.path / "d" / "phantom_manifest.json").string()));
}

TEST_CASE("preprocess presets, outputs and the idempotence guard") {
    TempDir dir("isore_cli_pre");
    json cfg{{"seed", 31},
             {"output_dir", (dir.path / "ph").string()},
             {"phantom", tiny_phantom_section()}};
    write_config(dir.path / "c.json", cfg);
    REQUIRE(run_cli({"phantom", "--config", (dir.path / "c.json").string()}) == 0);
    const std::string degraded = (dir.path / "ph" / "degraded.tif").string();

    json pre{{"output_dir", (dir.path / "pre").string()},
             {"preprocess", {{"input", degraded}, {"preset", "cfm"}}}};
    write_config(dir.path / "p.json", pre);
    REQUIRE(run_cli({"preprocess", "--config", (dir.path / "p.json").string()}) == 0);
    const std::string preprocessed = (dir.path / "pre" / "preprocessed.tif").string();
    Volume v = load_volume(preprocessed);
    CHECK(v.domain == IntensityDomain::normalized);
    auto [lo, hi] = v.min_max();
    CHECK(lo >= -1.f);
    CHECK(hi <= 1.f);
    CHECK(fs::exists(dir.path / "pre" / "normalization.json"));

    // running preprocess on an already-normalized volume is rejected
    json again{{"output_dir", (dir.path / "pre2").string()},
               {"preprocess", {{"input", preprocessed}}}};
    write_config(dir.path / "p2.json", again);
    CHECK(run_cli({"preprocess", "--config", (dir.path / "p2.json").string()}) == 2);

    // LSM preset resolves its documented defaults into the manifest
    json lsm{{"output_dir", (dir.path / "pre3").string()},
             {"preprocess", {{"input", degraded}, {"preset", "lsm"}, {"shear_factor", 0.5}}}};
    write_config(dir.path / "p3.json", lsm);
    REQUIRE(run_cli({"preprocess", "--config", (dir.path / "p3.json").string()}) == 0);
    json man = load_json_file((dir.path / "pre3" / "preprocess_manifest.json").string());
    CHECK(man["config"]["median_radius"] == 2);
    CHECK(man["config"]["low_pct"] == 3.0);

    // constant volume -> numeric failure (exit code 4)
    Volume flat(8, 8, 8, {}, 5.f);
    save_volume(flat, (dir.path / "flat.tif").string());
    json fc{{"output_dir", (dir.path / "pre4").string()},
            {"preprocess", {{"input", (dir.path / "flat.tif").string()}}}};
    write_config(dir.path / "p4.json", fc);
    CHECK(run_cli({"preprocess", "--config", (dir.path / "p4.json").string()}) == 4);
}

TEST_CASE("train, restore and rl commands run end to end on a tiny setup") {
    TempDir dir("isore_cli_train");
    json cfg{{"seed", 41},
             {"output_dir", (dir.path / "ph").string()},
             {"phantom", tiny_phantom_section()}};
    write_config(dir.path / "c.json", cfg);
    REQUIRE(run_cli({"phantom", "--config", (dir.path / "c.json").string()}) == 0);

    json pre{{"output_dir", (dir.path / "pre").string()},
             {"preprocess",
              {{"input", (dir.path / "ph" / "degraded.tif").string()}, {"preset", "cfm"}}}};
    write_config(dir.path / "p.json", pre);
    REQUIRE(run_cli({"preprocess", "--config", (dir.path / "p.json").string()}) == 0);
    const std::string pre_tif = (dir.path / "pre" / "preprocessed.tif").string();

    json tr{{"seed", 42},
            {"output_dir", (dir.path / "tr").string()},
            {"train", tiny_train_section(pre_tif)}};
    write_config(dir.path / "t.json", tr);
    REQUIRE(run_cli({"train", "--config", (dir.path / "t.json").string()}) == 0);
    const std::string ckpt =
        (dir.path / "tr" / "checkpoints" / "checkpoint_final.isore").string();
    REQUIRE(fs::exists(ckpt));
    {
        std::ifstream log((dir.path / "tr" / "loss_log.tsv").string());
        std::string line;
        int rows = 0;
        while (std::getline(log, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 3);  // header + 2 iterations
    }

    // crop not divisible by 4 is a config error
    CHECK(run_cli({"train", "--config", (dir.path / "t.json").string(), "--set",
                   "train.crop=30"}) == 2);

    // resume continues the iteration count
    json tr2 = tr;
    tr2["train"]["iterations"] = 4;
    tr2["train"]["resume"] = ckpt;
    tr2["output_dir"] = (dir.path / "tr2").string();
    write_config(dir.path / "t2.json", tr2);
    REQUIRE(run_cli({"train", "--config", (dir.path / "t2.json").string()}) == 0);
    ModelBundle<float> bundle;
    CheckpointInfo info = load_checkpoint(
        (dir.path / "tr2" / "checkpoints" / "checkpoint_final.isore").string(), &bundle);
    CHECK(info.iteration == 4);

    // restore with the trained checkpoint
    json rs{{"output_dir", (dir.path / "rs").string()},
            {"restore",
             {{"input", pre_tif},
              {"checkpoint", ckpt},
              {"tile", 32},
              {"overlap", 8},
              {"border_crop", 4},
              {"normalization", (dir.path / "pre" / "normalization.json").string()}}}};
    write_config(dir.path / "r.json", rs);
    REQUIRE(run_cli({"restore", "--config", (dir.path / "r.json").string()}) == 0);
    CHECK(fs::exists(dir.path / "rs" / "restored_normalized.tif"));
    CHECK(fs::exists(dir.path / "rs" / "restored.tif"));
    CHECK(fs::exists(dir.path / "rs" / "tile_plan.txt"));
    Volume restored = load_volume((dir.path / "rs" / "restored_normalized.tif").string());
    CHECK(restored.nz == 40);

    // missing checkpoint -> io error
    CHECK(run_cli({"restore", "--config", (dir.path / "r.json").string(), "--set",
                   "restore.checkpoint=\"/nonexistent.isore\""}) == 3);

    // rl with a delta PSF reproduces the input exactly
    Volume truth = load_volume((dir.path / "ph" / "truth.tif").string());
    json rl{{"output_dir", (dir.path / "rl").string()},
            {"rl",
             {{"input", (dir.path / "ph" / "truth.tif").string()},
              {"psf", {{"sigma_um", {1e-9, 1e-9, 1e-9}}}},
              {"iterations", 3}}}};
    write_config(dir.path / "rl.json", rl);
    REQUIRE(run_cli({"rl", "--config", (dir.path / "rl.json").string()}) == 0);
    Volume rl_out = load_volume((dir.path / "rl" / "rl.tif").string());
    CHECK(std::memcmp(rl_out.data.data(), truth.data.data(), truth.size() * 4) == 0);
    json man = load_json_file((dir.path / "rl" / "rl_manifest.json").string());
    CHECK(man["config"]["iterations"] == 3);

    // missing PSF file -> io error
    CHECK(run_cli({"rl", "--config", (dir.path / "rl.json").string(), "--set",
                   "rl.psf=\"/nonexistent_psf.tif\""}) == 3);
}

TEST_CASE("evaluate command produces the report directory") {
    TempDir dir("isore_cli_eval");
    json cfg{{"seed", 51},
             {"output_dir", (dir.path / "ph").string()},
             {"phantom", tiny_phantom_section()}};
    cfg["phantom"]["dims"] = {48, 48, 48};
    cfg["phantom"]["count"] = 4;
    cfg["phantom"]["edge_margin_um"] = 6.0;
    write_config(dir.path / "c.json", cfg);
    REQUIRE(run_cli({"phantom", "--config", (dir.path / "c.json").string()}) == 0);

    const std::string truth = (dir.path / "ph" / "truth.tif").string();
    const std::string degraded = (dir.path / "ph" / "degraded.tif").string();
    json ev{{"output_dir", (dir.path / "ev").string()},
            {"evaluate",
             {{"truth", truth},
              {"degraded", degraded},
              {"restored", degraded},  // restored stand-in: the degraded volume itself
              {"threshold_frac", 0.3},
              {"min_sep_voxels", 8.0},
              {"expected_fwhm_um", 4.0},
              {"roi_slices", 8},
              {"mid_slices", 5}}}};
    write_config(dir.path / "e.json", ev);
    REQUIRE(run_cli({"evaluate", "--config", (dir.path / "e.json").string()}) == 0);
    for (const char* f : {"spots.tsv", "fwhm.tsv", "psnr.tsv", "spectra.tsv",
                          "evaluation_summary.json", "fwhm_axial_hist.png", "spectra.png"})
        CHECK(fs::exists(dir.path / "ev" / f));
    json summary = load_json_file((dir.path / "ev" / "evaluation_summary.json").string());
    CHECK(summary["spots_detected"].get<int>() >= 3);
    // restored == degraded, so the axial PSNR gain is exactly zero
    CHECK(summary["axial_psnr_gain_dB"].get<double>() == 0.0);

    // empty spot set: threshold above everything -> report notes zero spots
    json ev0 = ev;
    ev0["output_dir"] = (dir.path / "ev0").string();
    ev0["evaluate"]["threshold_frac"] = 2.0;
    write_config(dir.path / "e0.json", ev0);
    REQUIRE(run_cli({"evaluate", "--config", (dir.path / "e0.json").string()}) == 0);
    json s0 = load_json_file((dir.path / "ev0" / "evaluation_summary.json").string());
    CHECK(s0["spots_detected"].get<int>() == 0);
    CHECK(s0.contains("note"));

    // mismatched dims -> config error
    Volume small(16, 16, 16, {}, 1.f);
    small.data[0] = 2.f;
    save_volume(small, (dir.path / "small.tif").string());
    CHECK(run_cli({"evaluate", "--config", (dir.path / "e.json").string(), "--set",
                   std::string("evaluate.restored=\"") + (dir.path / "small.tif").string() +
                       "\"",
                   "--output-dir", (dir.path / "ev2").string()}) == 2);
}

TEST_CASE("device selection env var accepts only cpu") {
    setenv("ISORE_DEVICE", "cuda", 1);
    CHECK(run_cli({"phantom"}) == 2);
    setenv("ISORE_DEVICE", "cpu", 1);
    TempDir dir("isore_cli_dev");
    json cfg{{"output_dir", (dir.path / "out").string()}, {"phantom", tiny_phantom_section()}};
    write_config(dir.path / "c.json", cfg);
    CHECK(run_cli({"phantom", "--config", (dir.path / "c.json").string()}) == 0);
    unsetenv("ISORE_DEVICE");
}
