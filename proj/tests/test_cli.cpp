#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "mlsl/databench.hpp"
#include "mlsl/io.hpp"

using namespace mlsl;
namespace fs = std::filesystem;

namespace {

std::string cli_binary() {
  const char* bin = std::getenv("MLSL_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "MLSL_BIN must point at the mlsl binary");
  return bin;
}

int run_cli(const std::string& args) {
  const std::string cmd = cli_binary() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string tiny_synth_args(const fs::path& out, int seed) {
  return "synth --out " + out.string() + " --seed " + std::to_string(seed) +
         " --n-source 4 --n-target 3 --n-val 2";
}

/// Synth + short source training shared by the adapt-ish cases.
struct CliFixture {
  fs::path root;
  fs::path bench;
  fs::path ckpt;
};

CliFixture prepared_fixture() {
  static CliFixture fixture = [] {
    CliFixture f;
    f.root = fresh_dir("mlsl_cli_fixture");
    f.bench = f.root / "bench";
    REQUIRE(run_cli(tiny_synth_args(f.bench, 5)) == 0);

    // small scenes train fast enough for CLI-level checks
    const nlohmann::json cfg = {
        {"scene", {{"height", 16}, {"width", 16}}},
        {"model", {{"classes", 6}, {"features", 6}, {"depth", 2}}},
        {"head", {{"conv_depth", 6}, {"fc_depth", 4}}},
        {"train", {{"lr", 0.05}, {"source_epochs", 2}, {"steps_per_round", 2}}},
        {"sisc", {{"k", 3}, {"patch_h", 8}, {"patch_w", 8}}},
    };
    write_json(f.root / "cfg.json", cfg);
    REQUIRE(run_cli("--config " + (f.root / "cfg.json").string() + " synth --out " +
                    (f.root / "small").string() + " --seed 6 --n-source 4 --n-target 3 "
                    "--n-val 2") == 0);
    REQUIRE(run_cli("--config " + (f.root / "cfg.json").string() + " train-source --data " +
                    (f.root / "small/source/source.manifest.json").string() + " --out " +
                    (f.root / "pretrain").string() + " --seed 6") == 0);
    f.ckpt = f.root / "pretrain" / "checkpoint.bin";
    REQUIRE(fs::exists(f.ckpt));
    return f;
  }();
  return fixture;
}

std::string small_adapt_args(const CliFixture& f, const std::string& out,
                             const std::string& extra) {
  return "--config " + (f.root / "cfg.json").string() + " adapt --source-data " +
         (f.root / "small/source/source.manifest.json").string() + " --target-data " +
         (f.root / "small/target-train/target-train.manifest.json").string() +
         " --val-data " + (f.root / "small/target-val/target-val.manifest.json").string() +
         " --ckpt " + f.ckpt.string() + " --out " + out + " --seed 7 " + extra;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("synth writes three manifests") {
  const fs::path out = fresh_dir("mlsl_cli_synth") / "bench";
  CHECK(run_cli(tiny_synth_args(out, 11)) == 0);
  CHECK(fs::exists(out / "source" / "source.manifest.json"));
  CHECK(fs::exists(out / "target-train" / "target-train.manifest.json"));
  CHECK(fs::exists(out / "target-val" / "target-val.manifest.json"));
  CHECK(fs::exists(out / "config.snapshot.json"));
  // target-train labels only in the hidden store
  const Manifest tt = load_manifest(out / "target-train" / "target-train.manifest.json");
  for (const auto& e : tt.entries) CHECK_FALSE(e.label.has_value());
  CHECK(fs::exists(out / "target-train" / "eval_labels"));
}

TEST_CASE("same seed twice gives byte-identical datasets") {
  const fs::path a = fresh_dir("mlsl_cli_det_a") / "bench";
  const fs::path b = fresh_dir("mlsl_cli_det_b") / "bench";
  CHECK(run_cli(tiny_synth_args(a, 17)) == 0);
  CHECK(run_cli(tiny_synth_args(b, 17)) == 0);
  CHECK(tree_digest(a / "source") == tree_digest(b / "source"));
  CHECK(tree_digest(a / "target-train") == tree_digest(b / "target-train"));
}

TEST_CASE("invalid sizes exit 2") {
  const fs::path out = fresh_dir("mlsl_cli_bad") / "bench";
  CHECK(run_cli("synth --out " + out.string() + " --n-source 0") == 2);
}

TEST_CASE("train-source with a missing manifest exits 2") {
  CHECK(run_cli("train-source --data /nonexistent/manifest.json --out /tmp/mlsl_cli_x") == 2);
}

TEST_CASE("divergence exits 3 and keeps the last finite checkpoint") {
  const CliFixture f = prepared_fixture();
  const fs::path out = fresh_dir("mlsl_cli_diverge");
  CHECK(run_cli("--config " + (f.root / "cfg.json").string() + " train-source --data " +
                (f.root / "small/source/source.manifest.json").string() + " --out " +
                out.string() + " --lr 1e150") == 3);
  CHECK(fs::exists(out / "checkpoint.bin"));
}

TEST_CASE("zero epochs still persists the initial checkpoint") {
  const CliFixture f = prepared_fixture();
  const fs::path out = fresh_dir("mlsl_cli_zeroep");
  CHECK(run_cli("--config " + (f.root / "cfg.json").string() + " train-source --data " +
                (f.root / "small/source/source.manifest.json").string() + " --out " +
                out.string() + " --epochs 0") == 0);
  CHECK(fs::exists(out / "checkpoint.bin"));
  CHECK(fs::exists(out / "train_log.json"));
}

TEST_CASE("adapt with one round emits exactly one round metrics file") {
  const CliFixture f = prepared_fixture();
  const fs::path out = fresh_dir("mlsl_cli_adapt1");
  CHECK(run_cli(small_adapt_args(f, out.string(), "--rounds 1 --mode sisc")) == 0);
  CHECK(fs::exists(out / "metrics" / "source.json"));
  CHECK(fs::exists(out / "metrics" / "round_0.json"));
  CHECK_FALSE(fs::exists(out / "metrics" / "round_1.json"));
  CHECK(fs::exists(out / "pseudo" / "round_0"));
  CHECK(fs::exists(out / "loss_log.jsonl"));
}

TEST_CASE("config snapshot reproduces the run") {
  const CliFixture f = prepared_fixture();
  const fs::path out_a = fresh_dir("mlsl_cli_repro_a");
  CHECK(run_cli(small_adapt_args(f, out_a.string(), "--rounds 1 --mode sisc+pwl")) == 0);

  // replay purely from the snapshot, redirecting only --out
  const fs::path out_b = fresh_dir("mlsl_cli_repro_b");
  CHECK(run_cli("--config " + (out_a / "config.snapshot.json").string() +
                " adapt --out " + out_b.string()) == 0);
  CHECK(read_text(out_a / "metrics" / "round_0.json") ==
        read_text(out_b / "metrics" / "round_0.json"));
  CHECK(file_digest(out_a / "checkpoints" / "round_0.bin") ==
        file_digest(out_b / "checkpoints" / "round_0.bin"));
}

TEST_CASE("unknown config keys are rejected") {
  const fs::path dir = fresh_dir("mlsl_cli_unknown");
  write_json(dir / "bad.json", nlohmann::json{{"trian", {{"lr", 0.1}}}});
  CHECK(run_cli("--config " + (dir / "bad.json").string() + " synth --out " +
                (dir / "out").string()) == 2);
}

TEST_CASE("eval scores identical prediction and ground truth at mIoU 1") {
  const CliFixture f = prepared_fixture();
  const fs::path dir = fresh_dir("mlsl_cli_eval");
  // predictions = the ground-truth label files themselves
  const Manifest val =
      load_manifest(f.root / "small/target-val/target-val.manifest.json");
  fs::create_directories(dir / "preds");
  for (const auto& e : val.entries) {
    fs::copy_file(val.base / *e.label,
                  dir / "preds" / (fs::path(e.image).stem().string() + ".png"));
  }
  CHECK(run_cli("eval --pred-dir " + (dir / "preds").string() + " --gt-manifest " +
                (f.root / "small/target-val/target-val.manifest.json").string() +
                " --subset 4,5 --out " + (dir / "report.json").string()) == 0);
  const nlohmann::json report = read_json(dir / "report.json");
  CHECK(report.at("miou").get<double>() == 1.0);
  CHECK(report.at("subset_miou").get<double>() == 1.0);
}

TEST_CASE("sweep with a single value matches a plain adapt run") {
  const CliFixture f = prepared_fixture();
  const fs::path sweep_out = fresh_dir("mlsl_cli_sweep1");
  CHECK(run_cli("--config " + (f.root / "cfg.json").string() + " sweep --param lambda " +
                "--values 0.025 --source-data " +
                (f.root / "small/source/source.manifest.json").string() + " --target-data " +
                (f.root / "small/target-train/target-train.manifest.json").string() +
                " --val-data " +
                (f.root / "small/target-val/target-val.manifest.json").string() + " --ckpt " +
                f.ckpt.string() + " --out " + sweep_out.string() +
                " --rounds 1 --mode sisc+pwl --seed 7") == 0);
  CHECK(fs::exists(sweep_out / "sweep_table.txt"));
  CHECK(fs::exists(sweep_out / "sweep.json"));
  const nlohmann::json sj = read_json(sweep_out / "sweep.json");
  REQUIRE(sj.at("rows").size() == 1);

  const fs::path plain_out = fresh_dir("mlsl_cli_sweepref");
  CHECK(run_cli(small_adapt_args(f, plain_out.string(),
                                 "--rounds 1 --mode sisc+pwl --lambda 0.025")) == 0);
  const nlohmann::json plain = read_json(plain_out / "metrics" / "round_0.json");
  CHECK(sj.at("rows")[0].at("miou").get<double>() == plain.at("miou").get<double>());
}

}  // TEST_SUITE
