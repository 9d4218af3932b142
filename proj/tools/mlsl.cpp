// mlsl: reproducible self-training domain-adaptation experiments on the
// built-in synthetic benchmark. Subcommands: synth, train-source, adapt,
// eval, sweep.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "mlsl/databench.hpp"
#include "mlsl/eval.hpp"
#include "mlsl/io.hpp"
#include "mlsl/model.hpp"
#include "mlsl/rng.hpp"
#include "mlsl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

// ---------------------------------------------------------------------------
// Config file: every field optional with a default; unknown keys rejected.
// ---------------------------------------------------------------------------

struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 0;
  mlsl::TrainConfig train;
  mlsl::SceneSpec scene = mlsl::SceneSpec::defaults();
  mlsl::DomainShiftSpec shift = mlsl::DomainShiftSpec::defaults();
  struct Paths {
    std::string source_manifest;
    std::string target_manifest;
    std::string val_manifest;
    std::string checkpoint;
    std::string out;
  } paths;
};

void require_keys(const json& j, const std::set<std::string>& allowed,
                  const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) {
      throw mlsl::ConfigError("unknown config key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

mlsl::CoverageMode coverage_from_name(const std::string& name) {
  if (name == "grid-plus-random") return mlsl::CoverageMode::GridPlusRandom;
  if (name == "random-only") return mlsl::CoverageMode::RandomOnly;
  throw mlsl::ConfigError("unknown coverage mode: " + name);
}

mlsl::Aggregation aggregation_from_name(const std::string& name) {
  if (name == "probability-sum") return mlsl::Aggregation::ProbabilitySum;
  if (name == "relative-frequency") return mlsl::Aggregation::RelativeFrequency;
  throw mlsl::ConfigError("unknown aggregation: " + name);
}

void apply_config_json(const json& j, RunConfig& cfg) {
  require_keys(j, {"seed", "threads", "train", "model", "head", "sisc", "selection", "pwl",
                   "loss", "scene", "shift", "paths"},
               "config root");
  maybe(j, "seed", cfg.seed);
  maybe(j, "threads", cfg.threads);
  if (j.contains("train")) {
    const json& t = j.at("train");
    require_keys(t, {"lr", "batch_size", "rounds", "steps_per_round", "source_epochs", "mode"},
                 "train");
    maybe(t, "lr", cfg.train.lr);
    maybe(t, "batch_size", cfg.train.batch_size);
    maybe(t, "rounds", cfg.train.rounds);
    maybe(t, "steps_per_round", cfg.train.steps_per_round);
    maybe(t, "source_epochs", cfg.train.source_epochs);
    if (t.contains("mode")) {
      cfg.train.mode = mlsl::adapt_mode_from_name(t.at("mode").get<std::string>());
    }
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    require_keys(m, {"classes", "features", "depth"}, "model");
    maybe(m, "classes", cfg.train.model.classes);
    maybe(m, "features", cfg.train.model.features);
    maybe(m, "depth", cfg.train.model.depth);
  }
  if (j.contains("head")) {
    const json& h = j.at("head");
    require_keys(h, {"conv_depth", "fc_depth"}, "head");
    maybe(h, "conv_depth", cfg.train.head.conv_depth);
    maybe(h, "fc_depth", cfg.train.head.fc_depth);
  }
  if (j.contains("sisc")) {
    const json& s = j.at("sisc");
    require_keys(s, {"k", "patch_h", "patch_w", "coverage", "aggregation"}, "sisc");
    maybe(s, "k", cfg.train.sisc.patch_count);
    maybe(s, "patch_h", cfg.train.sisc.patch_h);
    maybe(s, "patch_w", cfg.train.sisc.patch_w);
    if (s.contains("coverage")) {
      cfg.train.sisc.coverage = coverage_from_name(s.at("coverage").get<std::string>());
    }
    if (s.contains("aggregation")) {
      cfg.train.sisc.aggregation =
          aggregation_from_name(s.at("aggregation").get<std::string>());
    }
  }
  if (j.contains("selection")) {
    const json& s = j.at("selection");
    require_keys(s, {"start", "increment", "cap"}, "selection");
    maybe(s, "start", cfg.train.selection.start);
    maybe(s, "increment", cfg.train.selection.increment);
    maybe(s, "cap", cfg.train.selection.cap);
  }
  if (j.contains("pwl")) {
    const json& p = j.at("pwl");
    require_keys(p, {"eta"}, "pwl");
    maybe(p, "eta", cfg.train.pwl.eta);
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    require_keys(l, {"lambda", "reduction"}, "loss");
    maybe(l, "lambda", cfg.train.loss.lambda_fcl);
    if (l.contains("reduction")) {
      const std::string r = l.at("reduction").get<std::string>();
      if (r == "sum") {
        cfg.train.loss.reduction = mlsl::Reduction::Sum;
      } else if (r == "mean-over-labeled") {
        cfg.train.loss.reduction = mlsl::Reduction::MeanOverLabeled;
      } else {
        throw mlsl::ConfigError("unknown reduction: " + r);
      }
    }
  }
  if (j.contains("scene")) {
    const json& s = j.at("scene");
    require_keys(s, {"classes", "height", "width", "appearance", "min_objects", "max_objects",
                     "min_object_size", "max_object_size"},
                 "scene");
    maybe(s, "classes", cfg.scene.classes);
    maybe(s, "height", cfg.scene.height);
    maybe(s, "width", cfg.scene.width);
    maybe(s, "min_objects", cfg.scene.min_objects);
    maybe(s, "max_objects", cfg.scene.max_objects);
    maybe(s, "min_object_size", cfg.scene.min_object_size);
    maybe(s, "max_object_size", cfg.scene.max_object_size);
    if (s.contains("appearance")) {
      cfg.scene.appearance.clear();
      for (const json& a : s.at("appearance")) {
        require_keys(a, {"rgb", "jitter"}, "scene.appearance");
        mlsl::SceneSpec::ClassAppearance app;
        app.mean_rgb = a.at("rgb").get<std::array<double, 3>>();
        maybe(a, "jitter", app.jitter);
        cfg.scene.appearance.push_back(app);
      }
    }
  }
  if (j.contains("shift")) {
    const json& s = j.at("shift");
    require_keys(s, {"gain", "offset", "noise_sigma", "texture_jitter"}, "shift");
    if (s.contains("gain")) cfg.shift.gain = s.at("gain").get<std::array<double, 3>>();
    if (s.contains("offset")) cfg.shift.offset = s.at("offset").get<std::array<double, 3>>();
    maybe(s, "noise_sigma", cfg.shift.noise_sigma);
    maybe(s, "texture_jitter", cfg.shift.texture_jitter);
  }
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    require_keys(p, {"source_manifest", "target_manifest", "val_manifest", "checkpoint", "out"},
                 "paths");
    maybe(p, "source_manifest", cfg.paths.source_manifest);
    maybe(p, "target_manifest", cfg.paths.target_manifest);
    maybe(p, "val_manifest", cfg.paths.val_manifest);
    maybe(p, "checkpoint", cfg.paths.checkpoint);
    maybe(p, "out", cfg.paths.out);
  }
}

json config_to_json(const RunConfig& cfg) {
  const mlsl::SiscConfig& sc = cfg.train.sisc;
  json appearance = json::array();
  for (const auto& a : cfg.scene.appearance) {
    appearance.push_back({{"rgb", a.mean_rgb}, {"jitter", a.jitter}});
  }
  return json{
      {"seed", cfg.seed},
      {"threads", cfg.threads},
      {"train",
       {{"lr", cfg.train.lr},
        {"batch_size", cfg.train.batch_size},
        {"rounds", cfg.train.rounds},
        {"steps_per_round", cfg.train.steps_per_round},
        {"source_epochs", cfg.train.source_epochs},
        {"mode", mlsl::adapt_mode_name(cfg.train.mode)}}},
      {"model",
       {{"classes", cfg.train.model.classes},
        {"features", cfg.train.model.features},
        {"depth", cfg.train.model.depth}}},
      {"head",
       {{"conv_depth", cfg.train.head.conv_depth}, {"fc_depth", cfg.train.head.fc_depth}}},
      {"sisc",
       {{"k", sc.patch_count},
        {"patch_h", sc.patch_h},
        {"patch_w", sc.patch_w},
        {"coverage", sc.coverage == mlsl::CoverageMode::GridPlusRandom ? "grid-plus-random"
                                                                       : "random-only"},
        {"aggregation", sc.aggregation == mlsl::Aggregation::ProbabilitySum
                            ? "probability-sum"
                            : "relative-frequency"}}},
      {"selection",
       {{"start", cfg.train.selection.start},
        {"increment", cfg.train.selection.increment},
        {"cap", cfg.train.selection.cap}}},
      {"pwl", {{"eta", cfg.train.pwl.eta}}},
      {"loss",
       {{"lambda", cfg.train.loss.lambda_fcl},
        {"reduction", cfg.train.loss.reduction == mlsl::Reduction::Sum ? "sum"
                                                                       : "mean-over-labeled"}}},
      {"scene",
       {{"classes", cfg.scene.classes},
        {"height", cfg.scene.height},
        {"width", cfg.scene.width},
        {"appearance", appearance},
        {"min_objects", cfg.scene.min_objects},
        {"max_objects", cfg.scene.max_objects},
        {"min_object_size", cfg.scene.min_object_size},
        {"max_object_size", cfg.scene.max_object_size}}},
      {"shift",
       {{"gain", cfg.shift.gain},
        {"offset", cfg.shift.offset},
        {"noise_sigma", cfg.shift.noise_sigma},
        {"texture_jitter", cfg.shift.texture_jitter}}},
      {"paths",
       {{"source_manifest", cfg.paths.source_manifest},
        {"target_manifest", cfg.paths.target_manifest},
        {"val_manifest", cfg.paths.val_manifest},
        {"checkpoint", cfg.paths.checkpoint},
        {"out", cfg.paths.out}}},
  };
}

RunConfig load_run_config(const std::string& config_path) {
  RunConfig cfg;
  if (!config_path.empty()) {
    apply_config_json(mlsl::read_json(config_path), cfg);
  }
  return cfg;
}

void snapshot_config(const RunConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  mlsl::write_json(out_dir / "config.snapshot.json", config_to_json(cfg));
}

void parse_portion_schedule(const std::string& text, mlsl::SelectionConfig& out) {
  double start, inc, cap;
  char c1, c2;
  std::istringstream in(text);
  if (!(in >> start >> c1 >> inc >> c2 >> cap) || c1 != ':' || c2 != ':') {
    throw mlsl::ConfigError("portion schedule must be start:increment:cap, got " + text);
  }
  out = mlsl::SelectionConfig{start, inc, cap};
}

std::optional<fs::path> detect_hidden_store(const mlsl::Manifest& target) {
  const fs::path dir = target.base / "eval_labels";
  return fs::exists(dir) ? std::optional<fs::path>(target.base) : std::nullopt;
}

// ---------------------------------------------------------------------------
// Subcommand bodies (CLI wiring in main).
// ---------------------------------------------------------------------------

int cmd_synth(RunConfig cfg, const std::string& out, int n_source, int n_target, int n_val) {
  if (n_source < 1 || n_target < 1 || n_val < 1) {
    throw mlsl::ConfigError("dataset sizes must be >= 1");
  }
  const fs::path root = out;
  cfg.paths.out = out;
  snapshot_config(cfg, root);
  gen_dataset(cfg.scene, mlsl::DomainShiftSpec::identity(), n_source,
              mlsl::derive_seed(cfg.seed, "dataset-source"), root / "source",
              mlsl::Domain::Source, cfg.threads);
  gen_dataset(cfg.scene, cfg.shift, n_target, mlsl::derive_seed(cfg.seed, "dataset-target"),
              root / "target-train", mlsl::Domain::TargetTrain, cfg.threads);
  gen_dataset(cfg.scene, cfg.shift, n_val, mlsl::derive_seed(cfg.seed, "dataset-val"),
              root / "target-val", mlsl::Domain::TargetVal, cfg.threads);
  std::cout << "wrote source/target-train/target-val under " << root << "\n";
  return kExitOk;
}

int cmd_train_source(RunConfig cfg) {
  if (cfg.paths.source_manifest.empty()) throw mlsl::ConfigError("--data is required");
  if (cfg.paths.out.empty()) throw mlsl::ConfigError("--out is required");
  cfg.train.seed = cfg.seed;
  cfg.train.threads = cfg.threads;
  cfg.train.validate();

  const mlsl::Dataset source = mlsl::Dataset::load(fs::path(cfg.paths.source_manifest));
  if (source.manifest.classes != cfg.train.model.classes) {
    throw mlsl::ConfigError("manifest classes do not match model config");
  }
  const fs::path out_dir = cfg.paths.out;
  snapshot_config(cfg, out_dir);

  mlsl::SegModel model = mlsl::SegModel::init(cfg.train.model, cfg.seed);
  mlsl::ClsHead head = mlsl::ClsHead::init(cfg.train.head, cfg.train.model.features,
                                           cfg.train.model.classes, cfg.seed);
  const mlsl::SourceTrainResult result =
      mlsl::train_source(model, head, source, cfg.train, out_dir / "checkpoint.bin");
  mlsl::write_json(out_dir / "train_log.json", json{{"epoch_loss", result.epoch_loss}});
  if (!result.epoch_loss.empty()) {
    std::cout << "source training loss " << result.epoch_loss.front() << " -> "
              << result.epoch_loss.back() << "\n";
  }
  std::cout << "checkpoint: " << (out_dir / "checkpoint.bin") << "\n";
  return kExitOk;
}

int cmd_adapt(RunConfig cfg, const std::string& hidden_eval) {
  if (cfg.paths.source_manifest.empty() || cfg.paths.target_manifest.empty() ||
      cfg.paths.val_manifest.empty() || cfg.paths.checkpoint.empty() ||
      cfg.paths.out.empty()) {
    throw mlsl::ConfigError(
        "--source-data, --target-data, --val-data, --ckpt and --out are required");
  }
  cfg.train.seed = cfg.seed;
  cfg.train.threads = cfg.threads;

  const mlsl::Checkpoint checkpoint = mlsl::load_checkpoint(cfg.paths.checkpoint);
  cfg.train.model = checkpoint.model.cfg;
  cfg.train.head = checkpoint.head.cfg;
  cfg.train.validate();

  const mlsl::Dataset source = mlsl::Dataset::load(fs::path(cfg.paths.source_manifest));
  const mlsl::Dataset target = mlsl::Dataset::load(fs::path(cfg.paths.target_manifest));
  const mlsl::Dataset val = mlsl::Dataset::load(fs::path(cfg.paths.val_manifest));
  if (source.manifest.classes != cfg.train.model.classes) {
    throw mlsl::ConfigError("source manifest classes do not match the checkpoint");
  }

  std::optional<fs::path> hidden;
  if (!hidden_eval.empty()) {
    hidden = fs::path(hidden_eval);
  } else {
    hidden = detect_hidden_store(target.manifest);
  }

  const fs::path run_dir = cfg.paths.out;
  snapshot_config(cfg, run_dir);
  const std::vector<mlsl::RoundState> states =
      mlsl::run_mlsl(cfg.train, checkpoint.model, checkpoint.head, source, target, val,
                     hidden, run_dir);
  for (const mlsl::RoundState& s : states) {
    std::cout << "round " << s.round << " miou " << s.report.metrics.miou << "\n";
  }
  return kExitOk;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_manifest,
             const std::string& subset_text, const std::string& out) {
  if (pred_dir.empty() || gt_manifest.empty()) {
    throw mlsl::ConfigError("--pred-dir and --gt-manifest are required");
  }
  const mlsl::Manifest manifest = mlsl::load_manifest(gt_manifest);
  std::optional<std::vector<int>> subset;
  if (!subset_text.empty()) {
    std::vector<int> classes;
    std::istringstream in(subset_text);
    std::string item;
    while (std::getline(in, item, ',')) classes.push_back(std::stoi(item));
    subset = classes;
  }

  mlsl::ConfusionMatrix cm(manifest.classes);
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const mlsl::ManifestEntry& e = manifest.entries[i];
    if (!e.label) throw mlsl::ConfigError("gt manifest entry has no label: " + e.image);
    const mlsl::LabelMap gt =
        mlsl::load_labelmap(manifest.base / *e.label, manifest.classes);
    const fs::path pred_path =
        fs::path(pred_dir) / (fs::path(e.image).stem().string() + ".png");
    const mlsl::LabelMap pred = mlsl::load_labelmap(pred_path, manifest.classes);
    cm.add(pred, gt);
  }
  mlsl::RoundReport report;
  report.round = 0;
  report.metrics = mlsl::miou(cm, subset);
  const json j = mlsl::report_to_json(report);
  std::cout << j.dump(2) << "\n";
  if (!out.empty()) mlsl::write_json(out, j);
  return kExitOk;
}

struct SweepRow {
  double value = 0.0;
  double miou = 0.0;
  std::optional<double> subset_miou;
};

int cmd_sweep(RunConfig cfg, const std::string& param, const std::string& values_text,
              const std::string& out, const std::string& hidden_eval) {
  if (param != "lambda" && param != "eta" && param != "k" && param != "patch") {
    throw mlsl::ConfigError("--param must be one of lambda, eta, k, patch");
  }
  if (values_text.empty()) throw mlsl::ConfigError("--values is required");
  std::vector<double> values;
  {
    std::istringstream in(values_text);
    std::string item;
    while (std::getline(in, item, ',')) values.push_back(std::stod(item));
  }
  if (values.empty()) throw mlsl::ConfigError("--values is empty");
  const fs::path out_dir = out.empty() ? fs::path("sweep") : fs::path(out);
  fs::create_directories(out_dir);

  std::vector<SweepRow> rows;
  for (const double v : values) {
    RunConfig run_cfg = cfg;
    if (param == "lambda") {
      run_cfg.train.loss.lambda_fcl = v;
    } else if (param == "eta") {
      run_cfg.train.pwl.eta = v;
    } else if (param == "k") {
      run_cfg.train.sisc.patch_count = static_cast<int>(v);
    } else {
      run_cfg.train.sisc.patch_h = static_cast<int>(v);
      run_cfg.train.sisc.patch_w = static_cast<int>(v);
    }
    std::ostringstream name;
    name << "sweep_" << param << "_" << v;
    const fs::path run_dir = out_dir / name.str();
    run_cfg.paths.out = run_dir.string();
    const int rc = cmd_adapt(run_cfg, hidden_eval);
    if (rc != kExitOk) return rc;

    // last round carries the sweep's score
    const json metrics = mlsl::read_json(
        run_dir / "metrics" / ("round_" + std::to_string(run_cfg.train.rounds - 1) + ".json"));
    SweepRow row;
    row.value = v;
    row.miou = metrics.at("miou").get<double>();
    if (metrics.contains("subset_miou")) {
      row.subset_miou = metrics.at("subset_miou").get<double>();
    }
    rows.push_back(row);
  }

  std::ostringstream table;
  table << param << "      miou\n";
  json jrows = json::array();
  for (const SweepRow& row : rows) {
    table << row.value << "    " << row.miou << "\n";
    json jr = {{"value", row.value}, {"miou", row.miou}};
    if (row.subset_miou) jr["subset_miou"] = *row.subset_miou;
    jrows.push_back(jr);
  }
  mlsl::atomic_write_text(out_dir / "sweep_table.txt", table.str());
  mlsl::write_json(out_dir / "sweep.json", json{{"param", param}, {"rows", jrows}});
  std::cout << table.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-training domain adaptation experiments"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; flags override its values")
      ->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "generate the synthetic benchmark datasets");
  std::string synth_out = "bench";
  int n_source = 200, n_target = 200, n_val = 50;
  std::uint64_t seed_flag = 0;
  bool seed_given = false;
  int threads_flag = 0;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--n-source", n_source, "number of source images");
  synth->add_option("--n-target", n_target, "number of target-train images");
  synth->add_option("--n-val", n_val, "number of target-val images");
  auto* synth_seed = synth->add_option("--seed", seed_flag, "master seed");
  auto* synth_threads = synth->add_option("--threads", threads_flag, "worker cap");

  // train-source
  auto* train = app.add_subcommand("train-source", "supervised pretraining on source");
  std::string train_data, train_out;
  int epochs_flag = 0;
  auto* train_data_opt = train->add_option("--data", train_data, "source manifest");
  auto* train_out_opt = train->add_option("--out", train_out, "output directory");
  auto* train_epochs = train->add_option("--epochs", epochs_flag, "source epochs");
  auto* train_seed = train->add_option("--seed", seed_flag, "master seed");
  auto* train_threads = train->add_option("--threads", threads_flag, "worker cap");
  double lr_flag = 0.0;
  auto* train_lr = train->add_option("--lr", lr_flag, "learning rate");

  // adapt
  auto* adapt = app.add_subcommand("adapt", "alternating self-training rounds");
  std::string src_data, tgt_data, val_data, ckpt, adapt_out, hidden_eval;
  std::string mode_text, schedule_text;
  int rounds_flag = 0, k_flag = 0, patch_flag = 0, steps_flag = -2;
  double lambda_flag = 0.0, eta_flag = 0.0;
  auto* adapt_src = adapt->add_option("--source-data", src_data, "labeled source manifest");
  auto* adapt_tgt =
      adapt->add_option("--target-data", tgt_data, "unlabeled target-train manifest");
  auto* adapt_val = adapt->add_option("--val-data", val_data, "labeled target-val manifest");
  auto* adapt_ckpt = adapt->add_option("--ckpt", ckpt, "source-trained checkpoint");
  auto* adapt_out_opt = adapt->add_option("--out", adapt_out, "run directory");
  auto* adapt_rounds = adapt->add_option("--rounds", rounds_flag, "self-training rounds");
  auto* adapt_lambda = adapt->add_option("--lambda", lambda_flag, "classification loss weight");
  auto* adapt_eta = adapt->add_option("--eta", eta_flag, "weak-label size threshold");
  auto* adapt_k = adapt->add_option("--k", k_flag, "patches per image");
  auto* adapt_patch = adapt->add_option("--patch", patch_flag, "square patch size");
  auto* adapt_steps = adapt->add_option("--steps", steps_flag, "SGD steps per round");
  auto* adapt_sched =
      adapt->add_option("--portion-schedule", schedule_text, "selection start:increment:cap");
  auto* adapt_mode =
      adapt->add_option("--mode", mode_text, "si | sisc | sisc+pwl | relfreq")
          ->check(CLI::IsMember({"si", "sisc", "sisc+pwl", "relfreq"}));
  auto* adapt_seed = adapt->add_option("--seed", seed_flag, "master seed");
  auto* adapt_threads = adapt->add_option("--threads", threads_flag, "worker cap");
  adapt->add_option("--hidden-eval", hidden_eval,
                    "dataset dir with eval_labels/ for pseudo-label quality metrics");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score predicted label maps");
  std::string pred_dir, gt_manifest, subset_text, eval_out;
  eval_cmd->add_option("--pred-dir", pred_dir, "directory of predicted label PNGs")->required();
  eval_cmd->add_option("--gt-manifest", gt_manifest, "labeled manifest")->required();
  eval_cmd->add_option("--subset", subset_text, "comma-separated class subset for mIoU*");
  eval_cmd->add_option("--out", eval_out, "also write the report JSON here");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "run adapt across a parameter grid");
  std::string sweep_param, sweep_values, sweep_out = "sweep";
  sweep->add_option("--param", sweep_param, "lambda | eta | k | patch")->required();
  sweep->add_option("--values", sweep_values, "comma-separated values")->required();
  auto* sweep_src = sweep->add_option("--source-data", src_data, "labeled source manifest");
  auto* sweep_tgt =
      sweep->add_option("--target-data", tgt_data, "unlabeled target-train manifest");
  auto* sweep_val = sweep->add_option("--val-data", val_data, "labeled target-val manifest");
  auto* sweep_ckpt = sweep->add_option("--ckpt", ckpt, "source-trained checkpoint");
  sweep->add_option("--out", sweep_out, "sweep output directory");
  auto* sweep_rounds = sweep->add_option("--rounds", rounds_flag, "self-training rounds");
  auto* sweep_mode = sweep->add_option("--mode", mode_text, "adapt mode")
                         ->check(CLI::IsMember({"si", "sisc", "sisc+pwl", "relfreq"}));
  auto* sweep_seed = sweep->add_option("--seed", seed_flag, "master seed");
  auto* sweep_steps = sweep->add_option("--steps", steps_flag, "SGD steps per round");
  sweep->add_option("--hidden-eval", hidden_eval, "dataset dir with eval_labels/");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    RunConfig cfg = load_run_config(config_path);
    seed_given = synth_seed->count() > 0 || train_seed->count() > 0 ||
                 adapt_seed->count() > 0 || sweep_seed->count() > 0;
    if (seed_given) cfg.seed = seed_flag;

    if (synth->parsed()) {
      if (synth_threads->count() > 0) cfg.threads = threads_flag;
      return cmd_synth(cfg, synth_out, n_source, n_target, n_val);
    }
    if (train->parsed()) {
      if (train_epochs->count() > 0) cfg.train.source_epochs = epochs_flag;
      if (train_lr->count() > 0) cfg.train.lr = lr_flag;
      if (train_data_opt->count() > 0) cfg.paths.source_manifest = train_data;
      if (train_out_opt->count() > 0) cfg.paths.out = train_out;
      if (train_threads->count() > 0) cfg.threads = threads_flag;
      return cmd_train_source(cfg);
    }
    if (adapt->parsed() || sweep->parsed()) {
      if (adapt_rounds->count() + sweep_rounds->count() > 0) cfg.train.rounds = rounds_flag;
      if (adapt_lambda->count() > 0) cfg.train.loss.lambda_fcl = lambda_flag;
      if (adapt_eta->count() > 0) cfg.train.pwl.eta = eta_flag;
      if (adapt_k->count() > 0) cfg.train.sisc.patch_count = k_flag;
      if (adapt_patch->count() > 0) {
        cfg.train.sisc.patch_h = patch_flag;
        cfg.train.sisc.patch_w = patch_flag;
      }
      if (adapt_steps->count() + sweep_steps->count() > 0) {
        cfg.train.steps_per_round = steps_flag;
      }
      if (adapt_sched->count() > 0) parse_portion_schedule(schedule_text, cfg.train.selection);
      if (adapt_mode->count() + sweep_mode->count() > 0) {
        cfg.train.mode = mlsl::adapt_mode_from_name(mode_text);
      }
      if (adapt_threads->count() > 0) cfg.threads = threads_flag;
      if (adapt_src->count() + sweep_src->count() > 0) cfg.paths.source_manifest = src_data;
      if (adapt_tgt->count() + sweep_tgt->count() > 0) cfg.paths.target_manifest = tgt_data;
      if (adapt_val->count() + sweep_val->count() > 0) cfg.paths.val_manifest = val_data;
      if (adapt_ckpt->count() + sweep_ckpt->count() > 0) cfg.paths.checkpoint = ckpt;
      if (adapt->parsed()) {
        if (adapt_out_opt->count() > 0) cfg.paths.out = adapt_out;
        return cmd_adapt(cfg, hidden_eval);
      }
      return cmd_sweep(cfg, sweep_param, sweep_values, sweep_out, hidden_eval);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(pred_dir, gt_manifest, subset_text, eval_out);
    }
    return kExitUsage;
  } catch (const mlsl::DivergedError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const mlsl::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
