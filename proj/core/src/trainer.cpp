#include "mlsl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mlsl/io.hpp"
#include "mlsl/parallel.hpp"
#include "mlsl/rng.hpp"

namespace mlsl {

namespace fs = std::filesystem;

std::string adapt_mode_name(AdaptMode mode) {
  switch (mode) {
    case AdaptMode::SingleInference: return "si";
    case AdaptMode::Sisc: return "sisc";
    case AdaptMode::SiscPwl: return "sisc+pwl";
    case AdaptMode::RelFreq: return "relfreq";
  }
  throw ConfigError("unknown adapt mode");
}

AdaptMode adapt_mode_from_name(const std::string& name) {
  if (name == "si") return AdaptMode::SingleInference;
  if (name == "sisc") return AdaptMode::Sisc;
  if (name == "sisc+pwl") return AdaptMode::SiscPwl;
  if (name == "relfreq") return AdaptMode::RelFreq;
  throw ConfigError("unknown adapt mode: " + name);
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("lr must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (steps_per_round < -1) throw ConfigError("steps_per_round must be >= 0 or -1 for auto");
  if (source_epochs < 0) throw ConfigError("source_epochs must be >= 0");
  if (sisc.patch_count < 0) throw ConfigError("patch count must be >= 0");
  if (selection.start < 0.0 || selection.cap > 1.0 || selection.start > selection.cap) {
    throw ConfigError("selection schedule must satisfy 0 <= start <= cap <= 1");
  }
  if (selection.increment < 0.0) throw ConfigError("selection increment must be >= 0");
  if (!(pwl.eta >= 0.0) || !std::isfinite(pwl.eta)) throw ConfigError("eta must be >= 0");
  if (!(loss.lambda_fcl >= 0.0) || !std::isfinite(loss.lambda_fcl)) {
    throw ConfigError("lambda must be >= 0");
  }
}

Dataset Dataset::load(const Manifest& manifest) {
  Dataset ds;
  ds.manifest = manifest;
  ds.images.resize(manifest.entries.size());
  ds.labels.resize(manifest.entries.size());
  parallel_for(static_cast<int>(manifest.entries.size()), 0, [&](int i) {
    const ManifestEntry& e = manifest.entries[static_cast<std::size_t>(i)];
    ds.images[static_cast<std::size_t>(i)] = load_image(manifest.base / e.image);
    if (e.label) {
      ds.labels[static_cast<std::size_t>(i)] =
          load_labelmap(manifest.base / *e.label, manifest.classes);
    }
  });
  return ds;
}

Dataset Dataset::load(const fs::path& manifest_path) {
  return load(load_manifest(manifest_path));
}

namespace {

/// One image's contribution to a training step.
struct StepItem {
  const Image* image = nullptr;
  const LabelMap* labels = nullptr;       // gt or pseudo; may be null (no seg term)
  const WeakLabelVector* weak = nullptr;  // null when the cls loss is inactive
  double weight = 1.0;
  bool is_source = true;
};

struct StepOutcome {
  double seg_src = 0.0, seg_tgt = 0.0, cls_src = 0.0, cls_tgt = 0.0;
};

/// Forward/backward for a batch. Per-item grads are computed independently
/// (parallel across items) and merged in item order, so thread count cannot
/// change the result.
StepOutcome batch_step(const SegModel& model, ClsHead& head, double lambda,
                       const std::vector<StepItem>& items, const TrainConfig& cfg,
                       SegGrads& seg_grads, HeadGrads& head_grads) {
  const std::size_t n = items.size();
  std::vector<SegGrads> item_seg(n);
  std::vector<HeadGrads> item_head(n);
  std::vector<StepOutcome> outcomes(n);

  parallel_for(static_cast<int>(n), cfg.threads, [&](int idx) {
    const StepItem& item = items[static_cast<std::size_t>(idx)];
    SegGrads sg = SegGrads::zeros_like(model);
    HeadGrads hg = HeadGrads::zeros_like(head);
    StepOutcome& oc = outcomes[static_cast<std::size_t>(idx)];

    const SegTrace trace = forward_seg(model, *item.image);

    Grid3 dprobs(trace.probs.height(), trace.probs.width(), trace.probs.channels());
    double seg_value = 0.0;
    if (item.labels) {
      SegLossResult seg = seg_ce(trace.probs, *item.labels, cfg.loss.reduction);
      seg_value = seg.value;
      dprobs = std::move(seg.dprobs);
      if (item.weight != 1.0) {
        for (double& g : dprobs.data()) g *= item.weight;
      }
    }

    double cls_value = 0.0;
    std::vector<double> dscores;
    std::optional<ClsTrace> cls_trace;
    if (item.weak && lambda > 0.0) {
      cls_trace = forward_cls(head, trace.latent());
      BceResult b = bce(cls_trace->scores, *item.weak);
      cls_value = b.value;
      dscores = std::move(b.dscores);
      for (double& g : dscores) g *= lambda * item.weight;
    }

    backward(model, trace, &dprobs, cls_trace ? &head : nullptr,
             cls_trace ? &*cls_trace : nullptr, dscores, sg, cls_trace ? &hg : nullptr);

    if (item.is_source) {
      oc.seg_src = item.weight * seg_value;
      oc.cls_src = item.weight * cls_value;
    } else {
      oc.seg_tgt = item.weight * seg_value;
      oc.cls_tgt = item.weight * cls_value;
    }
    item_seg[static_cast<std::size_t>(idx)] = std::move(sg);
    item_head[static_cast<std::size_t>(idx)] = std::move(hg);
  });

  StepOutcome total;
  for (std::size_t i = 0; i < n; ++i) {
    seg_grads.add(item_seg[i]);
    head_grads.add(item_head[i]);
    total.seg_src += outcomes[i].seg_src;
    total.seg_tgt += outcomes[i].seg_tgt;
    total.cls_src += outcomes[i].cls_src;
    total.cls_tgt += outcomes[i].cls_tgt;
  }
  return total;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::swap(idx[i - 1], idx[rng.next_below(i)]);
  }
  return idx;
}

}  // namespace

SourceTrainResult train_source(SegModel& model, ClsHead& head, const Dataset& source,
                               const TrainConfig& cfg, const fs::path& checkpoint_path) {
  cfg.validate();
  if (source.size() == 0) throw ConfigError("source dataset is empty");
  for (const auto& l : source.labels) {
    if (!l) throw ConfigError("source training requires ground-truth labels");
  }

  // image-level labels come straight from the ground truth
  std::vector<WeakLabelVector> weak(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    weak[i] = source_image_labels(*source.labels[i], cfg.model.classes);
  }

  SourceTrainResult result;
  const double lambda = cfg.loss.lambda_fcl;
  Rng order(derive_seed(cfg.seed, "source-batch-order"));

  SegModel last_finite_model = model;
  ClsHead last_finite_head = head;
  for (int epoch = 0; epoch < cfg.source_epochs; ++epoch) {
    const std::vector<std::size_t> perm = shuffled_indices(source.size(), order);
    double epoch_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t ofs = 0; ofs < perm.size(); ofs += cfg.batch_size) {
      const std::size_t count = std::min<std::size_t>(cfg.batch_size, perm.size() - ofs);
      std::vector<StepItem> items;
      for (std::size_t b = 0; b < count; ++b) {
        const std::size_t i = perm[ofs + b];
        items.push_back(StepItem{&source.images[i], &*source.labels[i], &weak[i],
                                 1.0 / static_cast<double>(count), true});
      }
      SegGrads sg = SegGrads::zeros_like(model);
      HeadGrads hg = HeadGrads::zeros_like(head);
      const StepOutcome oc = batch_step(model, head, lambda, items, cfg, sg, hg);
      const double loss = oc.seg_src + lambda * oc.cls_src;
      if (!std::isfinite(loss)) {
        save_checkpoint(checkpoint_path, last_finite_model, last_finite_head, cfg.seed);
        throw DivergedError("source training loss is non-finite");
      }
      last_finite_model = model;
      last_finite_head = head;
      try {
        sgd_step(model, sg, cfg.lr);
        if (lambda > 0.0) sgd_step(head, hg, cfg.lr);
      } catch (const DivergedError&) {
        save_checkpoint(checkpoint_path, last_finite_model, last_finite_head, cfg.seed);
        throw;
      }
      epoch_sum += loss;
      ++batches;
    }
    result.epoch_loss.push_back(batches > 0 ? epoch_sum / static_cast<double>(batches) : 0.0);
  }
  save_checkpoint(checkpoint_path, model, head, cfg.seed);
  return result;
}

namespace {

nlohmann::json sisc_config_json(const SiscConfig& sc, const TrainConfig& cfg) {
  return nlohmann::json{
      {"k", sc.patch_count},
      {"patch_h", sc.patch_h},
      {"patch_w", sc.patch_w},
      {"coverage", sc.coverage == CoverageMode::GridPlusRandom ? "grid-plus-random"
                                                               : "random-only"},
      {"aggregation", sc.aggregation == Aggregation::ProbabilitySum ? "probability-sum"
                                                                    : "relative-frequency"},
      {"mode", adapt_mode_name(cfg.mode)},
      {"eta", cfg.pwl.eta},
  };
}

}  // namespace

void generate_round(const SegModel& model, const Dataset& target,
                    const ClassSizeStats& stats, const TrainConfig& cfg, int round,
                    const fs::path& store_dir) {
  cfg.validate();
  const double portion = cfg.selection.portion_at(round);
  const int classes = cfg.model.classes;

  const fs::path tmp_dir = store_dir.string() + ".tmp";
  std::error_code ec;
  fs::remove_all(tmp_dir, ec);
  fs::create_directories(tmp_dir);

  try {
    parallel_for(static_cast<int>(target.size()), cfg.threads, [&](int i) {
      const Image& img = target.images[static_cast<std::size_t>(i)];

      SiscConfig sc = fit_patches_to(cfg.sisc, img.height(), img.width());
      sc.seed = derive_seed(cfg.seed, "sisc-patches",
                            static_cast<std::uint64_t>(round) * 0x10000000ull +
                                static_cast<std::uint64_t>(i));
      if (cfg.mode == AdaptMode::RelFreq) sc.aggregation = Aggregation::RelativeFrequency;

      PseudoLabelMap pseudo =
          cfg.mode == AdaptMode::SingleInference
              ? single_inference_labels(model, img, classes, portion)
              : sisc_labels(model, img, sc, classes, portion);

      const std::vector<double> h_t = class_fraction(pseudo, classes);
      const WeakLabelVector weak = generate_pwl(h_t, stats, cfg.pwl);

      std::vector<long> per_class(static_cast<std::size_t>(classes), 0);
      for (const Label& cell : pseudo.cells()) {
        if (cell) per_class[*cell] += 1;
      }

      const std::string stem =
          fs::path(target.manifest.entries[static_cast<std::size_t>(i)].image).stem().string();
      save_labelmap(pseudo, tmp_dir / (stem + ".png"));
      const nlohmann::json sidecar = {
          {"image", target.manifest.entries[static_cast<std::size_t>(i)].image},
          {"round", round},
          {"portion", portion},
          {"seed", sc.seed},
          {"per_class_pixel_counts", per_class},
          {"selected_fraction",
           static_cast<double>(pseudo.labeled_count()) /
               (static_cast<double>(pseudo.height()) * pseudo.width())},
          {"pwl", weak},
          {"config", sisc_config_json(sc, cfg)},
      };
      write_json(tmp_dir / (stem + ".json"), sidecar);
    });
  } catch (...) {
    fs::remove_all(tmp_dir, ec);
    throw;
  }

  fs::remove_all(store_dir, ec);
  fs::rename(tmp_dir, store_dir);
}

PseudoStore PseudoStore::load(const fs::path& store_dir, const Dataset& target,
                              int classes) {
  PseudoStore store;
  store.labels.resize(target.size());
  store.weak.resize(target.size());
  parallel_for(static_cast<int>(target.size()), 0, [&](int i) {
    const std::string stem =
        fs::path(target.manifest.entries[static_cast<std::size_t>(i)].image).stem().string();
    store.labels[static_cast<std::size_t>(i)] =
        load_labelmap(store_dir / (stem + ".png"), classes);
    const nlohmann::json sidecar = read_json(store_dir / (stem + ".json"));
    store.weak[static_cast<std::size_t>(i)] = sidecar.at("pwl").get<WeakLabelVector>();
  });
  return store;
}

LossLog::LossLog(const fs::path& path) : path_(path) {
  std::ofstream out(path_, std::ios::trunc);
  if (!out) throw IoError("cannot open loss log: " + path_.string());
}

void LossLog::append(int round, int step, const LossValue& loss) {
  const nlohmann::json j = {
      {"round", round},         {"step", step},           {"seg_src", loss.seg_src},
      {"seg_tgt", loss.seg_tgt}, {"cls_src", loss.cls_src}, {"cls_tgt", loss.cls_tgt},
      {"total", loss.total},
  };
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to loss log: " + path_.string());
  out << j.dump() << "\n";
}

void adapt_round(SegModel& model, ClsHead& head, const Dataset& source,
                 const Dataset& target, const PseudoStore& store, const TrainConfig& cfg,
                 int round, LossLog& log) {
  cfg.validate();
  if (source.size() == 0 || target.size() == 0) {
    throw ConfigError("adaptation requires non-empty source and target sets");
  }

  std::vector<WeakLabelVector> src_weak(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    src_weak[i] = source_image_labels(*source.labels[i], cfg.model.classes);
  }

  const double lambda = cfg.effective_lambda();
  const int steps = cfg.steps_per_round >= 0 ? cfg.steps_per_round
                                             : static_cast<int>(target.size());

  Rng src_order(derive_seed(cfg.seed, "adapt-source-order", static_cast<std::uint64_t>(round)));
  Rng tgt_order(derive_seed(cfg.seed, "adapt-target-order", static_cast<std::uint64_t>(round)));
  std::vector<std::size_t> tgt_perm = shuffled_indices(target.size(), tgt_order);

  SegModel last_finite_model = model;
  ClsHead last_finite_head = head;
  for (int step = 0; step < steps; ++step) {
    const std::size_t si = src_order.next_below(source.size());
    const std::size_t ti = tgt_perm[static_cast<std::size_t>(step) % tgt_perm.size()];

    // one source + one target image per step (batch of 2)
    std::vector<StepItem> items;
    items.push_back(StepItem{&source.images[si], &*source.labels[si], &src_weak[si], 1.0, true});
    items.push_back(
        StepItem{&target.images[ti], &store.labels[ti], &store.weak[ti], 1.0, false});

    SegGrads sg = SegGrads::zeros_like(model);
    HeadGrads hg = HeadGrads::zeros_like(head);
    const StepOutcome oc = batch_step(model, head, lambda, items, cfg, sg, hg);
    const LossValue loss = stwl(oc.seg_src, oc.cls_src, oc.seg_tgt, oc.cls_tgt,
                                LossConfig{lambda, cfg.loss.reduction});
    if (!std::isfinite(loss.total)) {
      // leave the caller holding the last finite parameters
      model = std::move(last_finite_model);
      head = std::move(last_finite_head);
      throw DivergedError("adaptation loss is non-finite");
    }
    log.append(round, step, loss);

    last_finite_model = model;
    last_finite_head = head;
    try {
      sgd_step(model, sg, cfg.lr);
      if (lambda > 0.0) sgd_step(head, hg, cfg.lr);
    } catch (const DivergedError&) {
      model = std::move(last_finite_model);
      head = std::move(last_finite_head);
      throw;
    }
  }
}

MetricReport evaluate_model(const SegModel& model, const Dataset& labeled,
                            const std::optional<std::vector<int>>& subset, int threads) {
  const int classes = model.cfg.classes;
  std::vector<ConfusionMatrix> partial(labeled.size(), ConfusionMatrix(classes));
  parallel_for(static_cast<int>(labeled.size()), threads, [&](int i) {
    const SegTrace trace = forward_seg(model, labeled.images[static_cast<std::size_t>(i)]);
    partial[static_cast<std::size_t>(i)].add(argmax_labels(trace.probs),
                                             *labeled.labels[static_cast<std::size_t>(i)]);
  });
  ConfusionMatrix cm(classes);
  for (const ConfusionMatrix& p : partial) cm.merge(p);
  return miou(cm, subset);
}

std::vector<RoundState> run_mlsl(const TrainConfig& cfg, SegModel model, ClsHead head,
                                 const Dataset& source, const Dataset& target_train,
                                 const Dataset& target_val,
                                 const std::optional<fs::path>& hidden_eval_dir,
                                 const fs::path& run_dir) {
  cfg.validate();
  fs::create_directories(run_dir / "checkpoints");
  fs::create_directories(run_dir / "pseudo");
  fs::create_directories(run_dir / "metrics");

  std::vector<LabelMap> source_labels;
  source_labels.reserve(source.size());
  for (const auto& l : source.labels) source_labels.push_back(*l);
  const ClassSizeStats stats = compute_source_stats(source_labels, cfg.model.classes);
  save_stats(run_dir / "stats.json", stats,
             file_digest(source.manifest.base /
                         (domain_name(source.manifest.domain) + ".manifest.json")));

  // hidden eval labels, metrics only
  std::vector<LabelMap> hidden;
  if (hidden_eval_dir) {
    hidden.resize(target_train.size());
    parallel_for(static_cast<int>(target_train.size()), cfg.threads, [&](int i) {
      hidden[static_cast<std::size_t>(i)] =
          load_labelmap(hidden_label_path(*hidden_eval_dir, target_train.manifest,
                                          static_cast<std::size_t>(i)),
                        cfg.model.classes);
    });
  }

  LossLog log(run_dir / "loss_log.jsonl");
  std::vector<RoundState> states;
  std::vector<RoundReport> reports;

  RoundReport baseline;
  baseline.round = -1;
  baseline.metrics = evaluate_model(model, target_val, std::nullopt, cfg.threads);
  write_json(run_dir / "metrics" / "source.json", report_to_json(baseline));
  reports.push_back(baseline);

  for (int round = 0; round < cfg.rounds; ++round) {
    RoundState state;
    state.round = round;
    state.pseudo_dir = run_dir / "pseudo" / ("round_" + std::to_string(round));
    state.checkpoint = run_dir / "checkpoints" / ("round_" + std::to_string(round) + ".bin");
    state.metrics = run_dir / "metrics" / ("round_" + std::to_string(round) + ".json");

    try {
      generate_round(model, target_train, stats, cfg, round, state.pseudo_dir);
      const PseudoStore store = PseudoStore::load(state.pseudo_dir, target_train,
                                                  cfg.model.classes);

      std::optional<PseudoQuality> quality;
      if (hidden_eval_dir) {
        PseudoQualityCounts counts(cfg.model.classes);
        for (std::size_t i = 0; i < target_train.size(); ++i) {
          counts.add(store.labels[i], hidden[i]);
        }
        quality = counts.finalize();
      }

      adapt_round(model, head, source, target_train, store, cfg, round, log);
      save_checkpoint(state.checkpoint, model, head, cfg.seed);

      state.report.round = round;
      state.report.metrics = evaluate_model(model, target_val, std::nullopt, cfg.threads);
      state.report.pseudo = quality;
      write_json(state.metrics, report_to_json(state.report));
      reports.push_back(state.report);
      states.push_back(std::move(state));
    } catch (...) {
      // completed rounds stay on disk; keep the last finite parameters too
      save_checkpoint(run_dir / "checkpoints" / "aborted.bin", model, head, cfg.seed);
      emit_report(reports, run_dir / "metrics");
      throw;
    }
  }

  emit_report(reports, run_dir / "metrics");
  return states;
}

}  // namespace mlsl
