#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "mlsl/databench.hpp"
#include "mlsl/eval.hpp"
#include "mlsl/losses.hpp"
#include "mlsl/model.hpp"
#include "mlsl/pwl.hpp"
#include "mlsl/sisc.hpp"

namespace mlsl {

enum class AdaptMode {
  SingleInference,  // whole-image pseudo-labels (the SI baseline)
  Sisc,             // patch-aggregated pseudo-labels
  SiscPwl,          // patch aggregation plus weak-label classification loss
  RelFreq,          // hard-vote aggregation ablation
};

std::string adapt_mode_name(AdaptMode mode);
AdaptMode adapt_mode_from_name(const std::string& name);

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 2;
  int rounds = 3;
  int steps_per_round = -1;  // -1 = one pass over the target set; 0 = no steps
  int source_epochs = 8;
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = MLSL_THREADS env or hardware concurrency
  AdaptMode mode = AdaptMode::Sisc;

  SegConfig model;
  HeadConfig head;
  SiscConfig sisc;
  SelectionConfig selection;
  PwlConfig pwl;
  LossConfig loss;

  void validate() const;

  /// The classification term is live only in the weak-label mode.
  double effective_lambda() const {
    return mode == AdaptMode::SiscPwl ? loss.lambda_fcl : 0.0;
  }
};

/// In-memory dataset: manifest plus decoded images and, where present,
/// labels.
struct Dataset {
  Manifest manifest;
  std::vector<Image> images;
  std::vector<std::optional<LabelMap>> labels;

  std::size_t size() const { return images.size(); }
  static Dataset load(const Manifest& manifest);
  static Dataset load(const std::filesystem::path& manifest_path);
};

/// Per-epoch mean training loss, oldest first.
struct SourceTrainResult {
  std::vector<double> epoch_loss;
};

/// Supervised pretraining on source: minimizes the composite of pixel
/// cross-entropy and weak-label BCE (image-level labels from ground truth).
/// On divergence the last finite checkpoint is saved to `checkpoint_path`
/// before DivergedError propagates.
SourceTrainResult train_source(SegModel& model, ClsHead& head, const Dataset& source,
                               const TrainConfig& cfg,
                               const std::filesystem::path& checkpoint_path);

/// Step 1 of a round: pseudo-labels plus weak labels for every target image,
/// model parameters frozen. The store directory is created atomically
/// (write-temp-then-rename); partial stores never appear at `store_dir`.
void generate_round(const SegModel& model, const Dataset& target,
                    const ClassSizeStats& stats, const TrainConfig& cfg, int round,
                    const std::filesystem::path& store_dir);

/// Pseudo-label store contents indexed like the target dataset.
struct PseudoStore {
  std::vector<PseudoLabelMap> labels;
  std::vector<WeakLabelVector> weak;
  static PseudoStore load(const std::filesystem::path& store_dir, const Dataset& target,
                          int classes);
};

/// Append-only JSONL loss log, one record per optimization step.
class LossLog {
 public:
  explicit LossLog(const std::filesystem::path& path);
  void append(int round, int step, const LossValue& loss);

 private:
  std::filesystem::path path_;
};

/// Step 2 of a round: SGD on mixed source+target batches against the frozen
/// pseudo store.
void adapt_round(SegModel& model, ClsHead& head, const Dataset& source,
                 const Dataset& target, const PseudoStore& store, const TrainConfig& cfg,
                 int round, LossLog& log);

/// Forward-only evaluation of a labeled dataset.
MetricReport evaluate_model(const SegModel& model, const Dataset& labeled,
                            const std::optional<std::vector<int>>& subset, int threads);

struct RoundState {
  int round = -1;
  std::filesystem::path checkpoint;
  std::filesystem::path pseudo_dir;
  std::filesystem::path metrics;
  RoundReport report;
};

/// The full alternating loop: R times (generate, adapt), with an evaluation
/// snapshot on the held-out labeled target validation split before the first
/// round and after every round. Validation labels feed metrics only.
///
/// Layout under run_dir: checkpoints/round_<r>.bin, pseudo/round_<r>/,
/// metrics/{source,round_<r>}.json + comparison.txt + miou.svg,
/// loss_log.jsonl, stats.json.
std::vector<RoundState> run_mlsl(const TrainConfig& cfg, SegModel model, ClsHead head,
                                 const Dataset& source, const Dataset& target_train,
                                 const Dataset& target_val,
                                 const std::optional<std::filesystem::path>& hidden_eval_dir,
                                 const std::filesystem::path& run_dir);

}  // namespace mlsl
