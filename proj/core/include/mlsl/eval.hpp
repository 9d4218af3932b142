#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlsl/grid.hpp"

namespace mlsl {

/// C x C integer counts, rows ground truth, cols prediction. Pixels with
/// IGNORE ground truth are not scored.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);

  int classes() const { return classes_; }
  long long at(int gt, int pred) const;
  long long total() const;

  void add(const LabelMap& pred, const LabelMap& gt);
  void merge(const ConfusionMatrix& other);

 private:
  int classes_;
  std::vector<long long> counts_;
};

struct MetricReport {
  // IoU per class; classes with zero union carry no value and are excluded
  // from the mean.
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0.0;
  std::optional<double> subset_miou;
};

/// IoU_c = TP / (TP + FP + FN); the mean skips zero-union classes. `subset`
/// restricts the extra averaged score to the given classes.
MetricReport miou(const ConfusionMatrix& cm,
                  const std::optional<std::vector<int>>& subset = std::nullopt);

struct PseudoQuality {
  // absent precision means the class selected zero pixels; absent recall
  // means the class is absent from ground truth
  std::vector<std::optional<double>> precision;
  std::vector<std::optional<double>> recall;
  double coverage = 0.0;  // labeled fraction of all pixels
  std::optional<double> mean_precision;
};

/// Scores pseudo-labels against held-out ground truth. Evaluation-only; the
/// trainer never sees these labels.
PseudoQuality pseudo_quality(const PseudoLabelMap& pseudo, const LabelMap& gt, int classes);

/// Count-level accumulator so quality can be aggregated over many images
/// before deriving ratios.
struct PseudoQualityCounts {
  std::vector<long long> selected;  // pixels labeled c
  std::vector<long long> correct;   // labeled c and gt == c
  std::vector<long long> gt_count;  // gt pixels of class c
  long long pixels = 0;
  long long labeled = 0;

  explicit PseudoQualityCounts(int classes);
  void add(const PseudoLabelMap& pseudo, const LabelMap& gt);
  void merge(const PseudoQualityCounts& other);
  PseudoQuality finalize() const;
};

/// Everything recorded about one evaluation snapshot.
struct RoundReport {
  int round = -1;  // -1 = source-only baseline
  MetricReport metrics;
  std::optional<PseudoQuality> pseudo;
};

nlohmann::json report_to_json(const RoundReport& report);
RoundReport report_from_json(const nlohmann::json& j);

/// Writes metrics/round_<r>.json per round (round -1 becomes source.json),
/// a plain-text comparison table, and an SVG line chart of mIoU by round.
void emit_report(const std::vector<RoundReport>& rounds,
                 const std::filesystem::path& out_dir);

/// The text table emit_report writes, returned for display.
std::string render_table(const std::vector<RoundReport>& rounds);

}  // namespace mlsl
