#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mlsl/grid.hpp"
#include "mlsl/losses.hpp"

namespace mlsl {

/// Mean relative class sizes measured on the labeled source domain. For each
/// class, only images where the class occurs contribute; an image contributes
/// its class-pixel fraction under its own H*W, so mixed image sizes average
/// cleanly.
struct ClassSizeStats {
  int classes = 0;
  long total_images = 0;                  // N
  std::vector<double> mean_size;          // m_i in [0,1], 0 when never present
  std::vector<long> presence_counts;      // number of images containing class i
};

ClassSizeStats compute_source_stats(std::span<const LabelMap> labelmaps, int classes);

/// Per-class labeled-pixel fraction of one map; IGNORE pixels count in the
/// denominator only.
std::vector<double> class_fraction(const LabelMap& labels, int classes);

struct PwlConfig {
  double eta = 0.05;  // presence threshold as a fraction of the source mean size
};

/// Weak label c_i = 1 iff h_t(i) > eta * m_i (strict). Classes never seen in
/// source have threshold 0, so any presence triggers them.
WeakLabelVector generate_pwl(std::span<const double> target_fractions,
                             const ClassSizeStats& stats, const PwlConfig& cfg);

/// Source image-level labels: plain presence (>= 1 pixel), no filtering —
/// ground truth needs none.
WeakLabelVector source_image_labels(const LabelMap& gt, int classes);

void save_stats(const std::filesystem::path& path, const ClassSizeStats& stats,
                std::uint64_t source_manifest_hash);
struct LoadedStats {
  ClassSizeStats stats;
  std::uint64_t source_manifest_hash = 0;
};
LoadedStats load_stats(const std::filesystem::path& path);

}  // namespace mlsl
