#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mlsl/grid.hpp"
#include "mlsl/model.hpp"

namespace mlsl {

enum class CoverageMode {
  RandomOnly,      // exactly K random patches; pixels may stay uncovered
  GridPlusRandom,  // minimal deterministic tiling first, then K random patches
};

enum class Aggregation {
  ProbabilitySum,     // add per-patch softmax probabilities
  RelativeFrequency,  // add 1 to each patch pixel's argmax channel only
};

struct SiscConfig {
  int patch_count = 50;  // K
  int patch_h = 512;
  int patch_w = 512;
  std::uint64_t seed = 0;
  CoverageMode coverage = CoverageMode::GridPlusRandom;
  Aggregation aggregation = Aggregation::ProbabilitySum;
};

/// Clamps patch dims to the image and scales them down proportionally when
/// the configured size exceeds the image (paper-scale defaults on small
/// benchmark images).
SiscConfig fit_patches_to(const SiscConfig& cfg, int h, int w);

/// Patch placements for an H x W image. Deterministic under cfg.seed.
/// GridPlusRandom prepends a minimal tiling that covers every pixel (the last
/// row/column of tiles is shifted inward, overlapping its neighbor) before
/// the K random rects.
std::vector<Rect> sample_patches(int h, int w, const SiscConfig& cfg);

/// Segments every patch independently and composites the outputs into one
/// accumulator with per-pixel coverage counts.
AccumVolume aggregate(const SegModel& model, const Image& img,
                      std::span<const Rect> patches, const SiscConfig& cfg);

struct NormalizedMap {
  ProbVolume probs;                   // sums / counts where covered, zero elsewhere
  std::vector<std::uint8_t> covered;  // H*W, row-major
};

/// Count-normalizes an accumulator. Pixels with count zero are flagged
/// uncovered instead of divided.
NormalizedMap normalize(const AccumVolume& acc);

/// Class-balanced pseudo-label selection: per class, keep the most confident
/// fraction `portion` of the pixels argmax-assigned to it (nearest-rank cut,
/// ties at the threshold all kept). Everything else is IGNORE.
PseudoLabelMap select_class_balanced(const ProbVolume& probs,
                                     std::span<const std::uint8_t> covered, int classes,
                                     double portion);

/// Single whole-image inference followed by class-balanced selection; the
/// baseline the patch-aggregated labels are compared against.
PseudoLabelMap single_inference_labels(const SegModel& model, const Image& img,
                                       int classes, double portion);

/// Full patch pipeline for one image: sample, aggregate, normalize, select.
PseudoLabelMap sisc_labels(const SegModel& model, const Image& img,
                           const SiscConfig& cfg, int classes, double portion);

/// Selection portion schedule across self-training rounds.
struct SelectionConfig {
  double start = 0.2;
  double increment = 0.05;
  double cap = 0.5;

  double portion_at(int round) const;
};

}  // namespace mlsl
