#include "mlsl/sisc.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "mlsl/rng.hpp"

namespace mlsl {

SiscConfig fit_patches_to(const SiscConfig& cfg, int h, int w) {
  SiscConfig out = cfg;
  if (out.patch_h > h) out.patch_h = h;
  if (out.patch_w > w) out.patch_w = w;
  return out;
}

std::vector<Rect> sample_patches(int h, int w, const SiscConfig& cfg) {
  if (cfg.patch_h < 1 || cfg.patch_w < 1 || cfg.patch_h > h || cfg.patch_w > w) {
    throw GeometryError("patch size must be within image bounds");
  }
  if (cfg.patch_count < 0) throw ConfigError("patch count must be >= 0");

  std::vector<Rect> rects;
  if (cfg.coverage == CoverageMode::GridPlusRandom) {
    const int rows = (h + cfg.patch_h - 1) / cfg.patch_h;
    const int cols = (w + cfg.patch_w - 1) / cfg.patch_w;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const int top = std::min(r * cfg.patch_h, h - cfg.patch_h);
        const int left = std::min(c * cfg.patch_w, w - cfg.patch_w);
        rects.push_back(Rect{top, left, cfg.patch_h, cfg.patch_w});
      }
    }
  }
  Rng rng(derive_seed(cfg.seed, "patch-sampling"));
  for (int k = 0; k < cfg.patch_count; ++k) {
    const int top = rng.next_int(0, h - cfg.patch_h);
    const int left = rng.next_int(0, w - cfg.patch_w);
    rects.push_back(Rect{top, left, cfg.patch_h, cfg.patch_w});
  }
  return rects;
}

AccumVolume aggregate(const SegModel& model, const Image& img,
                      std::span<const Rect> patches, const SiscConfig& cfg) {
  AccumVolume acc(img.height(), img.width(), model.cfg.classes);
  for (const Rect& r : patches) {
    const Image patch = crop(img, r);
    const SegTrace trace = forward_seg(model, patch);
    if (cfg.aggregation == Aggregation::ProbabilitySum) {
      acc.add_probabilities(r, trace.probs.grid());
    } else {
      acc.add_votes(r, argmax_labels(trace.probs));
    }
  }
  return acc;
}

NormalizedMap normalize(const AccumVolume& acc) {
  NormalizedMap out;
  out.probs = ProbVolume(acc.height(), acc.width(), acc.channels(), /*normalized=*/false);
  out.covered.assign(std::size_t(acc.height()) * acc.width(), 0);
  bool all_covered = true;
  for (int y = 0; y < acc.height(); ++y) {
    for (int x = 0; x < acc.width(); ++x) {
      const std::uint32_t n = acc.count(y, x);
      if (n == 0) {
        all_covered = false;
        continue;
      }
      out.covered[std::size_t(y) * acc.width() + x] = 1;
      const double inv = 1.0 / static_cast<double>(n);
      for (int c = 0; c < acc.channels(); ++c) {
        out.probs.at(y, x, c) = acc.sums().at(y, x, c) * inv;
      }
    }
  }
  // Sums of per-pixel softmaxes divided by counts stay normalized; vote
  // aggregation produces relative frequencies, which also sum to 1.
  out.probs.set_normalized(all_covered);
  return out;
}

PseudoLabelMap select_class_balanced(const ProbVolume& probs,
                                     std::span<const std::uint8_t> covered, int classes,
                                     double portion) {
  if (portion < 0.0 || portion > 1.0) throw ConfigError("selection portion must be in [0,1]");
  const int h = probs.height(), w = probs.width();
  if (covered.size() != std::size_t(h) * w) {
    throw GeometryError("coverage mask size does not match volume");
  }

  PseudoLabelMap out(h, w);
  if (portion == 0.0) return out;

  const LabelMap arg = argmax_labels(probs);
  // confidence of each covered pixel, bucketed by its argmax class
  std::vector<std::vector<double>> conf(static_cast<std::size_t>(classes));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!covered[std::size_t(y) * w + x]) continue;
      const std::uint16_t c = *arg.at(y, x);
      conf[c].push_back(probs.at(y, x, c));
    }
  }

  // nearest-rank cut on descending confidence: keep ceil(portion * n)
  std::vector<double> threshold(static_cast<std::size_t>(classes),
                                std::numeric_limits<double>::infinity());
  for (int c = 0; c < classes; ++c) {
    auto& v = conf[static_cast<std::size_t>(c)];
    if (v.empty()) continue;
    const std::size_t keep =
        static_cast<std::size_t>(std::ceil(portion * static_cast<double>(v.size())));
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(keep - 1), v.end(),
                     std::greater<double>());
    threshold[static_cast<std::size_t>(c)] = v[keep - 1];
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!covered[std::size_t(y) * w + x]) continue;
      const std::uint16_t c = *arg.at(y, x);
      if (probs.at(y, x, c) >= threshold[c]) out.at(y, x) = c;
    }
  }
  return out;
}

PseudoLabelMap single_inference_labels(const SegModel& model, const Image& img,
                                       int classes, double portion) {
  const SegTrace trace = forward_seg(model, img);
  const std::vector<std::uint8_t> covered(std::size_t(img.height()) * img.width(), 1);
  return select_class_balanced(trace.probs, covered, classes, portion);
}

PseudoLabelMap sisc_labels(const SegModel& model, const Image& img,
                           const SiscConfig& cfg, int classes, double portion) {
  const SiscConfig fitted = fit_patches_to(cfg, img.height(), img.width());
  const std::vector<Rect> patches = sample_patches(img.height(), img.width(), fitted);
  const AccumVolume acc = aggregate(model, img, patches, fitted);
  const NormalizedMap norm = normalize(acc);
  return select_class_balanced(norm.probs, norm.covered, classes, portion);
}

double SelectionConfig::portion_at(int round) const {
  if (round < 0) throw ConfigError("round index must be >= 0");
  return std::min(start + increment * static_cast<double>(round), cap);
}

}  // namespace mlsl
