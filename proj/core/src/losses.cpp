#include "mlsl/losses.hpp"

#include <cmath>

#include "mlsl/parallel.hpp"

namespace mlsl {

namespace {

constexpr double kEps = 1e-12;

}  // namespace

SegLossResult seg_ce(const ProbVolume& probs, const LabelMap& gt, Reduction reduction) {
  if (probs.height() != gt.height() || probs.width() != gt.width()) {
    throw GeometryError("probability volume and label map shapes differ");
  }
  gt.require_max_class(probs.channels());

  SegLossResult out;
  out.dprobs = Grid3(probs.height(), probs.width(), probs.channels());

  std::vector<double> terms;
  terms.reserve(std::size_t(probs.height()) * probs.width());
  for (int y = 0; y < probs.height(); ++y) {
    for (int x = 0; x < probs.width(); ++x) {
      const Label cell = gt.at(y, x);
      if (!cell) continue;
      double p = probs.at(y, x, *cell);
      if (p < kEps) {
        p = kEps;
        ++out.clamp_events;
      }
      terms.push_back(-std::log(p));
      out.dprobs.at(y, x, *cell) = -1.0 / p;
      ++out.labeled_pixels;
    }
  }
  out.value = pairwise_sum(terms);
  if (reduction == Reduction::MeanOverLabeled && out.labeled_pixels > 0) {
    const double inv = 1.0 / static_cast<double>(out.labeled_pixels);
    out.value *= inv;
    for (double& g : out.dprobs.data()) g *= inv;
  }
  return out;
}

SegLossResult masked_ce(const ProbVolume& probs, const PseudoLabelMap& pseudo,
                        Reduction reduction) {
  // The selection map d is exactly the set of non-IGNORE pseudo-label cells,
  // which seg_ce already restricts to.
  return seg_ce(probs, pseudo, reduction);
}

BceResult bce(std::span<const double> scores, const WeakLabelVector& target) {
  if (scores.size() != target.size()) {
    throw GeometryError("score vector and weak-label vector lengths differ");
  }
  const std::size_t classes = scores.size();
  BceResult out;
  out.dscores.assign(classes, 0.0);
  std::vector<double> terms(classes, 0.0);
  const double inv_c = 1.0 / static_cast<double>(classes);
  for (std::size_t i = 0; i < classes; ++i) {
    double s = scores[i];
    if (s < kEps) {
      s = kEps;
      ++out.clamp_events;
    } else if (s > 1.0 - kEps) {
      s = 1.0 - kEps;
      ++out.clamp_events;
    }
    const double c = static_cast<double>(target[i]);
    terms[i] = -(c * std::log(s) + (1.0 - c) * std::log(1.0 - s));
    out.dscores[i] = -inv_c * (c / s - (1.0 - c) / (1.0 - s));
  }
  out.value = inv_c * pairwise_sum(terms);
  return out;
}

double composite(double seg_value, double cls_value, const LossConfig& cfg) {
  return seg_value + cfg.lambda_fcl * cls_value;
}

LossValue joint_st(double seg_src, double seg_tgt) {
  LossValue v;
  v.seg_src = seg_src;
  v.seg_tgt = seg_tgt;
  v.lambda = 0.0;
  v.total = seg_src + seg_tgt;
  return v;
}

LossValue stwl(double seg_src, double cls_src, double seg_tgt, double cls_tgt,
               const LossConfig& cfg) {
  LossValue v;
  v.seg_src = seg_src;
  v.seg_tgt = seg_tgt;
  v.cls_src = cls_src;
  v.cls_tgt = cls_tgt;
  v.lambda = cfg.lambda_fcl;
  v.total = composite(seg_src, cls_src, cfg) + composite(seg_tgt, cls_tgt, cfg);
  return v;
}

}  // namespace mlsl
