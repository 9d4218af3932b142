#pragma once

#include <span>
#include <vector>

#include "mlsl/grid.hpp"

namespace mlsl {

/// Image-level per-class presence indicator (weak labels), entries 0/1.
using WeakLabelVector = std::vector<std::uint8_t>;

enum class Reduction {
  Sum,              // plain sum over labeled pixels
  MeanOverLabeled,  // sum / number of labeled pixels (keeps gradient scale
                    // independent of image size and selection portion)
};

struct LossConfig {
  double lambda_fcl = 0.025;  // weight of the classification term
  Reduction reduction = Reduction::MeanOverLabeled;
};

/// Cross-entropy over labeled pixels with its gradient w.r.t. the
/// probabilities (the softmax Jacobian is composed in the model backward).
struct SegLossResult {
  double value = 0.0;
  Grid3 dprobs;             // dLoss/dP, zero at IGNORE pixels
  long labeled_pixels = 0;  // pixels contributing to the sum
  long clamp_events = 0;    // probabilities clamped at epsilon before log
};

/// -sum over non-IGNORE pixels of log P(true class). IGNORE pixels contribute
/// nothing to value or gradient.
SegLossResult seg_ce(const ProbVolume& probs, const LabelMap& gt, Reduction reduction);

/// Identical to seg_ce restricted by the pseudo-label selection map d: only
/// pixels holding a pseudo-label backpropagate.
SegLossResult masked_ce(const ProbVolume& probs, const PseudoLabelMap& pseudo,
                        Reduction reduction);

struct BceResult {
  double value = 0.0;
  std::vector<double> dscores;  // dLoss/ds
  long clamp_events = 0;
};

/// Multi-label binary cross-entropy, averaged over classes:
/// -(1/C) sum_i [c_i log s_i + (1-c_i) log(1-s_i)].
BceResult bce(std::span<const double> scores, const WeakLabelVector& target);

/// seg + lambda * cls.
double composite(double seg_value, double cls_value, const LossConfig& cfg);

/// Total loss with its per-term decomposition. The invariant
/// total == seg_src + seg_tgt + lambda * (cls_src + cls_tgt) always holds.
struct LossValue {
  double total = 0.0;
  double seg_src = 0.0;
  double seg_tgt = 0.0;
  double cls_src = 0.0;
  double cls_tgt = 0.0;
  double lambda = 0.0;
};

/// Joint self-training loss: source cross-entropy plus masked target
/// cross-entropy, no classification terms.
LossValue joint_st(double seg_src, double seg_tgt);

/// Composite self-training + weak-label loss over both domains.
LossValue stwl(double seg_src, double cls_src, double seg_tgt, double cls_tgt,
               const LossConfig& cfg);

}  // namespace mlsl
