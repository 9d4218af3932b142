#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mlsl/grid.hpp"

namespace mlsl {

/// Square-kernel 2D convolution with same (zero) padding.
struct Conv2d {
  int in_ch = 0;
  int out_ch = 0;
  int ksize = 1;
  std::vector<double> weight;  // [out][in][ky][kx]
  std::vector<double> bias;    // [out]

  std::size_t weight_index(int o, int i, int ky, int kx) const {
    return ((std::size_t(o) * in_ch + i) * ksize + ky) * ksize + kx;
  }
};

struct Fc {
  int in_dim = 0;
  int out_dim = 0;
  std::vector<double> weight;  // [out][in]
  std::vector<double> bias;    // [out]
};

struct SegConfig {
  int classes = 6;
  int features = 16;  // channels of every hidden conv layer
  int depth = 3;      // number of 3x3 conv layers before the 1x1 projection
};

/// Fully-convolutional segmenter: `depth` 3x3 conv+ReLU layers at constant
/// width, then a 1x1 projection to class logits and a per-pixel softmax.
/// Spatial size is preserved throughout, so the latent feature map entering
/// the projection has the input's H x W.
struct SegModel {
  SegConfig cfg;
  std::vector<Conv2d> convs;
  Conv2d proj;

  static SegModel init(const SegConfig& cfg, std::uint64_t seed);
  static SegModel zeros(const SegConfig& cfg);
  std::size_t param_count() const;
};

struct HeadConfig {
  int conv_depth = 32;  // channels of both head conv layers
  int fc_depth = 16;    // hidden width of the first FC layer
};

/// Multi-label image classification head on the latent map:
/// conv1x1+ReLU -> conv3x3+ReLU -> global average pool -> FC+ReLU -> FC ->
/// per-class sigmoid.
struct ClsHead {
  HeadConfig cfg;
  Conv2d conv1;  // 1x1, latent channels -> conv_depth
  Conv2d conv2;  // 3x3, conv_depth -> conv_depth
  Fc fc1;        // conv_depth -> fc_depth
  Fc fc2;        // fc_depth -> classes

  static ClsHead init(const HeadConfig& cfg, int latent_channels, int classes,
                      std::uint64_t seed);
  static ClsHead zeros(const HeadConfig& cfg, int latent_channels, int classes);
  std::size_t param_count() const;
};

std::uint64_t params_digest(const SegModel& model);
std::uint64_t params_digest(const ClsHead& head);

/// Forward cache. Backward requires the trace produced by the same parameter
/// values; the stamp detects stale caches.
struct SegTrace {
  Image input;
  std::vector<Grid3> features;  // post-ReLU output of each hidden conv
  Grid3 logits;
  ProbVolume probs;
  std::uint64_t params_stamp = 0;

  const Grid3& latent() const { return features.back(); }
};

struct ClsTrace {
  Grid3 conv1_out;  // post-ReLU
  Grid3 conv2_out;  // post-ReLU
  std::vector<double> gap;
  std::vector<double> fc1_out;  // post-ReLU
  std::vector<double> logits;
  std::vector<double> scores;  // sigmoid outputs, each in (0,1)
  std::uint64_t params_stamp = 0;
};

SegTrace forward_seg(const SegModel& model, const Image& img);
ClsTrace forward_cls(const ClsHead& head, const Grid3& latent);

struct ConvGrads {
  std::vector<double> weight;
  std::vector<double> bias;
};
struct FcGrads {
  std::vector<double> weight;
  std::vector<double> bias;
};

struct SegGrads {
  std::vector<ConvGrads> convs;
  ConvGrads proj;

  static SegGrads zeros_like(const SegModel& model);
  void add(const SegGrads& other);
  bool finite() const;
};

struct HeadGrads {
  ConvGrads conv1, conv2;
  FcGrads fc1, fc2;

  static HeadGrads zeros_like(const ClsHead& head);
  void add(const HeadGrads& other);
  bool finite() const;
};

/// Backpropagates the composite upstream gradients through head and
/// segmenter, accumulating into `seg_grads` / `head_grads`.
///
/// `dprobs` is dLoss/dP for the per-pixel softmax output (may be null when
/// only the classification loss is active); `dscores` is dLoss/ds for the
/// sigmoid scores (empty when the head loss is inactive). The softmax and
/// sigmoid Jacobians are applied here, so losses differentiate w.r.t. the
/// probabilities they see.
void backward(const SegModel& model, const SegTrace& trace, const Grid3* dprobs,
              const ClsHead* head, const ClsTrace* cls_trace,
              std::span<const double> dscores, SegGrads& seg_grads,
              HeadGrads* head_grads);

/// p <- p - lr * g. Throws DivergedError on non-finite gradients.
void sgd_step(SegModel& model, const SegGrads& grads, double lr);
void sgd_step(ClsHead& head, const HeadGrads& grads, double lr);

/// Checkpoint: JSON header (layer specs, seed, classes, features) plus a
/// little-endian f64 payload of all parameters.
void save_checkpoint(const std::filesystem::path& path, const SegModel& model,
                     const ClsHead& head, std::uint64_t seed);
struct Checkpoint {
  SegModel model;
  ClsHead head;
  std::uint64_t seed = 0;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mlsl
