#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mlsl/errors.hpp"

namespace mlsl {

/// On-disk ignore sentinel for 8-bit label files. In memory a cell is an
/// explicit empty optional, never a magic number.
inline constexpr std::uint8_t kIgnoreByte = 255;

/// A cell label: either a class index or unlabeled (IGNORE).
using Label = std::optional<std::uint16_t>;

/// Axis-aligned patch inside a parent grid. Valid only when fully inside.
struct Rect {
  int top = 0;
  int left = 0;
  int h = 1;
  int w = 1;

  bool operator==(const Rect&) const = default;
};

/// Checks r against an H x W parent, throws GeometryError when outside.
void require_inside(const Rect& r, int parent_h, int parent_w);

/// Maps a rect given in `inner` coordinates of `outer` back to the
/// grandparent frame: translate(r2, r1) composes crop(crop(I,r1),r2).
Rect translate(const Rect& inner, const Rect& outer);

/// Dense H x W x C grid of doubles, row-major with channel fastest:
/// index(y, x, c) = (y * W + x) * C + c.
class Grid3 {
 public:
  Grid3() = default;
  Grid3(int h, int w, int c) : h_(h), w_(w), c_(c), v_(std::size_t(h) * w * c, 0.0) {}

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  std::size_t size() const { return v_.size(); }

  double at(int y, int x, int c) const { return v_[idx(y, x, c)]; }
  double& at(int y, int x, int c) { return v_[idx(y, x, c)]; }

  const std::vector<double>& data() const { return v_; }
  std::vector<double>& data() { return v_; }

  std::size_t idx(int y, int x, int c) const {
    return (std::size_t(y) * w_ + x) * c_ + c;
  }

  void fill(double value) { v_.assign(v_.size(), value); }

  bool same_shape(const Grid3& o) const {
    return h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
  }

 private:
  int h_ = 0, w_ = 0, c_ = 0;
  std::vector<double> v_;
};

/// RGB image with values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int h, int w) : px_(h, w, 3) {}

  int height() const { return px_.height(); }
  int width() const { return px_.width(); }

  double at(int y, int x, int c) const { return px_.at(y, x, c); }
  double& at(int y, int x, int c) { return px_.at(y, x, c); }

  const Grid3& grid() const { return px_; }
  Grid3& grid() { return px_; }

 private:
  Grid3 px_;
};

/// H x W map of class indices with explicit IGNORE cells.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int h, int w) : h_(h), w_(w), cells_(std::size_t(h) * w) {}

  int height() const { return h_; }
  int width() const { return w_; }

  Label at(int y, int x) const { return cells_[std::size_t(y) * w_ + x]; }
  Label& at(int y, int x) { return cells_[std::size_t(y) * w_ + x]; }

  const std::vector<Label>& cells() const { return cells_; }

  /// Number of non-IGNORE cells.
  std::size_t labeled_count() const;

  /// Throws InvalidLabelError if any non-IGNORE cell is >= classes.
  void require_max_class(int classes) const;

  bool operator==(const LabelMap&) const = default;

 private:
  int h_ = 0, w_ = 0;
  std::vector<Label> cells_;
};

/// Pseudo-labels share the LabelMap representation; the binary selection map
/// d is the set of non-IGNORE cells.
using PseudoLabelMap = LabelMap;

/// Per-pixel class probability grid (softmax output or a normalized
/// aggregate). `normalized` asserts each pixel's channels sum to 1.
class ProbVolume {
 public:
  ProbVolume() = default;
  ProbVolume(int h, int w, int c, bool normalized = false)
      : g_(h, w, c), normalized_(normalized) {}
  ProbVolume(Grid3 g, bool normalized) : g_(std::move(g)), normalized_(normalized) {}

  int height() const { return g_.height(); }
  int width() const { return g_.width(); }
  int channels() const { return g_.channels(); }

  double at(int y, int x, int c) const { return g_.at(y, x, c); }
  double& at(int y, int x, int c) { return g_.at(y, x, c); }

  bool normalized() const { return normalized_; }
  void set_normalized(bool v) { normalized_ = v; }

  const Grid3& grid() const { return g_; }
  Grid3& grid() { return g_; }

 private:
  Grid3 g_;
  bool normalized_ = false;
};

/// Running per-pixel probability sums plus patch coverage counts. Pixels a
/// patch never touched keep count 0 and an all-zero sum.
class AccumVolume {
 public:
  AccumVolume() = default;
  AccumVolume(int h, int w, int c)
      : sums_(h, w, c), counts_(std::size_t(h) * w, 0) {}

  int height() const { return sums_.height(); }
  int width() const { return sums_.width(); }
  int channels() const { return sums_.channels(); }

  const Grid3& sums() const { return sums_; }
  std::uint32_t count(int y, int x) const { return counts_[std::size_t(y) * width() + x]; }

  /// Adds a patch's per-pixel probabilities at rect r and bumps counts.
  void add_probabilities(const Rect& r, const Grid3& patch);

  /// Adds 1 to the argmax channel of each patch pixel at rect r (the hard
  /// relative-frequency variant) and bumps counts.
  void add_votes(const Rect& r, const LabelMap& patch_argmax);

  /// Merges another accumulator over the same grid; commutative and
  /// associative so per-patch work can be sharded and merged.
  void merge(const AccumVolume& other);

  /// Enforces the accumulator invariants: a zero-count pixel has all-zero
  /// sums, and no pixel's channel total exceeds its count (plus float slack).
  void validate() const;

 private:
  Grid3 sums_;
  std::vector<std::uint32_t> counts_;
};

/// One-hot expansion of a label map. IGNORE cells are all-zero.
ProbVolume onehot_volume(const LabelMap& labels, int classes);

/// Copies the sub-image at r, row-major order preserved.
Image crop(const Image& image, const Rect& r);

/// Per-pixel argmax; ties break to the lowest class index.
LabelMap argmax_labels(const ProbVolume& p);

}  // namespace mlsl
