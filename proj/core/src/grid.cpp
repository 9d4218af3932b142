#include "mlsl/grid.hpp"

#include <string>

namespace mlsl {

void require_inside(const Rect& r, int parent_h, int parent_w) {
  if (r.h < 1 || r.w < 1 || r.top < 0 || r.left < 0 || r.top + r.h > parent_h ||
      r.left + r.w > parent_w) {
    throw GeometryError("rect [" + std::to_string(r.top) + "," + std::to_string(r.left) +
                        " " + std::to_string(r.h) + "x" + std::to_string(r.w) +
                        "] outside parent " + std::to_string(parent_h) + "x" +
                        std::to_string(parent_w));
  }
}

Rect translate(const Rect& inner, const Rect& outer) {
  require_inside(inner, outer.h, outer.w);
  return Rect{outer.top + inner.top, outer.left + inner.left, inner.h, inner.w};
}

std::size_t LabelMap::labeled_count() const {
  std::size_t n = 0;
  for (const Label& cell : cells_) n += cell.has_value() ? 1 : 0;
  return n;
}

void LabelMap::require_max_class(int classes) const {
  for (int y = 0; y < h_; ++y) {
    for (int x = 0; x < w_; ++x) {
      const Label cell = at(y, x);
      if (cell && *cell >= classes) {
        throw InvalidLabelError("label " + std::to_string(*cell) + " at (" +
                                std::to_string(y) + "," + std::to_string(x) +
                                ") >= class count " + std::to_string(classes));
      }
    }
  }
}

void AccumVolume::add_probabilities(const Rect& r, const Grid3& patch) {
  require_inside(r, height(), width());
  if (patch.height() != r.h || patch.width() != r.w || patch.channels() != channels()) {
    throw GeometryError("patch grid does not match rect/channel shape");
  }
  for (int y = 0; y < r.h; ++y) {
    for (int x = 0; x < r.w; ++x) {
      for (int c = 0; c < channels(); ++c) {
        sums_.at(r.top + y, r.left + x, c) += patch.at(y, x, c);
      }
      counts_[std::size_t(r.top + y) * width() + (r.left + x)] += 1;
    }
  }
}

void AccumVolume::add_votes(const Rect& r, const LabelMap& patch_argmax) {
  require_inside(r, height(), width());
  if (patch_argmax.height() != r.h || patch_argmax.width() != r.w) {
    throw GeometryError("patch label map does not match rect shape");
  }
  patch_argmax.require_max_class(channels());
  for (int y = 0; y < r.h; ++y) {
    for (int x = 0; x < r.w; ++x) {
      const Label cell = patch_argmax.at(y, x);
      if (!cell) continue;
      sums_.at(r.top + y, r.left + x, *cell) += 1.0;
      counts_[std::size_t(r.top + y) * width() + (r.left + x)] += 1;
    }
  }
}

void AccumVolume::validate() const {
  for (int y = 0; y < height(); ++y) {
    for (int x = 0; x < width(); ++x) {
      const std::uint32_t n = count(y, x);
      double total = 0.0;
      for (int c = 0; c < channels(); ++c) {
        const double v = sums_.at(y, x, c);
        if (n == 0 && v != 0.0) {
          throw GeometryError("accumulator has sums at a zero-count pixel (" +
                              std::to_string(y) + "," + std::to_string(x) + ")");
        }
        if (v < 0.0) throw GeometryError("accumulator sum is negative");
        total += v;
      }
      if (total > static_cast<double>(n) + 1e-6) {
        throw GeometryError("accumulator channel total exceeds count at (" +
                            std::to_string(y) + "," + std::to_string(x) + ")");
      }
    }
  }
}

void AccumVolume::merge(const AccumVolume& other) {
  if (!sums_.same_shape(other.sums_)) {
    throw GeometryError("cannot merge accumulators of different shapes");
  }
  for (std::size_t i = 0; i < sums_.data().size(); ++i) {
    sums_.data()[i] += other.sums_.data()[i];
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

ProbVolume onehot_volume(const LabelMap& labels, int classes) {
  labels.require_max_class(classes);
  ProbVolume out(labels.height(), labels.width(), classes, /*normalized=*/false);
  for (int y = 0; y < labels.height(); ++y) {
    for (int x = 0; x < labels.width(); ++x) {
      const Label cell = labels.at(y, x);
      if (cell) out.at(y, x, *cell) = 1.0;
    }
  }
  return out;
}

Image crop(const Image& image, const Rect& r) {
  require_inside(r, image.height(), image.width());
  Image out(r.h, r.w);
  for (int y = 0; y < r.h; ++y) {
    for (int x = 0; x < r.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(y, x, c) = image.at(r.top + y, r.left + x, c);
      }
    }
  }
  return out;
}

LabelMap argmax_labels(const ProbVolume& p) {
  LabelMap out(p.height(), p.width());
  for (int y = 0; y < p.height(); ++y) {
    for (int x = 0; x < p.width(); ++x) {
      int best = 0;
      double best_v = p.at(y, x, 0);
      for (int c = 1; c < p.channels(); ++c) {
        const double v = p.at(y, x, c);
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out.at(y, x) = static_cast<std::uint16_t>(best);
    }
  }
  return out;
}

}  // namespace mlsl
