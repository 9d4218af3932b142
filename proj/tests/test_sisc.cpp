#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mlsl/model.hpp"
#include "mlsl/rng.hpp"
#include "mlsl/sisc.hpp"
#include "oracles.hpp"

using namespace mlsl;

namespace {

SegModel fixture_model(std::uint64_t seed = 71) {
  return SegModel::init(SegConfig{3, 4, 2}, seed);
}

}  // namespace

TEST_SUITE("sisc") {

TEST_CASE("paper defaults") {
  const SiscConfig cfg;
  CHECK(cfg.patch_count == 50);
  CHECK(cfg.patch_h == 512);
  CHECK(cfg.patch_w == 512);
}

TEST_CASE("patch-sized image with K=1 yields the full-image rect") {
  SiscConfig cfg;
  cfg.patch_count = 1;
  cfg.patch_h = 6;
  cfg.patch_w = 7;
  cfg.coverage = CoverageMode::RandomOnly;
  const std::vector<Rect> rects = sample_patches(6, 7, cfg);
  REQUIRE(rects.size() == 1);
  CHECK(rects[0] == Rect{0, 0, 6, 7});
}

TEST_CASE("grid tiling covers every pixel") {
  SiscConfig cfg;
  cfg.patch_count = 0;
  cfg.patch_h = 4;
  cfg.patch_w = 4;
  cfg.coverage = CoverageMode::GridPlusRandom;
  const std::vector<Rect> rects = sample_patches(8, 8, cfg);
  CHECK(rects.size() == 4);
  // coverage counting oracle
  std::vector<int> cover(64, 0);
  for (const Rect& r : rects) {
    for (int y = r.top; y < r.top + r.h; ++y) {
      for (int x = r.left; x < r.left + r.w; ++x) cover[std::size_t(y) * 8 + x] += 1;
    }
  }
  for (int c : cover) CHECK(c >= 1);
}

TEST_CASE("grid tiling of a non-divisible image shifts the last tiles inward") {
  SiscConfig cfg;
  cfg.patch_count = 0;
  cfg.patch_h = 4;
  cfg.patch_w = 4;
  const std::vector<Rect> rects = sample_patches(10, 6, cfg);
  std::vector<int> cover(60, 0);
  for (const Rect& r : rects) {
    CHECK(r.top + r.h <= 10);
    CHECK(r.left + r.w <= 6);
    for (int y = r.top; y < r.top + r.h; ++y) {
      for (int x = r.left; x < r.left + r.w; ++x) cover[std::size_t(y) * 6 + x] += 1;
    }
  }
  for (int c : cover) CHECK(c >= 1);
}

TEST_CASE("sampling is deterministic under the seed") {
  SiscConfig cfg;
  cfg.patch_count = 20;
  cfg.patch_h = 3;
  cfg.patch_w = 3;
  cfg.seed = 99;
  CHECK(sample_patches(16, 16, cfg) == sample_patches(16, 16, cfg));
  cfg.seed = 100;
  CHECK(sample_patches(16, 16, cfg) != sample_patches(16, 16, SiscConfig{20, 3, 3, 99}));
}

TEST_CASE("oversized patches are rejected") {
  SiscConfig cfg;
  cfg.patch_h = 9;
  cfg.patch_w = 4;
  CHECK_THROWS_AS(sample_patches(8, 8, cfg), GeometryError);
}

TEST_CASE("one full-image patch reproduces the forward pass") {
  const SegModel model = fixture_model();
  Rng rng(72);
  const Image img = oracle::random_image(6, 6, rng);
  SiscConfig cfg;
  cfg.aggregation = Aggregation::ProbabilitySum;
  const std::vector<Rect> patches{Rect{0, 0, 6, 6}};
  const AccumVolume acc = aggregate(model, img, patches, cfg);
  const SegTrace trace = forward_seg(model, img);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) {
      CHECK(acc.count(y, x) == 1);
      for (int c = 0; c < 3; ++c) {
        CHECK(acc.sums().at(y, x, c) == trace.probs.at(y, x, c));
      }
    }
  }
}

TEST_CASE("duplicate patches add") {
  const SegModel model = fixture_model();
  Rng rng(73);
  const Image img = oracle::random_image(5, 5, rng);
  SiscConfig cfg;
  const std::vector<Rect> patches{Rect{0, 0, 5, 5}, Rect{0, 0, 5, 5}};
  const AccumVolume acc = aggregate(model, img, patches, cfg);
  const SegTrace trace = forward_seg(model, img);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 5; ++x) {
      CHECK(acc.count(y, x) == 2);
      for (int c = 0; c < 3; ++c) {
        CHECK(acc.sums().at(y, x, c) ==
              doctest::Approx(2.0 * trace.probs.at(y, x, c)).epsilon(1e-15));
      }
    }
  }
}

TEST_CASE("hand-built overlap fixture sums and normalizes") {
  // 2x2 image, two 2x1 patches overlapping in the left column
  AccumVolume acc(2, 2, 2);
  Grid3 a(2, 1, 2);  // covers column 0
  a.at(0, 0, 0) = 0.9;
  a.at(0, 0, 1) = 0.1;
  a.at(1, 0, 0) = 0.4;
  a.at(1, 0, 1) = 0.6;
  Grid3 b(2, 1, 2);  // also covers column 0
  b.at(0, 0, 0) = 0.7;
  b.at(0, 0, 1) = 0.3;
  b.at(1, 0, 0) = 0.2;
  b.at(1, 0, 1) = 0.8;
  acc.add_probabilities(Rect{0, 0, 2, 1}, a);
  acc.add_probabilities(Rect{0, 0, 2, 1}, b);

  CHECK(acc.count(0, 0) == 2);
  CHECK(acc.count(0, 1) == 0);
  CHECK(acc.sums().at(0, 0, 0) == doctest::Approx(1.6));
  CHECK(acc.sums().at(1, 0, 1) == doctest::Approx(1.4));

  const NormalizedMap norm = normalize(acc);
  CHECK(norm.covered[0] == 1);
  CHECK(norm.covered[1] == 0);
  CHECK(norm.probs.at(0, 0, 0) == doctest::Approx(0.8));
  CHECK(norm.probs.at(0, 0, 1) == doctest::Approx(0.2));
  CHECK(norm.probs.at(1, 0, 0) == doctest::Approx(0.3));
  CHECK(norm.probs.at(0, 1, 0) == 0.0);  // uncovered stays zero
}

TEST_CASE("normalize with unit counts returns the sums") {
  const SegModel model = fixture_model();
  Rng rng(74);
  const Image img = oracle::random_image(4, 4, rng);
  const std::vector<Rect> one{Rect{0, 0, 4, 4}};
  const AccumVolume acc = aggregate(model, img, one, SiscConfig{});
  const NormalizedMap norm = normalize(acc);
  CHECK(norm.probs.grid().data() == acc.sums().data());
  CHECK(norm.probs.normalized());
}

TEST_CASE("exact tiling equals the whole-image forward pass") {
  const SegModel model = fixture_model(75);
  Rng rng(76);
  const Image img = oracle::random_image(8, 8, rng);
  std::vector<Rect> tiles;
  for (int ty = 0; ty < 2; ++ty) {
    for (int tx = 0; tx < 2; ++tx) tiles.push_back(Rect{ty * 4, tx * 4, 4, 4});
  }
  const AccumVolume acc = aggregate(model, img, tiles, SiscConfig{});
  const NormalizedMap norm = normalize(acc);

  // assemble the per-tile forward outputs independently
  for (const Rect& r : tiles) {
    const SegTrace tile_trace = forward_seg(model, crop(img, r));
    for (int y = 0; y < r.h; ++y) {
      for (int x = 0; x < r.w; ++x) {
        for (int c = 0; c < 3; ++c) {
          CHECK(std::abs(norm.probs.at(r.top + y, r.left + x, c) -
                         tile_trace.probs.at(y, x, c)) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("aggregation is order-independent") {
  const SegModel model = fixture_model(77);
  Rng rng(78);
  const Image img = oracle::random_image(8, 8, rng);
  SiscConfig cfg;
  cfg.patch_count = 10;
  cfg.patch_h = 3;
  cfg.patch_w = 3;
  cfg.seed = 79;
  cfg.coverage = CoverageMode::RandomOnly;
  std::vector<Rect> patches = sample_patches(8, 8, cfg);
  const AccumVolume fwd = aggregate(model, img, patches, cfg);
  std::reverse(patches.begin(), patches.end());
  const AccumVolume rev = aggregate(model, img, patches, cfg);
  for (std::size_t i = 0; i < fwd.sums().data().size(); ++i) {
    CHECK(std::abs(fwd.sums().data()[i] - rev.sums().data()[i]) <= 1e-12);
  }
}

TEST_CASE("relative-frequency sums are integer counts") {
  const SegModel model = fixture_model(80);
  Rng rng(81);
  const Image img = oracle::random_image(8, 8, rng);
  SiscConfig cfg;
  cfg.patch_count = 12;
  cfg.patch_h = 4;
  cfg.patch_w = 4;
  cfg.seed = 82;
  cfg.aggregation = Aggregation::RelativeFrequency;
  const std::vector<Rect> patches = sample_patches(8, 8, cfg);
  const AccumVolume acc = aggregate(model, img, patches, cfg);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      double channel_total = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double v = acc.sums().at(y, x, c);
        CHECK(v == std::floor(v));
        channel_total += v;
      }
      CHECK(channel_total == static_cast<double>(acc.count(y, x)));
    }
  }
}

TEST_CASE("selection keeps the confident fraction per class") {
  // class-0 confidences 0.9, 0.8, 0.6, 0.5 at portion 0.5 keep the top two
  ProbVolume probs(1, 4, 2, true);
  const double conf[4] = {0.9, 0.8, 0.6, 0.5};
  for (int x = 0; x < 4; ++x) {
    probs.at(0, x, 0) = conf[x];
    probs.at(0, x, 1) = 1.0 - conf[x];
  }
  const std::vector<std::uint8_t> covered(4, 1);
  const PseudoLabelMap out = select_class_balanced(probs, covered, 2, 0.5);
  CHECK(out.at(0, 0) == Label{0});
  CHECK(out.at(0, 1) == Label{0});
  CHECK_FALSE(out.at(0, 2).has_value());
  CHECK_FALSE(out.at(0, 3).has_value());
}

TEST_CASE("portion 1 labels every covered pixel, 0 labels none") {
  Rng rng(83);
  const ProbVolume probs = oracle::random_prob_volume(6, 6, 4, rng);
  std::vector<std::uint8_t> covered(36, 1);
  covered[5] = 0;
  const PseudoLabelMap all = select_class_balanced(probs, covered, 4, 1.0);
  CHECK(all.labeled_count() == 35);
  CHECK_FALSE(all.at(0, 5).has_value());
  const PseudoLabelMap none = select_class_balanced(probs, covered, 4, 0.0);
  CHECK(none.labeled_count() == 0);
}

TEST_CASE("every selected label is the pixel argmax and fractions respect the cut") {
  Rng rng(84);
  for (int trial = 0; trial < 30; ++trial) {
    const int classes = rng.next_int(2, 5);
    const int h = rng.next_int(2, 9), w = rng.next_int(2, 9);
    const double portion = rng.next_unit();
    const ProbVolume probs = oracle::random_prob_volume(h, w, classes, rng);
    std::vector<std::uint8_t> covered(std::size_t(h) * w, 1);
    for (auto& c : covered) c = rng.next_unit() < 0.85 ? 1 : 0;
    const PseudoLabelMap out = select_class_balanced(probs, covered, classes, portion);
    const LabelMap arg = argmax_labels(probs);

    std::vector<long> assigned(static_cast<std::size_t>(classes), 0);
    std::vector<long> selected(static_cast<std::size_t>(classes), 0);
    std::vector<long> tied(static_cast<std::size_t>(classes), 0);
    std::vector<std::vector<double>> conf(static_cast<std::size_t>(classes));
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!covered[std::size_t(y) * w + x]) {
          CHECK_FALSE(out.at(y, x).has_value());
          continue;
        }
        const std::uint16_t a = *arg.at(y, x);
        assigned[a] += 1;
        conf[a].push_back(probs.at(y, x, a));
        if (out.at(y, x)) {
          CHECK(*out.at(y, x) == a);
          selected[a] += 1;
        }
      }
    }
    if (portion == 0.0) continue;
    for (int c = 0; c < classes; ++c) {
      if (assigned[static_cast<std::size_t>(c)] == 0) {
        CHECK(selected[static_cast<std::size_t>(c)] == 0);
        continue;
      }
      const double threshold =
          oracle::selection_threshold(conf[static_cast<std::size_t>(c)], portion);
      long ties = 0;
      for (double v : conf[static_cast<std::size_t>(c)]) {
        if (v == threshold) ++ties;
      }
      const double frac = static_cast<double>(selected[static_cast<std::size_t>(c)]) /
                          static_cast<double>(assigned[static_cast<std::size_t>(c)]);
      const double tie_slack = static_cast<double>(ties) /
                               static_cast<double>(assigned[static_cast<std::size_t>(c)]);
      CHECK(frac <= portion + tie_slack + 1e-12);
    }
  }
}

TEST_CASE("single inference equals one full-image patch") {
  const SegModel model = fixture_model(85);
  Rng rng(86);
  const Image img = oracle::random_image(7, 7, rng);
  const PseudoLabelMap si = single_inference_labels(model, img, 3, 0.4);

  const std::vector<Rect> one{Rect{0, 0, 7, 7}};
  const AccumVolume acc = aggregate(model, img, one, SiscConfig{});
  const NormalizedMap norm = normalize(acc);
  const PseudoLabelMap patch_way = select_class_balanced(norm.probs, norm.covered, 3, 0.4);
  CHECK(si == patch_way);
}

TEST_CASE("single inference with portion 0 is empty") {
  const SegModel model = fixture_model(87);
  Rng rng(88);
  const Image img = oracle::random_image(5, 5, rng);
  CHECK(single_inference_labels(model, img, 3, 0.0).labeled_count() == 0);
}

TEST_CASE("selection schedule walks up to the cap") {
  const SelectionConfig sched;  // 0.2 + 0.05r capped at 0.5
  CHECK(sched.portion_at(0) == doctest::Approx(0.2));
  CHECK(sched.portion_at(1) == doctest::Approx(0.25));
  CHECK(sched.portion_at(6) == doctest::Approx(0.5));
  CHECK(sched.portion_at(60) == doctest::Approx(0.5));
  double prev = 0.0;
  for (int r = 0; r < 12; ++r) {
    const double p = sched.portion_at(r);
    CHECK(p >= prev);
    CHECK(p <= 0.5);
    prev = p;
  }
}

}  // TEST_SUITE
