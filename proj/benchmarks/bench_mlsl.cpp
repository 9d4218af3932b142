#include <benchmark/benchmark.h>

#include "mlsl/eval.hpp"
#include "mlsl/model.hpp"
#include "mlsl/rng.hpp"
#include "mlsl/sisc.hpp"

namespace {

using namespace mlsl;

Image random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  for (double& v : img.grid().data()) v = rng.next_unit();
  return img;
}

void BM_forward_seg(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const SegModel model = SegModel::init(SegConfig{6, 16, 3}, 1);
  const Image img = random_image(size, size, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward_seg(model, img));
  }
  state.SetItemsProcessed(state.iterations() * size * size);
}
BENCHMARK(BM_forward_seg)->Arg(32)->Arg(64);

void BM_backward(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const SegModel model = SegModel::init(SegConfig{6, 16, 3}, 3);
  const Image img = random_image(size, size, 4);
  const SegTrace trace = forward_seg(model, img);
  Grid3 dprobs(size, size, 6);
  Rng rng(5);
  for (double& v : dprobs.data()) v = rng.next_real(-1.0, 1.0);
  for (auto _ : state) {
    SegGrads grads = SegGrads::zeros_like(model);
    backward(model, trace, &dprobs, nullptr, nullptr, {}, grads, nullptr);
    benchmark::DoNotOptimize(grads);
  }
}
BENCHMARK(BM_backward)->Arg(32)->Arg(64);

void BM_patch_aggregation(benchmark::State& state) {
  const SegModel model = SegModel::init(SegConfig{6, 16, 3}, 6);
  const Image img = random_image(64, 64, 7);
  SiscConfig cfg;
  cfg.patch_count = static_cast<int>(state.range(0));
  cfg.patch_h = 32;
  cfg.patch_w = 32;
  cfg.seed = 8;
  const std::vector<Rect> patches = sample_patches(64, 64, cfg);
  for (auto _ : state) {
    benchmark::DoNotOptimize(normalize(aggregate(model, img, patches, cfg)));
  }
}
BENCHMARK(BM_patch_aggregation)->Arg(8)->Arg(25)->Arg(50);

void BM_class_balanced_selection(benchmark::State& state) {
  Rng rng(9);
  const int size = 64;
  ProbVolume probs(size, size, 6, true);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double z = 0.0;
      for (int c = 0; c < 6; ++c) {
        probs.at(y, x, c) = 0.05 + rng.next_unit();
        z += probs.at(y, x, c);
      }
      for (int c = 0; c < 6; ++c) probs.at(y, x, c) /= z;
    }
  }
  const std::vector<std::uint8_t> covered(std::size_t(size) * size, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(select_class_balanced(probs, covered, 6, 0.3));
  }
}
BENCHMARK(BM_class_balanced_selection);

void BM_confusion_and_miou(benchmark::State& state) {
  Rng rng(10);
  LabelMap gt(64, 64), pred(64, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      gt.at(y, x) = static_cast<std::uint16_t>(rng.next_below(6));
      pred.at(y, x) = static_cast<std::uint16_t>(rng.next_below(6));
    }
  }
  for (auto _ : state) {
    ConfusionMatrix cm(6);
    cm.add(pred, gt);
    benchmark::DoNotOptimize(miou(cm));
  }
}
BENCHMARK(BM_confusion_and_miou);

}  // namespace

BENCHMARK_MAIN();
