#include <doctest.h>

#include <filesystem>

#include "mlsl/eval.hpp"
#include "mlsl/io.hpp"
#include "mlsl/rng.hpp"
#include "oracles.hpp"

using namespace mlsl;

TEST_SUITE("eval") {

TEST_CASE("matching prediction fills the diagonal") {
  Rng rng(111);
  const LabelMap gt = oracle::random_labels(5, 5, 3, 0.0, rng);
  ConfusionMatrix cm(3);
  cm.add(gt, gt);
  CHECK(cm.total() == 25);
  for (int g = 0; g < 3; ++g) {
    for (int p = 0; p < 3; ++p) {
      if (g != p) CHECK(cm.at(g, p) == 0);
    }
  }
}

TEST_CASE("all-IGNORE ground truth scores nothing") {
  Rng rng(112);
  const LabelMap pred = oracle::random_labels(4, 4, 3, 0.0, rng);
  const LabelMap gt(4, 4);
  ConfusionMatrix cm(3);
  cm.add(pred, gt);
  CHECK(cm.total() == 0);
}

TEST_CASE("hand-counted 2x2 fixture") {
  LabelMap gt(2, 2), pred(2, 2);
  gt.at(0, 0) = 0;
  gt.at(0, 1) = 0;
  gt.at(1, 0) = 1;
  gt.at(1, 1) = 1;
  pred.at(0, 0) = 0;
  pred.at(0, 1) = 1;  // the one error
  pred.at(1, 0) = 1;
  pred.at(1, 1) = 1;
  ConfusionMatrix cm(2);
  cm.add(pred, gt);
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(0, 1) == 1);
  CHECK(cm.at(1, 0) == 0);
  CHECK(cm.at(1, 1) == 2);
}

TEST_CASE("shape mismatch throws") {
  ConfusionMatrix cm(2);
  CHECK_THROWS_AS(cm.add(LabelMap(2, 2), LabelMap(2, 3)), GeometryError);
}

TEST_CASE("perfect diagonal scores mIoU 1") {
  ConfusionMatrix cm(3);
  LabelMap gt(3, 1);
  gt.at(0, 0) = 0;
  gt.at(1, 0) = 1;
  gt.at(2, 0) = 2;
  cm.add(gt, gt);
  const MetricReport r = miou(cm);
  CHECK(r.miou == 1.0);
}

TEST_CASE("zero-union classes drop out of the mean") {
  ConfusionMatrix cm(3);
  LabelMap gt(2, 1), pred(2, 1);
  gt.at(0, 0) = 0;
  gt.at(1, 0) = 0;
  pred.at(0, 0) = 0;
  pred.at(1, 0) = 0;
  cm.add(pred, gt);  // classes 1 and 2 never appear
  const MetricReport r = miou(cm);
  CHECK(r.per_class_iou[0].has_value());
  CHECK_FALSE(r.per_class_iou[1].has_value());
  CHECK_FALSE(r.per_class_iou[2].has_value());
  CHECK(r.miou == 1.0);
}

TEST_CASE("hand arithmetic on a 2x2 matrix") {
  // counts [[2,1],[0,1]]: IoU_0 = 2/3, IoU_1 = 1/2
  LabelMap gt(1, 4), pred(1, 4);
  gt.at(0, 0) = 0;
  gt.at(0, 1) = 0;
  gt.at(0, 2) = 0;
  gt.at(0, 3) = 1;
  pred.at(0, 0) = 0;
  pred.at(0, 1) = 0;
  pred.at(0, 2) = 1;
  pred.at(0, 3) = 1;
  ConfusionMatrix cm(2);
  cm.add(pred, gt);
  CHECK(cm.at(0, 0) == 2);
  CHECK(cm.at(0, 1) == 1);
  CHECK(cm.at(1, 0) == 0);
  CHECK(cm.at(1, 1) == 1);
  const MetricReport r = miou(cm);
  CHECK(*r.per_class_iou[0] == doctest::Approx(2.0 / 3.0));
  CHECK(*r.per_class_iou[1] == doctest::Approx(0.5));
  CHECK(r.miou == doctest::Approx((2.0 / 3.0 + 0.5) / 2.0).epsilon(1e-12));
}

TEST_CASE("subset restricts the average") {
  LabelMap gt(1, 4), pred(1, 4);
  gt.at(0, 0) = 0;
  gt.at(0, 1) = 1;
  gt.at(0, 2) = 2;
  gt.at(0, 3) = 2;
  pred.at(0, 0) = 0;
  pred.at(0, 1) = 1;
  pred.at(0, 2) = 2;
  pred.at(0, 3) = 0;
  ConfusionMatrix cm(3);
  cm.add(pred, gt);
  const MetricReport r = miou(cm, std::vector<int>{1, 2});
  REQUIRE(r.subset_miou.has_value());
  CHECK(*r.subset_miou == doctest::Approx((1.0 + 0.5) / 2.0));
}

TEST_CASE("relabeling permutes per-class IoU and keeps the mean") {
  Rng rng(113);
  const LabelMap gt = oracle::random_labels(8, 8, 4, 0.1, rng);
  const LabelMap pred = oracle::random_labels(8, 8, 4, 0.0, rng);
  ConfusionMatrix cm(4);
  cm.add(pred, gt);
  const MetricReport base = miou(cm);

  const int perm[4] = {2, 3, 1, 0};
  auto apply = [&](const LabelMap& m) {
    LabelMap out(m.height(), m.width());
    for (int y = 0; y < m.height(); ++y) {
      for (int x = 0; x < m.width(); ++x) {
        if (m.at(y, x)) out.at(y, x) = static_cast<std::uint16_t>(perm[*m.at(y, x)]);
      }
    }
    return out;
  };
  ConfusionMatrix cm2(4);
  cm2.add(apply(pred), apply(gt));
  const MetricReport permuted = miou(cm2);
  CHECK(permuted.miou == doctest::Approx(base.miou).epsilon(1e-12));
  for (int c = 0; c < 4; ++c) {
    CHECK(permuted.per_class_iou[static_cast<std::size_t>(perm[c])] ==
          base.per_class_iou[static_cast<std::size_t>(c)]);
  }
}

TEST_CASE("confusion merge over disjoint pixel sets is additive") {
  Rng rng(114);
  const LabelMap gt_a = oracle::random_labels(4, 4, 3, 0.2, rng);
  const LabelMap gt_b = oracle::random_labels(4, 4, 3, 0.2, rng);
  const LabelMap pred_a = oracle::random_labels(4, 4, 3, 0.0, rng);
  const LabelMap pred_b = oracle::random_labels(4, 4, 3, 0.0, rng);
  ConfusionMatrix ab(3), ba(3);
  ab.add(pred_a, gt_a);
  ab.add(pred_b, gt_b);
  ba.add(pred_b, gt_b);
  ba.add(pred_a, gt_a);
  for (int g = 0; g < 3; ++g) {
    for (int p = 0; p < 3; ++p) CHECK(ab.at(g, p) == ba.at(g, p));
  }
}

TEST_CASE("pseudo quality cases") {
  SUBCASE("everywhere-correct labels score precision 1") {
    Rng rng(115);
    const LabelMap gt = oracle::random_labels(5, 5, 3, 0.0, rng);
    const PseudoQuality q = pseudo_quality(gt, gt, 3);
    for (int c = 0; c < 3; ++c) {
      if (q.precision[static_cast<std::size_t>(c)]) {
        CHECK(*q.precision[static_cast<std::size_t>(c)] == 1.0);
      }
    }
    CHECK(q.coverage == 1.0);
    REQUIRE(q.mean_precision.has_value());
    CHECK(*q.mean_precision == 1.0);
  }
  SUBCASE("all-IGNORE reports absent precision, coverage 0") {
    Rng rng(116);
    const LabelMap gt = oracle::random_labels(4, 4, 3, 0.0, rng);
    const PseudoLabelMap empty(4, 4);
    const PseudoQuality q = pseudo_quality(empty, gt, 3);
    CHECK(q.coverage == 0.0);
    for (const auto& p : q.precision) CHECK_FALSE(p.has_value());
    CHECK_FALSE(q.mean_precision.has_value());
  }
  SUBCASE("one wrong of four labels") {
    LabelMap gt(2, 2);
    gt.at(0, 0) = 0;
    gt.at(0, 1) = 0;
    gt.at(1, 0) = 1;
    gt.at(1, 1) = 1;
    PseudoLabelMap pseudo(2, 2);
    pseudo.at(0, 0) = 0;
    pseudo.at(0, 1) = 1;  // wrong
    pseudo.at(1, 0) = 1;
    pseudo.at(1, 1) = 1;
    const PseudoQuality q = pseudo_quality(pseudo, gt, 2);
    CHECK(*q.precision[0] == 1.0);
    CHECK(*q.precision[1] == doctest::Approx(2.0 / 3.0));
    CHECK(q.coverage == 1.0);
    // overall correct fraction is 3 of 4
    long long correct = 0, labeled = 0;
    PseudoQualityCounts counts(2);
    counts.add(pseudo, gt);
    for (int c = 0; c < 2; ++c) {
      correct += counts.correct[static_cast<std::size_t>(c)];
      labeled += counts.selected[static_cast<std::size_t>(c)];
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(labeled) == 0.75);
  }
}

TEST_CASE("round report JSON round-trips") {
  RoundReport report;
  report.round = 2;
  report.metrics.miou = 0.625;
  report.metrics.per_class_iou = {0.5, std::nullopt, 0.75};
  report.metrics.subset_miou = 0.75;
  PseudoQuality q;
  q.precision = {0.9, std::nullopt, 1.0};
  q.recall = {0.4, std::nullopt, 0.2};
  q.coverage = 0.31;
  q.mean_precision = 0.95;
  report.pseudo = q;

  const nlohmann::json j = report_to_json(report);
  const RoundReport back = report_from_json(j);
  CHECK(back.round == 2);
  CHECK(back.metrics.miou == report.metrics.miou);
  CHECK(back.metrics.per_class_iou == report.metrics.per_class_iou);
  CHECK(back.metrics.subset_miou == report.metrics.subset_miou);
  CHECK(back.pseudo->precision == q.precision);
  CHECK(back.pseudo->coverage == q.coverage);
}

TEST_CASE("emit_report writes json, table and chart that agree") {
  RoundReport source;
  source.round = -1;
  source.metrics.miou = 0.41;
  source.metrics.per_class_iou = {0.41};
  RoundReport r0;
  r0.round = 0;
  r0.metrics.miou = 0.57;
  r0.metrics.per_class_iou = {0.57};

  const auto dir = std::filesystem::temp_directory_path() / "mlsl_eval_report";
  std::filesystem::remove_all(dir);
  emit_report({source, r0}, dir);

  CHECK(std::filesystem::exists(dir / "source.json"));
  CHECK(std::filesystem::exists(dir / "round_0.json"));
  CHECK(std::filesystem::exists(dir / "miou.svg"));

  const RoundReport back = report_from_json(read_json(dir / "round_0.json"));
  CHECK(back.metrics.miou == 0.57);

  const std::string table = read_text(dir / "comparison.txt");
  CHECK(table.find("source") != std::string::npos);
  CHECK(table.find("round_0") != std::string::npos);
  CHECK(table.find("0.4100") != std::string::npos);
  CHECK(table.find("0.5700") != std::string::npos);

  const std::string svg = read_text(dir / "miou.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);
}

}  // TEST_SUITE
