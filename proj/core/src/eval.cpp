#include "mlsl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mlsl/io.hpp"

namespace mlsl {

ConfusionMatrix::ConfusionMatrix(int classes)
    : classes_(classes), counts_(std::size_t(classes) * classes, 0) {
  if (classes < 1) throw ConfigError("confusion matrix needs classes >= 1");
}

long long ConfusionMatrix::at(int gt, int pred) const {
  return counts_[std::size_t(gt) * classes_ + pred];
}

long long ConfusionMatrix::total() const {
  long long t = 0;
  for (long long c : counts_) t += c;
  return t;
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw GeometryError("prediction and ground-truth shapes differ");
  }
  gt.require_max_class(classes_);
  pred.require_max_class(classes_);
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      const Label g = gt.at(y, x);
      if (!g) continue;
      const Label p = pred.at(y, x);
      if (!p) {
        throw InvalidLabelError("prediction is IGNORE at a scored pixel (" +
                                std::to_string(y) + "," + std::to_string(x) + ")");
      }
      counts_[std::size_t(*g) * classes_ + *p] += 1;
    }
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw GeometryError("class counts differ in merge");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

MetricReport miou(const ConfusionMatrix& cm, const std::optional<std::vector<int>>& subset) {
  const int classes = cm.classes();
  MetricReport report;
  report.per_class_iou.assign(static_cast<std::size_t>(classes), std::nullopt);

  std::vector<long long> row_sum(static_cast<std::size_t>(classes), 0);
  std::vector<long long> col_sum(static_cast<std::size_t>(classes), 0);
  for (int g = 0; g < classes; ++g) {
    for (int p = 0; p < classes; ++p) {
      row_sum[static_cast<std::size_t>(g)] += cm.at(g, p);
      col_sum[static_cast<std::size_t>(p)] += cm.at(g, p);
    }
  }
  double sum = 0.0;
  int scored = 0;
  for (int c = 0; c < classes; ++c) {
    const long long tp = cm.at(c, c);
    const long long uni = row_sum[static_cast<std::size_t>(c)] +
                          col_sum[static_cast<std::size_t>(c)] - tp;
    if (uni == 0) continue;  // class absent from gt and prediction
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    report.per_class_iou[static_cast<std::size_t>(c)] = iou;
    sum += iou;
    ++scored;
  }
  report.miou = scored > 0 ? sum / scored : 0.0;

  if (subset) {
    double ssum = 0.0;
    int sn = 0;
    for (int c : *subset) {
      if (c < 0 || c >= classes) throw ConfigError("subset class out of range");
      if (report.per_class_iou[static_cast<std::size_t>(c)]) {
        ssum += *report.per_class_iou[static_cast<std::size_t>(c)];
        ++sn;
      }
    }
    report.subset_miou = sn > 0 ? ssum / sn : 0.0;
  }
  return report;
}

PseudoQualityCounts::PseudoQualityCounts(int classes)
    : selected(static_cast<std::size_t>(classes), 0),
      correct(static_cast<std::size_t>(classes), 0),
      gt_count(static_cast<std::size_t>(classes), 0) {}

void PseudoQualityCounts::add(const PseudoLabelMap& pseudo, const LabelMap& gt) {
  if (pseudo.height() != gt.height() || pseudo.width() != gt.width()) {
    throw GeometryError("pseudo-label and ground-truth shapes differ");
  }
  const int classes = static_cast<int>(selected.size());
  pseudo.require_max_class(classes);
  gt.require_max_class(classes);
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      ++pixels;
      const Label p = pseudo.at(y, x);
      const Label g = gt.at(y, x);
      if (g) ++gt_count[*g];
      if (!p) continue;
      ++labeled;
      ++selected[*p];
      if (g && *g == *p) ++correct[*p];
    }
  }
}

void PseudoQualityCounts::merge(const PseudoQualityCounts& other) {
  for (std::size_t c = 0; c < selected.size(); ++c) {
    selected[c] += other.selected[c];
    correct[c] += other.correct[c];
    gt_count[c] += other.gt_count[c];
  }
  pixels += other.pixels;
  labeled += other.labeled;
}

PseudoQuality PseudoQualityCounts::finalize() const {
  PseudoQuality q;
  const std::size_t classes = selected.size();
  q.precision.assign(classes, std::nullopt);
  q.recall.assign(classes, std::nullopt);
  double psum = 0.0;
  int pn = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (selected[c] > 0) {
      q.precision[c] = static_cast<double>(correct[c]) / static_cast<double>(selected[c]);
      psum += *q.precision[c];
      ++pn;
    }
    if (gt_count[c] > 0) {
      q.recall[c] = static_cast<double>(correct[c]) / static_cast<double>(gt_count[c]);
    }
  }
  q.coverage = pixels > 0 ? static_cast<double>(labeled) / static_cast<double>(pixels) : 0.0;
  if (pn > 0) q.mean_precision = psum / pn;
  return q;
}

PseudoQuality pseudo_quality(const PseudoLabelMap& pseudo, const LabelMap& gt, int classes) {
  PseudoQualityCounts counts(classes);
  counts.add(pseudo, gt);
  return counts.finalize();
}

namespace {

nlohmann::json optional_vec_to_json(const std::vector<std::optional<double>>& v) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& x : v) {
    if (x) {
      out.push_back(*x);
    } else {
      out.push_back(nullptr);
    }
  }
  return out;
}

std::vector<std::optional<double>> optional_vec_from_json(const nlohmann::json& j) {
  std::vector<std::optional<double>> out;
  for (const auto& x : j) {
    if (x.is_null()) {
      out.push_back(std::nullopt);
    } else {
      out.push_back(x.get<double>());
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "-"; }

}  // namespace

nlohmann::json report_to_json(const RoundReport& report) {
  nlohmann::json j = {
      {"round", report.round},
      {"miou", report.metrics.miou},
      {"per_class_iou", optional_vec_to_json(report.metrics.per_class_iou)},
  };
  if (report.metrics.subset_miou) j["subset_miou"] = *report.metrics.subset_miou;
  if (report.pseudo) {
    nlohmann::json p = {
        {"per_class_precision", optional_vec_to_json(report.pseudo->precision)},
        {"per_class_recall", optional_vec_to_json(report.pseudo->recall)},
        {"coverage", report.pseudo->coverage},
    };
    if (report.pseudo->mean_precision) p["mean_precision"] = *report.pseudo->mean_precision;
    j["pseudo"] = std::move(p);
  }
  return j;
}

RoundReport report_from_json(const nlohmann::json& j) {
  RoundReport report;
  report.round = j.at("round").get<int>();
  report.metrics.miou = j.at("miou").get<double>();
  report.metrics.per_class_iou = optional_vec_from_json(j.at("per_class_iou"));
  if (j.contains("subset_miou")) report.metrics.subset_miou = j.at("subset_miou").get<double>();
  if (j.contains("pseudo")) {
    PseudoQuality q;
    q.precision = optional_vec_from_json(j.at("pseudo").at("per_class_precision"));
    q.recall = optional_vec_from_json(j.at("pseudo").at("per_class_recall"));
    q.coverage = j.at("pseudo").at("coverage").get<double>();
    if (j.at("pseudo").contains("mean_precision")) {
      q.mean_precision = j.at("pseudo").at("mean_precision").get<double>();
    }
    report.pseudo = std::move(q);
  }
  return report;
}

std::string render_table(const std::vector<RoundReport>& rounds) {
  std::ostringstream out;
  out << "round      miou     subset_miou  pseudo_mean_precision  coverage\n";
  for (const RoundReport& r : rounds) {
    const std::string name = r.round < 0 ? "source" : "round_" + std::to_string(r.round);
    out << name;
    for (std::size_t i = name.size(); i < 11; ++i) out << ' ';
    out << fmt(r.metrics.miou) << "   " << fmt_opt(r.metrics.subset_miou) << "       ";
    if (r.pseudo) {
      out << fmt_opt(r.pseudo->mean_precision) << "                 " << fmt(r.pseudo->coverage);
    } else {
      out << "-                      -";
    }
    out << "\n";
  }
  return out.str();
}

namespace {

std::string svg_chart(const std::vector<RoundReport>& rounds) {
  const int width = 480, height = 320, margin = 40;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\""
      << width - margin << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin
      << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"" << height - 8
      << "\" text-anchor=\"middle\" font-size=\"12\">round</text>\n";
  svg << "<text x=\"12\" y=\"" << height / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 12 "
      << height / 2 << ")\">mIoU</text>\n";
  if (!rounds.empty()) {
    const int n = static_cast<int>(rounds.size());
    std::ostringstream points;
    for (int i = 0; i < n; ++i) {
      const double fx = n == 1 ? 0.5 : static_cast<double>(i) / (n - 1);
      const double fy = std::clamp(rounds[static_cast<std::size_t>(i)].metrics.miou, 0.0, 1.0);
      const double px = margin + fx * (width - 2 * margin);
      const double py = height - margin - fy * (height - 2 * margin);
      points << (i ? " " : "") << px << "," << py;
      svg << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"3\" fill=\"steelblue\"/>\n";
      const std::string name =
          rounds[static_cast<std::size_t>(i)].round < 0
              ? "src"
              : "r" + std::to_string(rounds[static_cast<std::size_t>(i)].round);
      svg << "<text x=\"" << px << "\" y=\"" << height - margin + 14
          << "\" text-anchor=\"middle\" font-size=\"10\">" << name << "</text>\n";
    }
    svg << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\""
        << points.str() << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace

void emit_report(const std::vector<RoundReport>& rounds,
                 const std::filesystem::path& out_dir) {
  if (rounds.empty()) throw ConfigError("nothing to report");
  std::filesystem::create_directories(out_dir);
  for (const RoundReport& r : rounds) {
    const std::string name =
        r.round < 0 ? "source.json" : "round_" + std::to_string(r.round) + ".json";
    write_json(out_dir / name, report_to_json(r));
  }
  atomic_write_text(out_dir / "comparison.txt", render_table(rounds));
  atomic_write_text(out_dir / "miou.svg", svg_chart(rounds));
}

}  // namespace mlsl
