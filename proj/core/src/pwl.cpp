#include "mlsl/pwl.hpp"

#include "mlsl/io.hpp"

namespace mlsl {

ClassSizeStats compute_source_stats(std::span<const LabelMap> labelmaps, int classes) {
  ClassSizeStats stats;
  stats.classes = classes;
  stats.total_images = static_cast<long>(labelmaps.size());
  stats.mean_size.assign(static_cast<std::size_t>(classes), 0.0);
  stats.presence_counts.assign(static_cast<std::size_t>(classes), 0);

  std::vector<double> fraction_sums(static_cast<std::size_t>(classes), 0.0);
  for (const LabelMap& map : labelmaps) {
    map.require_max_class(classes);
    const std::vector<double> frac = class_fraction(map, classes);
    for (int c = 0; c < classes; ++c) {
      if (frac[static_cast<std::size_t>(c)] > 0.0) {
        fraction_sums[static_cast<std::size_t>(c)] += frac[static_cast<std::size_t>(c)];
        stats.presence_counts[static_cast<std::size_t>(c)] += 1;
      }
    }
  }
  for (int c = 0; c < classes; ++c) {
    if (stats.presence_counts[static_cast<std::size_t>(c)] > 0) {
      stats.mean_size[static_cast<std::size_t>(c)] =
          fraction_sums[static_cast<std::size_t>(c)] /
          static_cast<double>(stats.presence_counts[static_cast<std::size_t>(c)]);
    }
  }
  return stats;
}

std::vector<double> class_fraction(const LabelMap& labels, int classes) {
  labels.require_max_class(classes);
  std::vector<long> counts(static_cast<std::size_t>(classes), 0);
  for (int y = 0; y < labels.height(); ++y) {
    for (int x = 0; x < labels.width(); ++x) {
      const Label cell = labels.at(y, x);
      if (cell) counts[*cell] += 1;
    }
  }
  const double pixels = static_cast<double>(labels.height()) * labels.width();
  std::vector<double> out(static_cast<std::size_t>(classes), 0.0);
  for (int c = 0; c < classes; ++c) {
    out[static_cast<std::size_t>(c)] =
        static_cast<double>(counts[static_cast<std::size_t>(c)]) / pixels;
  }
  return out;
}

WeakLabelVector generate_pwl(std::span<const double> target_fractions,
                             const ClassSizeStats& stats, const PwlConfig& cfg) {
  if (target_fractions.size() != static_cast<std::size_t>(stats.classes)) {
    throw GeometryError("fraction vector length does not match class count");
  }
  if (!(cfg.eta >= 0.0)) throw ConfigError("eta must be >= 0");
  WeakLabelVector out(static_cast<std::size_t>(stats.classes), 0);
  for (int c = 0; c < stats.classes; ++c) {
    const std::size_t i = static_cast<std::size_t>(c);
    out[i] = target_fractions[i] > cfg.eta * stats.mean_size[i] ? 1 : 0;
  }
  return out;
}

WeakLabelVector source_image_labels(const LabelMap& gt, int classes) {
  gt.require_max_class(classes);
  WeakLabelVector out(static_cast<std::size_t>(classes), 0);
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      const Label cell = gt.at(y, x);
      if (cell) out[*cell] = 1;
    }
  }
  return out;
}

void save_stats(const std::filesystem::path& path, const ClassSizeStats& stats,
                std::uint64_t source_manifest_hash) {
  nlohmann::json j = {
      {"C", stats.classes},
      {"N", stats.total_images},
      {"m", stats.mean_size},
      {"presence_counts", stats.presence_counts},
      {"source_manifest_hash", source_manifest_hash},
  };
  write_json(path, j);
}

LoadedStats load_stats(const std::filesystem::path& path) {
  const nlohmann::json j = read_json(path);
  LoadedStats out;
  out.stats.classes = j.at("C").get<int>();
  out.stats.total_images = j.at("N").get<long>();
  out.stats.mean_size = j.at("m").get<std::vector<double>>();
  out.stats.presence_counts = j.at("presence_counts").get<std::vector<long>>();
  out.source_manifest_hash = j.at("source_manifest_hash").get<std::uint64_t>();
  if (out.stats.mean_size.size() != static_cast<std::size_t>(out.stats.classes) ||
      out.stats.presence_counts.size() != static_cast<std::size_t>(out.stats.classes)) {
    throw IoError("stats file vectors do not match class count in " + path.string());
  }
  return out;
}

}  // namespace mlsl
