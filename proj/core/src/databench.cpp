#include "mlsl/databench.hpp"

#include <algorithm>
#include <cmath>

#include "mlsl/io.hpp"
#include "mlsl/parallel.hpp"
#include "mlsl/rng.hpp"

namespace mlsl {

namespace {

constexpr int kBackground = 0;
constexpr int kRoad = 1;
constexpr int kSky = 2;
constexpr int kBuilding = 3;
constexpr int kSmallA = 4;
constexpr int kSmallB = 5;

void paint_rect(LabelMap& labels, const Rect& r, int cls) {
  for (int y = r.top; y < r.top + r.h; ++y) {
    for (int x = r.left; x < r.left + r.w; ++x) {
      labels.at(y, x) = static_cast<std::uint16_t>(cls);
    }
  }
}

std::string index_name(Domain domain, std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05llu", domain_name(domain).c_str(),
                static_cast<unsigned long long>(index));
  return buf;
}

}  // namespace

// The palette keeps classes separable in the source domain while the default
// appearance shift compresses the red channel, so class boundaries blur on
// target without any class landing inside another's source cluster.
SceneSpec SceneSpec::defaults() {
  SceneSpec spec;
  spec.appearance = {
      {{0.30, 0.56, 0.25}, 0.06},  // background: grassy terrain
      {{0.46, 0.46, 0.48}, 0.06},  // road: asphalt
      {{0.58, 0.74, 0.94}, 0.06},  // sky
      {{0.66, 0.50, 0.42}, 0.06},  // building: masonry
      {{0.80, 0.20, 0.20}, 0.06},  // small object A
      {{0.88, 0.74, 0.16}, 0.06},  // small object B
  };
  return spec;
}

DomainShiftSpec DomainShiftSpec::identity() { return DomainShiftSpec{}; }

DomainShiftSpec DomainShiftSpec::defaults() {
  DomainShiftSpec s;
  s.gain = {0.7, 0.9, 1.1};
  s.offset = {0.1, 0.0, -0.05};
  s.noise_sigma = 0.02;
  s.texture_jitter = 0.0;
  return s;
}

bool DomainShiftSpec::is_identity() const {
  return gain == std::array<double, 3>{1.0, 1.0, 1.0} &&
         offset == std::array<double, 3>{0.0, 0.0, 0.0} && noise_sigma == 0.0 &&
         texture_jitter == 0.0;
}

std::string domain_name(Domain d) {
  switch (d) {
    case Domain::Source: return "source";
    case Domain::TargetTrain: return "target-train";
    case Domain::TargetVal: return "target-val";
  }
  throw ConfigError("unknown domain");
}

Domain domain_from_name(const std::string& name) {
  if (name == "source") return Domain::Source;
  if (name == "target-train") return Domain::TargetTrain;
  if (name == "target-val") return Domain::TargetVal;
  throw ConfigError("unknown domain tag: " + name);
}

Scene render_scene(const SceneSpec& spec, const DomainShiftSpec& shift,
                   std::uint64_t seed, std::uint64_t index) {
  if (spec.classes != 6 || spec.appearance.size() != 6) {
    throw ConfigError("scene generator renders exactly 6 classes");
  }
  const int h = spec.height, w = spec.width;
  Rng geo(derive_seed(seed, "scene-geometry", index));
  Rng tex(derive_seed(seed, "scene-texture", index));

  Scene scene{Image(h, w), LabelMap(h, w)};
  LabelMap& labels = scene.labels;

  // horizon bands
  const int sky_h = std::max(1, static_cast<int>(std::lround(h * geo.next_real(0.18, 0.38))));
  const int road_h = std::max(1, static_cast<int>(std::lround(h * geo.next_real(0.20, 0.34))));
  paint_rect(labels, Rect{0, 0, h, w}, kBackground);
  paint_rect(labels, Rect{0, 0, sky_h, w}, kSky);
  paint_rect(labels, Rect{h - road_h, 0, road_h, w}, kRoad);

  // buildings rise from the road line into the middle band
  const int buildings = geo.next_int(1, 3);
  for (int b = 0; b < buildings; ++b) {
    const int bw = std::max(3, static_cast<int>(std::lround(w * geo.next_real(0.12, 0.30))));
    const int bh = std::max(3, static_cast<int>(std::lround(h * geo.next_real(0.18, 0.42))));
    const int left = geo.next_int(0, std::max(0, w - bw));
    const int bottom = h - road_h;
    const int top = std::max(0, bottom - bh);
    paint_rect(labels, Rect{top, left, bottom - top, bw}, kBuilding);
  }

  // small objects: A sits on the road, B in the middle band
  auto place_small = [&](int cls, int band_top, int band_bottom) {
    const int count = geo.next_int(spec.min_objects, spec.max_objects);
    for (int i = 0; i < count; ++i) {
      const int oh = geo.next_int(spec.min_object_size, spec.max_object_size);
      const int ow = geo.next_int(spec.min_object_size, spec.max_object_size);
      if (band_bottom - band_top < oh || w < ow) continue;
      const int top = geo.next_int(band_top, band_bottom - oh);
      const int left = geo.next_int(0, w - ow);
      paint_rect(labels, Rect{top, left, oh, ow}, cls);
    }
  };
  place_small(kSmallA, h - road_h, h);
  place_small(kSmallB, sky_h, h - road_h);

  // appearance: per-image shade per class, per-pixel texture, then the shift
  std::array<std::array<double, 3>, 6> shade{};
  for (int c = 0; c < 6; ++c) {
    const auto& app = spec.appearance[static_cast<std::size_t>(c)];
    for (int ch = 0; ch < 3; ++ch) {
      shade[static_cast<std::size_t>(c)][static_cast<std::size_t>(ch)] =
          app.mean_rgb[static_cast<std::size_t>(ch)] + tex.next_real(-app.jitter, app.jitter);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint16_t cls = *labels.at(y, x);
      const double jit = spec.appearance[cls].jitter;
      for (int ch = 0; ch < 3; ++ch) {
        double v = shade[cls][static_cast<std::size_t>(ch)] + tex.next_real(-jit, jit);
        v = shift.gain[static_cast<std::size_t>(ch)] * v +
            shift.offset[static_cast<std::size_t>(ch)];
        if (shift.noise_sigma > 0.0) v += shift.noise_sigma * tex.next_normal();
        if (shift.texture_jitter > 0.0) {
          v += tex.next_real(-shift.texture_jitter, shift.texture_jitter);
        }
        scene.image.at(y, x, ch) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return scene;
}

void save_labelmap(const LabelMap& map, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(std::size_t(map.height()) * map.width());
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      const Label cell = map.at(y, x);
      if (cell && *cell >= kIgnoreByte) {
        throw InvalidLabelError("label " + std::to_string(*cell) +
                                " does not fit the 8-bit file format");
      }
      bytes[std::size_t(y) * map.width() + x] =
          cell ? static_cast<std::uint8_t>(*cell) : kIgnoreByte;
    }
  }
  write_png_gray(path, map.height(), map.width(), bytes);
}

LabelMap load_labelmap(const std::filesystem::path& path, int classes) {
  const PngImage png = read_png(path);
  if (png.channels != 1) {
    throw IoError("label file must be single-channel: " + path.string());
  }
  LabelMap out(png.height, png.width);
  for (int y = 0; y < png.height; ++y) {
    for (int x = 0; x < png.width; ++x) {
      const std::uint8_t v = png.pixels[std::size_t(y) * png.width + x];
      if (v == kIgnoreByte) continue;
      if (v >= classes) {
        throw InvalidLabelError("label " + std::to_string(int(v)) + " at pixel (" +
                                std::to_string(y) + "," + std::to_string(x) + ") in " +
                                path.string() + " >= class count " + std::to_string(classes));
      }
      out.at(y, x) = static_cast<std::uint16_t>(v);
    }
  }
  return out;
}

void save_image(const Image& img, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(std::size_t(img.height()) * img.width() * 3);
  std::size_t i = 0;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(y, x, c), 0.0, 1.0);
        bytes[i++] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  write_png_rgb(path, img.height(), img.width(), bytes);
}

Image load_image(const std::filesystem::path& path) {
  const PngImage png = read_png(path);
  if (png.channels != 3) throw IoError("image file must be RGB: " + path.string());
  Image out(png.height, png.width);
  std::size_t i = 0;
  for (int y = 0; y < png.height; ++y) {
    for (int x = 0; x < png.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(y, x, c) = static_cast<double>(png.pixels[i++]) / 255.0;
      }
    }
  }
  return out;
}

Manifest gen_dataset(const SceneSpec& spec, const DomainShiftSpec& shift, int n,
                     std::uint64_t seed, const std::filesystem::path& out_dir,
                     Domain domain, int threads) {
  if (n < 1) throw ConfigError("dataset size must be >= 1");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "images");
  const bool hide_labels = domain == Domain::TargetTrain;
  fs::create_directories(out_dir / (hide_labels ? "eval_labels" : "labels"));

  Manifest manifest;
  manifest.domain = domain;
  manifest.classes = spec.classes;
  manifest.base = out_dir;
  manifest.entries.resize(static_cast<std::size_t>(n));

  parallel_for(n, threads, [&](int i) {
    const std::string stem = index_name(domain, static_cast<std::uint64_t>(i));
    const Scene scene =
        render_scene(spec, shift, seed, static_cast<std::uint64_t>(i));
    const std::string image_rel = "images/" + stem + ".png";
    save_image(scene.image, out_dir / image_rel);
    ManifestEntry entry;
    entry.image = image_rel;
    if (hide_labels) {
      save_labelmap(scene.labels, out_dir / "eval_labels" / (stem + ".png"));
    } else {
      const std::string label_rel = "labels/" + stem + ".png";
      save_labelmap(scene.labels, out_dir / label_rel);
      entry.label = label_rel;
    }
    manifest.entries[static_cast<std::size_t>(i)] = std::move(entry);
  });

  save_manifest(manifest, out_dir / (domain_name(domain) + ".manifest.json"));
  return manifest;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  nlohmann::json entries = nlohmann::json::array();
  for (const ManifestEntry& e : manifest.entries) {
    nlohmann::json je = {{"image", e.image}};
    if (e.label) je["label"] = *e.label;
    entries.push_back(std::move(je));
  }
  const nlohmann::json j = {
      {"version", manifest.version},
      {"domain", domain_name(manifest.domain)},
      {"C", manifest.classes},
      {"entries", entries},
  };
  write_json(path, j);
}

Manifest load_manifest(const std::filesystem::path& path) {
  const nlohmann::json j = read_json(path);
  Manifest manifest;
  manifest.version = j.at("version").get<int>();
  if (manifest.version != 1) {
    throw IoError("unsupported manifest version " + std::to_string(manifest.version) +
                  " in " + path.string());
  }
  manifest.domain = domain_from_name(j.at("domain").get<std::string>());
  manifest.classes = j.at("C").get<int>();
  manifest.base = path.parent_path();
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.image = je.at("image").get<std::string>();
    if (je.contains("label")) {
      if (manifest.domain == Domain::TargetTrain) {
        throw IoError("target-train manifest must not reference labels: " + path.string());
      }
      e.label = je.at("label").get<std::string>();
    } else if (manifest.domain != Domain::TargetTrain) {
      throw IoError("entry missing label in labeled-domain manifest: " + path.string());
    }
    manifest.entries.push_back(std::move(e));
  }
  if (manifest.entries.empty()) {
    throw IoError("manifest has zero entries: " + path.string());
  }
  std::vector<std::string> missing;
  for (const ManifestEntry& e : manifest.entries) {
    if (!std::filesystem::exists(manifest.base / e.image)) missing.push_back(e.image);
    if (e.label && !std::filesystem::exists(manifest.base / *e.label)) {
      missing.push_back(*e.label);
    }
  }
  if (!missing.empty()) {
    std::string msg = "manifest references missing files:";
    for (const std::string& m : missing) msg += "\n  " + m;
    throw IoError(msg);
  }
  return manifest;
}

std::vector<LabelMap> load_manifest_labels(const Manifest& manifest) {
  std::vector<LabelMap> out;
  out.reserve(manifest.entries.size());
  for (const ManifestEntry& e : manifest.entries) {
    if (!e.label) throw IoError("manifest entry has no label: " + e.image);
    out.push_back(load_labelmap(manifest.base / *e.label, manifest.classes));
  }
  return out;
}

std::filesystem::path hidden_label_path(const std::filesystem::path& dataset_dir,
                                        const Manifest& manifest, std::size_t entry_index) {
  const std::filesystem::path img = manifest.entries.at(entry_index).image;
  return dataset_dir / "eval_labels" / (img.stem().string() + ".png");
}

std::filesystem::path hidden_label_path(const Manifest& manifest, std::size_t entry_index) {
  return hidden_label_path(manifest.base, manifest, entry_index);
}

}  // namespace mlsl
