#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mlsl/grid.hpp"

namespace mlsl {

/// Procedural road-scene spec. Class layout is fixed by index:
/// 0 background, 1 road, 2 sky, 3 building, 4 small object A, 5 small
/// object B. Appearance (not geometry) is what differs across domains.
struct SceneSpec {
  int classes = 6;
  int height = 64;
  int width = 64;

  struct ClassAppearance {
    std::array<double, 3> mean_rgb{0.5, 0.5, 0.5};
    double jitter = 0.05;  // per-image shade offset and per-pixel texture noise
  };
  std::vector<ClassAppearance> appearance;  // size == classes

  // small-object placement (classes 4 and 5)
  int min_objects = 1;
  int max_objects = 3;
  int min_object_size = 3;
  int max_object_size = 7;

  static SceneSpec defaults();
};

/// Appearance-level shift applied to target-domain renders: channel-wise
/// affine, additive Gaussian noise, extra per-pixel texture jitter. Values
/// clamp to [0,1].
struct DomainShiftSpec {
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  std::array<double, 3> offset{0.0, 0.0, 0.0};
  double noise_sigma = 0.0;
  double texture_jitter = 0.0;

  static DomainShiftSpec identity();
  static DomainShiftSpec defaults();
  bool is_identity() const;
};

enum class Domain { Source, TargetTrain, TargetVal };

std::string domain_name(Domain d);
Domain domain_from_name(const std::string& name);

struct ManifestEntry {
  std::string image;                 // path relative to the manifest file
  std::optional<std::string> label;  // absent for target-train
};

struct Manifest {
  int version = 1;
  Domain domain = Domain::Source;
  int classes = 0;
  std::vector<ManifestEntry> entries;

  /// Directory the relative entry paths resolve against.
  std::filesystem::path base;
};

/// One rendered scene: image plus dense labels.
struct Scene {
  Image image;
  LabelMap labels;
};

/// Renders scene `index` of the stream `seed` identically for every domain;
/// only the shift changes pixels, never labels.
Scene render_scene(const SceneSpec& spec, const DomainShiftSpec& shift,
                   std::uint64_t seed, std::uint64_t index);

/// Generates n scenes under out_dir and writes <domain>.manifest.json.
/// Target-train labels are withheld from the manifest and written to the
/// hidden eval_labels/ store instead. threads = 0 defers to MLSL_THREADS or
/// hardware concurrency.
Manifest gen_dataset(const SceneSpec& spec, const DomainShiftSpec& shift, int n,
                     std::uint64_t seed, const std::filesystem::path& out_dir,
                     Domain domain, int threads = 0);

// -- label / image files ----------------------------------------------------

/// 8-bit grayscale PNG, class index per pixel, 255 = IGNORE.
void save_labelmap(const LabelMap& map, const std::filesystem::path& path);

/// Loads and validates a label file; any value in [classes, 255) raises
/// InvalidLabelError naming the offending pixel.
LabelMap load_labelmap(const std::filesystem::path& path, int classes);

/// 8-bit RGB PNG; values quantize from/to [0,1].
void save_image(const Image& img, const std::filesystem::path& path);
Image load_image(const std::filesystem::path& path);

// -- manifests ---------------------------------------------------------------

void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Parses and validates: schema version, domain consistency, every referenced
/// file exists (missing ones reported exhaustively), target-train entries must
/// not carry labels.
Manifest load_manifest(const std::filesystem::path& path);

/// Loads every label map referenced by a manifest, in entry order.
std::vector<LabelMap> load_manifest_labels(const Manifest& manifest);

/// Path of the hidden per-entry eval label for a target-train manifest entry,
/// under the dataset directory holding eval_labels/.
std::filesystem::path hidden_label_path(const std::filesystem::path& dataset_dir,
                                        const Manifest& manifest, std::size_t entry_index);

/// Same, with the manifest's own directory as the dataset directory.
std::filesystem::path hidden_label_path(const Manifest& manifest, std::size_t entry_index);

}  // namespace mlsl
