#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mlsl/databench.hpp"
#include "mlsl/io.hpp"
#include "mlsl/pwl.hpp"
#include "mlsl/rng.hpp"
#include "oracles.hpp"

using namespace mlsl;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("databench") {

TEST_CASE("label file round-trip is lossless") {
  Rng rng(101);
  const LabelMap map = oracle::random_labels(9, 7, 6, 0.2, rng);
  const fs::path dir = fresh_dir("mlsl_db_roundtrip");
  save_labelmap(map, dir / "labels.png");
  CHECK(load_labelmap(dir / "labels.png", 6) == map);
}

TEST_CASE("byte 255 maps to IGNORE") {
  LabelMap map(1, 2);
  map.at(0, 0) = 3;
  const fs::path dir = fresh_dir("mlsl_db_ignore");
  save_labelmap(map, dir / "labels.png");
  const LabelMap in = load_labelmap(dir / "labels.png", 6);
  CHECK(*in.at(0, 0) == 3);
  CHECK_FALSE(in.at(0, 1).has_value());
}

TEST_CASE("out-of-range label names the offending pixel") {
  const fs::path dir = fresh_dir("mlsl_db_badlabel");
  std::vector<std::uint8_t> bytes{0, 1, 9, 2};  // class 9 with C=6 at (1,0)
  write_png_gray(dir / "bad.png", 2, 2, bytes);
  try {
    load_labelmap(dir / "bad.png", 6);
    FAIL("expected InvalidLabelError");
  } catch (const InvalidLabelError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(1,0)") != std::string::npos);
    CHECK(msg.find("9") != std::string::npos);
  }
}

TEST_CASE("image round-trip stays within 8-bit quantization") {
  Rng rng(102);
  const Image img = oracle::random_image(8, 8, rng);
  const fs::path dir = fresh_dir("mlsl_db_image");
  save_image(img, dir / "img.png");
  const Image in = load_image(dir / "img.png");
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      for (int c = 0; c < 3; ++c) {
        CHECK(std::abs(in.at(y, x, c) - img.at(y, x, c)) <= 0.5 / 255.0 + 1e-12);
      }
    }
  }
}

TEST_CASE("same seed renders byte-identical datasets") {
  const SceneSpec spec = SceneSpec::defaults();
  const fs::path a = fresh_dir("mlsl_db_det_a");
  const fs::path b = fresh_dir("mlsl_db_det_b");
  gen_dataset(spec, DomainShiftSpec::identity(), 3, 7, a, Domain::Source);
  gen_dataset(spec, DomainShiftSpec::identity(), 3, 7, b, Domain::Source);
  CHECK(tree_digest(a) == tree_digest(b));
}

TEST_CASE("identity shift leaves the render unchanged") {
  const SceneSpec spec = SceneSpec::defaults();
  DomainShiftSpec null_shift;
  null_shift.gain = {1.0, 1.0, 1.0};
  null_shift.offset = {0.0, 0.0, 0.0};
  null_shift.noise_sigma = 0.0;
  const Scene plain = render_scene(spec, DomainShiftSpec::identity(), 5, 0);
  const Scene shifted = render_scene(spec, null_shift, 5, 0);
  CHECK(plain.image.grid().data() == shifted.image.grid().data());
  CHECK(plain.labels == shifted.labels);
}

TEST_CASE("shift changes pixels but never labels") {
  const SceneSpec spec = SceneSpec::defaults();
  const Scene plain = render_scene(spec, DomainShiftSpec::identity(), 5, 3);
  const Scene shifted = render_scene(spec, DomainShiftSpec::defaults(), 5, 3);
  CHECK(plain.labels == shifted.labels);
  CHECK(plain.image.grid().data() != shifted.image.grid().data());
}

TEST_CASE("small-object classes stay small under source statistics") {
  const SceneSpec spec = SceneSpec::defaults();
  std::vector<LabelMap> labels;
  for (int i = 0; i < 200; ++i) {
    labels.push_back(render_scene(spec, DomainShiftSpec::identity(), 11, i).labels);
  }
  const ClassSizeStats stats = compute_source_stats(labels, spec.classes);
  CHECK(stats.mean_size[4] < 0.05);
  CHECK(stats.mean_size[5] < 0.05);
  // the bulk classes exist in essentially every scene
  CHECK(stats.presence_counts[1] == 200);
  CHECK(stats.presence_counts[2] == 200);
}

TEST_CASE("source and hidden target label statistics agree in expectation") {
  const SceneSpec spec = SceneSpec::defaults();
  std::vector<LabelMap> src, tgt;
  for (int i = 0; i < 200; ++i) {
    src.push_back(render_scene(spec, DomainShiftSpec::identity(), 21, i).labels);
    tgt.push_back(render_scene(spec, DomainShiftSpec::defaults(), 22, i).labels);
  }
  const ClassSizeStats a = compute_source_stats(src, spec.classes);
  const ClassSizeStats b = compute_source_stats(tgt, spec.classes);
  for (int c = 0; c < spec.classes; ++c) {
    const double ma = a.mean_size[static_cast<std::size_t>(c)];
    const double mb = b.mean_size[static_cast<std::size_t>(c)];
    REQUIRE(ma > 0.0);
    CHECK(std::abs(ma - mb) / ma < 0.20);
  }
}

TEST_CASE("target-train labels go to the hidden store only") {
  const fs::path dir = fresh_dir("mlsl_db_hidden");
  const Manifest manifest = gen_dataset(SceneSpec::defaults(), DomainShiftSpec::defaults(),
                                        2, 9, dir, Domain::TargetTrain);
  for (const ManifestEntry& e : manifest.entries) CHECK_FALSE(e.label.has_value());
  CHECK(fs::exists(hidden_label_path(manifest, 0)));
  CHECK(fs::exists(hidden_label_path(manifest, 1)));
  CHECK_FALSE(fs::exists(dir / "labels"));
}

TEST_CASE("manifest round-trip and validation") {
  const fs::path dir = fresh_dir("mlsl_db_manifest");
  gen_dataset(SceneSpec::defaults(), DomainShiftSpec::identity(), 3, 13, dir, Domain::Source);
  const Manifest in = load_manifest(dir / "source.manifest.json");
  CHECK(in.entries.size() == 3);
  CHECK(in.classes == 6);
  CHECK(in.domain == Domain::Source);

  SUBCASE("zero entries rejected") {
    const nlohmann::json j = {
        {"version", 1}, {"domain", "source"}, {"C", 6},
        {"entries", nlohmann::json::array()}};
    write_json(dir / "empty.json", j);
    CHECK_THROWS_WITH_AS(load_manifest(dir / "empty.json"),
                         doctest::Contains("zero entries"), IoError);
  }

  SUBCASE("missing files are listed exhaustively") {
    nlohmann::json j = read_json(dir / "source.manifest.json");
    j["entries"][1]["image"] = "images/not_there.png";
    j["entries"][2]["label"] = "labels/also_missing.png";
    write_json(dir / "broken.json", j);
    try {
      load_manifest(dir / "broken.json");
      FAIL("expected IoError");
    } catch (const IoError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("images/not_there.png") != std::string::npos);
      CHECK(msg.find("labels/also_missing.png") != std::string::npos);
    }
  }

  SUBCASE("target-train labels in the manifest are rejected") {
    nlohmann::json j = read_json(dir / "source.manifest.json");
    j["domain"] = "target-train";
    write_json(dir / "leaky.json", j);
    CHECK_THROWS_AS(load_manifest(dir / "leaky.json"), IoError);
  }
}

}  // TEST_SUITE
