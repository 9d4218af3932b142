#include "mlsl/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "mlsl/errors.hpp"
#include "mlsl/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "payload serialization assumes a little-endian host");

namespace mlsl {

void write_blob(const std::filesystem::path& path, const nlohmann::json& header,
                const std::vector<std::byte>& payload) {
  const std::string head = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path.string());
  const std::uint32_t len = static_cast<std::uint32_t>(head.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("short write: " + path.string());
}

Blob read_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in) throw IoError("truncated header length: " + path.string());
  std::string head(len, '\0');
  in.read(head.data(), len);
  if (!in) throw IoError("truncated header: " + path.string());
  Blob blob;
  try {
    blob.header = nlohmann::json::parse(head);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed header in " + path.string() + ": " + e.what());
  }
  std::vector<char> rest((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  blob.payload.resize(rest.size());
  std::memcpy(blob.payload.data(), rest.data(), rest.size());
  return blob;
}

std::vector<std::byte> pack_doubles(const std::vector<double>& values, bool as_f32) {
  std::vector<std::byte> out;
  if (as_f32) {
    out.resize(values.size() * sizeof(float));
    for (std::size_t i = 0; i < values.size(); ++i) {
      const float f = static_cast<float>(values[i]);
      std::memcpy(out.data() + i * sizeof(float), &f, sizeof(float));
    }
  } else {
    out.resize(values.size() * sizeof(double));
    std::memcpy(out.data(), values.data(), out.size());
  }
  return out;
}

std::vector<double> unpack_doubles(const std::vector<std::byte>& bytes, bool as_f32) {
  std::vector<double> out;
  if (as_f32) {
    if (bytes.size() % sizeof(float) != 0) throw IoError("payload not a whole number of f32");
    out.resize(bytes.size() / sizeof(float));
    for (std::size_t i = 0; i < out.size(); ++i) {
      float f;
      std::memcpy(&f, bytes.data() + i * sizeof(float), sizeof(float));
      out[i] = static_cast<double>(f);
    }
  } else {
    if (bytes.size() % sizeof(double) != 0) throw IoError("payload not a whole number of f64");
    out.resize(bytes.size() / sizeof(double));
    std::memcpy(out.data(), bytes.data(), bytes.size());
  }
  return out;
}

void save_volume(const std::filesystem::path& path, const ProbVolume& volume,
                 bool as_f32) {
  nlohmann::json header = {
      {"H", volume.height()},       {"W", volume.width()},
      {"C", volume.channels()},     {"dtype", as_f32 ? "f32" : "f64"},
      {"normalized", volume.normalized()},
  };
  write_blob(path, header, pack_doubles(volume.grid().data(), as_f32));
}

ProbVolume load_volume(const std::filesystem::path& path) {
  const Blob blob = read_blob(path);
  const int h = blob.header.at("H").get<int>();
  const int w = blob.header.at("W").get<int>();
  const int c = blob.header.at("C").get<int>();
  const std::string dtype = blob.header.at("dtype").get<std::string>();
  if (dtype != "f32" && dtype != "f64") throw IoError("unknown dtype: " + dtype);
  ProbVolume out(h, w, c, blob.header.at("normalized").get<bool>());
  std::vector<double> values = unpack_doubles(blob.payload, dtype == "f32");
  if (values.size() != out.grid().data().size()) {
    throw IoError("payload size does not match H*W*C in " + path.string());
  }
  out.grid().data() = std::move(values);
  return out;
}

namespace {

struct PngWriteCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* fp = nullptr;
  ~PngWriteCloser() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngReadCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* fp = nullptr;
  ~PngReadCloser() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

void write_png(const std::filesystem::path& path, int h, int w, int channels,
               const std::vector<std::uint8_t>& pixels) {
  if (h < 1 || w < 1) throw GeometryError("png dims must be >= 1");
  if (pixels.size() != std::size_t(h) * w * channels) {
    throw IoError("pixel buffer size mismatch for " + path.string());
  }
  PngWriteCloser s;
  s.fp = std::fopen(path.string().c_str(), "wb");
  if (!s.fp) throw IoError("cannot open for write: " + path.string());
  s.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!s.png) throw IoError("png_create_write_struct failed");
  s.info = png_create_info_struct(s.png);
  if (!s.info) throw IoError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(s.png))) throw IoError("libpng failure writing " + path.string());
  png_init_io(s.png, s.fp);
  png_set_IHDR(s.png, s.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(s.png, s.info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    rows[y] = const_cast<png_bytep>(pixels.data() + std::size_t(y) * w * channels);
  }
  png_write_image(s.png, rows.data());
  png_write_end(s.png, nullptr);
}

}  // namespace

void write_png_gray(const std::filesystem::path& path, int h, int w,
                    const std::vector<std::uint8_t>& pixels) {
  write_png(path, h, w, 1, pixels);
}

void write_png_rgb(const std::filesystem::path& path, int h, int w,
                   const std::vector<std::uint8_t>& pixels) {
  write_png(path, h, w, 3, pixels);
}

PngImage read_png(const std::filesystem::path& path) {
  PngReadCloser s;
  s.fp = std::fopen(path.string().c_str(), "rb");
  if (!s.fp) throw IoError("cannot open: " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, s.fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("not a PNG file: " + path.string());
  }
  s.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!s.png) throw IoError("png_create_read_struct failed");
  s.info = png_create_info_struct(s.png);
  if (!s.info) throw IoError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(s.png))) throw IoError("libpng failure reading " + path.string());
  png_init_io(s.png, s.fp);
  png_set_sig_bytes(s.png, 8);
  png_read_info(s.png, s.info);

  png_set_strip_16(s.png);
  png_set_packing(s.png);
  const png_byte color = png_get_color_type(s.png, s.info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(s.png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(s.png);
  png_read_update_info(s.png, s.info);

  PngImage out;
  out.height = static_cast<int>(png_get_image_height(s.png, s.info));
  out.width = static_cast<int>(png_get_image_width(s.png, s.info));
  out.channels = static_cast<int>(png_get_channels(s.png, s.info));
  if (out.channels != 1 && out.channels != 3) {
    throw IoError("unsupported channel count " + std::to_string(out.channels) + " in " +
                  path.string());
  }
  out.pixels.resize(std::size_t(out.height) * out.width * out.channels);
  std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) {
    rows[y] = out.pixels.data() + std::size_t(y) * out.width * out.channels;
  }
  png_read_image(s.png, rows.data());
  return out;
}

std::uint64_t file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[4096];
  while (in) {
    in.read(buf, sizeof(buf));
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

std::uint64_t tree_digest(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& f : files) {
    const std::string rel = std::filesystem::relative(f, dir).generic_string();
    h = splitmix64(h ^ fnv1a64(rel));
    h = splitmix64(h ^ file_digest(f));
  }
  return h;
}

void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("short write: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  atomic_write_text(path, j.dump(2) + "\n");
}

nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace mlsl
