#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlsl/grid.hpp"

namespace mlsl {

// ---------------------------------------------------------------------------
// Binary container: u32 little-endian header length, UTF-8 JSON header, then
// a raw little-endian payload. Used for persisted volumes and checkpoints.
// ---------------------------------------------------------------------------

void write_blob(const std::filesystem::path& path, const nlohmann::json& header,
                const std::vector<std::byte>& payload);

struct Blob {
  nlohmann::json header;
  std::vector<std::byte> payload;
};
Blob read_blob(const std::filesystem::path& path);

/// Serializes doubles as little-endian f64 or f32 payload bytes.
std::vector<std::byte> pack_doubles(const std::vector<double>& values, bool as_f32);
std::vector<double> unpack_doubles(const std::vector<std::byte>& bytes, bool as_f32);

// ---------------------------------------------------------------------------
// Volume persistence: header {H, W, C, dtype, normalized}, payload row-major
// channel-fastest.
// ---------------------------------------------------------------------------

void save_volume(const std::filesystem::path& path, const ProbVolume& volume,
                 bool as_f32 = false);
ProbVolume load_volume(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// 8-bit PNG files: grayscale for label maps, RGB for images.
// ---------------------------------------------------------------------------

void write_png_gray(const std::filesystem::path& path, int h, int w,
                    const std::vector<std::uint8_t>& pixels);
void write_png_rgb(const std::filesystem::path& path, int h, int w,
                   const std::vector<std::uint8_t>& pixels);

struct PngImage {
  int height = 0;
  int width = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;
};
PngImage read_png(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Misc file utilities.
// ---------------------------------------------------------------------------

/// FNV-1a 64 digest of a file's bytes; used for checkpoint/store isolation
/// checks and manifest fingerprints.
std::uint64_t file_digest(const std::filesystem::path& path);

/// Digest of every regular file under dir (path-sorted), mixing relative
/// paths and contents.
std::uint64_t tree_digest(const std::filesystem::path& dir);

/// Write-temp-then-rename so readers never observe partial files.
void atomic_write_text(const std::filesystem::path& path, const std::string& text);

std::string read_text(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace mlsl
