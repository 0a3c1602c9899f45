#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace posmed {

struct ImageSize {
  int height = 0;
  int width = 0;
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

// 8-bit single channel raster, row-major.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
};

// Reads PNG (any bit depth / color type, collapsed to 8-bit gray) or PGM
// (P2 plain text or P5 binary). Format is sniffed from the file contents.
// Throws DataError on unreadable or malformed files.
GrayImage read_gray_image(const std::filesystem::path& path);

// Header-only probe; cheaper than decoding the full raster.
ImageSize read_image_size(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const GrayImage& image);
void write_pgm(const std::filesystem::path& path, const GrayImage& image, bool plain_text = true);

}  // namespace posmed
