#include "posmed/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "posmed/error.hpp"

namespace posmed {
namespace {

namespace fs = std::filesystem;

enum class Format { Png, Pgm };

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Format sniff(const fs::path& path, std::string_view head) {
  static constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (head.size() >= 8 && std::memcmp(head.data(), kPngSig, 8) == 0) return Format::Png;
  if (head.size() >= 2 && head[0] == 'P' && (head[1] == '2' || head[1] == '5')) return Format::Pgm;
  throw DataError("unsupported image format '" + path.string() + "' (expected PNG or PGM)");
}

struct PngImage {
  png_image image{};
  PngImage() {
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

GrayImage decode_png(const fs::path& path, const std::string& bytes, bool header_only) {
  PngImage png;
  if (!png_image_begin_read_from_memory(&png.image, bytes.data(), bytes.size())) {
    throw DataError("malformed PNG '" + path.string() + "': " + png.image.message);
  }
  GrayImage out;
  out.height = static_cast<int>(png.image.height);
  out.width = static_cast<int>(png.image.width);
  if (header_only) return out;
  png.image.format = PNG_FORMAT_GRAY;
  out.pixels.resize(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, out.pixels.data(), 0, nullptr)) {
    throw DataError("malformed PNG '" + path.string() + "': " + png.image.message);
  }
  return out;
}

class PgmReader {
 public:
  PgmReader(const fs::path& path, const std::string& bytes) : path_(path), bytes_(bytes) {}

  GrayImage decode(bool header_only) {
    const bool plain = bytes_[1] == '2';
    pos_ = 2;
    GrayImage out;
    out.width = next_int();
    out.height = next_int();
    const int maxval = next_int();
    if (out.width <= 0 || out.height <= 0 || maxval <= 0 || maxval > 65535) fail("bad header");
    if (header_only) return out;

    const std::size_t n = static_cast<std::size_t>(out.width) * static_cast<std::size_t>(out.height);
    out.pixels.resize(n);
    if (plain) {
      for (std::size_t i = 0; i < n; ++i) out.pixels[i] = to_u8(next_int(), maxval);
      return out;
    }
    ++pos_;  // single whitespace byte after maxval
    const std::size_t bpp = maxval > 255 ? 2 : 1;
    if (bytes_.size() < pos_ + n * bpp) fail("truncated raster");
    for (std::size_t i = 0; i < n; ++i) {
      const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_ + i * bpp);
      const int v = bpp == 2 ? (p[0] << 8) | p[1] : p[0];
      out.pixels[i] = to_u8(v, maxval);
    }
    return out;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw DataError("malformed PGM '" + path_.string() + "': " + what);
  }

  static std::uint8_t to_u8(int v, int maxval) {
    if (v < 0 || v > maxval) v = std::clamp(v, 0, maxval);
    if (maxval <= 255) return static_cast<std::uint8_t>(v);
    // Keep any nonzero sample nonzero after rescaling.
    const int scaled = v * 255 / maxval;
    return static_cast<std::uint8_t>(v > 0 ? std::max(scaled, 1) : 0);
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  int next_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      fail("expected integer at byte " + std::to_string(pos_));
    }
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000'000) fail("integer overflow");
      ++pos_;
    }
    return static_cast<int>(value);
  }

  const fs::path& path_;
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

GrayImage decode(const fs::path& path, bool header_only) {
  const std::string bytes = read_all(path);
  switch (sniff(path, bytes)) {
    case Format::Png:
      return decode_png(path, bytes, header_only);
    case Format::Pgm:
      return PgmReader(path, bytes).decode(header_only);
  }
  throw DataError("unreachable image format");
}

}  // namespace

GrayImage read_gray_image(const std::filesystem::path& path) { return decode(path, false); }

ImageSize read_image_size(const std::filesystem::path& path) {
  const GrayImage header = decode(path, true);
  return {header.height, header.width};
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  if (image.pixels.size() != static_cast<std::size_t>(image.height) * static_cast<std::size_t>(image.width)) {
    throw std::invalid_argument("write_png: raster size does not match extents");
  }
  PngImage png;
  png.image.width = static_cast<png_uint_32>(image.width);
  png.image.height = static_cast<png_uint_32>(image.height);
  png.image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png.image, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw DataError("cannot write PNG '" + path.string() + "': " + png.image.message);
  }
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image, bool plain_text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write PGM '" + path.string() + "'");
  out << (plain_text ? "P2\n" : "P5\n") << image.width << ' ' << image.height << "\n255\n";
  if (plain_text) {
    for (int r = 0; r < image.height; ++r) {
      for (int c = 0; c < image.width; ++c) {
        if (c) out << ' ';
        out << static_cast<int>(image.pixels[static_cast<std::size_t>(r) * image.width + c]);
      }
      out << '\n';
    }
  } else {
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
  }
  if (!out) throw DataError("short write to '" + path.string() + "'");
}

}  // namespace posmed
