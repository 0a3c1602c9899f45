#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "posmed/image_io.hpp"

namespace posmed {

// Foreground/background grid, row-major, origin top-left.
class BinaryMask {
 public:
  BinaryMask(int height, int width);
  BinaryMask(int height, int width, std::vector<std::uint8_t> cells);

  static BinaryMask from_image(const GrayImage& image);
  static BinaryMask load(const std::filesystem::path& path);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return cells_.size(); }

  bool at(int row, int col) const { return cells_[index(row, col)] != 0; }
  void set(int row, int col, bool value = true) { cells_[index(row, col)] = value ? 1 : 0; }

  std::size_t count() const;
  const std::vector<std::uint8_t>& cells() const { return cells_; }

  BinaryMask flipped_horizontal() const;
  BinaryMask flipped_vertical() const;
  GrayImage to_image() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int height_;
  int width_;
  std::vector<std::uint8_t> cells_;
};

struct Pixel {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

// Inclusive pixel indices. w/h are spans (x_max - x_min), so a single pixel
// has w == h == 0.
struct BoundingBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  int w() const { return x_max - x_min; }
  int h() const { return y_max - y_min; }
  double center_x() const { return x_min + w() / 2.0; }
  double center_y() const { return y_min + h() / 2.0; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

enum class Zone : std::uint8_t { TL, TR, BL, BR, Center, Invalid };

inline constexpr Zone kRealZones[] = {Zone::TL, Zone::TR, Zone::BL, Zone::BR, Zone::Center};

// Record codes: "TL", "TR", "BL", "BR", "CENTER", "INVALID".
std::string_view zone_code(Zone zone);
std::optional<Zone> zone_from_code(std::string_view code);

enum class TauMode : std::uint8_t { Absolute, Relative };

std::string_view tau_mode_name(TauMode mode);
std::optional<TauMode> tau_mode_from_name(std::string_view name);

struct ZoneConfig {
  double tau = 0.1;
  TauMode tau_mode = TauMode::Relative;

  // Threshold in pixels for an image of the given size.
  double threshold_pixels(int height, int width) const;
  // Throws std::invalid_argument unless tau > 0 and finite.
  void validate() const;
};

struct ZoneResult {
  Zone zone = Zone::Invalid;
  std::optional<BoundingBox> bbox;
  // Euclidean distance between the bbox center and the image center.
  std::optional<double> distance;
};

std::vector<Pixel> foreground_pixels(const BinaryMask& mask);
std::optional<BoundingBox> bounding_box(const BinaryMask& mask);

ZoneResult locate_zone(const BinaryMask& mask, const ZoneConfig& cfg);
inline Zone classify_zone(const BinaryMask& mask, const ZoneConfig& cfg) {
  return locate_zone(mask, cfg).zone;
}

}  // namespace posmed
