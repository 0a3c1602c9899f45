#include "posmed/mask_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "posmed/error.hpp"

namespace posmed {

BinaryMask::BinaryMask(int height, int width)
    : BinaryMask(height, width,
                 std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(height, 0)) *
                                           static_cast<std::size_t>(std::max(width, 0)))) {}

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint8_t> cells)
    : height_(height), width_(width), cells_(std::move(cells)) {
  if (height_ < 1 || width_ < 1) {
    throw std::invalid_argument("BinaryMask: extents must be >= 1, got " + std::to_string(height_) +
                                "x" + std::to_string(width_));
  }
  if (cells_.size() != static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_)) {
    throw std::invalid_argument("BinaryMask: cell count does not match extents");
  }
  for (auto& c : cells_) c = c ? 1 : 0;
}

BinaryMask BinaryMask::from_image(const GrayImage& image) {
  std::vector<std::uint8_t> cells(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), cells.begin(),
                 [](std::uint8_t v) { return static_cast<std::uint8_t>(v > 0); });
  return BinaryMask(image.height, image.width, std::move(cells));
}

BinaryMask BinaryMask::load(const std::filesystem::path& path) {
  const GrayImage image = read_gray_image(path);
  if (image.height < 1 || image.width < 1) throw DataError("empty image '" + path.string() + "'");
  return from_image(image);
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

BinaryMask BinaryMask::flipped_horizontal() const {
  BinaryMask out(height_, width_);
  for (int r = 0; r < height_; ++r)
    for (int c = 0; c < width_; ++c) out.set(r, width_ - 1 - c, at(r, c));
  return out;
}

BinaryMask BinaryMask::flipped_vertical() const {
  BinaryMask out(height_, width_);
  for (int r = 0; r < height_; ++r)
    for (int c = 0; c < width_; ++c) out.set(height_ - 1 - r, c, at(r, c));
  return out;
}

GrayImage BinaryMask::to_image() const {
  GrayImage img{height_, width_, std::vector<std::uint8_t>(cells_.size())};
  std::transform(cells_.begin(), cells_.end(), img.pixels.begin(),
                 [](std::uint8_t v) { return static_cast<std::uint8_t>(v ? 255 : 0); });
  return img;
}

std::string_view zone_code(Zone zone) {
  switch (zone) {
    case Zone::TL: return "TL";
    case Zone::TR: return "TR";
    case Zone::BL: return "BL";
    case Zone::BR: return "BR";
    case Zone::Center: return "CENTER";
    case Zone::Invalid: return "INVALID";
  }
  return "INVALID";
}

std::optional<Zone> zone_from_code(std::string_view code) {
  for (Zone z : {Zone::TL, Zone::TR, Zone::BL, Zone::BR, Zone::Center, Zone::Invalid}) {
    if (zone_code(z) == code) return z;
  }
  return std::nullopt;
}

std::string_view tau_mode_name(TauMode mode) {
  return mode == TauMode::Absolute ? "absolute" : "relative";
}

std::optional<TauMode> tau_mode_from_name(std::string_view name) {
  if (name == "absolute" || name == "abs") return TauMode::Absolute;
  if (name == "relative" || name == "rel") return TauMode::Relative;
  return std::nullopt;
}

double ZoneConfig::threshold_pixels(int height, int width) const {
  if (tau_mode == TauMode::Absolute) return tau;
  return tau * static_cast<double>(std::min(height, width));
}

void ZoneConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::invalid_argument("zone threshold tau must be a finite value > 0");
  }
}

std::vector<Pixel> foreground_pixels(const BinaryMask& mask) {
  std::vector<Pixel> out;
  for (int r = 0; r < mask.height(); ++r)
    for (int c = 0; c < mask.width(); ++c)
      if (mask.at(r, c)) out.push_back({r, c});
  return out;
}

std::optional<BoundingBox> bounding_box(const BinaryMask& mask) {
  std::optional<BoundingBox> box;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (!mask.at(r, c)) continue;
      if (!box) {
        box = BoundingBox{c, r, c, r};
        continue;
      }
      box->x_min = std::min(box->x_min, c);
      box->x_max = std::max(box->x_max, c);
      box->y_min = std::min(box->y_min, r);
      box->y_max = std::max(box->y_max, r);
    }
  }
  return box;
}

ZoneResult locate_zone(const BinaryMask& mask, const ZoneConfig& cfg) {
  cfg.validate();
  ZoneResult result;
  result.bbox = bounding_box(mask);
  if (!result.bbox) return result;

  const double x_c = result.bbox->center_x();
  const double y_c = result.bbox->center_y();
  const double x_img = mask.width() / 2.0;
  const double y_img = mask.height() / 2.0;
  const double dx = x_c - x_img;
  const double dy = y_c - y_img;
  const double d = std::sqrt(dx * dx + dy * dy);
  result.distance = d;

  // Branch order and strictness mirror the reference pseudocode.
  if (d <= cfg.threshold_pixels(mask.height(), mask.width())) {
    result.zone = Zone::Center;
  } else if (x_c < x_img && y_c < y_img) {
    result.zone = Zone::TL;
  } else if (x_c >= x_img && y_c < y_img) {
    result.zone = Zone::TR;
  } else if (x_c < x_img && y_c >= y_img) {
    result.zone = Zone::BL;
  } else {
    result.zone = Zone::BR;
  }
  return result;
}

}  // namespace posmed
