#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "posmed/mask_geometry.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("posmed_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double uniform_real(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Each cell is foreground with probability `density`.
inline std::vector<std::uint8_t> random_cells(std::mt19937_64& rng, int height, int width, double density) {
  std::bernoulli_distribution fg(density);
  std::vector<std::uint8_t> cells(static_cast<std::size_t>(height * width));
  for (auto& c : cells) c = fg(rng) ? 1 : 0;
  return cells;
}

inline posmed::BinaryMask rect_mask(int height, int width, int row0, int col0, int row1, int col1) {
  posmed::BinaryMask m(height, width);
  for (int r = row0; r <= row1; ++r)
    for (int c = col0; c <= col1; ++c) m.set(r, c);
  return m;
}

}  // namespace testing
