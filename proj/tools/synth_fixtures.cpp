// Writes the synthetic source bundle used by the tests and the README walk-through.
//
//   posmed_synth [<bundle-root>]      (default fixtures/synthetic)
//
// Every raster is a deterministic function of its sample index, so rerunning
// the tool reproduces the committed files byte for byte.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>

#include "posmed/image_io.hpp"

namespace fs = std::filesystem;
using posmed::GrayImage;

namespace {

int pick(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

struct Blob {
  double cx, cy;  // fractions of width / height
  double rx, ry;  // fractions of width / height
};

// Zone anchors cycle TL, TR, BL, BR, CENTER.
Blob blob_for(int index, std::mt19937_64& rng) {
  static constexpr double kAnchors[5][2] = {{0.25, 0.25}, {0.75, 0.25}, {0.25, 0.75}, {0.75, 0.75}, {0.5, 0.5}};
  const auto& a = kAnchors[index % 5];
  const bool center = index % 5 == 4;
  const double j = center ? 0.0 : 0.01;
  return {a[0] + j * pick(rng, -3, 3), a[1] + j * pick(rng, -3, 3), 0.08 + 0.01 * (index % 4), 0.07 + 0.01 * (index % 3)};
}

GrayImage mask_image(int h, int w, const Blob& b) {
  GrayImage m{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w), 0)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = (x + 0.5 - b.cx * w) / (b.rx * w);
      const double dy = (y + 0.5 - b.cy * h) / (b.ry * h);
      if (dx * dx + dy * dy <= 1.0) m.pixels[static_cast<std::size_t>(y * w + x)] = 255;
    }
  }
  return m;
}

GrayImage scan_image(int h, int w, const Blob& b, std::mt19937_64& rng) {
  GrayImage img{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w))};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = (x + 0.5 - b.cx * w) / (b.rx * w);
      const double dy = (y + 0.5 - b.cy * h) / (b.ry * h);
      const double lesion = 120.0 * std::exp(-(dx * dx + dy * dy));
      const double v = 40.0 + 60.0 * y / h + lesion + pick(rng, 0, 24);
      img.pixels[static_cast<std::size_t>(y * w + x)] = static_cast<std::uint8_t>(std::min(255.0, v));
    }
  }
  return img;
}

struct Source {
  const char* adapter;
  int train;
  int test;  // 0 means no split directories
  int height;
  int width;
  const char* mask_suffix;
};

void write_paired(const fs::path& root, const Source& s, int& counter, std::mt19937_64& rng) {
  auto emit = [&](const fs::path& dir, int n) {
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    for (int i = 0; i < n; ++i) {
      const std::string stem = std::string(s.adapter) + "_" + std::to_string(100 + i);
      const Blob b = blob_for(counter++, rng);
      posmed::write_png(dir / "images" / (stem + ".png"), scan_image(s.height, s.width, b, rng));
      posmed::write_png(dir / "masks" / (stem + s.mask_suffix + ".png"), mask_image(s.height, s.width, b));
    }
  };
  if (s.test == 0) {
    emit(root / s.adapter, s.train);
  } else {
    emit(root / s.adapter / "train", s.train);
    emit(root / s.adapter / "test", s.test);
  }
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? argv[1] : "fixtures/synthetic";
  fs::remove_all(root);
  std::mt19937_64 rng(20250101);
  int counter = 0;

  // 40 valid samples: xray 12, ct 6, endoscopy 8, mri 6, ultrasound 4, rgb 4.
  const Source paired[] = {
      {"lung_xray", 9, 3, 64, 64, ""}, {"lung_ct", 6, 0, 48, 64, ""}, {"kvasir", 6, 0, 56, 56, ""},
      {"cvc300", 2, 0, 40, 48, ""},    {"brain_mri", 6, 0, 64, 64, ""}, {"isic", 4, 0, 60, 80, "_segmentation"},
  };
  for (const Source& s : paired) write_paired(root, s, counter, rng);

  // BUSI class directories; the second benign case has a second mask file
  // whose foreground is unioned with the first.
  const char* classes[] = {"benign", "malignant"};
  for (int c = 0; c < 2; ++c) {
    const fs::path dir = root / "busi" / classes[c];
    fs::create_directories(dir);
    for (int i = 0; i < 2; ++i) {
      const std::string stem = std::string(classes[c]) + " (" + std::to_string(i + 1) + ")";
      const Blob b = blob_for(counter++, rng);
      posmed::write_png(dir / (stem + ".png"), scan_image(64, 64, b, rng));
      posmed::write_png(dir / (stem + "_mask.png"), mask_image(64, 64, b));
      if (c == 0 && i == 1) {
        const Blob extra{b.cx, b.cy + 0.05, 0.05, 0.05};
        posmed::write_png(dir / (stem + "_mask_1.png"), mask_image(64, 64, extra));
      }
    }
  }

  // Two defective samples that ingestion must quarantine.
  {
    const Blob b = blob_for(0, rng);
    posmed::write_png(root / "kvasir" / "images" / "kvasir_900.png", scan_image(56, 56, b, rng));
    posmed::write_png(root / "kvasir" / "masks" / "kvasir_900.png",
                      GrayImage{56, 56, std::vector<std::uint8_t>(56 * 56, 0)});
    posmed::write_png(root / "brain_mri" / "images" / "brain_mri_900.png", scan_image(64, 64, b, rng));
    posmed::write_png(root / "brain_mri" / "masks" / "brain_mri_900.png", mask_image(32, 32, b));
  }

  std::cout << "wrote synthetic bundle to " << root.string() << "\n";
  return 0;
}
