#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dyra/core.hpp"

namespace dyra {

/// 8-bit raster, row-major, interleaved channels (1 = gray, 3 = RGB).
struct RasterImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> samples;

  RasterImage() = default;
  RasterImage(int w, int h, int ch);

  std::uint8_t at(int x, int y, int c) const {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t& at(int x, int y, int c) {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// Bilinear resample to floor(phi*W) x floor(phi*H) with half-pixel center
/// alignment; rounding is half-away-from-zero for bit-exact output. phi = 1
/// returns a pixel-identical copy.
RasterImage rescale(const RasterImage& img, double phi, int threads = 1);

/// Box coordinates and sizes multiplied by phi.
std::vector<PlacedBox> rescale_boxes(std::span<const PlacedBox> boxes, double phi);

// Binary PPM (P6) / PGM (P5), maxval 255. The reader accepts comments and
// arbitrary whitespace in the header; the writer emits "P?\n<w> <h>\n255\n"
// followed by raw samples.
RasterImage read_pnm(const std::string& path);
void write_pnm(const RasterImage& img, const std::string& path);

}  // namespace dyra
