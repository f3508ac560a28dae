#include "dyra/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "dyra/parallel.hpp"

namespace dyra {

RasterImage::RasterImage(int w, int h, int ch) : width(w), height(h), channels(ch) {
  if (w < 1 || h < 1 || (ch != 1 && ch != 3)) {
    throw std::invalid_argument("RasterImage: bad dimensions or channel count");
  }
  samples.assign(static_cast<std::size_t>(w) * h * ch, 0);
}

RasterImage rescale(const RasterImage& img, double phi, int threads) {
  if (!(phi > 0.0) || phi > 10.0) throw std::invalid_argument("rescale: phi outside (0, 10]");
  const int out_w = static_cast<int>(std::floor(phi * img.width));
  const int out_h = static_cast<int>(std::floor(phi * img.height));
  if (out_w < 1 || out_h < 1) throw std::invalid_argument("rescale: zero-dimension output");

  RasterImage out(out_w, out_h, img.channels);
  const double sx_ratio = static_cast<double>(img.width) / out_w;
  const double sy_ratio = static_cast<double>(img.height) / out_h;
  const int ch = img.channels;

  parallel_for(out_h, threads, [&](int y) {
    const double sy = std::clamp((y + 0.5) * sy_ratio - 0.5, 0.0,
                                 static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fy = sy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double sx = std::clamp((x + 0.5) * sx_ratio - 0.5, 0.0,
                                   static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double fx = sx - x0;
      for (int c = 0; c < ch; ++c) {
        const double v = (1.0 - fx) * (1.0 - fy) * img.at(x0, y0, c) +
                         fx * (1.0 - fy) * img.at(x1, y0, c) +
                         (1.0 - fx) * fy * img.at(x0, y1, c) +
                         fx * fy * img.at(x1, y1, c);
        // round half away from zero; v is non-negative here
        const double r = std::floor(v + 0.5);
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
      }
    }
  });
  return out;
}

std::vector<PlacedBox> rescale_boxes(std::span<const PlacedBox> boxes, double phi) {
  std::vector<PlacedBox> out;
  out.reserve(boxes.size());
  for (const PlacedBox& b : boxes) {
    out.push_back(PlacedBox{b.x * phi, b.y * phi, b.width * phi, b.height * phi});
  }
  return out;
}

namespace {

int read_pnm_int(std::istream& in, const std::string& path) {
  // skip whitespace and '#' comments
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c)) {
    throw std::runtime_error("read_pnm: malformed header in " + path);
  }
  long value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    if (value > 1'000'000'000L) throw std::runtime_error("read_pnm: header value overflow");
    c = in.get();
  }
  if (c != EOF) in.unget();
  return static_cast<int>(value);
}

}  // namespace

RasterImage read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pnm: cannot open " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  int channels = 0;
  if (magic[0] == 'P' && magic[1] == '5') {
    channels = 1;
  } else if (magic[0] == 'P' && magic[1] == '6') {
    channels = 3;
  } else {
    throw std::runtime_error("read_pnm: not a binary PGM/PPM file: " + path);
  }
  const int w = read_pnm_int(in, path);
  const int h = read_pnm_int(in, path);
  const int maxval = read_pnm_int(in, path);
  if (w < 1 || h < 1) throw std::runtime_error("read_pnm: bad dimensions in " + path);
  if (maxval != 255) throw std::runtime_error("read_pnm: only maxval 255 is supported");
  in.get();  // single whitespace byte after maxval

  RasterImage img(w, h, channels);
  in.read(reinterpret_cast<char*>(img.samples.data()),
          static_cast<std::streamsize>(img.samples.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.samples.size())) {
    throw std::runtime_error("read_pnm: truncated pixel data in " + path);
  }
  return img;
}

void write_pnm(const RasterImage& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3) {
    throw std::invalid_argument("write_pnm: channels must be 1 or 3");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pnm: cannot open " + path);
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.samples.data()),
            static_cast<std::streamsize>(img.samples.size()));
  if (!out) throw std::runtime_error("write_pnm: write failed for " + path);
}

}  // namespace dyra
