#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace oct {

// Grayscale raster, row-major, intensities in 8-bit units (0..255) but kept
// as double so processing never quantizes until write time.
struct Image {
  int h = 0, w = 0;
  std::vector<double> px;

  Image() = default;
  Image(int h_, int w_, double fill = 0.0)
      : h(h_), w(w_), px(size_t(h_) * size_t(w_), fill) {}

  double& at(int y, int x) { return px[size_t(y) * w + x]; }
  double at(int y, int x) const { return px[size_t(y) * w + x]; }
};

struct RgbImage {
  int h = 0, w = 0;
  std::vector<uint8_t> px;  // h*w*3, interleaved

  RgbImage() = default;
  RgbImage(int h_, int w_) : h(h_), w(w_), px(size_t(h_) * w_ * 3, 0) {}

  uint8_t* at(int y, int x) { return px.data() + (size_t(y) * w + x) * 3; }
};

Image read_pgm(const std::string& path);
void write_pgm(const Image& img, const std::string& path);

Image read_png_gray(const std::string& path);
void write_png_gray(const Image& img, const std::string& path);
void write_png_rgb(const RgbImage& img, const std::string& path);

// Extension-dispatched loader/saver for .pgm / .png grayscale pairs.
Image read_gray(const std::string& path);
void write_gray(const Image& img, const std::string& path);

}  // namespace oct
