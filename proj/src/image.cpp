#include "oct/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "oct/errors.hpp"

namespace oct {

namespace {

int pnm_token(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comments, then reads one unsigned integer.
  for (;;) {
    int c = in.peek();
    if (c == EOF) throw IoError("truncated PGM header: " + path);
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    break;
  }
  long v = -1;
  in >> v;
  if (!in || v < 0) throw IoError("bad PGM header field: " + path);
  return int(v);
}

uint8_t quantize(double v) {
  const double r = std::lround(v);
  return uint8_t(r < 0 ? 0 : (r > 255 ? 255 : r));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp, png_const_charp msg) {
  throw IoError(std::string("libpng: ") + (msg ? msg : "unknown error"));
}
void png_quiet(png_structp, png_const_charp) {}

}  // namespace

Image read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '5')
    throw IoError("not a binary PGM (P5): " + path);
  const int w = pnm_token(in, path);
  const int h = pnm_token(in, path);
  const int maxval = pnm_token(in, path);
  if (w <= 0 || h <= 0) throw IoError("bad PGM dimensions: " + path);
  if (maxval <= 0 || maxval > 255)
    throw IoError("only 8-bit PGM supported: " + path);
  in.get();  // single whitespace byte after maxval
  std::vector<uint8_t> raw(size_t(h) * w);
  in.read(reinterpret_cast<char*>(raw.data()), long(raw.size()));
  if (in.gcount() != long(raw.size()))
    throw IoError("truncated PGM pixel data: " + path);
  Image img(h, w);
  for (size_t i = 0; i < raw.size(); ++i) img.px[i] = double(raw[i]);
  return img;
}

void write_pgm(const Image& img, const std::string& path) {
  contract(img.h > 0 && img.w > 0, "write_pgm: empty image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create " + path);
  out << "P5\n" << img.w << " " << img.h << "\n255\n";
  std::vector<uint8_t> raw(img.px.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = quantize(img.px[i]);
  out.write(reinterpret_cast<const char*>(raw.data()), long(raw.size()));
  if (!out) throw IoError("write failed: " + path);
}

Image read_png_gray(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           png_fail, png_quiet);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  try {
    png_init_io(png, f.get());
    png_read_info(png, info);
    const int w = int(png_get_image_width(png, info));
    const int h = int(png_get_image_height(png, info));
    const png_byte color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
      png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
        color == PNG_COLOR_TYPE_PALETTE)
      png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) != size_t(w))
      throw IoError("unexpected PNG row layout: " + path);
    std::vector<uint8_t> raw(size_t(h) * w);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) rows[size_t(y)] = raw.data() + size_t(y) * w;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    Image img(h, w);
    for (size_t i = 0; i < raw.size(); ++i) img.px[i] = double(raw[i]);
    return img;
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
}

namespace {

void write_png_raw(const std::string& path, int h, int w, int channels,
                   const uint8_t* data) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot create " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            png_fail, png_quiet);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  try {
    png_init_io(png, f.get());
    png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y)
      rows[size_t(y)] =
          const_cast<uint8_t*>(data) + size_t(y) * w * size_t(channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
}

}  // namespace

void write_png_gray(const Image& img, const std::string& path) {
  contract(img.h > 0 && img.w > 0, "write_png_gray: empty image");
  std::vector<uint8_t> raw(img.px.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = quantize(img.px[i]);
  write_png_raw(path, img.h, img.w, 1, raw.data());
}

void write_png_rgb(const RgbImage& img, const std::string& path) {
  contract(img.h > 0 && img.w > 0, "write_png_rgb: empty image");
  write_png_raw(path, img.h, img.w, 3, img.px.data());
}

namespace {
bool ends_with(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() &&
         s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}
}  // namespace

Image read_gray(const std::string& path) {
  if (ends_with(path, ".png")) return read_png_gray(path);
  if (ends_with(path, ".pgm")) return read_pgm(path);
  throw IoError("unsupported image extension: " + path);
}

void write_gray(const Image& img, const std::string& path) {
  if (ends_with(path, ".png")) return write_png_gray(img, path);
  if (ends_with(path, ".pgm")) return write_pgm(img, path);
  throw IoError("unsupported image extension: " + path);
}

}  // namespace oct
