#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "oct/errors.hpp"

namespace oct {

// Boundary row positions for one B-scan: coords[j][x] is the (sub-pixel) row
// of boundary j at column x, top to bottom. valid[x] marks columns whose
// coordinates are trustworthy; encodings are still produced everywhere, the
// flag only gates losses and metrics.
struct GroundTruth {
  int boundaries = 0, width = 0;
  std::vector<std::vector<double>> coords;  // [B][W]
  std::vector<uint8_t> valid;               // [W]

  static GroundTruth zeros(int b, int w) {
    GroundTruth gt;
    gt.boundaries = b;
    gt.width = w;
    gt.coords.assign(static_cast<size_t>(b),
                     std::vector<double>(static_cast<size_t>(w), 0.0));
    gt.valid.assign(static_cast<size_t>(w), 1);
    return gt;
  }

  void check_shape() const {
    contract(boundaries > 0 && width > 0, "ground truth: empty");
    contract(long(coords.size()) == boundaries &&
                 long(valid.size()) == width,
             "ground truth: inconsistent dimensions");
    for (const auto& row : coords)
      contract(long(row.size()) == width, "ground truth: ragged coords");
  }

  // Subset of boundaries, e.g. the reduced three-interface variant.
  GroundTruth select(const std::vector<int>& indices) const {
    GroundTruth out;
    out.boundaries = int(indices.size());
    out.width = width;
    out.valid = valid;
    for (int j : indices) {
      contract(j >= 0 && j < boundaries, "ground truth: bad boundary index");
      out.coords.push_back(coords[size_t(j)]);
    }
    return out;
  }
};

inline int rounded_row(double v) { return int(std::lround(v)); }

// Boundaries must stay inside the raster and ordered top to bottom after
// rounding; otherwise the region encoding would not partition the columns.
inline void validate_ordering(const GroundTruth& gt, int height) {
  gt.check_shape();
  for (int x = 0; x < gt.width; ++x) {
    int prev = 0;
    for (int j = 0; j < gt.boundaries; ++j) {
      const int r = rounded_row(gt.coords[size_t(j)][size_t(x)]);
      if (r < 0 || r > height - 1)
        throw DataError("boundary " + std::to_string(j) + " leaves the raster at column " +
                        std::to_string(x));
      if (r < prev)
        throw DataError("boundary ordering violated at column " +
                        std::to_string(x) + " (boundary " + std::to_string(j) +
                        ")");
      prev = r;
    }
  }
}

// Region stack [B+1, H, W]: channel r covers rows [round L(r-1), round L(r))
// with sentinels 0 and H, so the channels partition every column.
inline std::vector<uint8_t> encode_regions(const GroundTruth& gt, int height) {
  validate_ordering(gt, height);
  const int r_count = gt.boundaries + 1, w = gt.width;
  std::vector<uint8_t> out(size_t(r_count) * height * w, 0);
  for (int x = 0; x < w; ++x) {
    int lo = 0;
    for (int r = 0; r < r_count; ++r) {
      const int hi = r < gt.boundaries
                         ? rounded_row(gt.coords[size_t(r)][size_t(x)])
                         : height;
      for (int y = lo; y < hi; ++y)
        out[(size_t(r) * height + y) * w + x] = 1;
      lo = hi;
    }
  }
  return out;
}

// Edge map [H, W]: a one at every rounded boundary row (coincident
// boundaries collapse to a single one).
inline std::vector<uint8_t> encode_edge(const GroundTruth& gt, int height) {
  validate_ordering(gt, height);
  std::vector<uint8_t> out(size_t(height) * gt.width, 0);
  for (int j = 0; j < gt.boundaries; ++j)
    for (int x = 0; x < gt.width; ++x)
      out[size_t(rounded_row(gt.coords[size_t(j)][size_t(x)])) * gt.width + x] = 1;
  return out;
}

// Recovers rounded boundary rows from a region stack: boundary j sits at the
// first row whose region index reaches j+1. Handles empty regions, so
// decode(encode(L)) == round(L) column by column.
inline std::vector<std::vector<int>> decode_regions(
    const std::vector<uint8_t>& stack, int regions, int height, int width) {
  contract(long(stack.size()) == long(regions) * height * width,
           "decode_regions: size mismatch");
  const int b_count = regions - 1;
  std::vector<std::vector<int>> rows(
      static_cast<size_t>(b_count),
      std::vector<int>(static_cast<size_t>(width), height));
  for (int x = 0; x < width; ++x) {
    int j = 0;
    for (int y = 0; y < height && j < b_count; ++y) {
      int idx = -1;
      for (int r = 0; r < regions; ++r)
        if (stack[(size_t(r) * height + y) * width + x]) {
          idx = r;
          break;
        }
      contract(idx >= 0, "decode_regions: row belongs to no region");
      while (j < idx) rows[size_t(j++)][size_t(x)] = y;
    }
    // Boundaries at or below the last occupied row sit at height boundary
    // only if their region never starts; encode forbids that, but decode
    // stays defensive and reports `height`.
  }
  return rows;
}

}  // namespace oct
