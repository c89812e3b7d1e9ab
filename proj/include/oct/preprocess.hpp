#pragma once

#include <cstdint>
#include <vector>

#include "oct/groundtruth.hpp"
#include "oct/image.hpp"

namespace oct {

// Retina location along the depth axis, from the intensity-weighted first
// and second moments of the row profile (background floor subtracted, one
// 3-sigma trim pass). Degenerate profiles fall back to the raster middle.
struct RoiFit {
  double center = 0.0;
  double sigma = 0.0;
  bool degenerate = false;
};

RoiFit fit_roi_center(const Image& img);

// A scan aligned onto the model raster: content shifted so the retina sits
// mid-height, rows cropped or zero-filled to out_h, columns zero-padded on
// the right to out_w (a wider source is an error). `input` is the model's
// two-channel tensor [2, H, W]: per-scan standardized intensity over the
// source pixels (padding stays zero) and the row cue y / (H - 1).
struct Preprocessed {
  Image aligned;              // raw intensities on the target raster
  std::vector<double> input;  // [2, out_h, out_w]
  int shift = 0;              // rows the content moved down (may be negative)
  int source_w = 0;           // columns carrying data; the rest are padding
  bool roi_degenerate = false;
};

Preprocessed preprocess_scan(const Image& src, int out_h, int out_w);

// Boundary rows follow the same shift. Columns whose boundaries leave the
// raster, and padded columns, are marked invalid; their coordinates are
// clamped so encodings stay well formed.
GroundTruth transform_gt(const GroundTruth& src, const Preprocessed& pre,
                         int out_h);

// Back to source-scan rows for reporting.
inline double untransform_row(double row, const Preprocessed& pre) {
  return row - pre.shift;
}

}  // namespace oct
