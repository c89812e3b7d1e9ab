#include "oct/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "oct/errors.hpp"

namespace oct {

RoiFit fit_roi_center(const Image& img) {
  contract(img.h > 0 && img.w > 0, "fit_roi_center: empty image");
  std::vector<double> profile(static_cast<size_t>(img.h), 0.0);
  for (int y = 0; y < img.h; ++y) {
    double s = 0.0;
    for (int x = 0; x < img.w; ++x) s += img.at(y, x);
    profile[size_t(y)] = s / img.w;
  }
  const double floor = *std::min_element(profile.begin(), profile.end());

  auto moments = [&](double lo, double hi, RoiFit& fit) {
    double wsum = 0.0, first = 0.0;
    for (int y = 0; y < img.h; ++y) {
      if (y < lo || y > hi) continue;
      const double w = profile[size_t(y)] - floor;
      wsum += w;
      first += w * y;
    }
    if (wsum <= 1e-12) return false;
    fit.center = first / wsum;
    double second = 0.0;
    for (int y = 0; y < img.h; ++y) {
      if (y < lo || y > hi) continue;
      const double w = profile[size_t(y)] - floor;
      second += w * (y - fit.center) * (y - fit.center);
    }
    fit.sigma = std::sqrt(second / wsum);
    return true;
  };

  RoiFit fit;
  if (!moments(0.0, double(img.h - 1), fit)) {
    fit.center = 0.5 * (img.h - 1);
    fit.sigma = 0.0;
    fit.degenerate = true;
    return fit;
  }
  // One trim pass drops far-off bright specks (e.g. the scan bar at the top).
  RoiFit trimmed = fit;
  if (fit.sigma > 0.0 &&
      moments(fit.center - 3.0 * fit.sigma, fit.center + 3.0 * fit.sigma,
              trimmed))
    return trimmed;
  return fit;
}

Preprocessed preprocess_scan(const Image& src, int out_h, int out_w) {
  contract(out_h >= 2 && out_w >= 1, "preprocess: bad target size");
  if (src.w > out_w)
    throw DimensionError("scan is " + std::to_string(src.w) +
                         " columns wide; the model raster holds " +
                         std::to_string(out_w));

  const RoiFit fit = fit_roi_center(src);

  Preprocessed pre;
  pre.roi_degenerate = fit.degenerate;
  // Ties-to-even, so an exactly half-pixel miss maps to shift 0 and a
  // second alignment pass is a no-op instead of oscillating by one row.
  pre.shift = int(std::rint(0.5 * (out_h - 1) - fit.center));
  pre.source_w = src.w;
  pre.aligned = Image(out_h, out_w);

  double sum = 0.0, sq = 0.0;
  long n = 0;
  for (int y = 0; y < out_h; ++y) {
    const int sy = y - pre.shift;
    if (sy < 0 || sy >= src.h) continue;
    for (int x = 0; x < src.w; ++x) {
      const double v = src.at(sy, x);
      pre.aligned.at(y, x) = v;
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  const double mean = n > 0 ? sum / n : 0.0;
  double stdev = n > 0 ? std::sqrt(std::max(0.0, sq / n - mean * mean)) : 1.0;
  if (stdev < 1e-12) stdev = 1.0;

  pre.input.assign(size_t(2) * out_h * out_w, 0.0);
  for (int y = 0; y < out_h; ++y) {
    const int sy = y - pre.shift;
    const bool row_has_data = sy >= 0 && sy < src.h;
    for (int x = 0; x < out_w; ++x) {
      if (row_has_data && x < src.w)
        pre.input[size_t(y) * out_w + x] =
            (pre.aligned.at(y, x) - mean) / stdev;
      pre.input[(size_t(out_h) + y) * out_w + x] = double(y) / (out_h - 1);
    }
  }
  return pre;
}

GroundTruth transform_gt(const GroundTruth& src, const Preprocessed& pre,
                         int out_h) {
  src.check_shape();
  contract(src.width == pre.source_w, "transform_gt: scan/table width mismatch");
  const int out_w = pre.aligned.w;

  GroundTruth out = GroundTruth::zeros(src.boundaries, out_w);
  out.valid.assign(static_cast<size_t>(out_w), 0);
  for (int x = 0; x < out_w; ++x) {
    if (x >= src.width) continue;  // padded column: coords stay zero, invalid
    bool ok = src.valid[size_t(x)] != 0;
    for (int j = 0; j < src.boundaries; ++j) {
      const double moved = src.coords[size_t(j)][size_t(x)] + pre.shift;
      const long r = std::lround(moved);
      if (r < 0 || r > out_h - 1) ok = false;
      out.coords[size_t(j)][size_t(x)] =
          std::clamp(moved, 0.0, double(out_h - 1));
    }
    out.valid[size_t(x)] = ok ? 1 : 0;
  }
  return out;
}

}  // namespace oct
