#include "oct/augment.hpp"

#include <algorithm>
#include <cmath>

#include "oct/errors.hpp"

namespace oct {

void AugmentConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("augment config: " + what);
  };
  need(p_hflip >= 0.0 && p_hflip <= 1.0, "p_hflip out of range");
  need(p_vflip >= 0.0 && p_vflip <= 1.0, "p_vflip out of range");
  need(max_rotate_deg >= 0.0 && max_rotate_deg <= 20.0,
       "max_rotate_deg out of range");
  need(min_scale >= 0.5 && min_scale <= max_scale && max_scale <= 2.0,
       "scale range out of order");
  need(max_shift_rows >= 0 && max_shift_cols >= 0, "negative shift bound");
  need(p_roll >= 0.0 && p_roll <= 1.0, "p_roll out of range");
  need(roll_amp >= 0.0, "negative roll amplitude");
  need(roll_min_period_frac > 0.0 &&
           roll_min_period_frac <= roll_max_period_frac &&
           roll_max_period_frac <= 4.0,
       "roll period range out of order");
}

Json augment_config_to_json(const AugmentConfig& c) {
  Json j;
  j["p_hflip"] = c.p_hflip;
  j["p_vflip"] = c.p_vflip;
  j["max_rotate_deg"] = c.max_rotate_deg;
  j["min_scale"] = c.min_scale;
  j["max_scale"] = c.max_scale;
  j["max_shift_rows"] = c.max_shift_rows;
  j["max_shift_cols"] = c.max_shift_cols;
  j["p_roll"] = c.p_roll;
  j["roll_amp"] = c.roll_amp;
  j["roll_min_period_frac"] = c.roll_min_period_frac;
  j["roll_max_period_frac"] = c.roll_max_period_frac;
  return j;
}

AugmentConfig augment_config_from_json(const Json& j, const std::string& ctx) {
  reject_unknown_keys(j,
                      {"p_hflip", "p_vflip", "max_rotate_deg", "min_scale",
                       "max_scale", "max_shift_rows", "max_shift_cols",
                       "p_roll", "roll_amp", "roll_min_period_frac",
                       "roll_max_period_frac"},
                      ctx);
  AugmentConfig c;
  c.p_hflip = json_get_or(j, "p_hflip", c.p_hflip, ctx);
  c.p_vflip = json_get_or(j, "p_vflip", c.p_vflip, ctx);
  c.max_rotate_deg = json_get_or(j, "max_rotate_deg", c.max_rotate_deg, ctx);
  c.min_scale = json_get_or(j, "min_scale", c.min_scale, ctx);
  c.max_scale = json_get_or(j, "max_scale", c.max_scale, ctx);
  c.max_shift_rows = json_get_or(j, "max_shift_rows", c.max_shift_rows, ctx);
  c.max_shift_cols = json_get_or(j, "max_shift_cols", c.max_shift_cols, ctx);
  c.p_roll = json_get_or(j, "p_roll", c.p_roll, ctx);
  c.roll_amp = json_get_or(j, "roll_amp", c.roll_amp, ctx);
  c.roll_min_period_frac =
      json_get_or(j, "roll_min_period_frac", c.roll_min_period_frac, ctx);
  c.roll_max_period_frac =
      json_get_or(j, "roll_max_period_frac", c.roll_max_period_frac, ctx);
  c.validate();
  return c;
}

AugmentParams sample_augment(const AugmentConfig& c, int width, Rng& rng) {
  c.validate();
  AugmentParams p;
  p.hflip = rng.bernoulli(c.p_hflip);
  p.vflip = rng.bernoulli(c.p_vflip);
  p.rotate_deg = rng.uniform(-c.max_rotate_deg, c.max_rotate_deg);
  p.scale = rng.uniform(c.min_scale, c.max_scale);
  p.shift_rows = int(rng.uniform_int(2 * c.max_shift_rows + 1)) - c.max_shift_rows;
  p.shift_cols = int(rng.uniform_int(2 * c.max_shift_cols + 1)) - c.max_shift_cols;
  p.roll = rng.bernoulli(c.p_roll);
  if (p.roll) {
    p.roll_amp = rng.uniform(0.0, c.roll_amp);
    p.roll_period = rng.uniform(c.roll_min_period_frac, c.roll_max_period_frac) *
                    std::max(1, width);
    p.roll_phase = rng.uniform(0.0, 2.0 * M_PI);
  }
  return p;
}

namespace {

void hflip_inplace(Image& img, GroundTruth& gt) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w / 2; ++x)
      std::swap(img.at(y, x), img.at(y, img.w - 1 - x));
  for (auto& row : gt.coords) std::reverse(row.begin(), row.end());
  std::reverse(gt.valid.begin(), gt.valid.end());
}

void vflip_inplace(Image& img, GroundTruth& gt) {
  for (int y = 0; y < img.h / 2; ++y)
    for (int x = 0; x < img.w; ++x)
      std::swap(img.at(y, x), img.at(img.h - 1 - y, x));
  std::reverse(gt.coords.begin(), gt.coords.end());
  for (auto& row : gt.coords)
    for (auto& v : row) v = (img.h - 1.0) - v;
}

// Region index per pixel: the count of boundaries at or above the row,
// using the same rounding as the mask encodings.
std::vector<int> region_map(const GroundTruth& gt, int h) {
  std::vector<int> m(size_t(h) * gt.width);
  for (int x = 0; x < gt.width; ++x) {
    int j = 0;
    for (int y = 0; y < h; ++y) {
      while (j < gt.boundaries &&
             rounded_row(gt.coords[size_t(j)][size_t(x)]) <= y)
        ++j;
      m[size_t(y) * gt.width + x] = j;
    }
  }
  return m;
}

void affine_inplace(Image& img, GroundTruth& gt, double rotate_deg,
                    double scale) {
  const int h = img.h, w = img.w;
  const double th = rotate_deg * M_PI / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double cy = 0.5 * (h - 1), cx = 0.5 * (w - 1);
  // target = C + scale * M * (source - C); sample via the inverse.
  auto source_of = [&](double ty, double tx, double& sy, double& sx) {
    const double dy = (ty - cy) / scale, dx = (tx - cx) / scale;
    sy = cy + cs * dy - sn * dx;
    sx = cx + sn * dy + cs * dx;
  };

  Image warped(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double sy, sx;
      source_of(y, x, sy, sx);
      const int y0 = int(std::floor(sy)), x0 = int(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      double acc = 0.0;
      for (int oy = 0; oy < 2; ++oy)
        for (int ox = 0; ox < 2; ++ox) {
          const int yy = y0 + oy, xx = x0 + ox;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const double wgt = (oy ? fy : 1.0 - fy) * (ox ? fx : 1.0 - fx);
          acc += wgt * img.at(yy, xx);
        }
      warped.at(y, x) = acc;
    }

  const std::vector<int> m = region_map(gt, h);
  const std::vector<uint8_t> src_valid = gt.valid;
  const int b = gt.boundaries;
  for (int x = 0; x < w; ++x) {
    int j = 0;
    bool ok = true;  // judged at each boundary crossing's source column
    for (int y = 0; y < h && j < b; ++y) {
      double sy, sx;
      source_of(y, x, sy, sx);
      const long iy = std::lround(sy), ix = std::lround(sx);
      const bool inside = iy >= 0 && iy < h && ix >= 0 && ix < w;
      const int cy_i = int(std::clamp(iy, 0l, long(h - 1)));
      const int cx_i = int(std::clamp(ix, 0l, long(w - 1)));
      const int r = m[size_t(cy_i) * w + cx_i];
      while (j < std::min(r, b)) {
        gt.coords[size_t(j)][size_t(x)] = y;
        ok = ok && inside && src_valid[size_t(cx_i)] != 0;
        if (y == 0) ok = false;  // crossing at or above the top: out of view
        ++j;
      }
    }
    for (; j < b; ++j) {
      gt.coords[size_t(j)][size_t(x)] = h - 1.0;
      ok = false;  // the boundary left the raster
    }
    gt.valid[size_t(x)] = ok ? 1 : 0;
  }
  img = std::move(warped);
}

void shift_inplace(Image& img, GroundTruth& gt, int dy, int dx) {
  const int h = img.h, w = img.w;
  Image moved(h, w);
  for (int y = 0; y < h; ++y) {
    const int sy = y - dy;
    if (sy < 0 || sy >= h) continue;
    for (int x = 0; x < w; ++x) {
      const int sx = x - dx;
      if (sx >= 0 && sx < w) moved.at(y, x) = img.at(sy, sx);
    }
  }
  img = std::move(moved);

  GroundTruth out = GroundTruth::zeros(gt.boundaries, w);
  out.valid.assign(static_cast<size_t>(w), 0);
  for (int x = 0; x < w; ++x) {
    const int sx = x - dx;
    if (sx < 0 || sx >= w) continue;  // entered from outside: unknown
    bool ok = gt.valid[size_t(sx)] != 0;
    for (int j = 0; j < gt.boundaries; ++j) {
      const double v = gt.coords[size_t(j)][size_t(sx)] + dy;
      const long r = std::lround(v);
      if (r < 0 || r > h - 1) ok = false;
      out.coords[size_t(j)][size_t(x)] = std::clamp(v, 0.0, h - 1.0);
    }
    out.valid[size_t(x)] = ok ? 1 : 0;
  }
  gt = std::move(out);
}

void roll_inplace(Image& img, GroundTruth& gt, double amp, double period,
                  double phase) {
  const int h = img.h, w = img.w;
  std::vector<int> disp(static_cast<size_t>(w));
  for (int x = 0; x < w; ++x)
    disp[size_t(x)] =
        int(std::lround(amp * std::sin(2.0 * M_PI * x / period + phase)));

  Image rolled(h, w);
  for (int x = 0; x < w; ++x) {
    const int d = ((disp[size_t(x)] % h) + h) % h;
    for (int y = 0; y < h; ++y)
      rolled.at(y, x) = img.at((y - d + h) % h, x);
  }
  img = std::move(rolled);

  for (int x = 0; x < w; ++x) {
    const int d = disp[size_t(x)];
    auto& valid = gt.valid[size_t(x)];
    bool wrapped = false;
    for (int j = 0; j < gt.boundaries; ++j) {
      double v = gt.coords[size_t(j)][size_t(x)] + d;
      if (std::lround(v) < 0 || std::lround(v) > h - 1) wrapped = true;
      v -= h * std::floor(v / h);                    // into [0, h)
      gt.coords[size_t(j)][size_t(x)] = std::min(v, h - 1.0);
    }
    if (wrapped) {
      valid = 0;
      // A wrapped column is a circular permutation of an ordered stack;
      // re-sort so the table stays encodable.
      std::vector<double> col(static_cast<size_t>(gt.boundaries));
      for (int j = 0; j < gt.boundaries; ++j)
        col[size_t(j)] = gt.coords[size_t(j)][size_t(x)];
      std::sort(col.begin(), col.end());
      for (int j = 0; j < gt.boundaries; ++j)
        gt.coords[size_t(j)][size_t(x)] = col[size_t(j)];
    }
  }
}

}  // namespace

Augmented apply_augment(const Image& img, const GroundTruth& gt,
                        const AugmentParams& p) {
  gt.check_shape();
  contract(gt.width == img.w, "augment: image/table width mismatch");

  Augmented out;
  out.image = img;
  out.gt = gt;
  out.params = p;

  if (p.hflip) hflip_inplace(out.image, out.gt);
  if (p.vflip) vflip_inplace(out.image, out.gt);
  if (std::abs(p.rotate_deg) > 1e-12 || std::abs(p.scale - 1.0) > 1e-12)
    affine_inplace(out.image, out.gt, p.rotate_deg, p.scale);
  if (p.shift_rows != 0 || p.shift_cols != 0)
    shift_inplace(out.image, out.gt, p.shift_rows, p.shift_cols);
  if (p.roll && p.roll_amp > 0.0)
    roll_inplace(out.image, out.gt, p.roll_amp, p.roll_period, p.roll_phase);
  return out;
}

Augmented augment(const Image& img, const GroundTruth& gt,
                  const AugmentConfig& c, Rng& rng) {
  for (int attempt = 0; attempt < 50; ++attempt) {
    const AugmentParams p = sample_augment(c, img.w, rng);
    Augmented out = apply_augment(img, gt, p);
    long ok = 0;
    for (uint8_t v : out.gt.valid) ok += v;
    if (2 * ok >= img.w) return out;
  }
  return apply_augment(img, gt, AugmentParams{});
}

}  // namespace oct
