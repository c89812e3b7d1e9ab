#include "oct/phantom.hpp"

#include <algorithm>
#include <cmath>

namespace oct {

namespace {

// Mean interface depths as fractions of the raster height, and the matching
// nine region reflectivities (vitreous above the first interface, choroid
// below the last), in 8-bit units.
constexpr std::array<double, 8> kDepthFractions = {0.30, 0.38, 0.45, 0.52,
                                                   0.60, 0.68, 0.74, 0.80};
constexpr std::array<double, 9> kReflectivity = {18.0,  150.0, 95.0,
                                                 60.0,  115.0, 55.0,
                                                 135.0, 190.0, 75.0};

constexpr int kBoundaries = 8;

}  // namespace

void PhantomConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("phantom config: " + what);
  };
  need(height >= 32 && width >= 32, "raster must be at least 32x32");
  need(slices >= 1, "need at least one slice");
  need(min_gap >= 1.0, "min_gap must be at least one pixel");
  need(speckle_var >= 0.0 && speckle_var < 1.0, "speckle_var out of range");
  need(max_shadow_bands >= 0, "max_shadow_bands must be non-negative");
  need(drusen_fraction >= 0.0 && drusen_fraction <= 1.0,
       "drusen_fraction out of range");
}

Json phantom_config_to_json(const PhantomConfig& c) {
  Json j;
  j["height"] = c.height;
  j["width"] = c.width;
  j["slices"] = c.slices;
  j["min_gap"] = c.min_gap;
  j["speckle_var"] = c.speckle_var;
  j["max_shadow_bands"] = c.max_shadow_bands;
  j["drusen_fraction"] = c.drusen_fraction;
  return j;
}

PhantomConfig phantom_config_from_json(const Json& j, const std::string& ctx) {
  reject_unknown_keys(j,
                      {"height", "width", "slices", "min_gap", "speckle_var",
                       "max_shadow_bands", "drusen_fraction"},
                      ctx);
  PhantomConfig c;
  c.height = json_get_or(j, "height", c.height, ctx);
  c.width = json_get_or(j, "width", c.width, ctx);
  c.slices = json_get_or(j, "slices", c.slices, ctx);
  c.min_gap = json_get_or(j, "min_gap", c.min_gap, ctx);
  c.speckle_var = json_get_or(j, "speckle_var", c.speckle_var, ctx);
  c.max_shadow_bands =
      json_get_or(j, "max_shadow_bands", c.max_shadow_bands, ctx);
  c.drusen_fraction = json_get_or(j, "drusen_fraction", c.drusen_fraction, ctx);
  c.validate();
  return c;
}

const std::vector<std::string>& boundary_names() {
  static const std::vector<std::string> names = {
      "Vitreous-RNFL", "RNFL-GCL&IPL", "GCL&IPL-INL", "INL-OPL",
      "OPL-ONL&IS",    "ONL&IS-OS",    "OS-RPE",      "RPE-Choroid"};
  return names;
}

const std::vector<int>& mixed_boundary_indices() {
  static const std::vector<int> idx = {0, 6, 7};
  return idx;
}

std::vector<std::vector<double>> sample_boundary_curves(
    const PhantomConfig& cfg, const std::vector<double>& depth_fractions,
    Rng& rng, bool drusen) {
  contract(long(depth_fractions.size()) == kBoundaries,
           "phantom: need eight depth fractions");
  const int w = cfg.width;
  const double h = cfg.height;

  // Wiggle budget per interface, derived from the tighter of its two mean
  // gaps so neighbors can never close below min_gap: each curve stays within
  // 0.75 * budget of its mean, and budgets sum to under the available slack.
  std::vector<double> budget(kBoundaries);
  for (int j = 0; j < kBoundaries; ++j) {
    const double above = j == 0 ? depth_fractions[0] * h - cfg.min_gap
                                : (depth_fractions[size_t(j)] -
                                   depth_fractions[size_t(j - 1)]) *
                                      h;
    const double below = j == kBoundaries - 1
                             ? h - 1.0 - cfg.min_gap -
                                   depth_fractions[size_t(j)] * h
                             : (depth_fractions[size_t(j + 1)] -
                                depth_fractions[size_t(j)]) *
                                   h;
    const double tight = std::min(above, below);
    if (tight < cfg.min_gap + 0.5)
      throw DataError(
          "phantom: raster height too small for the interface stack (gap " +
          std::to_string(tight) + "px)");
    budget[size_t(j)] = 0.5 * (tight - cfg.min_gap);
  }

  std::vector<std::vector<double>> curves(
      kBoundaries, std::vector<double>(static_cast<size_t>(w)));

  // Guaranteed to satisfy the gap by the budget above; the rejection loop
  // stays as a safety net against numeric edge cases.
  for (int attempt = 0;; ++attempt) {
    contract(attempt < 200, "phantom: could not satisfy the gap constraint");
    for (int j = 0; j < kBoundaries; ++j) {
      const double bj = budget[size_t(j)];
      const double tilt = rng.uniform(-0.3, 0.3) * bj;
      double amp[3], phase[3];
      for (int s = 0; s < 3; ++s) {
        amp[s] = rng.uniform(0.0, 0.2) * bj;
        phase[s] = rng.uniform(0.0, 2.0 * M_PI);
      }
      for (int x = 0; x < w; ++x) {
        const double u = double(x) / w;
        double v = depth_fractions[size_t(j)] * h + tilt * (u - 0.5);
        for (int s = 0; s < 3; ++s)
          v += amp[s] * std::sin(2.0 * M_PI * (s + 1) * u + phase[s]);
        curves[size_t(j)][size_t(x)] = v;
      }
    }
    bool ok = true;
    for (int j = 0; ok && j < kBoundaries; ++j)
      for (int x = 0; x < w; ++x) {
        const double above = j == 0 ? cfg.min_gap : curves[size_t(j - 1)][size_t(x)] + cfg.min_gap;
        if (curves[size_t(j)][size_t(x)] < above ||
            curves[size_t(j)][size_t(x)] > h - 1.0 - cfg.min_gap) {
          ok = false;
          break;
        }
      }
    if (ok) break;
  }

  if (drusen) {
    // Dome-shaped elevations push the two outer interfaces upward; ordering
    // against the interface above is clamped back to the minimum gap.
    const int bumps = 1 + int(rng.uniform_int(3));
    for (int k = 0; k < bumps; ++k) {
      const double x0 = rng.uniform(0.1, 0.9) * w;
      const double sigma = rng.uniform(0.015, 0.04) * w;
      const double amp = rng.uniform(0.03, 0.08) * h;
      for (int j : {6, 7})
        for (int x = 0; x < w; ++x) {
          const double dx = (x - x0) / sigma;
          curves[size_t(j)][size_t(x)] -= amp * std::exp(-0.5 * dx * dx);
        }
    }
    for (int j : {6, 7})
      for (int x = 0; x < w; ++x)
        curves[size_t(j)][size_t(x)] =
            std::max(curves[size_t(j)][size_t(x)],
                     curves[size_t(j - 1)][size_t(x)] + cfg.min_gap);
  }
  return curves;
}

PhantomSlice render_slice(const PhantomConfig& cfg,
                          const std::vector<std::vector<double>>& curves,
                          const std::vector<double>& intensities, Rng& rng) {
  contract(long(intensities.size()) == kBoundaries + 1,
           "phantom: need nine region intensities");
  const int h = cfg.height, w = cfg.width;

  PhantomSlice slice;
  slice.image = Image(h, w);
  slice.gt.boundaries = kBoundaries;
  slice.gt.width = w;
  slice.gt.coords = curves;
  slice.gt.valid.assign(static_cast<size_t>(w), 1);

  // Region fill, using the same rounding rule as the mask encodings.
  for (int x = 0; x < w; ++x) {
    int lo = 0;
    for (int r = 0; r <= kBoundaries; ++r) {
      const int hi =
          r < kBoundaries ? rounded_row(curves[size_t(r)][size_t(x)]) : h;
      for (int y = lo; y < hi; ++y)
        slice.image.at(y, x) = intensities[size_t(r)];
      lo = hi;
    }
  }

  // Unit-mean gamma speckle.
  if (cfg.speckle_var > 0.0) {
    const double k = 1.0 / cfg.speckle_var;
    for (auto& px : slice.image.px) px *= rng.gamma(k, cfg.speckle_var);
  }

  // Vertical shadow bands, as cast by overlying vessels.
  const int bands =
      cfg.max_shadow_bands > 0 ? int(rng.uniform_int(cfg.max_shadow_bands + 1)) : 0;
  for (int b = 0; b < bands; ++b) {
    const int center = int(rng.uniform_int(w));
    const int half = std::max(1, int(rng.uniform(0.01, 0.03) * w));
    const double att = rng.uniform(0.55, 0.85);
    for (int x = std::max(0, center - half);
         x < std::min(w, center + half + 1); ++x)
      for (int y = 0; y < h; ++y) slice.image.at(y, x) *= att;
  }

  for (auto& px : slice.image.px) px = std::clamp(px, 0.0, 255.0);
  return slice;
}

std::vector<PhantomSlice> make_phantom_volume(const PhantomConfig& cfg,
                                              uint64_t seed, bool drusen) {
  cfg.validate();
  Rng volume_rng(seed);

  // Volume-level draws: depth offsets and reflectivity jitter.
  std::vector<double> depths(kBoundaries);
  const double shift = volume_rng.uniform(-0.04, 0.04);
  for (int j = 0; j < kBoundaries; ++j) {
    depths[size_t(j)] =
        kDepthFractions[size_t(j)] + shift + volume_rng.uniform(-0.005, 0.005);
  }
  std::sort(depths.begin(), depths.end());
  std::vector<double> intensities(kBoundaries + 1);
  for (int r = 0; r <= kBoundaries; ++r)
    intensities[size_t(r)] =
        kReflectivity[size_t(r)] * volume_rng.uniform(0.9, 1.1);

  std::vector<PhantomSlice> out;
  out.reserve(static_cast<size_t>(cfg.slices));
  for (int s = 0; s < cfg.slices; ++s) {
    Rng slice_rng = volume_rng.fork(uint64_t(s) + 1);
    auto curves = sample_boundary_curves(cfg, depths, slice_rng, drusen);
    out.push_back(render_slice(cfg, curves, intensities, slice_rng));
  }
  return out;
}

}  // namespace oct
