#pragma once

#include <array>
#include <string>
#include <vector>

#include "oct/groundtruth.hpp"
#include "oct/image.hpp"
#include "oct/jsonutil.hpp"
#include "oct/rng.hpp"

namespace oct {

// Synthetic B-scan generator: eight stacked retinal interfaces drawn as
// smooth curves, piecewise-constant region reflectivity, multiplicative
// speckle, vessel-like shadow bands, and optional drusen-style bumps on the
// two outer interfaces.
struct PhantomConfig {
  int height = 300, width = 800;
  int slices = 11;
  double min_gap = 2.0;         // pixels between adjacent interfaces
  double speckle_var = 0.05;    // variance of the unit-mean multiplier
  int max_shadow_bands = 2;
  double drusen_fraction = 0.5;  // fraction of volumes carrying drusen

  void validate() const;
};

Json phantom_config_to_json(const PhantomConfig& c);
PhantomConfig phantom_config_from_json(const Json& j, const std::string& ctx);

struct PhantomSlice {
  Image image;
  GroundTruth gt;
};

// The eight canonical interfaces, top to bottom.
const std::vector<std::string>& boundary_names();
// Subset traced by the reduced model: inner limit plus the two outer bands.
const std::vector<int>& mixed_boundary_indices();

// Curves for one slice: [8][W] sub-pixel rows, ordered with at least min_gap
// between neighbors, rejection-sampled from sinusoid + tilt perturbations
// around per-volume mean depths.
std::vector<std::vector<double>> sample_boundary_curves(
    const PhantomConfig& cfg, const std::vector<double>& depth_fractions,
    Rng& rng, bool drusen);

// Renders intensity from curves: region fill, speckle, shadows.
PhantomSlice render_slice(const PhantomConfig& cfg,
                          const std::vector<std::vector<double>>& curves,
                          const std::vector<double>& intensities, Rng& rng);

// A volume shares mean depths and reflectivity; slices vary in curve shape,
// speckle, and shadows. Fully determined by (cfg, seed, drusen).
std::vector<PhantomSlice> make_phantom_volume(const PhantomConfig& cfg,
                                              uint64_t seed, bool drusen);

}  // namespace oct
