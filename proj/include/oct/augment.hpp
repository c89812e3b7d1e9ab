#pragma once

#include <cstdint>
#include <vector>

#include "oct/groundtruth.hpp"
#include "oct/image.hpp"
#include "oct/jsonutil.hpp"
#include "oct/rng.hpp"

namespace oct {

struct AugmentConfig {
  double p_hflip = 0.5;
  double p_vflip = 0.25;
  double max_rotate_deg = 5.0;
  double min_scale = 0.95, max_scale = 1.05;
  int max_shift_rows = 8, max_shift_cols = 8;
  double p_roll = 0.3;
  double roll_amp = 4.0;  // peak column displacement in rows
  double roll_min_period_frac = 0.5, roll_max_period_frac = 1.0;  // of width

  void validate() const;
};

Json augment_config_to_json(const AugmentConfig& c);
AugmentConfig augment_config_from_json(const Json& j, const std::string& ctx);

// One concrete draw; applying it is deterministic, so transforms can be
// tested against independent oracles.
struct AugmentParams {
  bool hflip = false, vflip = false;
  double rotate_deg = 0.0, scale = 1.0;
  int shift_rows = 0, shift_cols = 0;
  bool roll = false;
  double roll_amp = 0.0, roll_period = 1.0, roll_phase = 0.0;
};

AugmentParams sample_augment(const AugmentConfig& c, int width, Rng& rng);

struct Augmented {
  Image image;
  GroundTruth gt;
  AugmentParams params;
};

// Applies flip -> rotate/scale -> shift -> column roll. The image warps with
// bilinear sampling (zero outside); boundary rows ride along exactly for the
// discrete steps and are re-extracted from a nearest-neighbor region map by
// a monotone column scan for the affine step. Columns whose boundaries
// leave the raster, wrap, or sample untrusted source columns go invalid;
// the table stays ordered everywhere so it can always be re-encoded.
Augmented apply_augment(const Image& img, const GroundTruth& gt,
                        const AugmentParams& p);

// Draws parameters until at least half the columns stay valid (identity
// fallback after 50 rejections, which sampling bounds make unreachable for
// sane configs).
Augmented augment(const Image& img, const GroundTruth& gt,
                  const AugmentConfig& c, Rng& rng);

}  // namespace oct
