#pragma once

#include <string>
#include <vector>

#include "oct/groundtruth.hpp"
#include "oct/image.hpp"
#include "oct/jsonutil.hpp"
#include "oct/model.hpp"
#include "oct/rng.hpp"
#include "oct/train.hpp"

namespace oct {

// Traced boundary rows in pixels, [B][W].
using BoundaryRows = std::vector<std::vector<double>>;

BoundaryRows predict_rows(Model<double>& model, const Image& norm);

// Mean absolute row error per boundary over a scan's valid columns.
std::vector<double> boundary_mae(const BoundaryRows& pred,
                                 const GroundTruth& gt);

// Fraction of adjacent-pair orderings broken across all columns; ties are
// fine (interfaces may touch).
double ordering_violation_rate(const BoundaryRows& pred);

struct BoundaryStats {
  double mean = 0.0, stdev = 0.0;
};

struct MetricsReport {
  std::vector<std::string> names;           // one per boundary
  std::vector<BoundaryStats> per_boundary;  // across scans
  BoundaryStats overall;                    // per-scan means across scans
  double violation_rate = 0.0;              // averaged over scans
  int scans = 0;
};

// Folds per-scan scores into the report. `mae[s][j]` is scan s's error on
// boundary j; every scan carries every boundary, so the overall mean equals
// the mean of the per-boundary means.
MetricsReport aggregate_scores(const std::vector<std::vector<double>>& mae,
                               const std::vector<double>& violations,
                               std::vector<std::string> names);

// Scores every slice of every volume. Empty `names` autolabels.
MetricsReport evaluate(Model<double>& model,
                       const std::vector<TrainVolume>& volumes,
                       std::vector<std::string> names = {});

Json metrics_report_to_json(const MetricsReport& r);
void write_metrics_csv(const MetricsReport& r, const std::string& path);

// Disagreement one would see from a second marker whose picks wobble by
// N(0, sigma) rows: jitters every valid coordinate and scores the copy
// against the original. Expectation is sigma * sqrt(2/pi).
double inter_marker_error(const std::vector<TrainVolume>& volumes,
                          double sigma, Rng& rng);

// Scan with reference curves in green and traced ones drawn over in red.
RgbImage render_overlay(const Image& scan, const GroundTruth& gt,
                        const BoundaryRows& pred);

}  // namespace oct
