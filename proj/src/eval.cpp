#include "oct/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace oct {

BoundaryRows predict_rows(Model<double>& model, const Image& norm) {
  Graph<double> g;
  auto input = g.leaf({2, norm.h, norm.w}, model_input(norm), false);
  StageOutputs<double> out = model.forward(g, input);
  return out.trace_rows(model.cfg.height);
}

std::vector<double> boundary_mae(const BoundaryRows& pred,
                                 const GroundTruth& gt) {
  contract(int(pred.size()) == gt.boundaries, "boundary_mae: row count");
  long nvalid = 0;
  for (uint8_t v : gt.valid) nvalid += v;
  if (nvalid == 0) throw DataError("scan has no valid columns to score");

  std::vector<double> mae(pred.size(), 0.0);
  for (size_t j = 0; j < pred.size(); ++j) {
    contract(int(pred[j].size()) == gt.width, "boundary_mae: column count");
    double sum = 0.0;
    for (int x = 0; x < gt.width; ++x)
      if (gt.valid[size_t(x)])
        sum += std::abs(pred[j][size_t(x)] - gt.coords[j][size_t(x)]);
    mae[j] = sum / double(nvalid);
  }
  return mae;
}

double ordering_violation_rate(const BoundaryRows& pred) {
  if (pred.size() < 2) return 0.0;
  const size_t w = pred[0].size();
  long bad = 0;
  for (size_t j = 0; j + 1 < pred.size(); ++j)
    for (size_t x = 0; x < w; ++x) bad += pred[j][x] > pred[j + 1][x];
  return double(bad) / (double(w) * double(pred.size() - 1));
}

namespace {

BoundaryStats stats_of(const std::vector<double>& xs) {
  BoundaryStats s;
  for (double x : xs) s.mean += x;
  s.mean /= double(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - s.mean) * (x - s.mean);
  s.stdev = std::sqrt(sq / double(xs.size()));
  return s;
}

}  // namespace

MetricsReport aggregate_scores(const std::vector<std::vector<double>>& mae,
                               const std::vector<double>& violations,
                               std::vector<std::string> names) {
  contract(!mae.empty(), "aggregate_scores: no scans");
  contract(violations.size() == mae.size(),
           "aggregate_scores: one violation rate per scan");
  const size_t b = mae[0].size();
  contract(b > 0, "aggregate_scores: no boundaries");
  for (const auto& row : mae)
    contract(row.size() == b, "aggregate_scores: ragged score table");

  MetricsReport r;
  if (names.empty())
    for (size_t j = 0; j < b; ++j)
      names.push_back("interface_" + std::to_string(j));
  contract(names.size() == b, "aggregate_scores: one name per boundary");
  r.names = std::move(names);
  r.scans = int(mae.size());

  for (size_t j = 0; j < b; ++j) {
    std::vector<double> col;
    for (const auto& row : mae) col.push_back(row[j]);
    r.per_boundary.push_back(stats_of(col));
  }

  std::vector<double> scan_means;
  for (const auto& row : mae) {
    double m = 0.0;
    for (double x : row) m += x;
    scan_means.push_back(m / double(b));
  }
  r.overall = stats_of(scan_means);

  for (double v : violations) r.violation_rate += v;
  r.violation_rate /= double(violations.size());
  return r;
}

MetricsReport evaluate(Model<double>& model,
                       const std::vector<TrainVolume>& volumes,
                       std::vector<std::string> names) {
  std::vector<std::vector<double>> mae;
  std::vector<double> violations;
  for (const auto& vol : volumes)
    for (size_t s = 0; s < vol.norm.size(); ++s) {
      const BoundaryRows pred = predict_rows(model, vol.norm[s]);
      mae.push_back(boundary_mae(pred, vol.gt[s]));
      violations.push_back(ordering_violation_rate(pred));
    }
  return aggregate_scores(mae, violations, std::move(names));
}

Json metrics_report_to_json(const MetricsReport& r) {
  Json j;
  j["scans"] = r.scans;
  j["ordering_violation_rate"] = r.violation_rate;
  Json rows = Json::array();
  for (size_t i = 0; i < r.names.size(); ++i) {
    Json row;
    row["name"] = r.names[i];
    row["mae_mean"] = r.per_boundary[i].mean;
    row["mae_std"] = r.per_boundary[i].stdev;
    rows.push_back(row);
  }
  j["boundaries"] = rows;
  j["overall"] = {{"mae_mean", r.overall.mean}, {"mae_std", r.overall.stdev}};
  return j;
}

void write_metrics_csv(const MetricsReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "boundary,mae_mean,mae_std\n";
  char line[160];
  for (size_t i = 0; i < r.names.size(); ++i) {
    std::snprintf(line, sizeof line, "%s,%.9g,%.9g\n", r.names[i].c_str(),
                  r.per_boundary[i].mean, r.per_boundary[i].stdev);
    out << line;
  }
  std::snprintf(line, sizeof line, "Overall,%.9g,%.9g\n", r.overall.mean,
                r.overall.stdev);
  out << line;
}

double inter_marker_error(const std::vector<TrainVolume>& volumes,
                          double sigma, Rng& rng) {
  contract(sigma >= 0.0, "inter_marker_error: sigma must be non-negative");
  std::vector<double> scan_means;
  for (const auto& vol : volumes)
    for (const auto& gt : vol.gt) {
      BoundaryRows jittered(size_t(gt.boundaries));
      for (int j = 0; j < gt.boundaries; ++j) {
        jittered[size_t(j)].resize(size_t(gt.width));
        for (int x = 0; x < gt.width; ++x)
          jittered[size_t(j)][size_t(x)] =
              gt.coords[size_t(j)][size_t(x)] +
              (gt.valid[size_t(x)] ? sigma * rng.normal() : 0.0);
      }
      const auto mae = boundary_mae(jittered, gt);
      double m = 0.0;
      for (double x : mae) m += x;
      scan_means.push_back(m / double(mae.size()));
    }
  contract(!scan_means.empty(), "inter_marker_error: no scans");
  double total = 0.0;
  for (double m : scan_means) total += m;
  return total / double(scan_means.size());
}

RgbImage render_overlay(const Image& scan, const GroundTruth& gt,
                        const BoundaryRows& pred) {
  contract(gt.width == scan.w, "render_overlay: width mismatch");
  double lo = scan.px.empty() ? 0.0 : scan.px[0], hi = lo;
  for (double v : scan.px) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;

  RgbImage out(scan.h, scan.w);
  for (int y = 0; y < scan.h; ++y)
    for (int x = 0; x < scan.w; ++x) {
      const auto g =
          uint8_t(std::lround((scan.px[size_t(y) * scan.w + x] - lo) / span *
                              255.0));
      uint8_t* p = out.at(y, x);
      p[0] = p[1] = p[2] = g;
    }

  auto clamp_row = [&](double v) {
    return int(std::min<long>(scan.h - 1, std::max<long>(0, std::lround(v))));
  };
  for (int j = 0; j < gt.boundaries; ++j)
    for (int x = 0; x < gt.width; ++x) {
      if (!gt.valid[size_t(x)]) continue;
      uint8_t* p = out.at(clamp_row(gt.coords[size_t(j)][size_t(x)]), x);
      p[0] = 0;
      p[1] = 255;
      p[2] = 0;
    }
  for (const auto& row : pred) {
    contract(int(row.size()) == scan.w, "render_overlay: trace width");
    for (int x = 0; x < scan.w; ++x) {
      uint8_t* p = out.at(clamp_row(row[size_t(x)]), x);
      p[0] = 255;
      p[1] = 0;
      p[2] = 0;
    }
  }
  return out;
}

}  // namespace oct
