#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "oct/dataset.hpp"
#include "oct/errors.hpp"
#include "oct/eval.hpp"
#include "oct/gradcheck.hpp"
#include "oct/model.hpp"
#include "oct/phantom.hpp"
#include "oct/preprocess.hpp"
#include "oct/train.hpp"

namespace fs = std::filesystem;
using oct::ConfigError;
using oct::GroundTruth;
using oct::Image;
using oct::Json;
using oct::Model;
using oct::ModelConfig;

namespace {

void setup_threads(int threads, bool deterministic) {
#ifdef _OPENMP
  if (deterministic)
    omp_set_num_threads(1);
  else if (threads > 0)
    omp_set_num_threads(threads);
#else
  (void)threads;
  (void)deterministic;
#endif
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::string item;
  std::stringstream ss(s);
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("bad interface list entry '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty interface list");
  return out;
}

// Canonical labels when the count matches a known configuration.
std::vector<std::string> labels_for(int boundaries,
                                    const std::vector<int>& subset) {
  const auto& all = oct::boundary_names();
  if (!subset.empty()) {
    std::vector<std::string> out;
    for (int j : subset) {
      if (j < 0 || j >= int(all.size())) return {};
      out.push_back(all[size_t(j)]);
    }
    return out;
  }
  if (boundaries == int(all.size())) return all;
  if (boundaries == 3) {
    std::vector<std::string> out;
    for (int j : oct::mixed_boundary_indices()) out.push_back(all[size_t(j)]);
    return out;
  }
  return {};
}

void print_report(const oct::MetricsReport& r) {
  std::printf("%-18s %10s %10s\n", "boundary", "mae_mean", "mae_std");
  for (size_t i = 0; i < r.names.size(); ++i)
    std::printf("%-18s %10.3f %10.3f\n", r.names[i].c_str(),
                r.per_boundary[i].mean, r.per_boundary[i].stdev);
  std::printf("%-18s %10.3f %10.3f\n", "Overall", r.overall.mean,
              r.overall.stdev);
  std::printf("ordering violations: %.4f of adjacent pairs (%d scans)\n",
              r.violation_rate, r.scans);
}

// ---------------------------------------------------------------- synth ----

struct SynthOpts {
  std::string spec, out;
  int volumes = 10;
  uint64_t seed = 1;
  int slices = 0, height = 0, width = 0;  // 0: keep the spec's value
  double drusen_fraction = -1.0;
};

int run_synth(const SynthOpts& o) {
  oct::PhantomConfig pc;
  if (!o.spec.empty())
    pc = oct::phantom_config_from_json(oct::load_json(o.spec), o.spec);
  if (o.slices > 0) pc.slices = o.slices;
  if (o.height > 0) pc.height = o.height;
  if (o.width > 0) pc.width = o.width;
  if (o.drusen_fraction >= 0.0) pc.drusen_fraction = o.drusen_fraction;
  pc.validate();

  const auto idx = oct::synth_dataset(o.out, pc, o.volumes, o.seed);
  int sick = 0;
  for (const auto& v : idx.volumes) sick += v.pathology;
  std::printf("wrote %d volumes (%d pathological) of %d slices at %dx%d "
              "under %s\n",
              int(idx.volumes.size()), sick, pc.slices, pc.height, pc.width,
              o.out.c_str());
  return 0;
}

// ---------------------------------------------------------------- train ----

struct TrainOpts {
  std::string data, out, config, model_config, boundaries;
  double test_fraction = 0.2;
  bool resume = false;
  int epochs = 0;
  int64_t seed = -1;
};

int run_train(const TrainOpts& o) {
  const oct::DatasetIndex idx = oct::load_dataset(o.data);

  oct::TrainConfig tc;
  if (!o.config.empty())
    tc = oct::train_config_from_json(oct::load_json(o.config), o.config);
  if (o.epochs > 0) tc.epochs = o.epochs;
  if (o.seed >= 0) tc.seed = uint64_t(o.seed);
  if (!o.boundaries.empty()) tc.boundary_subset = parse_int_list(o.boundaries);
  tc.validate();

  const int effective = tc.boundary_subset.empty()
                            ? int(oct::boundary_names().size())
                            : int(tc.boundary_subset.size());
  ModelConfig mc;
  if (!o.model_config.empty()) {
    mc = oct::model_config_from_json(oct::load_json(o.model_config),
                                     o.model_config);
    if (mc.boundaries != effective)
      throw ConfigError("model config traces " +
                        std::to_string(mc.boundaries) +
                        " interfaces but training selects " +
                        std::to_string(effective));
  } else {
    mc = ModelConfig::m_norm().scaled_to(idx.phantom.height,
                                         idx.phantom.width);
    mc.boundaries = effective;
    mc.validate();
  }
  if (idx.phantom.width > mc.width)
    throw ConfigError("dataset scans are wider than the model raster (" +
                      std::to_string(idx.phantom.width) + " > " +
                      std::to_string(mc.width) + "); no resampling");

  oct::DatasetSplit split;
  if (o.test_fraction > 0.0)
    split = oct::split_dataset(idx, o.test_fraction);
  else
    for (int v = 0; v < int(idx.volumes.size()); ++v)
      split.train.push_back(v);

  auto strata = [&](const std::vector<int>& ids) {
    int normal = 0, path = 0;
    for (int v : ids) (idx.volumes[size_t(v)].pathology ? path : normal)++;
    return std::pair<int, int>(normal, path);
  };
  const auto [trn, trp] = strata(split.train);
  const auto [ten, tep] = strata(split.test);
  std::printf("train: %d normal + %d pathological | test: %d normal + %d "
              "pathological\n",
              trn, trp, ten, tep);

  auto prepare = [&](const std::vector<int>& ids) {
    std::vector<oct::TrainVolume> vols;
    for (int v : ids)
      vols.push_back(oct::prepare_volume(
          oct::load_volume(idx, idx.volumes[size_t(v)]), mc,
          tc.boundary_subset));
    return vols;
  };
  const auto train_vols = prepare(split.train);
  const auto test_vols = prepare(split.test);

  Model<double> model(mc);
  oct::Rng rng(tc.seed);
  model.init(rng);

  fs::create_directories(o.out);
  oct::save_json(oct::train_config_to_json(tc), o.out + "/train_config.json");
  const oct::TrainVolume* heldout = test_vols.empty() ? nullptr
                                                      : &test_vols.front();
  const oct::FitResult res =
      oct::fit(model, train_vols, tc, o.out, o.resume, heldout);
  std::printf("trained %d epochs, final loss %.6f\n", res.epochs_run,
              res.final_loss);

  const auto& score_vols = test_vols.empty() ? train_vols : test_vols;
  const auto report = oct::evaluate(
      model, score_vols, labels_for(mc.boundaries, tc.boundary_subset));
  std::string line = test_vols.empty() ? "final train MAE:" : "final test MAE:";
  char buf[64];
  for (size_t i = 0; i < report.names.size(); ++i) {
    std::snprintf(buf, sizeof buf, " %s=%.3f", report.names[i].c_str(),
                  report.per_boundary[i].mean);
    line += buf;
  }
  std::snprintf(buf, sizeof buf, " Overall=%.3f", report.overall.mean);
  line += buf;
  std::printf("%s\n", line.c_str());
  return 0;
}

// ---------------------------------------------------------------- infer ----

struct InferOpts {
  std::string model, in, out;
  bool overlay = false, side_outputs = false, standardized = false;
};

std::vector<std::string> list_scans(const std::string& in) {
  if (!fs::is_directory(in)) return {in};
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(in)) {
    const std::string p = e.path().string();
    if (p.size() > 4 && (p.compare(p.size() - 4, 4, ".pgm") == 0 ||
                         p.compare(p.size() - 4, 4, ".png") == 0))
      files.push_back(p);
  }
  std::sort(files.begin(), files.end());
  return files;
}

int run_infer(const InferOpts& o) {
  Model<double> model = oct::load_model<double>(o.model);
  const ModelConfig& mc = model.cfg;

  const auto scans = list_scans(o.in);
  if (scans.empty()) throw oct::DataError("no .pgm/.png scans under " + o.in);
  fs::create_directories(o.out);

  const auto t0 = std::chrono::steady_clock::now();
  char name[64];
  for (size_t i = 0; i < scans.size(); ++i) {
    const Image raw = oct::read_gray(scans[i]);
    if (raw.w > mc.width)
      throw ConfigError("scan " + scans[i] + " is wider than the model "
                        "raster (" + std::to_string(raw.w) + " > " +
                        std::to_string(mc.width) + "); no resampling");
    const oct::Preprocessed pre =
        oct::preprocess_scan(raw, mc.height, mc.width);
    Image norm(mc.height, mc.width);
    std::copy_n(pre.input.begin(), norm.px.size(), norm.px.begin());

    oct::Graph<double> g;
    auto input = g.leaf({2, mc.height, mc.width}, oct::model_input(norm));
    const oct::StageOutputs<double> out = model.forward(g, input);
    const auto rows = out.trace_rows(mc.height);

    GroundTruth table;
    table.boundaries = mc.boundaries;
    table.width = o.standardized ? mc.width : raw.w;
    table.valid.assign(size_t(table.width), 1);
    for (const auto& row : rows) {
      std::vector<double> coords(size_t(table.width));
      for (int x = 0; x < table.width; ++x)
        coords[size_t(x)] = o.standardized
                                ? row[size_t(x)]
                                : oct::untransform_row(row[size_t(x)], pre);
      table.coords.push_back(std::move(coords));
    }
    std::snprintf(name, sizeof name, "/trace_%03d.csv", int(i));
    oct::write_gt_csv(table, o.out + name);

    if (o.overlay) {
      GroundTruth no_ref;
      no_ref.boundaries = 0;
      no_ref.width = table.width;
      no_ref.valid.assign(size_t(table.width), 1);
      const Image& canvas = o.standardized ? norm : raw;
      std::snprintf(name, sizeof name, "/overlay_%03d.png", int(i));
      oct::write_png_rgb(oct::render_overlay(canvas, no_ref, table.coords),
                         o.out + name);
    }
    if (o.side_outputs) {
      const auto& reg = out.regions.value();
      const int r = mc.regions();
      Image loi(mc.height, mc.width);
      for (int y = 0; y < mc.height; ++y)
        for (int x = 0; x < mc.width; ++x) {
          int best = 0;
          for (int c = 1; c < r; ++c)
            if (reg[(size_t(c) * mc.height + y) * mc.width + x] >
                reg[(size_t(best) * mc.height + y) * mc.width + x])
              best = c;
          loi.at(y, x) = 255.0 * best / (r - 1);
        }
      std::snprintf(name, sizeof name, "/loi_%03d.png", int(i));
      oct::write_png_gray(loi, o.out + name);

      Image edge(mc.height, mc.width);
      const auto& ev = out.edge.value();
      for (size_t k = 0; k < edge.px.size(); ++k) edge.px[k] = 255.0 * ev[k];
      std::snprintf(name, sizeof name, "/edge_%03d.png", int(i));
      oct::write_png_gray(edge, o.out + name);
    }
  }
  const double dt =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  std::fprintf(stderr, "traced %d scan(s) in %.1f s\n", int(scans.size()), dt);
  return 0;
}

// ----------------------------------------------------------------- eval ----

struct EvalOpts {
  std::string pred, gt, gt2, out_csv, out_json, boundaries;
};

std::map<int, std::string> scan_inventory(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError(dir + " is not a directory");
  const std::regex id_re(R"((\d+)\.csv$)");
  std::map<int, std::string> inv;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string p = e.path().filename().string();
    std::smatch m;
    if (std::regex_search(p, m, id_re)) inv[std::stoi(m[1])] = e.path().string();
  }
  if (inv.empty())
    throw ConfigError("no numbered boundary tables (*NNN.csv) under " + dir);
  return inv;
}

void require_same_ids(const std::map<int, std::string>& a, const char* aname,
                      const std::map<int, std::string>& b, const char* bname) {
  std::string missing;
  for (const auto& [id, _] : a)
    if (!b.count(id)) missing += " " + std::to_string(id) + " (" + bname + ")";
  for (const auto& [id, _] : b)
    if (!a.count(id)) missing += " " + std::to_string(id) + " (" + aname + ")";
  if (!missing.empty())
    throw ConfigError("scan inventories differ; missing:" + missing);
}

int run_eval(const EvalOpts& o) {
  const auto pred_inv = scan_inventory(o.pred);
  const auto gt_inv = scan_inventory(o.gt);
  require_same_ids(pred_inv, "pred", gt_inv, "gt");
  std::map<int, std::string> gt2_inv;
  if (!o.gt2.empty()) {
    gt2_inv = scan_inventory(o.gt2);
    require_same_ids(gt_inv, "gt", gt2_inv, "gt2");
  }

  std::vector<int> subset;
  if (!o.boundaries.empty()) subset = parse_int_list(o.boundaries);

  std::vector<std::vector<double>> mae, im_mae;
  std::vector<double> viol, im_viol;
  int boundaries = -1;
  for (const auto& [id, gt_path] : gt_inv) {
    GroundTruth ref = oct::read_gt_csv(gt_path);
    if (!subset.empty()) ref = ref.select(subset);
    const GroundTruth pred = oct::read_gt_csv(pred_inv.at(id));
    if (boundaries < 0) boundaries = ref.boundaries;
    if (ref.boundaries != boundaries || pred.boundaries != ref.boundaries ||
        pred.width != ref.width)
      throw ConfigError("scan " + std::to_string(id) +
                        ": boundary tables disagree in shape");
    mae.push_back(oct::boundary_mae(pred.coords, ref));
    viol.push_back(oct::ordering_violation_rate(pred.coords));
    if (!gt2_inv.empty()) {
      GroundTruth second = oct::read_gt_csv(gt2_inv.at(id));
      if (!subset.empty()) second = second.select(subset);
      if (second.boundaries != ref.boundaries || second.width != ref.width)
        throw ConfigError("scan " + std::to_string(id) +
                          ": second marking disagrees in shape");
      im_mae.push_back(oct::boundary_mae(second.coords, ref));
      im_viol.push_back(0.0);
    }
  }

  const auto report =
      oct::aggregate_scores(mae, viol, labels_for(boundaries, subset));
  print_report(report);

  oct::MetricsReport im;
  if (!im_mae.empty()) {
    im = oct::aggregate_scores(im_mae, im_viol, labels_for(boundaries, subset));
    std::printf("inter-marker overall: %.3f +- %.3f\n", im.overall.mean,
                im.overall.stdev);
  }

  if (!o.out_csv.empty()) {
    std::ofstream out(o.out_csv);
    if (!out) throw oct::IoError("cannot write " + o.out_csv);
    out << "boundary,mae_mean,mae_std";
    if (!im_mae.empty()) out << ",intermarker_mean,intermarker_std";
    out << "\n";
    char buf[200];
    for (size_t i = 0; i <= report.names.size(); ++i) {
      const bool overall = i == report.names.size();
      const auto& s = overall ? report.overall : report.per_boundary[i];
      std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g",
                    overall ? "Overall" : report.names[i].c_str(), s.mean,
                    s.stdev);
      out << buf;
      if (!im_mae.empty()) {
        const auto& t = overall ? im.overall : im.per_boundary[i];
        std::snprintf(buf, sizeof buf, ",%.9g,%.9g", t.mean, t.stdev);
        out << buf;
      }
      out << "\n";
    }
  }
  if (!o.out_json.empty()) {
    Json j = oct::metrics_report_to_json(report);
    if (!im_mae.empty()) j["inter_marker"] = oct::metrics_report_to_json(im);
    oct::save_json(j, o.out_json);
  }
  return 0;
}

// ------------------------------------------------------------ gradcheck ----

struct GradcheckOpts {
  std::string module = "all";
  uint64_t seed = 1;
  bool corrupt = false;
};

int run_gradcheck(const GradcheckOpts& o) {
  const std::map<std::string, std::string> groups{
      {"conv2d_odd", "conv"}, {"conv2d_even", "conv"}, {"dense", "conv"},
      {"relu", "conv"},       {"sigmoid", "conv"},     {"tanh", "conv"},
      {"lstm_cell", "lstm"},  {"blstm_2step", "lstm"}, {"stripes", "lstm"},
      {"bce", "losses"},      {"mse", "losses"}};

  auto cases = oct::standard_gradcheck_cases(o.seed);
  bool all_pass = true;
  int ran = 0;
  for (auto& c : cases) {
    const auto it = groups.find(c.name);
    const std::string group = it == groups.end() ? "conv" : it->second;
    if (o.module != "all" && group != o.module) continue;
    const auto r =
        oct::run_gradcheck_case(c, 1e-5, 1e-4, o.corrupt ? 0.05 : 0.0);
    std::printf("%-12s max_rel_err=%.3e over %ld coords  %s\n",
                r.name.c_str(), r.max_rel_err, r.coords,
                r.pass ? "ok" : "FAIL");
    all_pass = all_pass && r.pass;
    ++ran;
  }
  if (ran == 0) throw ConfigError("module '" + o.module + "' has no checks");
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retinal layer tracing on OCT B-scans: phantom synthesis, "
               "training, inference, and evaluation"};
  app.require_subcommand(1);

  int threads = 0;
  bool deterministic = false;
  app.add_option("--threads", threads, "worker thread cap")
      ->envname("OCT_LAYERTRACE_THREADS");
  app.add_flag("--deterministic", deterministic,
               "single-threaded, bit-reproducible runs");

  SynthOpts so;
  auto* synth = app.add_subcommand("synth", "generate a phantom dataset");
  synth->add_option("--spec", so.spec, "phantom spec JSON")
      ->check(CLI::ExistingFile);
  synth->add_option("--out", so.out, "dataset directory")->required();
  synth->add_option("--volumes", so.volumes, "volume count")
      ->check(CLI::PositiveNumber);
  synth->add_option("--seed", so.seed, "master seed");
  synth->add_option("--slices", so.slices, "B-scans per volume")
      ->check(CLI::PositiveNumber);
  synth->add_option("--height", so.height, "raster rows")
      ->check(CLI::PositiveNumber);
  synth->add_option("--width", so.width, "raster columns")
      ->check(CLI::PositiveNumber);
  synth->add_option("--drusen-fraction", so.drusen_fraction,
                    "fraction of pathological volumes");

  TrainOpts to;
  auto* train = app.add_subcommand("train", "fit the tracer on a dataset");
  train->add_option("--data", to.data, "dataset directory")->required();
  train->add_option("--out", to.out, "run directory for checkpoints")
      ->required();
  train->add_option("--config", to.config, "training config JSON")
      ->check(CLI::ExistingFile);
  train->add_option("--model-config", to.model_config, "model config JSON")
      ->check(CLI::ExistingFile);
  train->add_option("--boundaries", to.boundaries,
                    "comma-separated interface subset, e.g. 0,6,7");
  train->add_option("--test-fraction", to.test_fraction,
                    "held-out volume fraction (0 trains on everything)");
  train->add_option("--epochs", to.epochs, "override epoch count")
      ->check(CLI::PositiveNumber);
  train->add_option("--seed", to.seed, "override training seed");
  train->add_flag("--resume", to.resume, "continue from the run directory");

  InferOpts io;
  auto* infer = app.add_subcommand("infer", "trace boundaries on scans");
  infer->add_option("--model", io.model, "run directory with model files")
      ->required();
  infer->add_option("--in", io.in, "scan image or directory of scans")
      ->required();
  infer->add_option("--out", io.out, "output directory")->required();
  infer->add_flag("--overlay", io.overlay, "write trace overlays");
  infer->add_flag("--side-outputs", io.side_outputs,
                  "write region and edge probability images");
  infer->add_flag("--standardized", io.standardized,
                  "emit coordinates on the standardized raster");

  EvalOpts eo;
  auto* eval = app.add_subcommand("eval", "score traced tables against GT");
  eval->add_option("--pred", eo.pred, "directory of traced tables")
      ->required();
  eval->add_option("--gt", eo.gt, "directory of reference tables")
      ->required();
  eval->add_option("--gt2", eo.gt2, "second marking for inter-marker error");
  eval->add_option("--boundaries", eo.boundaries,
                   "score against this interface subset of the references");
  eval->add_option("--out", eo.out_csv, "report CSV path");
  eval->add_option("--json", eo.out_json, "report JSON path");

  GradcheckOpts go;
  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gradcheck->add_option("--module", go.module, "all|conv|lstm|losses")
      ->check(CLI::IsMember({"all", "conv", "lstm", "losses"}));
  gradcheck->add_option("--seed", go.seed, "test-point seed");
  gradcheck->add_flag("--corrupt", go.corrupt)->group("");

  int rc = 0;
  try {
    app.parse(argc, argv);
    setup_threads(threads, deterministic);
    if (synth->parsed()) rc = run_synth(so);
    if (train->parsed()) rc = run_train(to);
    if (infer->parsed()) rc = run_infer(io);
    if (eval->parsed()) rc = run_eval(eo);
    if (gradcheck->parsed()) rc = run_gradcheck(go);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const oct::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return rc;
}
