#include "oct/dataset.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oct/errors.hpp"
#include "oct/image.hpp"
#include "oct/rng.hpp"

namespace fs = std::filesystem;

namespace oct {

namespace {

std::string slice_stem(int s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03d", s);
  return buf;
}

std::string fmt_double(double v) {
  // max_digits10 so the text round-trips the exact double.
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<uint8_t> spread_select(int n, double fraction) {
  contract(n >= 0 && fraction >= 0.0 && fraction <= 1.0,
           "spread_select: bad arguments");
  std::vector<uint8_t> mask(static_cast<size_t>(n), 0);
  for (int k = 0; k < n; ++k)
    if (long(std::floor((k + 1) * fraction)) > long(std::floor(k * fraction)))
      mask[size_t(k)] = 1;
  return mask;
}

void write_gt_csv(const GroundTruth& gt, const std::string& path) {
  gt.check_shape();
  std::ostringstream out;
  out << "# boundary rows in px, top to bottom; last line flags valid columns\n";
  for (int j = 0; j < gt.boundaries; ++j) {
    for (int x = 0; x < gt.width; ++x) {
      if (x) out << ',';
      out << fmt_double(gt.coords[size_t(j)][size_t(x)]);
    }
    out << '\n';
  }
  for (int x = 0; x < gt.width; ++x) {
    if (x) out << ',';
    out << int(gt.valid[size_t(x)]);
  }
  out << '\n';

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << out.str();
}

GroundTruth read_gt_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);

  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> vals;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        size_t used = 0;
        vals.push_back(std::stod(cell, &used));
        while (used < cell.size() && std::isspace((unsigned char)cell[used]))
          ++used;
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw DataError(path + ": bad number '" + cell + "'");
      }
    }
    rows.push_back(std::move(vals));
  }
  if (rows.size() < 2) throw DataError(path + ": need boundary rows plus a validity line");
  const size_t w = rows[0].size();
  for (const auto& r : rows)
    if (r.size() != w) throw DataError(path + ": ragged rows");

  GroundTruth gt;
  gt.boundaries = int(rows.size()) - 1;
  gt.width = int(w);
  gt.coords.assign(rows.begin(), rows.end() - 1);
  gt.valid.resize(w);
  for (size_t x = 0; x < w; ++x) {
    const double v = rows.back()[x];
    if (v != 0.0 && v != 1.0)
      throw DataError(path + ": validity entries must be 0 or 1");
    gt.valid[x] = uint8_t(v);
  }
  return gt;
}

void save_volume(const std::vector<PhantomSlice>& slices,
                 const VolumeRecord& rec, const std::string& root) {
  contract(int(slices.size()) == rec.slices, "save_volume: slice count mismatch");
  const fs::path dir = fs::path(root) / rec.dir;
  fs::create_directories(dir);
  for (int s = 0; s < rec.slices; ++s) {
    const auto& sl = slices[size_t(s)];
    write_pgm(sl.image, (dir / ("slice_" + slice_stem(s) + ".pgm")).string());
    write_gt_csv(sl.gt, (dir / ("gt_" + slice_stem(s) + ".csv")).string());
  }
  Json m;
  m["slices"] = rec.slices;
  m["pathology"] = rec.pathology;
  m["seed"] = rec.seed;
  save_json(m, (dir / "manifest.json").string());
}

std::vector<PhantomSlice> load_volume(const DatasetIndex& index,
                                      const VolumeRecord& rec) {
  const fs::path dir = fs::path(index.root) / rec.dir;
  const Json m = load_json((dir / "manifest.json").string());
  reject_unknown_keys(m, {"slices", "pathology", "seed"}, rec.dir);
  const int n = json_get<int>(m, "slices", rec.dir);
  if (n != rec.slices)
    throw DataError(rec.dir + ": manifest lists " + std::to_string(n) +
                    " slices, index expects " + std::to_string(rec.slices));

  std::vector<PhantomSlice> out(static_cast<size_t>(n));
  for (int s = 0; s < n; ++s) {
    auto& sl = out[size_t(s)];
    sl.image = read_pgm((dir / ("slice_" + slice_stem(s) + ".pgm")).string());
    sl.gt = read_gt_csv((dir / ("gt_" + slice_stem(s) + ".csv")).string());
    if (sl.gt.width != sl.image.w)
      throw DataError(rec.dir + ": slice " + std::to_string(s) +
                      " image/boundary width mismatch");
  }
  return out;
}

DatasetIndex synth_dataset(const std::string& root, const PhantomConfig& cfg,
                           int volumes, uint64_t seed) {
  cfg.validate();
  contract(volumes >= 1, "synth_dataset: need at least one volume");
  fs::create_directories(root);

  DatasetIndex index;
  index.root = root;
  index.phantom = cfg;

  const Rng master(seed);
  const auto sick = spread_select(volumes, cfg.drusen_fraction);
  for (int v = 0; v < volumes; ++v) {
    VolumeRecord rec;
    rec.dir = "vol_" + slice_stem(v);
    rec.slices = cfg.slices;
    rec.pathology = sick[size_t(v)] != 0;
    rec.seed = master.fork(uint64_t(v) + 1).state();
    save_volume(make_phantom_volume(cfg, rec.seed, rec.pathology), rec, root);
    index.volumes.push_back(std::move(rec));
  }

  Json j;
  j["format_version"] = 1;
  j["phantom"] = phantom_config_to_json(cfg);
  Json vols = Json::array();
  for (const auto& r : index.volumes) {
    Json e;
    e["dir"] = r.dir;
    e["slices"] = r.slices;
    e["pathology"] = r.pathology;
    e["seed"] = r.seed;
    vols.push_back(e);
  }
  j["volumes"] = vols;
  save_json(j, (fs::path(root) / "dataset.json").string());
  return index;
}

DatasetIndex load_dataset(const std::string& root) {
  const Json j = load_json((fs::path(root) / "dataset.json").string());
  reject_unknown_keys(j, {"format_version", "phantom", "volumes"}, "dataset.json");
  if (json_get<int>(j, "format_version", "dataset.json") != 1)
    throw DataError("dataset.json: unsupported format_version");

  DatasetIndex index;
  index.root = root;
  index.phantom = phantom_config_from_json(j.at("phantom"), "dataset.json/phantom");
  for (const auto& e : j.at("volumes")) {
    reject_unknown_keys(e, {"dir", "slices", "pathology", "seed"},
                        "dataset.json/volumes");
    VolumeRecord rec;
    rec.dir = json_get<std::string>(e, "dir", "volume entry");
    rec.slices = json_get<int>(e, "slices", rec.dir);
    rec.pathology = json_get<bool>(e, "pathology", rec.dir);
    rec.seed = json_get<uint64_t>(e, "seed", rec.dir);
    index.volumes.push_back(std::move(rec));
  }
  if (index.volumes.empty()) throw DataError("dataset.json: no volumes");
  return index;
}

DatasetSplit split_dataset(const DatasetIndex& index, double test_fraction) {
  contract(test_fraction > 0.0 && test_fraction < 1.0,
           "split_dataset: test_fraction must be in (0, 1)");
  std::vector<int> strata[2];
  for (int v = 0; v < int(index.volumes.size()); ++v)
    strata[index.volumes[size_t(v)].pathology ? 1 : 0].push_back(v);
  for (const auto& s : strata)
    if (!s.empty() && int(s.size()) < 5)
      throw DataError("split_dataset: a pathology stratum has " +
                      std::to_string(s.size()) +
                      " volumes; need at least five to hold some out");

  DatasetSplit split;
  for (const auto& s : strata) {
    const auto mask = spread_select(int(s.size()), test_fraction);
    for (size_t k = 0; k < s.size(); ++k)
      (mask[k] ? split.test : split.train).push_back(s[k]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  if (split.test.empty() || split.train.empty())
    throw DataError("split_dataset: split left a side empty");
  return split;
}

}  // namespace oct
