#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oct/groundtruth.hpp"
#include "oct/jsonutil.hpp"
#include "oct/phantom.hpp"

namespace oct {

// One volume directory on disk: slice_NNN.pgm raster plus gt_NNN.csv
// boundary table per scan, and a manifest tying them together.
struct VolumeRecord {
  std::string dir;  // relative to the dataset root
  int slices = 0;
  bool pathology = false;
  uint64_t seed = 0;
};

struct DatasetIndex {
  std::string root;
  PhantomConfig phantom;
  std::vector<VolumeRecord> volumes;
};

struct DatasetSplit {
  std::vector<int> train;  // indices into DatasetIndex::volumes
  std::vector<int> test;
};

// Picks round(n * fraction) of n items, spread as evenly as the integer
// lattice allows (k selected iff floor((k+1)f) > floor(k f)).
std::vector<uint8_t> spread_select(int n, double fraction);

void write_gt_csv(const GroundTruth& gt, const std::string& path);
GroundTruth read_gt_csv(const std::string& path);

void save_volume(const std::vector<PhantomSlice>& slices,
                 const VolumeRecord& rec, const std::string& root);
std::vector<PhantomSlice> load_volume(const DatasetIndex& index,
                                      const VolumeRecord& rec);

// Generates `volumes` phantom volumes under root and writes the index file.
// Pathology (drusen) lands on an evenly spread subset of the volumes per
// the config's drusen_fraction; everything is a pure function of `seed`.
DatasetIndex synth_dataset(const std::string& root, const PhantomConfig& cfg,
                           int volumes, uint64_t seed);

DatasetIndex load_dataset(const std::string& root);

// Held-out test volumes are spread evenly within each pathology stratum so
// both classes are represented; requires at least five volumes per stratum.
DatasetSplit split_dataset(const DatasetIndex& index,
                           double test_fraction = 0.2);

}  // namespace oct
