#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "oct/dataset.hpp"
#include "oct/groundtruth.hpp"
#include "oct/image.hpp"
#include "oct/phantom.hpp"
#include "oct/rng.hpp"

using namespace oct;
namespace fs = std::filesystem;

namespace {

GroundTruth random_ordered_gt(Rng& rng, int b, int w, int h) {
  GroundTruth gt = GroundTruth::zeros(b, w);
  for (int x = 0; x < w; ++x) {
    std::vector<double> col(static_cast<size_t>(b));
    for (auto& v : col) v = rng.uniform(0.0, h - 1.0);
    std::sort(col.begin(), col.end());
    for (int j = 0; j < b; ++j) gt.coords[size_t(j)][size_t(x)] = col[size_t(j)];
  }
  return gt;
}

std::vector<std::vector<double>> flat_curves(int b, int h, int w) {
  std::vector<std::vector<double>> c(
      static_cast<size_t>(b), std::vector<double>(static_cast<size_t>(w)));
  for (int j = 0; j < b; ++j)
    for (int x = 0; x < w; ++x)
      c[size_t(j)][size_t(x)] = (j + 1) * double(h) / (b + 2);
  return c;
}

std::map<std::string, std::string> slurp_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)),
                      std::istreambuf_iterator<char>());
    files[fs::relative(e.path(), root).string()] = std::move(bytes);
  }
  return files;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("region encoding partitions and round-trips random boundaries") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const int b = 1 + int(rng.uniform_int(9));
    const int w = 1 + int(rng.uniform_int(40));
    const int h = 8 + int(rng.uniform_int(53));
    GroundTruth gt = random_ordered_gt(rng, b, w, h);

    REQUIRE_NOTHROW(validate_ordering(gt, h));
    const auto stack = encode_regions(gt, h);

    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int hits = 0;
        for (int r = 0; r <= b; ++r)
          hits += stack[(size_t(r) * h + y) * w + x];
        REQUIRE(hits == 1);
      }

    const auto rows = decode_regions(stack, b + 1, h, w);
    for (int j = 0; j < b; ++j)
      for (int x = 0; x < w; ++x)
        REQUIRE(rows[size_t(j)][size_t(x)] ==
                rounded_row(gt.coords[size_t(j)][size_t(x)]));

    const auto edge = encode_edge(gt, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        bool expect = false;
        for (int j = 0; j < b; ++j)
          expect |= rounded_row(gt.coords[size_t(j)][size_t(x)]) == y;
        REQUIRE(bool(edge[size_t(y) * w + x]) == expect);
      }
  }
}

TEST_CASE("coincident boundaries decode through the empty region") {
  GroundTruth gt = GroundTruth::zeros(2, 3);
  for (int x = 0; x < 3; ++x) {
    gt.coords[0][size_t(x)] = 3.0;
    gt.coords[1][size_t(x)] = 3.4;  // also rounds to 3
  }
  const auto stack = encode_regions(gt, 8);
  const auto rows = decode_regions(stack, 3, 8, 3);
  for (int x = 0; x < 3; ++x) {
    CHECK(rows[0][size_t(x)] == 3);
    CHECK(rows[1][size_t(x)] == 3);
  }
  const auto edge = encode_edge(gt, 8);
  int ones = 0;
  for (uint8_t e : edge) ones += e;
  CHECK(ones == 3);  // the two coincident interfaces collapse per column
}

TEST_CASE("ordering violations are reported with the offending column") {
  GroundTruth gt = GroundTruth::zeros(2, 4);
  for (int x = 0; x < 4; ++x) {
    gt.coords[0][size_t(x)] = 2.0;
    gt.coords[1][size_t(x)] = 5.0;
  }

  SUBCASE("inversion") {
    gt.coords[1][2] = 1.0;
    CHECK_THROWS_WITH_AS(validate_ordering(gt, 10),
                         doctest::Contains("column 2"), DataError);
  }
  SUBCASE("below the raster") {
    gt.coords[1][1] = 9.6;
    CHECK_THROWS_WITH_AS(validate_ordering(gt, 10),
                         doctest::Contains("leaves the raster at column 1"),
                         DataError);
  }
  SUBCASE("above the raster") {
    gt.coords[0][3] = -0.6;
    CHECK_THROWS_WITH_AS(validate_ordering(gt, 10),
                         doctest::Contains("column 3"), DataError);
  }
  SUBCASE("rounding to the edge rows is fine") {
    gt.coords[0][0] = -0.4;
    gt.coords[1][0] = 9.4;
    CHECK_NOTHROW(validate_ordering(gt, 10));
  }
}

TEST_CASE("boundary subset selection") {
  Rng rng(7);
  GroundTruth gt = random_ordered_gt(rng, 8, 5, 40);
  gt.valid[3] = 0;
  const GroundTruth sub = gt.select({0, 6, 7});
  CHECK(sub.boundaries == 3);
  CHECK(sub.width == 5);
  CHECK(sub.valid == gt.valid);
  CHECK(sub.coords[0] == gt.coords[0]);
  CHECK(sub.coords[1] == gt.coords[6]);
  CHECK(sub.coords[2] == gt.coords[7]);
  CHECK_THROWS_AS((void)gt.select({8}), ContractError);
}

TEST_CASE("interface names and the reduced subset are frozen") {
  const auto& names = boundary_names();
  REQUIRE(names.size() == 8);
  CHECK(names[0] == "Vitreous-RNFL");
  CHECK(names[1] == "RNFL-GCL&IPL");
  CHECK(names[2] == "GCL&IPL-INL");
  CHECK(names[3] == "INL-OPL");
  CHECK(names[4] == "OPL-ONL&IS");
  CHECK(names[5] == "ONL&IS-OS");
  CHECK(names[6] == "OS-RPE");
  CHECK(names[7] == "RPE-Choroid");
  CHECK(mixed_boundary_indices() == std::vector<int>{0, 6, 7});
}

TEST_CASE("phantom volumes keep the minimum gap and stay on the raster") {
  PhantomConfig cfg;
  cfg.height = 120;
  cfg.width = 90;
  cfg.slices = 3;
  for (uint64_t seed : {11ull, 12ull, 13ull})
    for (bool sick : {false, true}) {
      const auto vol = make_phantom_volume(cfg, seed, sick);
      REQUIRE(vol.size() == 3);
      for (const auto& slice : vol) {
        REQUIRE_NOTHROW(validate_ordering(slice.gt, cfg.height));
        for (int x = 0; x < cfg.width; ++x) {
          double prev = 0.0;
          for (int j = 0; j < slice.gt.boundaries; ++j) {
            const double c = slice.gt.coords[size_t(j)][size_t(x)];
            CHECK(c >= prev + cfg.min_gap - 1e-9);
            CHECK(c <= cfg.height - 1.0 - cfg.min_gap + 1e-9);
            prev = c;
          }
        }
      }
    }
}

TEST_CASE("phantom generation is a pure function of the seed") {
  PhantomConfig cfg;
  cfg.height = 80;
  cfg.width = 60;
  cfg.slices = 2;
  const auto a = make_phantom_volume(cfg, 99, true);
  const auto b = make_phantom_volume(cfg, 99, true);
  const auto c = make_phantom_volume(cfg, 100, true);
  REQUIRE(a.size() == b.size());
  bool any_diff = false;
  for (size_t s = 0; s < a.size(); ++s) {
    CHECK(a[s].image.px == b[s].image.px);
    CHECK(a[s].gt.coords == b[s].gt.coords);
    any_diff |= a[s].image.px != c[s].image.px;
  }
  CHECK(any_diff);
}

TEST_CASE("noise-free render matches the region encoding exactly") {
  PhantomConfig cfg;
  cfg.height = 50;
  cfg.width = 40;
  cfg.speckle_var = 0.0;
  cfg.max_shadow_bands = 0;
  Rng rng(5);
  GroundTruth gt = random_ordered_gt(rng, 8, cfg.width, cfg.height - 4);
  for (auto& row : gt.coords)
    for (auto& v : row) v += 2.0;  // keep off the extreme rows
  std::vector<std::vector<double>> curves = gt.coords;
  std::vector<double> intensities;
  for (int r = 0; r < 9; ++r) intensities.push_back(10.0 * (r + 1));

  Rng render_rng(6);
  const auto slice = render_slice(cfg, curves, intensities, render_rng);
  const auto stack = encode_regions(gt, cfg.height);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      int region = -1;
      for (int r = 0; r < 9; ++r)
        if (stack[(size_t(r) * cfg.height + y) * cfg.width + x]) region = r;
      REQUIRE(slice.image.at(y, x) == intensities[size_t(region)]);
    }
}

TEST_CASE("speckle multiplier has the configured relative variance") {
  PhantomConfig cfg;
  cfg.height = 200;
  cfg.width = 400;
  cfg.speckle_var = 0.05;
  cfg.max_shadow_bands = 0;
  std::vector<double> intensities(9, 100.0);
  Rng rng(17);
  const auto slice =
      render_slice(cfg, flat_curves(8, cfg.height, cfg.width), intensities, rng);

  double sum = 0.0, sq = 0.0;
  const double n = double(slice.image.px.size());
  for (double v : slice.image.px) {
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(mean == doctest::Approx(100.0).epsilon(0.01));
  CHECK(var / (mean * mean) == doctest::Approx(0.05).epsilon(0.12));
}

TEST_CASE("shadow bands attenuate whole columns inside the expected range") {
  PhantomConfig cfg;
  cfg.height = 100;
  cfg.width = 300;
  cfg.speckle_var = 0.0;
  cfg.max_shadow_bands = 2;
  std::vector<double> intensities(9, 100.0);

  bool found_band = false;
  for (uint64_t seed = 1; seed <= 40 && !found_band; ++seed) {
    Rng rng(seed);
    const auto slice = render_slice(cfg, flat_curves(8, cfg.height, cfg.width),
                                    intensities, rng);
    int shadowed = 0;
    for (int x = 0; x < cfg.width; ++x) {
      double colsum = 0.0;
      for (int y = 0; y < cfg.height; ++y) colsum += slice.image.at(y, x);
      const double colmean = colsum / cfg.height;
      if (colmean == 100.0) continue;
      ++shadowed;
      // One band scales by att in [0.55, 0.85]; two overlapping multiply.
      CHECK(colmean >= 100.0 * 0.55 * 0.55 - 1e-9);
      CHECK(colmean <= 100.0 * 0.85 + 1e-9);
    }
    if (shadowed > 0) {
      found_band = true;
      CHECK(shadowed >= 3);  // band half-width is at least one column
      CHECK(shadowed <= 2 * (2 * int(0.03 * cfg.width) + 1));
    }
  }
  CHECK(found_band);
}

TEST_CASE("drusen volumes carry a measurable focal elevation") {
  PhantomConfig cfg;
  cfg.height = 300;
  cfg.width = 200;
  cfg.slices = 1;

  auto dip = [&](const std::vector<PhantomSlice>& vol) {
    double worst = 0.0;
    for (int j : {6, 7}) {
      std::vector<double> c = vol[0].gt.coords[size_t(j)];
      std::vector<double> sorted = c;
      std::sort(sorted.begin(), sorted.end());
      const double median = sorted[sorted.size() / 2];
      const double min = sorted.front();
      worst = std::max(worst, median - min);
    }
    return worst;
  };

  double healthy_mean = 0.0, drusen_mean = 0.0, drusen_max = 0.0;
  const int trials = 30;
  for (int t = 0; t < trials; ++t) {
    healthy_mean += dip(make_phantom_volume(cfg, 500 + uint64_t(t), false));
    const double d = dip(make_phantom_volume(cfg, 500 + uint64_t(t), true));
    drusen_mean += d;
    drusen_max = std::max(drusen_max, d);
  }
  healthy_mean /= trials;
  drusen_mean /= trials;
  CHECK(drusen_mean > healthy_mean + 2.0);
  CHECK(drusen_max > 6.0);
}

TEST_CASE("too-small rasters are rejected with a clear error") {
  PhantomConfig cfg;
  cfg.height = 32;
  cfg.width = 64;
  CHECK_THROWS_AS((void)make_phantom_volume(cfg, 1, false), DataError);
  cfg.height = 20;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("boundary tables round-trip through csv bit-exactly") {
  Rng rng(23);
  GroundTruth gt = GroundTruth::zeros(5, 17);
  for (auto& row : gt.coords)
    for (auto& v : row) v = rng.uniform(-40.0, 400.0);
  gt.valid[4] = 0;
  gt.valid[16] = 0;

  const fs::path dir = fresh_dir("oct_gt_csv");
  const std::string path = (dir / "gt.csv").string();
  write_gt_csv(gt, path);
  const GroundTruth back = read_gt_csv(path);
  CHECK(back.boundaries == 5);
  CHECK(back.width == 17);
  CHECK(back.coords == gt.coords);
  CHECK(back.valid == gt.valid);
}

TEST_CASE("malformed boundary tables are rejected") {
  const fs::path dir = fresh_dir("oct_gt_bad");
  auto put = [&](const std::string& body) {
    const std::string path = (dir / "bad.csv").string();
    std::ofstream(path) << body;
    return path;
  };
  CHECK_THROWS_AS((void)read_gt_csv(put("1,2,3\n1,2\n1,1,1\n")), DataError);
  CHECK_THROWS_AS((void)read_gt_csv(put("1,x,3\n1,1,1\n")), DataError);
  CHECK_THROWS_AS((void)read_gt_csv(put("1,2,3\n0,2,1\n")), DataError);
  CHECK_THROWS_AS((void)read_gt_csv(put("# only a comment\n")), DataError);
  CHECK_THROWS_AS((void)read_gt_csv((dir / "missing.csv").string()), IoError);
}

TEST_CASE("even spread selection") {
  CHECK(spread_select(10, 0.2) ==
        std::vector<uint8_t>{0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  CHECK(spread_select(5, 1.0) == std::vector<uint8_t>{1, 1, 1, 1, 1});
  CHECK(spread_select(5, 0.0) == std::vector<uint8_t>{0, 0, 0, 0, 0});
  int picked = 0;
  for (uint8_t m : spread_select(12, 0.5)) picked += m;
  CHECK(picked == 6);
}

TEST_CASE("dataset synthesis, reload, and stratified split") {
  PhantomConfig cfg;
  cfg.height = 64;
  cfg.width = 72;
  cfg.slices = 2;
  cfg.drusen_fraction = 0.5;
  const fs::path root = fresh_dir("oct_ds_main");

  const DatasetIndex index = synth_dataset(root.string(), cfg, 12, 424242);
  REQUIRE(index.volumes.size() == 12);
  int sick = 0;
  for (const auto& r : index.volumes) sick += r.pathology ? 1 : 0;
  CHECK(sick == 6);

  const DatasetIndex loaded = load_dataset(root.string());
  REQUIRE(loaded.volumes.size() == 12);
  CHECK(loaded.phantom.height == cfg.height);
  CHECK(loaded.phantom.width == cfg.width);
  CHECK(loaded.phantom.slices == cfg.slices);
  for (size_t v = 0; v < 12; ++v) {
    CHECK(loaded.volumes[v].dir == index.volumes[v].dir);
    CHECK(loaded.volumes[v].seed == index.volumes[v].seed);
    CHECK(loaded.volumes[v].pathology == index.volumes[v].pathology);
  }

  // Reload matches regeneration: boundary tables bit-exactly, images after
  // the 8-bit quantization the files store.
  const auto& rec = loaded.volumes[3];
  const auto from_disk = load_volume(loaded, rec);
  const auto regen = make_phantom_volume(cfg, rec.seed, rec.pathology);
  REQUIRE(from_disk.size() == regen.size());
  for (size_t s = 0; s < from_disk.size(); ++s) {
    CHECK(from_disk[s].gt.coords == regen[s].gt.coords);
    CHECK(from_disk[s].gt.valid == regen[s].gt.valid);
    REQUIRE(from_disk[s].image.px.size() == regen[s].image.px.size());
    double worst = 0.0;
    for (size_t i = 0; i < regen[s].image.px.size(); ++i)
      worst = std::max(worst, std::abs(from_disk[s].image.px[i] -
                                       std::lround(regen[s].image.px[i])));
    CHECK(worst == 0.0);
  }

  const DatasetSplit split = split_dataset(loaded, 0.2);
  CHECK(split.train.size() == 10);
  CHECK(split.test.size() == 2);
  std::vector<int> all = split.train;
  all.insert(all.end(), split.test.begin(), split.test.end());
  std::sort(all.begin(), all.end());
  std::vector<int> expect(12);
  for (int v = 0; v < 12; ++v) expect[size_t(v)] = v;
  CHECK(all == expect);
  int test_sick = 0;
  for (int v : split.test) test_sick += loaded.volumes[size_t(v)].pathology;
  CHECK(test_sick == 1);  // one held-out volume from each stratum
}

TEST_CASE("resynthesis with the same seed reproduces every byte") {
  PhantomConfig cfg;
  cfg.height = 64;
  cfg.width = 72;
  cfg.slices = 2;
  const fs::path a = fresh_dir("oct_ds_a");
  const fs::path b = fresh_dir("oct_ds_b");
  synth_dataset(a.string(), cfg, 6, 7);
  synth_dataset(b.string(), cfg, 6, 7);
  const auto ta = slurp_tree(a);
  const auto tb = slurp_tree(b);
  REQUIRE(ta.size() == tb.size());
  REQUIRE(ta.size() == size_t(6 * (2 * 2 + 1) + 1));
  for (const auto& [rel, bytes] : ta) {
    REQUIRE(tb.count(rel) == 1);
    CHECK(bytes == tb.at(rel));
  }
}

TEST_CASE("split guards") {
  DatasetIndex index;
  index.root = "unused";
  for (int v = 0; v < 9; ++v) {
    VolumeRecord r;
    r.dir = "vol";
    r.slices = 1;
    r.pathology = v < 4;  // four-volume stratum: too small to hold out from
    index.volumes.push_back(r);
  }
  CHECK_THROWS_AS((void)split_dataset(index, 0.2), DataError);
  CHECK_THROWS_AS((void)split_dataset(index, 0.0), ContractError);

  DatasetIndex ok;
  for (int v = 0; v < 10; ++v) {
    VolumeRecord r;
    r.pathology = v % 2 == 0;
    ok.volumes.push_back(r);
  }
  const auto split = split_dataset(ok, 0.2);
  CHECK(split.train.size() + split.test.size() == 10);
  CHECK(split.test.size() == 2);
}
