#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "oct/gradcheck.hpp"
#include "oct/nn.hpp"
#include "oct/params_io.hpp"
#include "oct/rng.hpp"
#include "oracles.hpp"

using oct::BlstmLayer;
using oct::Graph;
using oct::LstmCell;
using oct::Parameter;
using oct::Tensor;

namespace {

std::vector<double> randv(oct::Rng& rng, size_t n, double lo = -1.0,
                          double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("lstm cell step matches the gate-by-gate reference") {
  oct::Rng rng(101);
  const int in = 6, hid = 5;
  LstmCell<double> cell("c", in, hid);
  cell.wx.value = randv(rng, size_t(4 * hid) * in, -0.5, 0.5);
  cell.wh.value = randv(rng, size_t(4 * hid) * hid, -0.5, 0.5);
  cell.b.value = randv(rng, size_t(4 * hid), -0.5, 0.5);
  auto x = randv(rng, size_t(in));
  auto h0 = randv(rng, size_t(hid));
  auto c0 = randv(rng, size_t(hid));

  std::vector<double> h_want, c_want;
  oracle::lstm_step(cell.wx.value, cell.wh.value, cell.b.value, hid, in, x, h0,
                    c0, h_want, c_want);

  Graph<double> g;
  auto [h1, c1] = cell.step(g, g.leaf({in}, x), g.leaf({hid}, h0),
                            g.leaf({hid}, c0));
  CHECK(max_abs_diff(h1.value(), h_want) < 1e-12);
  CHECK(max_abs_diff(c1.value(), c_want) < 1e-12);
}

TEST_CASE("lstm init opens the forget gate") {
  oct::Rng rng(7);
  LstmCell<double> cell("c", 4, 3);
  cell.init(rng);
  for (int u = 0; u < 3; ++u) {
    CHECK(cell.b.value[size_t(u)] == 0.0);          // input gate
    CHECK(cell.b.value[size_t(3 + u)] == 1.0);      // forget gate
    CHECK(cell.b.value[size_t(2 * 3 + u)] == 0.0);  // candidate
    CHECK(cell.b.value[size_t(3 * 3 + u)] == 0.0);  // output gate
  }
  double peak = 0;
  for (double v : cell.wx.value) peak = std::max(peak, std::abs(v));
  CHECK(peak > 0.0);
  CHECK(peak <= std::sqrt(6.0 / (4 + 3)));
}

TEST_CASE("blstm output mirrors under sequence reversal") {
  // With the backward cell sharing the forward cell's weights, reversing the
  // input sequence must swap the two output halves and flip time.
  oct::Rng rng(103);
  const int in = 4, hid = 3, n = 5;
  BlstmLayer<double> layer("b", in, hid);
  layer.init(rng);
  layer.bwd.wx.value = layer.fwd.wx.value;
  layer.bwd.wh.value = layer.fwd.wh.value;
  layer.bwd.b.value = layer.fwd.b.value;

  std::vector<std::vector<double>> xs;
  for (int t = 0; t < n; ++t) xs.push_back(randv(rng, size_t(in)));

  auto run = [&](bool reversed) {
    Graph<double> g;
    std::vector<Tensor<double>> seq;
    for (int t = 0; t < n; ++t) {
      const int tt = reversed ? n - 1 - t : t;
      seq.push_back(g.leaf({in}, xs[size_t(tt)]));
    }
    auto out = layer.forward(g, seq);
    std::vector<std::vector<double>> vals;
    for (auto& o : out) vals.push_back(o.value());
    return vals;
  };

  auto fwd = run(false);
  auto rev = run(true);
  for (int t = 0; t < n; ++t) {
    for (int u = 0; u < hid; ++u) {
      CHECK(fwd[size_t(t)][size_t(u)] ==
            doctest::Approx(rev[size_t(n - 1 - t)][size_t(hid + u)])
                .epsilon(1e-12));
      CHECK(fwd[size_t(t)][size_t(hid + u)] ==
            doctest::Approx(rev[size_t(n - 1 - t)][size_t(u)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("blstm halves are causal in opposite directions") {
  oct::Rng rng(104);
  const int in = 3, hid = 4, n = 6, t0 = 3;
  BlstmLayer<double> layer("b", in, hid);
  layer.init(rng);
  std::vector<std::vector<double>> xs;
  for (int t = 0; t < n; ++t) xs.push_back(randv(rng, size_t(in)));

  auto run = [&]() {
    Graph<double> g;
    std::vector<Tensor<double>> seq;
    for (int t = 0; t < n; ++t) seq.push_back(g.leaf({in}, xs[size_t(t)]));
    auto out = layer.forward(g, seq);
    std::vector<std::vector<double>> vals;
    for (auto& o : out) vals.push_back(o.value());
    return vals;
  };

  auto base = run();
  xs[size_t(t0)][0] += 0.75;
  auto bumped = run();

  for (int t = 0; t < n; ++t) {
    double dfwd = 0, dbwd = 0;
    for (int u = 0; u < hid; ++u) {
      dfwd = std::max(dfwd, std::abs(base[size_t(t)][size_t(u)] -
                                     bumped[size_t(t)][size_t(u)]));
      dbwd = std::max(dbwd, std::abs(base[size_t(t)][size_t(hid + u)] -
                                     bumped[size_t(t)][size_t(hid + u)]));
    }
    if (t < t0) CHECK(dfwd == 0.0);   // forward half can't see the future
    if (t >= t0) CHECK(dfwd > 0.0);
    if (t > t0) CHECK(dbwd == 0.0);   // backward half can't see the past
    if (t <= t0) CHECK(dbwd > 0.0);
  }
}

TEST_CASE("parameter reuse on one graph accumulates gradients") {
  // One weight leaf feeding two branches must receive both contributions.
  Graph<double> g;
  Parameter<double> w("w", {3});
  w.value = {1.0, 2.0, 3.0};
  auto a = g.leaf({3}, {1.0, 1.0, 1.0});
  auto b = g.leaf({3}, {2.0, 2.0, 2.0});
  auto w1 = w.bind(g);
  auto w2 = w.bind(g);
  CHECK(w1.node() == w2.node());  // memoized: same leaf
  auto loss = oct::add(oct::sum(oct::mul(w1, a)), oct::sum(oct::mul(w2, b)));
  g.backward(loss);
  CHECK(*w.grad() == std::vector<double>{3.0, 3.0, 3.0});

  // A fresh graph gets a fresh leaf seeded from the current value.
  Graph<double> g2;
  auto w3 = w.bind(g2);
  CHECK(w3.node() != w1.node());
  CHECK(w3.value() == w.value);
}

TEST_CASE("parameter files round-trip bit for bit") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "oct_nn_test";
  fs::create_directories(dir);
  const auto path = (dir / "params.bin").string();

  oct::Rng rng(55);
  Parameter<double> p1("layer.k", {2, 3});
  Parameter<double> p2("layer.b", {2});
  p1.value = randv(rng, 6);
  p2.value = randv(rng, 2);
  oct::ParamGroup<double> grp;
  grp.add(p1);
  grp.add(p2);
  oct::save_params(grp, path);

  Parameter<double> q1("layer.k", {2, 3});
  Parameter<double> q2("layer.b", {2});
  oct::ParamGroup<double> grp2;
  grp2.add(q1);
  grp2.add(q2);
  oct::load_params(grp2, path);
  CHECK(q1.value == p1.value);
  CHECK(q2.value == p2.value);

  // Same content writes the same bytes.
  const auto path2 = (dir / "params2.bin").string();
  oct::save_params(grp2, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
  CHECK(!s1.empty());

  // Strictness: wrong name, wrong shape, wrong cardinality.
  Parameter<double> bad_name("layer.other", {2, 3});
  oct::ParamGroup<double> gbad1;
  gbad1.add(bad_name);
  gbad1.add(q2);
  CHECK_THROWS_AS(oct::load_params(gbad1, path), oct::IoError);

  Parameter<double> bad_shape("layer.k", {3, 2});
  oct::ParamGroup<double> gbad2;
  gbad2.add(bad_shape);
  gbad2.add(q2);
  CHECK_THROWS_AS(oct::load_params(gbad2, path), oct::IoError);

  oct::ParamGroup<double> gbad3;
  gbad3.add(q1);
  CHECK_THROWS_AS(oct::load_params(gbad3, path), oct::IoError);

  auto manifest = oct::params_manifest(grp);
  CHECK(manifest["total"] == 8);
  CHECK(manifest["arrays"].size() == 2);
  CHECK(manifest["arrays"][0]["name"] == "layer.k");
  CHECK(manifest["arrays"][0]["dtype"] == "f64");

  fs::remove_all(dir);
}

TEST_CASE("gradient checks pass for every named op") {
  auto results = oct::run_gradchecks(2024);
  REQUIRE(results.size() == 11);
  std::vector<std::string> names;
  for (const auto& r : results) {
    CAPTURE(r.name);
    CAPTURE(r.max_rel_err);
    CHECK(r.pass);
    CHECK(r.coords > 0);
    names.push_back(r.name);
  }
  const std::vector<std::string> want = {
      "conv2d_odd", "conv2d_even", "dense",       "relu",
      "sigmoid",    "tanh",        "lstm_cell",   "blstm_2step",
      "bce",        "mse",         "stripes"};
  CHECK(names == want);
}

TEST_CASE("a corrupted gradient is caught by every check") {
  for (const auto& r : oct::run_gradchecks(2024, true)) {
    CAPTURE(r.name);
    CHECK(!r.pass);
  }
}
