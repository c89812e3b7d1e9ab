#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "oct/rng.hpp"
#include "oct/tensor.hpp"
#include "oct/threads.hpp"
#include "oracles.hpp"

using oct::Act;
using oct::Graph;
using oct::Shape;
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

struct ConvCfg {
  int cin, h, w, cout, kh, kw;
};

}  // namespace

TEST_CASE("conv2d matches the brute-force reference") {
  oct::Rng rng(11);
  const ConvCfg cfgs[] = {{1, 5, 7, 1, 3, 3},  {2, 6, 6, 3, 3, 5},
                          {3, 8, 9, 2, 2, 2},  {2, 7, 5, 3, 4, 3},
                          {1, 1, 8, 2, 1, 1},  {4, 16, 16, 8, 3, 3},
                          {2, 9, 4, 2, 5, 5}};
  for (const auto& c : cfgs) {
    CAPTURE(c.cin);
    CAPTURE(c.h);
    CAPTURE(c.w);
    CAPTURE(c.kh);
    CAPTURE(c.kw);
    auto in = randv(rng, size_t(c.cin) * c.h * c.w);
    auto k = randv(rng, size_t(c.cout) * c.cin * c.kh * c.kw);
    auto b = randv(rng, size_t(c.cout));
    std::vector<double> want;
    oracle::conv2d(in, c.cin, c.h, c.w, k, c.cout, c.kh, c.kw, b, want);

    Graph<double> g;
    auto x = g.leaf({c.cin, c.h, c.w}, in);
    auto kt = g.leaf({c.cout, c.cin, c.kh, c.kw}, k);
    auto bt = g.leaf({c.cout}, b);
    auto y = oct::conv2d(x, kt, bt);
    CHECK(y.shape() == Shape{c.cout, c.h, c.w});
    CHECK(max_abs_diff(y.value(), want) < 1e-12);
  }
}

TEST_CASE("conv2d impulse response is the flipped kernel") {
  // With cross-correlation, out[yc+dy, xc+dx] picks up k[cy-dy, cx-dx]:
  // the kernel appears rotated 180 degrees around the impulse.
  Graph<double> g;
  const int h = 9, w = 9, kh = 3, kw = 3;
  std::vector<double> in(size_t(h) * w, 0.0);
  in[4 * w + 4] = 1.0;
  std::vector<double> k(size_t(kh) * kw);
  for (int i = 0; i < kh; ++i)
    for (int j = 0; j < kw; ++j) k[size_t(i) * kw + j] = 1 + 3 * i + j;
  auto x = g.leaf({1, h, w}, in);
  auto kt = g.leaf({1, 1, kh, kw}, k);
  auto bt = g.leaf({1}, std::vector<double>{0.0});
  auto y = oct::conv2d(x, kt, bt);
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const double got = y.value()[size_t(4 + dy) * w + (4 + dx)];
      const double want = k[size_t(1 - dy) * kw + (1 - dx)];
      CHECK(got == doctest::Approx(want).epsilon(1e-14));
    }
  // Away from the impulse everything is zero.
  double total = 0;
  for (double v : y.value()) total += v;
  CHECK(total == doctest::Approx(45.0));  // sum of kernel entries
}

TEST_CASE("conv2d zero input yields bias planes") {
  Graph<double> g;
  oct::Rng rng(5);
  auto x = g.leaf({2, 4, 5});
  auto kt = g.leaf({3, 2, 3, 3}, randv(rng, 54));
  auto bt = g.leaf({3}, {0.5, -1.25, 2.0});
  auto y = oct::conv2d(x, kt, bt);
  for (int o = 0; o < 3; ++o)
    for (int p = 0; p < 20; ++p)
      CHECK(y.value()[size_t(o) * 20 + p] == bt.value()[size_t(o)]);
}

TEST_CASE("conv2d gradients match the tap-level reference") {
  oct::Rng rng(21);
  const ConvCfg cfgs[] = {{2, 6, 5, 3, 3, 3}, {1, 4, 7, 2, 2, 4},
                          {3, 5, 5, 2, 5, 3}};
  for (const auto& c : cfgs) {
    CAPTURE(c.kh);
    CAPTURE(c.kw);
    auto in = randv(rng, size_t(c.cin) * c.h * c.w);
    auto k = randv(rng, size_t(c.cout) * c.cin * c.kh * c.kw);
    auto b = randv(rng, size_t(c.cout));
    auto seed = randv(rng, size_t(c.cout) * c.h * c.w);

    Graph<double> g;
    auto x = g.leaf({c.cin, c.h, c.w}, in, true);
    auto kt = g.leaf({c.cout, c.cin, c.kh, c.kw}, k, true);
    auto bt = g.leaf({c.cout}, b, true);
    auto y = oct::conv2d(x, kt, bt);
    auto s = g.leaf({c.cout, c.h, c.w}, seed);
    auto loss = oct::sum(oct::mul(y, s));
    g.backward(loss);

    std::vector<double> din, dk, dbias;
    oracle::conv2d_grads(in, c.cin, c.h, c.w, k, c.cout, c.kh, c.kw, seed, din,
                         dk, dbias);
    CHECK(max_abs_diff(x.grad(), din) < 1e-12);
    CHECK(max_abs_diff(kt.grad(), dk) < 1e-12);
    CHECK(max_abs_diff(bt.grad(), dbias) < 1e-12);
  }
}

TEST_CASE("fused conv activation equals separate activation node") {
  oct::Rng rng(31);
  auto in = randv(rng, 2 * 6 * 6);
  auto k = randv(rng, 4 * 2 * 3 * 3);
  auto b = randv(rng, 4);
  auto seed = randv(rng, 4 * 6 * 6);

  auto run = [&](bool fused, Act act) {
    Graph<double> g;
    auto x = g.leaf({2, 6, 6}, in, true);
    auto kt = g.leaf({4, 2, 3, 3}, k, true);
    auto bt = g.leaf({4}, b, true);
    Tensor<double> y;
    if (fused) {
      y = oct::conv2d(x, kt, bt, act);
    } else {
      y = oct::conv2d(x, kt, bt);
      y = act == Act::Relu ? oct::relu(y) : oct::sigmoid(y);
    }
    auto s = g.leaf({4, 6, 6}, seed);
    g.backward(oct::sum(oct::mul(y, s)));
    return std::tuple{y.value(), x.grad(), kt.grad(), bt.grad()};
  };

  for (Act act : {Act::Relu, Act::Sigmoid}) {
    auto [v1, gx1, gk1, gb1] = run(true, act);
    auto [v2, gx2, gk2, gb2] = run(false, act);
    CHECK(max_abs_diff(v1, v2) < 1e-14);
    CHECK(max_abs_diff(gx1, gx2) < 1e-13);
    CHECK(max_abs_diff(gk1, gk2) < 1e-13);
    CHECK(max_abs_diff(gb1, gb2) < 1e-13);
  }
}

TEST_CASE("dense and matvec match the reference, values and gradients") {
  oct::Rng rng(41);
  const int m = 7, n = 5;
  auto W = randv(rng, size_t(m) * n);
  auto x = randv(rng, n);
  auto b = randv(rng, m);
  auto seed = randv(rng, m);

  std::vector<double> want;
  oracle::dense(W, m, n, x, b, want);

  Graph<double> g;
  auto xt = g.leaf({n}, x, true);
  auto wt = g.leaf({m, n}, W, true);
  auto bt = g.leaf({m}, b, true);
  auto y = oct::dense(xt, wt, bt);
  CHECK(max_abs_diff(y.value(), want) < 1e-13);

  auto s = g.leaf({m}, seed);
  g.backward(oct::sum(oct::mul(y, s)));
  for (int r = 0; r < m; ++r) {
    CHECK(bt.grad()[size_t(r)] == doctest::Approx(seed[size_t(r)]).epsilon(1e-13));
    for (int c = 0; c < n; ++c)
      CHECK(wt.grad()[size_t(r) * n + c] ==
            doctest::Approx(seed[size_t(r)] * x[size_t(c)]).epsilon(1e-12));
  }
  for (int c = 0; c < n; ++c) {
    double want_gx = 0;
    for (int r = 0; r < m; ++r) want_gx += W[size_t(r) * n + c] * seed[size_t(r)];
    CHECK(xt.grad()[size_t(c)] == doctest::Approx(want_gx).epsilon(1e-12));
  }

  Graph<double> g2;
  auto xt2 = g2.leaf({n}, x);
  auto wt2 = g2.leaf({m, n}, W);
  auto y2 = oct::matvec(wt2, xt2);
  std::vector<double> want2;
  oracle::dense(W, m, n, x, {}, want2);
  CHECK(max_abs_diff(y2.value(), want2) < 1e-13);
}

TEST_CASE("activations are stable at extreme inputs") {
  Graph<double> g;
  auto x = g.leaf({5}, {-30.0, -0.5, 0.0, 0.5, 30.0});
  auto s = oct::sigmoid(x);
  CHECK(s.value()[0] > 0.0);
  CHECK(s.value()[0] < 1e-12);
  CHECK(s.value()[2] == doctest::Approx(0.5));
  CHECK(s.value()[4] < 1.0);
  CHECK(1.0 - s.value()[4] < 1e-12);
  for (double v : s.value()) CHECK(std::isfinite(v));

  auto r = oct::relu(x);
  CHECK(r.value()[0] == 0.0);
  CHECK(r.value()[2] == 0.0);
  CHECK(r.value()[3] == 0.5);

  auto t = oct::tanh_op(x);
  CHECK(t.value()[0] == doctest::Approx(-1.0));
  CHECK(t.value()[2] == 0.0);
}

TEST_CASE("fan-out accumulates gradients additively") {
  // z = x*y + x  =>  dz/dx = y + 1, dz/dy = x
  Graph<double> g;
  auto x = g.leaf({3}, {1.0, -2.0, 0.5}, true);
  auto y = g.leaf({3}, {3.0, 0.25, -1.0}, true);
  auto z = oct::add(oct::mul(x, y), x);
  g.backward(oct::sum(z));
  for (int i = 0; i < 3; ++i) {
    CHECK(x.grad()[size_t(i)] == doctest::Approx(y.value()[size_t(i)] + 1.0));
    CHECK(y.grad()[size_t(i)] == doctest::Approx(x.value()[size_t(i)]));
  }
}

TEST_CASE("structural ops round-trip and scatter gradients") {
  Graph<double> g;
  auto a = g.leaf({3}, {1.0, 2.0, 3.0}, true);
  auto b = g.leaf({2}, {4.0, 5.0}, true);
  auto cat = oct::concat0(a, b);
  CHECK(cat.shape() == Shape{5});
  CHECK(cat.value() == std::vector<double>{1, 2, 3, 4, 5});

  auto back = oct::slice(cat, 3, 2);
  CHECK(back.value() == std::vector<double>{4, 5});
  g.backward(oct::sum(back));
  CHECK(a.grad() == std::vector<double>{0, 0, 0});
  CHECK(b.grad() == std::vector<double>{1, 1});

  Graph<double> g2;
  auto r0 = g2.leaf({2}, {1.0, 2.0}, true);
  auto r1 = g2.leaf({2}, {3.0, 4.0}, true);
  auto m = oct::stack_rows<double>({r0, r1});
  CHECK(m.shape() == Shape{2, 2});
  auto picked = oct::row(m, 1);
  CHECK(picked.value() == std::vector<double>{3, 4});
  g2.backward(oct::sum(oct::scale(picked, 2.0)));
  CHECK(r0.grad() == std::vector<double>{0, 0});
  CHECK(r1.grad() == std::vector<double>{2, 2});
}

TEST_CASE("stripes follow the shifted-column layout") {
  // Impulse at y0=1, x=2 in a 4x5 map with shifts -2..2: stripe x sees the
  // impulse in block b = 2 + (2 - x), i.e. x=0 -> offset 4H+y0 down to
  // x=4 -> offset y0.
  const int h = 4, w = 5, nk = 2, span = 2 * nk + 1;
  Graph<double> g;
  std::vector<double> e(size_t(h) * w, 0.0);
  e[1 * w + 2] = 1.0;
  auto et = g.leaf({1, h, w}, e, true);
  auto st = oct::extract_stripes(et, nk);
  CHECK(st.shape() == Shape{w, span * h});
  for (int x = 0; x < w; ++x) {
    const int want_b = 2 - x + nk;
    for (int b = 0; b < span; ++b)
      for (int y = 0; y < h; ++y) {
        const double v = st.value()[(size_t(x) * span + b) * h + y];
        if (b == want_b && y == 1)
          CHECK(v == 1.0);
        else
          CHECK(v == 0.0);
      }
  }

  // Adjoint: d sum(stripes) / dE[y][x] counts how many stripes sample (y,x).
  g.backward(oct::sum(st));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int lo = std::max(x - nk, 0), hi = std::min(x + nk, w - 1);
      CHECK(et.grad()[size_t(y) * w + x] == double(hi - lo + 1));
    }
}

TEST_CASE("bce loss value, clamping, and gradient") {
  Graph<double> g;
  auto p = g.leaf({4}, {0.5, 0.5, 0.5, 0.5}, true);
  auto t = g.leaf({4}, {1.0, 0.0, 1.0, 0.0});
  auto m = g.leaf({4}, {1.0, 1.0, 1.0, 1.0});
  auto l = oct::bce_loss(p, t, m);
  CHECK(l.value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  // Saturated predictions stay finite through the clamp.
  Graph<double> g2;
  auto p2 = g2.leaf({2}, {0.0, 1.0}, true);
  auto t2 = g2.leaf({2}, {1.0, 0.0});
  auto m2 = g2.leaf({2}, {1.0, 1.0});
  auto l2 = oct::bce_loss(p2, t2, m2);
  CHECK(std::isfinite(l2.value()[0]));
  CHECK(l2.value()[0] == doctest::Approx(-std::log(1e-7)).epsilon(1e-6));

  // Gradient against central differences, including a masked-out slot.
  oct::Rng rng(77);
  std::vector<double> pv = {0.3, 0.8, 0.51, 0.12};
  std::vector<double> tv = {1.0, 0.0, 1.0, 1.0};
  std::vector<double> mv = {1.0, 1.0, 0.0, 1.0};
  auto eval = [&]() {
    Graph<double> gg;
    auto pp = gg.leaf({4}, pv, true);
    auto tt = gg.leaf({4}, tv);
    auto mm = gg.leaf({4}, mv);
    return oct::bce_loss(pp, tt, mm).value()[0];
  };
  Graph<double> g3;
  auto p3 = g3.leaf({4}, pv, true);
  auto t3 = g3.leaf({4}, tv);
  auto m3 = g3.leaf({4}, mv);
  g3.backward(oct::bce_loss(p3, t3, m3));
  for (int i = 0; i < 4; ++i) {
    const double fd = oracle::central_diff(eval, pv[size_t(i)], 1e-6);
    CHECK(p3.grad()[size_t(i)] == doctest::Approx(fd).epsilon(1e-7));
  }
  CHECK(p3.grad()[2] == 0.0);  // masked out
}

TEST_CASE("mse loss value and gradient") {
  std::vector<double> av = {1.0, 2.0, 3.0, -1.0};
  std::vector<double> bv = {1.5, 2.0, 0.0, -1.0};
  std::vector<double> mv = {1.0, 1.0, 0.0, 1.0};
  Graph<double> g;
  auto a = g.leaf({4}, av, true);
  auto b = g.leaf({4}, bv);
  auto m = g.leaf({4}, mv);
  auto l = oct::mse_loss(a, b, m);
  CHECK(l.value()[0] == doctest::Approx(0.25 / 3.0).epsilon(1e-14));
  g.backward(l);
  CHECK(a.grad()[0] == doctest::Approx(-1.0 / 3.0).epsilon(1e-13));
  CHECK(a.grad()[1] == 0.0);
  CHECK(a.grad()[2] == 0.0);
  CHECK(a.grad()[3] == 0.0);
}

TEST_CASE("tape rewind frees nodes and the graph stays usable") {
  Graph<double> g;
  auto x = g.leaf({4}, {1.0, 2.0, 3.0, 4.0}, true);
  const size_t base = g.mark();
  for (int step = 0; step < 3; ++step) {
    auto y = oct::scale(x, 2.0);
    auto l = oct::sum(y);
    g.backward(l);
    CHECK(l.value()[0] == doctest::Approx(20.0));
    CHECK(x.grad() == std::vector<double>{2, 2, 2, 2});
    g.rewind(base);
    x.node()->grad.clear();  // fresh accumulation next pass
    CHECK(g.node_count() == base);
  }
}

TEST_CASE("results are bit-identical across thread counts") {
  oct::Rng rng(91);
  auto in = randv(rng, size_t(3) * 40 * 50);
  auto k = randv(rng, size_t(8) * 3 * 5 * 5);
  auto b = randv(rng, 8);
  auto seed = randv(rng, size_t(8) * 40 * 50);

  auto run = [&]() {
    Graph<double> g;
    auto x = g.leaf({3, 40, 50}, in, true);
    auto kt = g.leaf({8, 3, 5, 5}, k, true);
    auto bt = g.leaf({8}, b, true);
    auto y = oct::conv2d(x, kt, bt, Act::Relu);
    auto s = g.leaf({8, 40, 50}, seed);
    g.backward(oct::sum(oct::mul(y, s)));
    return std::tuple{y.value(), x.grad(), kt.grad()};
  };

  oct::set_threads(1);
  auto [v1, gx1, gk1] = run();
  oct::set_threads(3);
  auto [v3, gx3, gk3] = run();
  oct::set_threads(1);
  CHECK(std::memcmp(v1.data(), v3.data(), v1.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(gx1.data(), gx3.data(), gx1.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(gk1.data(), gk3.data(), gk1.size() * sizeof(double)) == 0);
}

TEST_CASE("shape violations are rejected") {
  Graph<double> g;
  auto x = g.leaf({2, 4, 4});
  auto k = g.leaf({3, 1, 3, 3});  // wrong cin
  auto b = g.leaf({3});
  CHECK_THROWS_AS(oct::conv2d(x, k, b), oct::DimensionError);

  auto v = g.leaf({5});
  auto w = g.leaf({4, 4});
  CHECK_THROWS_AS(oct::matvec(w, v), oct::DimensionError);
  CHECK_THROWS_AS(oct::add(v, g.leaf({4})), oct::DimensionError);
  CHECK_THROWS_AS(oct::slice(v, 3, 4), oct::DimensionError);
  CHECK_THROWS_AS(oct::row(w, 7), oct::DimensionError);

  // Backward demands a scalar.
  auto y = g.leaf({5}, {1, 2, 3, 4, 5}, true);
  CHECK_THROWS_AS(g.backward(oct::scale(y, 1.0)), oct::ContractError);
}

TEST_CASE("float instantiation works end to end") {
  Graph<float> g;
  auto x = g.leaf({1, 4, 4}, std::vector<float>(16, 0.5f), true);
  auto k = g.leaf({2, 1, 3, 3}, std::vector<float>(18, 0.1f), true);
  auto b = g.leaf({2}, {0.0f, 1.0f});
  auto y = oct::conv2d(x, k, b, Act::Sigmoid);
  g.backward(oct::sum(y));
  CHECK(x.grad().size() == 16);
  for (float v : y.value()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
}
