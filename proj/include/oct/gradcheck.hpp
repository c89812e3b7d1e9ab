#pragma once

// Central-difference gradient verification at double precision. Each named
// case owns its parameter blocks; the harness reads analytic gradients from
// one backward pass and compares every coordinate against (f(x+eps) -
// f(x-eps)) / 2eps with the scale-aware relative error
// |a - f| / max(1, |a|, |f|).

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "oct/nn.hpp"
#include "oct/rng.hpp"
#include "oct/tensor.hpp"

namespace oct {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  long coords = 0;
  bool pass = false;
};

using ParamBlocks = std::vector<std::vector<double>>;

struct GradCheckCase {
  std::string name;
  // Shared with the build closure so harness-side perturbations are seen.
  std::shared_ptr<ParamBlocks> params;
  // Builds the scalar loss from the current params on a fresh graph and
  // reports the leaf handle backing each param block (same order).
  std::function<Tensor<double>(Graph<double>&, std::vector<Tensor<double>>&)>
      build;
};

inline GradCheckResult run_gradcheck_case(GradCheckCase& c, double eps = 1e-5,
                                          double tol = 1e-4,
                                          double corrupt = 0.0) {
  GradCheckResult r;
  r.name = c.name;
  ParamBlocks& params = *c.params;

  std::vector<std::vector<double>> analytic(params.size());
  {
    Graph<double> g;
    std::vector<Tensor<double>> handles;
    auto loss = c.build(g, handles);
    contract(handles.size() == params.size(),
             c.name + ": build must report one handle per param block");
    g.backward(loss);
    for (size_t i = 0; i < handles.size(); ++i)
      analytic[i] = handles[i].has_grad()
                        ? handles[i].grad()
                        : std::vector<double>(params[i].size(), 0.0);
  }
  if (corrupt != 0.0 && !analytic.empty() && !analytic[0].empty())
    analytic[0][0] += corrupt * (1.0 + std::abs(analytic[0][0]));

  auto eval = [&]() {
    Graph<double> g;
    std::vector<Tensor<double>> handles;
    return c.build(g, handles).value()[0];
  };

  for (size_t i = 0; i < params.size(); ++i)
    for (size_t j = 0; j < params[i].size(); ++j) {
      double& slot = params[i][j];
      const double keep = slot;
      slot = keep + eps;
      const double up = eval();
      slot = keep - eps;
      const double down = eval();
      slot = keep;
      const double fd = (up - down) / (2.0 * eps);
      const double a = analytic[i][j];
      const double rel =
          std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      r.max_rel_err = std::max(r.max_rel_err, rel);
      ++r.coords;
    }
  r.pass = r.max_rel_err < tol;
  return r;
}

namespace detail {

inline std::vector<double> gc_rand(Rng& rng, size_t n, double lo = -1.0,
                                   double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Weighted sum against a fixed random seed tensor turns any output into a
// scalar without flattening the gradient structure.
inline Tensor<double> gc_pool(Graph<double>& g, Tensor<double> y,
                              const std::vector<double>& w) {
  auto s = g.leaf(y.shape(), w);
  return sum(mul(y, s));
}

}  // namespace detail

inline std::vector<GradCheckCase> standard_gradcheck_cases(uint64_t seed) {
  using detail::gc_pool;
  using detail::gc_rand;
  std::vector<GradCheckCase> cases;
  Rng master(seed);

  auto conv_case = [&](const std::string& name, int cin, int h, int w,
                       int cout, int kh, int kw) {
    Rng rng = master.fork(cases.size() + 1);
    GradCheckCase c;
    c.name = name;
    auto ps = std::make_shared<ParamBlocks>(
        ParamBlocks{gc_rand(rng, size_t(cin) * h * w),
                    gc_rand(rng, size_t(cout) * cin * kh * kw),
                    gc_rand(rng, size_t(cout))});
    c.params = ps;
    auto r = gc_rand(rng, size_t(cout) * h * w);
    c.build = [=](Graph<double>& g, std::vector<Tensor<double>>& hs) {
      auto x = g.leaf({cin, h, w}, (*ps)[0], true);
      auto k = g.leaf({cout, cin, kh, kw}, (*ps)[1], true);
      auto b = g.leaf({cout}, (*ps)[2], true);
      hs = {x, k, b};
      return gc_pool(g, conv2d(x, k, b), r);
    };
    cases.push_back(std::move(c));
  };
  conv_case("conv2d_odd", 2, 6, 5, 3, 3, 3);
  conv_case("conv2d_even", 1, 5, 6, 2, 2, 4);

  {
    Rng rng = master.fork(10);
    GradCheckCase c;
    c.name = "dense";
    const int m = 6, n = 5;
    auto ps = std::make_shared<ParamBlocks>(
        ParamBlocks{gc_rand(rng, size_t(m) * n), gc_rand(rng, size_t(n)),
                    gc_rand(rng, size_t(m))});
    c.params = ps;
    auto r = gc_rand(rng, size_t(m));
    c.build = [=](Graph<double>& g, std::vector<Tensor<double>>& hs) {
      auto w = g.leaf({m, n}, (*ps)[0], true);
      auto x = g.leaf({n}, (*ps)[1], true);
      auto b = g.leaf({m}, (*ps)[2], true);
      hs = {w, x, b};
      return gc_pool(g, dense(x, w, b), r);
    };
    cases.push_back(std::move(c));
  }

  auto unary_case = [&](const std::string& name, uint64_t stream, bool kink) {
    Rng rng = master.fork(stream);
    GradCheckCase c;
    c.name = name;
    const int n = 12;
    std::vector<double> x(static_cast<size_t>(n));
    for (auto& v : x) {
      // Stay away from the relu kink so the two-sided difference is clean.
      v = rng.uniform(kink ? 0.1 : -1.5, 1.5);
      if (kink && rng.bernoulli(0.5)) v = -v;
    }
    auto ps = std::make_shared<ParamBlocks>(ParamBlocks{std::move(x)});
    c.params = ps;
    auto r = gc_rand(rng, size_t(n));
    const std::string which = name;
    c.build = [=](Graph<double>& g, std::vector<Tensor<double>>& hs) {
      auto xt = g.leaf({n}, (*ps)[0], true);
      hs = {xt};
      Tensor<double> y;
      if (which == "relu")
        y = relu(xt);
      else if (which == "sigmoid")
        y = sigmoid(xt);
      else
        y = tanh_op(xt);
      return gc_pool(g, y, r);
    };
    cases.push_back(std::move(c));
  };
  unary_case("relu", 20, true);
  unary_case("sigmoid", 21, false);
  unary_case("tanh", 22, false);

  {
    Rng rng = master.fork(30);
    GradCheckCase c;
    c.name = "lstm_cell";
    const int in = 5, hid = 4;
    auto ps = std::make_shared<ParamBlocks>(
        ParamBlocks{gc_rand(rng, size_t(4 * hid) * in, -0.5, 0.5),
                    gc_rand(rng, size_t(4 * hid) * hid, -0.5, 0.5),
                    gc_rand(rng, size_t(4 * hid), -0.5, 0.5),
                    gc_rand(rng, size_t(in)), gc_rand(rng, size_t(hid)),
                    gc_rand(rng, size_t(hid))});
    c.params = ps;
    auto r = gc_rand(rng, size_t(2 * hid));
    auto cell = std::make_shared<LstmCell<double>>("gc", in, hid);
    c.build = [=](Graph<double>& g, std::vector<Tensor<double>>& hs) {
      cell->wx.value = (*ps)[0];
      cell->wh.value = (*ps)[1];
      cell->b.value = (*ps)[2];
      auto x = g.leaf({in}, (*ps)[3], true);
      auto h0 = g.leaf({hid}, (*ps)[4], true);
      auto c0 = g.leaf({hid}, (*ps)[5], true);
      auto [h1, c1] = cell->step(g, x, h0, c0);
      hs = {cell->wx.bind(g), cell->wh.bind(g), cell->b.bind(g), x, h0, c0};
      return gc_pool(g, concat0(h1, c1), r);
    };
    cases.push_back(std::move(c));
  }

  {
    Rng rng = master.fork(31);
    GradCheckCase c;
    c.name = "blstm_2step";
    const int in = 3, hid = 3;
    const size_t wsz = size_t(4 * hid) * in, usz = size_t(4 * hid) * hid,
                 bsz = size_t(4 * hid);
    auto ps = std::make_shared<ParamBlocks>(
        ParamBlocks{gc_rand(rng, wsz, -0.5, 0.5), gc_rand(rng, usz, -0.5, 0.5),
                    gc_rand(rng, bsz, -0.5, 0.5), gc_rand(rng, wsz, -0.5, 0.5),
                    gc_rand(rng, usz, -0.5, 0.5), gc_rand(rng, bsz, -0.5, 0.5),
                    gc_rand(rng, size_t(in)), gc_rand(rng, size_t(in))});
    c.params = ps;
    auto r0 = gc_rand(rng, size_t(2 * hid));
    auto r1 = gc_rand(rng, size_t(2 * hid));
    auto layer = std::make_shared<BlstmLayer<double>>("gc", in, hid);
    c.build = [=](Graph<double>& g, std::vector<Tensor<double>>& hs) {
      layer->fwd.wx.value = (*ps)[0];
      layer->fwd.wh.value = (*ps)[1];
      layer->fwd.b.value = (*ps)[2];
      layer->bwd.wx.value = (*ps)[3];
      layer->bwd.wh.value = (*ps)[4];
      layer->bwd.b.value = (*ps)[5];
      auto x0 = g.leaf({in}, (*ps)[6], true);
      auto x1 = g.leaf({in}, (*ps)[7], true);
      auto out = layer->forward(g, {x0, x1});
      hs = {layer->fwd.wx.bind(g), layer->fwd.wh.bind(g), layer->fwd.b.bind(g),
            layer->bwd.wx.bind(g), layer->bwd.wh.bind(g), layer->bwd.b.bind(g),
            x0, x1};
      return add(gc_pool(g, out[0], r0), gc_pool(g, out[1], r1));
    };
    cases.push_back(std::move(c));
  }

  {
    Rng rng = master.fork(40);
    GradCheckCase c;
    c.name = "bce";
    const int n = 8;
    auto ps = std::make_shared<ParamBlocks>(
        ParamBlocks{gc_rand(rng, size_t(n), 0.05, 0.95)});
    c.params = ps;
    std::vector<double> tgt(static_cast<size_t>(n)), msk(size_t(n), 1.0);
    for (auto& t : tgt) t = rng.bernoulli(0.5) ? 1.0 : 0.0;
    msk[3] = 0.0;
    c.build = [=](Graph<double>& g, std::vector<Tensor<double>>& hs) {
      auto p = g.leaf({n}, (*ps)[0], true);
      auto t = g.leaf({n}, tgt);
      auto m = g.leaf({n}, msk);
      hs = {p};
      return bce_loss(p, t, m);
    };
    cases.push_back(std::move(c));
  }

  {
    Rng rng = master.fork(41);
    GradCheckCase c;
    c.name = "mse";
    const int n = 8;
    auto ps = std::make_shared<ParamBlocks>(
        ParamBlocks{gc_rand(rng, size_t(n)), gc_rand(rng, size_t(n))});
    c.params = ps;
    std::vector<double> msk(size_t(n), 1.0);
    msk[5] = 0.0;
    c.build = [=](Graph<double>& g, std::vector<Tensor<double>>& hs) {
      auto a = g.leaf({n}, (*ps)[0], true);
      auto b = g.leaf({n}, (*ps)[1], true);
      auto m = g.leaf({n}, msk);
      hs = {a, b};
      return mse_loss(a, b, m);
    };
    cases.push_back(std::move(c));
  }

  {
    Rng rng = master.fork(42);
    GradCheckCase c;
    c.name = "stripes";
    const int h = 4, w = 5, nk = 1;
    auto ps =
        std::make_shared<ParamBlocks>(ParamBlocks{gc_rand(rng, size_t(h) * w)});
    c.params = ps;
    auto r = gc_rand(rng, size_t(w) * (2 * nk + 1) * h);
    c.build = [=](Graph<double>& g, std::vector<Tensor<double>>& hs) {
      auto e = g.leaf({1, h, w}, (*ps)[0], true);
      hs = {e};
      return gc_pool(g, extract_stripes(e, nk), r);
    };
    cases.push_back(std::move(c));
  }

  return cases;
}

// Runs the whole named suite. corrupt injects a deliberate error into the
// first analytic gradient of every case, as a self-test that the checker
// actually detects wrong gradients.
inline std::vector<GradCheckResult> run_gradchecks(uint64_t seed,
                                                   bool corrupt = false) {
  auto cases = standard_gradcheck_cases(seed);
  std::vector<GradCheckResult> out;
  out.reserve(cases.size());
  for (auto& c : cases)
    out.push_back(run_gradcheck_case(c, 1e-5, 1e-4, corrupt ? 0.05 : 0.0));
  return out;
}

}  // namespace oct
