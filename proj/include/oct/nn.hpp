#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "oct/rng.hpp"
#include "oct/tensor.hpp"

namespace oct {

// A named trainable array. Its value persists across steps; bind() mirrors
// it onto a graph as a leaf, memoized per graph so every use of the layer
// within one step shares a single leaf and fan-out gradients accumulate.
template <typename T>
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<T> value;

  Parameter(std::string n, Shape s)
      : name(std::move(n)), shape(std::move(s)),
        value(size_t(shape_numel(shape)), T(0)) {}

  long count() const { return long(value.size()); }

  Tensor<T> bind(Graph<T>& g) {
    if (serial_ != g.serial()) {
      bound_ = g.leaf(shape, value, true);
      serial_ = g.serial();
    }
    return bound_;
  }

  // Gradient accumulated by the last backward() on the graph this parameter
  // was bound to; null when the parameter never joined the loss.
  const std::vector<T>* grad() const {
    if (serial_ == 0 || !bound_.valid() || !bound_.has_grad()) return nullptr;
    return &bound_.grad();
  }

 private:
  uint64_t serial_ = 0;
  Tensor<T> bound_;
};

namespace init {

// Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out)).
template <typename T>
void glorot(Parameter<T>& p, long fan_in, long fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  for (auto& v : p.value) v = T(rng.uniform(-limit, limit));
}

}  // namespace init

// Collects parameter pointers in a fixed registration order; that order is
// the serialization and optimizer-slot order.
template <typename T>
struct ParamGroup {
  std::vector<Parameter<T>*> items;

  void add(Parameter<T>& p) { items.push_back(&p); }
  void add(const ParamGroup<T>& sub) {
    items.insert(items.end(), sub.items.begin(), sub.items.end());
  }
  long scalar_count() const {
    long n = 0;
    for (const auto* p : items) n += p->count();
    return n;
  }
};

template <typename T>
struct ConvLayer {
  Parameter<T> k, b;
  Act act;

  ConvLayer(const std::string& name, int cout, int cin, int kh, int kw,
            Act act_)
      : k(name + ".k", {cout, cin, kh, kw}), b(name + ".b", {cout}),
        act(act_) {}

  void init(Rng& rng) {
    const Shape& s = k.shape;
    init::glorot(k, long(s[1]) * s[2] * s[3], long(s[0]) * s[2] * s[3], rng);
    // bias stays zero
  }

  Tensor<T> forward(Graph<T>& g, Tensor<T> x) {
    return conv2d(x, k.bind(g), b.bind(g), act);
  }

  void collect(ParamGroup<T>& out) {
    out.add(k);
    out.add(b);
  }
};

// Gates packed i, f, g, o along the first axis of wx/wh/b.
template <typename T>
struct LstmCell {
  int in_dim, hidden;
  Parameter<T> wx, wh, b;

  LstmCell(const std::string& name, int in_dim_, int hidden_)
      : in_dim(in_dim_), hidden(hidden_),
        wx(name + ".wx", {4 * hidden_, in_dim_}),
        wh(name + ".wh", {4 * hidden_, hidden_}), b(name + ".b", {4 * hidden_}) {}

  void init(Rng& rng) {
    init::glorot(wx, in_dim, hidden, rng);
    init::glorot(wh, hidden, hidden, rng);
    // Forget gate starts open so early gradients reach across time.
    for (int u = 0; u < hidden; ++u) b.value[size_t(hidden + u)] = T(1);
  }

  std::pair<Tensor<T>, Tensor<T>> step(Graph<T>& g, Tensor<T> x, Tensor<T> h,
                                       Tensor<T> c) {
    auto z = add(dense(x, wx.bind(g), b.bind(g)), matvec(wh.bind(g), h));
    auto gi = sigmoid(slice(z, 0, hidden));
    auto gf = sigmoid(slice(z, hidden, hidden));
    auto gg = tanh_op(slice(z, 2 * hidden, hidden));
    auto go = sigmoid(slice(z, 3 * hidden, hidden));
    auto c_next = add(mul(gf, c), mul(gi, gg));
    auto h_next = mul(go, tanh_op(c_next));
    return {h_next, c_next};
  }

  void collect(ParamGroup<T>& out) {
    out.add(wx);
    out.add(wh);
    out.add(b);
  }
};

// Bidirectional wrapper: runs one cell left-to-right and an independent cell
// right-to-left over the sequence, then concatenates per-step outputs.
// States start at zero for every sequence.
template <typename T>
struct BlstmLayer {
  LstmCell<T> fwd, bwd;

  BlstmLayer(const std::string& name, int in_dim, int hidden)
      : fwd(name + ".fwd", in_dim, hidden), bwd(name + ".bwd", in_dim, hidden) {}

  void init(Rng& rng) {
    fwd.init(rng);
    bwd.init(rng);
  }

  std::vector<Tensor<T>> forward(Graph<T>& g,
                                 const std::vector<Tensor<T>>& xs) {
    const int n = int(xs.size());
    contract(n > 0, "blstm: empty sequence");
    std::vector<Tensor<T>> hf(static_cast<size_t>(n)), hb(static_cast<size_t>(n));
    auto h = g.leaf({fwd.hidden});
    auto c = g.leaf({fwd.hidden});
    for (int t = 0; t < n; ++t) {
      auto [h2, c2] = fwd.step(g, xs[size_t(t)], h, c);
      hf[size_t(t)] = h2;
      h = h2;
      c = c2;
    }
    h = g.leaf({bwd.hidden});
    c = g.leaf({bwd.hidden});
    for (int t = n - 1; t >= 0; --t) {
      auto [h2, c2] = bwd.step(g, xs[size_t(t)], h, c);
      hb[size_t(t)] = h2;
      h = h2;
      c = c2;
    }
    std::vector<Tensor<T>> out(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t)
      out[size_t(t)] = concat0(hf[size_t(t)], hb[size_t(t)]);
    return out;
  }

  void collect(ParamGroup<T>& out) {
    fwd.collect(out);
    bwd.collect(out);
  }
};

// Same dense applied at every sequence step, with an optional sigmoid.
template <typename T>
struct TimeDistributedDense {
  Parameter<T> w, b;
  bool sigmoid_out;

  TimeDistributedDense(const std::string& name, int in_dim, int out_dim,
                       bool sigmoid_out_)
      : w(name + ".w", {out_dim, in_dim}), b(name + ".b", {out_dim}),
        sigmoid_out(sigmoid_out_) {}

  void init(Rng& rng) { init::glorot(w, w.shape[1], w.shape[0], rng); }

  std::vector<Tensor<T>> forward(Graph<T>& g,
                                 const std::vector<Tensor<T>>& xs) {
    std::vector<Tensor<T>> out(xs.size());
    for (size_t t = 0; t < xs.size(); ++t) {
      auto y = dense(xs[t], w.bind(g), b.bind(g));
      out[t] = sigmoid_out ? sigmoid(y) : y;
    }
    return out;
  }

  void collect(ParamGroup<T>& out) {
    out.add(w);
    out.add(b);
  }
};

}  // namespace oct
