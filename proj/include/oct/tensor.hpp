#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "oct/conv_detail.hpp"
#include "oct/errors.hpp"

namespace oct {

using Shape = std::vector<int>;

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (int d : s) {
    if (d <= 0) throw DimensionError("shape dims must be positive");
    n *= d;
  }
  return n;
}

enum class Op : uint8_t {
  Leaf,
  Conv2d,     // (x, k, b), fused activation
  Dense,      // (x, W, b) -> W x + b
  Matvec,     // (W, x) -> W x
  Add,
  Mul,
  Concat0,    // along axis 0
  Slice,      // 1-d range [off, off+len)
  Row,        // row t of [N,D]
  StackRows,  // N inputs [D] -> [N,D]
  Relu,
  Sigmoid,
  Tanh,
  Scale,      // x * fparam
  Sum,        // -> scalar
  Bce,        // (pred, target, mask) -> scalar, masked mean
  Mse,        // (a, b, mask) -> scalar, masked mean
  Stripes,    // edge [1,H,W] -> [W, (2nk+1)H]
};

enum class Act : uint8_t { None, Relu, Sigmoid };

template <typename T>
class Graph;

template <typename T>
struct Node {
  Op op = Op::Leaf;
  Act act = Act::None;
  bool requires_grad = false;
  int id = -1;
  std::array<int, 2> iparam{0, 0};
  T fparam{};
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first touch during backward
  std::vector<Node<T>*> inputs;
  Graph<T>* graph = nullptr;
};

// Lightweight handle; the Graph owns the node storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Node<T>* n) : n_(n) {}

  bool valid() const { return n_ != nullptr; }
  const Shape& shape() const { return node()->shape; }
  long size() const { return long(node()->value.size()); }
  std::vector<T>& value() { return node()->value; }
  const std::vector<T>& value() const { return node()->value; }
  bool requires_grad() const { return node()->requires_grad; }
  bool has_grad() const { return !node()->grad.empty(); }
  const std::vector<T>& grad() const {
    contract(has_grad(), "gradient not populated; call backward() first");
    return node()->grad;
  }
  Node<T>* node() const {
    if (!n_) throw ContractError("use of empty tensor handle");
    return n_;
  }

 private:
  Node<T>* n_ = nullptr;
};

namespace detail {
inline std::atomic<uint64_t> graph_serial_counter{1};

template <typename T>
inline T stable_sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
inline void apply_act(Act a, std::vector<T>& v) {
  switch (a) {
    case Act::None:
      break;
    case Act::Relu:
      for (auto& x : v) x = x > T(0) ? x : T(0);
      break;
    case Act::Sigmoid:
      for (auto& x : v) x = stable_sigmoid(x);
      break;
  }
}

// Derivative from the stored post-activation output.
template <typename T>
inline T act_prime_from_out(Act a, T out) {
  switch (a) {
    case Act::None:
      return T(1);
    case Act::Relu:
      return out > T(0) ? T(1) : T(0);
    case Act::Sigmoid:
      return out * (T(1) - out);
  }
  return T(1);
}
}  // namespace detail

template <typename T>
class Graph {
 public:
  Graph() : serial_(detail::graph_serial_counter.fetch_add(1)) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  uint64_t serial() const { return serial_; }
  size_t node_count() const { return nodes_.size(); }

  Tensor<T> leaf(Shape s, bool requires_grad = false) {
    Node<T>* n = make(Op::Leaf, std::move(s), {});
    n->requires_grad = requires_grad;
    return Tensor<T>(n);
  }

  Tensor<T> leaf(Shape s, std::vector<T> v, bool requires_grad = false) {
    const long want = shape_numel(s);
    if (long(v.size()) != want)
      throw DimensionError("leaf: data size does not match shape");
    Node<T>* n = make(Op::Leaf, std::move(s), {});
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return Tensor<T>(n);
  }

  // Marks the current tape position; rewind() frees everything created
  // after it. Handles into the freed region become invalid.
  size_t mark() const { return nodes_.size(); }
  void rewind(size_t m) {
    contract(m <= nodes_.size(), "rewind past end of tape");
    nodes_.resize(m);
  }

  // Reverse-mode sweep. The tape is in creation order, which is a
  // topological order, so one reverse pass visits each node exactly once;
  // grads accumulate additively into fan-out nodes.
  void backward(const Tensor<T>& loss) {
    Node<T>* ln = loss.node();
    contract(ln->graph == this, "backward: tensor from another graph");
    contract(ln->value.size() == 1, "backward requires a scalar loss");
    contract(ln->requires_grad, "backward: loss does not require grad");
    touch_grad(ln);
    ln->grad[0] = T(1);
    for (long i = ln->id; i >= 0; --i) {
      Node<T>& n = nodes_[size_t(i)];
      if (!n.requires_grad || n.grad.empty()) continue;
      backprop(n);
    }
  }

  static constexpr T bce_clamp() { return T(1e-7); }

  Node<T>* make(Op op, Shape s, std::vector<Node<T>*> inputs) {
    for (Node<T>* in : inputs)
      contract(in->graph == this, "op inputs must come from the same graph");
    nodes_.emplace_back();
    Node<T>& n = nodes_.back();
    n.op = op;
    n.shape = std::move(s);
    n.value.assign(size_t(shape_numel(n.shape)), T(0));
    n.inputs = std::move(inputs);
    n.graph = this;
    n.id = int(nodes_.size()) - 1;
    for (Node<T>* in : n.inputs) n.requires_grad |= in->requires_grad;
    return &n;
  }

 private:
  static void touch_grad(Node<T>* n) {
    if (n->grad.empty()) n->grad.assign(n->value.size(), T(0));
  }
  // Accumulate into an input's grad only when it participates in autodiff.
  static std::vector<T>* grad_of(Node<T>* n) {
    if (!n->requires_grad) return nullptr;
    touch_grad(n);
    return &n->grad;
  }

  void backprop(Node<T>& n) {
    using detail::act_prime_from_out;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Conv2d: {
        Node<T>*x = n.inputs[0], *k = n.inputs[1], *b = n.inputs[2];
        const int cin = x->shape[0], h = x->shape[1], w = x->shape[2];
        const int cout = k->shape[0], kh = k->shape[2], kw = k->shape[3];
        const int cy = kh / 2, cx = kw / 2;
        const std::vector<T>* dpre = &n.grad;
        std::vector<T> scratch;
        if (n.act != Act::None) {
          scratch.resize(n.grad.size());
          for (size_t p = 0; p < scratch.size(); ++p)
            scratch[p] = n.grad[p] * act_prime_from_out(n.act, n.value[p]);
          dpre = &scratch;
        }
        std::vector<T>* gk = grad_of(k);
        std::vector<T>* gb = grad_of(b);
        if (gk || gb)
          oct::detail::conv2d_backward_filter(
              x->value.data(), cin, h, w, dpre->data(), cout, kh, kw, cy, cx,
              gk ? gk->data() : scratch_sink(k), gb ? gb->data() : nullptr);
        if (std::vector<T>* gx = grad_of(x))
          oct::detail::conv2d_backward_input(dpre->data(), cout, h, w,
                                             k->value.data(), cin, kh, kw, cy,
                                             cx, gx->data());
        break;
      }
      case Op::Dense:
      case Op::Matvec: {
        const bool has_bias = n.op == Op::Dense;
        Node<T>* x = n.inputs[0];
        Node<T>* wgt = n.inputs[1];
        const int m = wgt->shape[0], in_dim = wgt->shape[1];
        using Mat = oct::detail::MatRM<T>;
        Eigen::Map<const Mat> W(wgt->value.data(), m, in_dim);
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(
            x->value.data(), in_dim);
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> dy(n.grad.data(),
                                                                 m);
        if (std::vector<T>* gw = grad_of(wgt)) {
          Eigen::Map<Mat> gwm(gw->data(), m, in_dim);
          gwm.noalias() += dy * xv.transpose();
        }
        if (std::vector<T>* gx = grad_of(x)) {
          Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gxv(gx->data(),
                                                              in_dim);
          gxv.noalias() += W.transpose() * dy;
        }
        if (has_bias) {
          if (std::vector<T>* gb = grad_of(n.inputs[2]))
            for (int r = 0; r < m; ++r) (*gb)[size_t(r)] += n.grad[size_t(r)];
        }
        break;
      }
      case Op::Add:
        for (Node<T>* in : n.inputs)
          if (std::vector<T>* g = grad_of(in))
            for (size_t p = 0; p < n.grad.size(); ++p) (*g)[p] += n.grad[p];
        break;
      case Op::Mul: {
        Node<T>*a = n.inputs[0], *b = n.inputs[1];
        if (std::vector<T>* ga = grad_of(a))
          for (size_t p = 0; p < n.grad.size(); ++p)
            (*ga)[p] += n.grad[p] * b->value[p];
        if (std::vector<T>* gb = grad_of(b))
          for (size_t p = 0; p < n.grad.size(); ++p)
            (*gb)[p] += n.grad[p] * a->value[p];
        break;
      }
      case Op::Concat0: {
        size_t off = 0;
        for (Node<T>* in : n.inputs) {
          const size_t len = in->value.size();
          if (std::vector<T>* g = grad_of(in))
            for (size_t p = 0; p < len; ++p) (*g)[p] += n.grad[off + p];
          off += len;
        }
        break;
      }
      case Op::Slice: {
        if (std::vector<T>* g = grad_of(n.inputs[0])) {
          const size_t off = size_t(n.iparam[0]);
          for (size_t p = 0; p < n.grad.size(); ++p) (*g)[off + p] += n.grad[p];
        }
        break;
      }
      case Op::Row: {
        if (std::vector<T>* g = grad_of(n.inputs[0])) {
          const size_t off = size_t(n.iparam[0]) * n.grad.size();
          for (size_t p = 0; p < n.grad.size(); ++p) (*g)[off + p] += n.grad[p];
        }
        break;
      }
      case Op::StackRows: {
        const size_t d = size_t(n.shape[1]);
        for (size_t r = 0; r < n.inputs.size(); ++r)
          if (std::vector<T>* g = grad_of(n.inputs[r]))
            for (size_t p = 0; p < d; ++p) (*g)[p] += n.grad[r * d + p];
        break;
      }
      case Op::Relu:
        if (std::vector<T>* g = grad_of(n.inputs[0]))
          for (size_t p = 0; p < n.grad.size(); ++p)
            (*g)[p] += n.value[p] > T(0) ? n.grad[p] : T(0);
        break;
      case Op::Sigmoid:
        if (std::vector<T>* g = grad_of(n.inputs[0]))
          for (size_t p = 0; p < n.grad.size(); ++p)
            (*g)[p] += n.grad[p] * n.value[p] * (T(1) - n.value[p]);
        break;
      case Op::Tanh:
        if (std::vector<T>* g = grad_of(n.inputs[0]))
          for (size_t p = 0; p < n.grad.size(); ++p)
            (*g)[p] += n.grad[p] * (T(1) - n.value[p] * n.value[p]);
        break;
      case Op::Scale:
        if (std::vector<T>* g = grad_of(n.inputs[0]))
          for (size_t p = 0; p < n.grad.size(); ++p)
            (*g)[p] += n.grad[p] * n.fparam;
        break;
      case Op::Sum:
        if (std::vector<T>* g = grad_of(n.inputs[0]))
          for (size_t p = 0; p < g->size(); ++p) (*g)[p] += n.grad[0];
        break;
      case Op::Bce: {
        Node<T>*pred = n.inputs[0], *tgt = n.inputs[1], *msk = n.inputs[2];
        if (std::vector<T>* g = grad_of(pred)) {
          const T inv_m = n.fparam;  // 1 / sum(mask), cached at forward
          const T eps = bce_clamp();
          const T go = n.grad[0];
          for (size_t p = 0; p < g->size(); ++p) {
            const T pv = pred->value[p];
            if (msk->value[p] == T(0) || pv < eps || pv > T(1) - eps) continue;
            (*g)[p] += go * msk->value[p] * inv_m * (pv - tgt->value[p]) /
                       (pv * (T(1) - pv));
          }
        }
        break;
      }
      case Op::Mse: {
        Node<T>*a = n.inputs[0], *b = n.inputs[1], *msk = n.inputs[2];
        const T inv_m = n.fparam;
        const T go = n.grad[0];
        std::vector<T>* ga = grad_of(a);
        std::vector<T>* gb = grad_of(b);
        for (size_t p = 0; p < a->value.size(); ++p) {
          const T d = T(2) * (a->value[p] - b->value[p]) * msk->value[p] * inv_m;
          if (ga) (*ga)[p] += go * d;
          if (gb) (*gb)[p] -= go * d;
        }
        break;
      }
      case Op::Stripes: {
        if (std::vector<T>* g = grad_of(n.inputs[0])) {
          const int h = n.inputs[0]->shape[1], w = n.inputs[0]->shape[2];
          const int nk = n.iparam[0];
          const int span = 2 * nk + 1;
          for (int x = 0; x < w; ++x)
            for (int b = 0; b < span; ++b) {
              const int xs = x + (b - nk);
              if (xs < 0 || xs >= w) continue;
              const T* gr = n.grad.data() + (size_t(x) * span + b) * h;
              for (int y = 0; y < h; ++y) (*g)[size_t(y) * w + xs] += gr[y];
            }
        }
        break;
      }
    }
  }

  // Filter grads may be requested while only the bias needs grad; give the
  // kernel a throwaway buffer in that case.
  T* scratch_sink(Node<T>* k) {
    sink_.assign(k->value.size(), T(0));
    return sink_.data();
  }

  std::deque<Node<T>> nodes_;
  std::vector<T> sink_;
  uint64_t serial_;
};

// ---- op builders ----------------------------------------------------------

template <typename T>
Graph<T>& graph_of(const Tensor<T>& t) {
  return *t.node()->graph;
}

// Stride-1 "same" zero-padded cross-correlation with optional fused
// activation. input [Cin,H,W], kernels [Cout,Cin,kh,kw], bias [Cout].
template <typename T>
Tensor<T> conv2d(Tensor<T> input, Tensor<T> kernels, Tensor<T> bias,
                 Act act = Act::None) {
  const Shape& xs = input.shape();
  const Shape& ks = kernels.shape();
  if (xs.size() != 3 || ks.size() != 4)
    throw DimensionError("conv2d: input must be [C,H,W], kernels [O,C,kh,kw]");
  if (ks[1] != xs[0])
    throw DimensionError("conv2d: kernel input channels (" +
                         std::to_string(ks[1]) + ") do not match input (" +
                         std::to_string(xs[0]) + ")");
  if (bias.shape() != Shape{ks[0]})
    throw DimensionError("conv2d: bias must be [Cout]");
  Graph<T>& g = graph_of(input);
  Node<T>* n = g.make(Op::Conv2d, {ks[0], xs[1], xs[2]},
                      {input.node(), kernels.node(), bias.node()});
  n->act = act;
  detail::conv2d_forward(input.value().data(), xs[0], xs[1], xs[2],
                         kernels.value().data(), ks[0], ks[2], ks[3], ks[2] / 2,
                         ks[3] / 2, bias.value().data(), n->value.data());
  detail::apply_act(act, n->value);
  return Tensor<T>(n);
}

// weights [M,N] * input [N] + bias [M].
template <typename T>
Tensor<T> dense(Tensor<T> input, Tensor<T> weights, Tensor<T> bias) {
  const Shape& ws = weights.shape();
  if (ws.size() != 2 || input.shape() != Shape{ws[1]} ||
      bias.shape() != Shape{ws[0]})
    throw DimensionError("dense: need weights [M,N], input [N], bias [M]");
  Graph<T>& g = graph_of(input);
  Node<T>* n =
      g.make(Op::Dense, {ws[0]}, {input.node(), weights.node(), bias.node()});
  using Mat = detail::MatRM<T>;
  Eigen::Map<const Mat> W(weights.value().data(), ws[0], ws[1]);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> x(input.value().data(),
                                                          ws[1]);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> y(n->value.data(), ws[0]);
  y.noalias() = W * x;
  for (int r = 0; r < ws[0]; ++r) n->value[size_t(r)] += bias.value()[size_t(r)];
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> matvec(Tensor<T> weights, Tensor<T> input) {
  const Shape& ws = weights.shape();
  if (ws.size() != 2 || input.shape() != Shape{ws[1]})
    throw DimensionError("matvec: need weights [M,N], input [N]");
  Graph<T>& g = graph_of(input);
  Node<T>* n = g.make(Op::Matvec, {ws[0]}, {input.node(), weights.node()});
  using Mat = detail::MatRM<T>;
  Eigen::Map<const Mat> W(weights.value().data(), ws[0], ws[1]);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> x(input.value().data(),
                                                          ws[1]);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> y(n->value.data(), ws[0]);
  y.noalias() = W * x;
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  if (a.shape() != b.shape()) throw DimensionError("add: shape mismatch");
  Node<T>* n = graph_of(a).make(Op::Add, a.shape(), {a.node(), b.node()});
  for (size_t p = 0; p < n->value.size(); ++p)
    n->value[p] = a.value()[p] + b.value()[p];
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
  if (a.shape() != b.shape()) throw DimensionError("mul: shape mismatch");
  Node<T>* n = graph_of(a).make(Op::Mul, a.shape(), {a.node(), b.node()});
  for (size_t p = 0; p < n->value.size(); ++p)
    n->value[p] = a.value()[p] * b.value()[p];
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> concat0(Tensor<T> a, Tensor<T> b) {
  Shape sa = a.shape(), sb = b.shape();
  if (sa.size() != sb.size() || sa.empty())
    throw DimensionError("concat0: rank mismatch");
  for (size_t d = 1; d < sa.size(); ++d)
    if (sa[d] != sb[d]) throw DimensionError("concat0: trailing dims differ");
  Shape out = sa;
  out[0] += sb[0];
  Node<T>* n = graph_of(a).make(Op::Concat0, out, {a.node(), b.node()});
  std::copy(a.value().begin(), a.value().end(), n->value.begin());
  std::copy(b.value().begin(), b.value().end(),
            n->value.begin() + long(a.value().size()));
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> slice(Tensor<T> x, int offset, int len) {
  if (x.shape().size() != 1) throw DimensionError("slice: 1-d tensors only");
  if (offset < 0 || len <= 0 || offset + len > x.shape()[0])
    throw DimensionError("slice: range out of bounds");
  Node<T>* n = graph_of(x).make(Op::Slice, {len}, {x.node()});
  n->iparam[0] = offset;
  std::copy(x.value().begin() + offset, x.value().begin() + offset + len,
            n->value.begin());
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> row(Tensor<T> x, int t) {
  if (x.shape().size() != 2) throw DimensionError("row: 2-d tensors only");
  if (t < 0 || t >= x.shape()[0]) throw DimensionError("row: index out of range");
  const int d = x.shape()[1];
  Node<T>* n = graph_of(x).make(Op::Row, {d}, {x.node()});
  n->iparam[0] = t;
  std::copy(x.value().begin() + size_t(t) * d,
            x.value().begin() + size_t(t + 1) * d, n->value.begin());
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
  contract(!rows.empty(), "stack_rows: empty sequence");
  const Shape& rs = rows[0].shape();
  if (rs.size() != 1) throw DimensionError("stack_rows: rows must be 1-d");
  std::vector<Node<T>*> ins;
  ins.reserve(rows.size());
  for (const Tensor<T>& r : rows) {
    if (r.shape() != rs) throw DimensionError("stack_rows: ragged rows");
    ins.push_back(r.node());
  }
  Node<T>* n =
      graph_of(rows[0]).make(Op::StackRows, {int(rows.size()), rs[0]}, ins);
  for (size_t r = 0; r < rows.size(); ++r)
    std::copy(rows[r].value().begin(), rows[r].value().end(),
              n->value.begin() + long(r * size_t(rs[0])));
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> relu(Tensor<T> x) {
  Node<T>* n = graph_of(x).make(Op::Relu, x.shape(), {x.node()});
  for (size_t p = 0; p < n->value.size(); ++p)
    n->value[p] = x.value()[p] > T(0) ? x.value()[p] : T(0);
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> sigmoid(Tensor<T> x) {
  Node<T>* n = graph_of(x).make(Op::Sigmoid, x.shape(), {x.node()});
  for (size_t p = 0; p < n->value.size(); ++p)
    n->value[p] = detail::stable_sigmoid(x.value()[p]);
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> tanh_op(Tensor<T> x) {
  Node<T>* n = graph_of(x).make(Op::Tanh, x.shape(), {x.node()});
  for (size_t p = 0; p < n->value.size(); ++p)
    n->value[p] = std::tanh(x.value()[p]);
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> scale(Tensor<T> x, T factor) {
  Node<T>* n = graph_of(x).make(Op::Scale, x.shape(), {x.node()});
  n->fparam = factor;
  for (size_t p = 0; p < n->value.size(); ++p)
    n->value[p] = x.value()[p] * factor;
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> sum(Tensor<T> x) {
  Node<T>* n = graph_of(x).make(Op::Sum, {1}, {x.node()});
  T s = 0;
  for (T v : x.value()) s += v;
  n->value[0] = s;
  return Tensor<T>(n);
}

// Masked-mean binary cross-entropy; predictions clamped to
// [1e-7, 1-1e-7] before the logs. target and mask carry no gradient.
template <typename T>
Tensor<T> bce_loss(Tensor<T> pred, Tensor<T> target, Tensor<T> mask) {
  if (pred.shape() != target.shape() || pred.shape() != mask.shape())
    throw DimensionError("bce_loss: shape mismatch");
  contract(!target.requires_grad() && !mask.requires_grad(),
           "bce_loss: target/mask must not require grad");
  Graph<T>& g = graph_of(pred);
  Node<T>* n =
      g.make(Op::Bce, {1}, {pred.node(), target.node(), mask.node()});
  const T eps = Graph<T>::bce_clamp();
  T msum = 0, acc = 0;
  for (size_t p = 0; p < pred.value().size(); ++p) {
    const T m = mask.value()[p];
    if (m == T(0)) continue;
    msum += m;
    T pv = pred.value()[p];
    pv = std::min(std::max(pv, eps), T(1) - eps);
    const T t = target.value()[p];
    acc -= m * (t * std::log(pv) + (T(1) - t) * std::log(T(1) - pv));
  }
  contract(msum > T(0), "bce_loss: empty mask");
  n->fparam = T(1) / msum;
  n->value[0] = acc / msum;
  return Tensor<T>(n);
}

// Masked-mean squared error.
template <typename T>
Tensor<T> mse_loss(Tensor<T> a, Tensor<T> b, Tensor<T> mask) {
  if (a.shape() != b.shape() || a.shape() != mask.shape())
    throw DimensionError("mse_loss: shape mismatch");
  contract(!mask.requires_grad(), "mse_loss: mask must not require grad");
  Graph<T>& g = graph_of(a);
  Node<T>* n = g.make(Op::Mse, {1}, {a.node(), b.node(), mask.node()});
  T msum = 0, acc = 0;
  for (size_t p = 0; p < a.value().size(); ++p) {
    const T m = mask.value()[p];
    if (m == T(0)) continue;
    msum += m;
    const T d = a.value()[p] - b.value()[p];
    acc += m * d * d;
  }
  contract(msum > T(0), "mse_loss: empty mask");
  n->fparam = T(1) / msum;
  n->value[0] = acc / msum;
  return Tensor<T>(n);
}

// Per-column stripes from an edge map: for column x the output row is the
// concatenation over k = -nk..nk of column x+k (zeros out of range), each
// block top-to-bottom. edge [1,H,W] -> [W, (2nk+1)*H].
template <typename T>
Tensor<T> extract_stripes(Tensor<T> edge, int nk = 2) {
  const Shape& es = edge.shape();
  if (es.size() != 3 || es[0] != 1)
    throw DimensionError("extract_stripes: edge map must be [1,H,W]");
  contract(nk >= 0, "extract_stripes: negative shift count");
  const int h = es[1], w = es[2], span = 2 * nk + 1;
  Node<T>* n = graph_of(edge).make(Op::Stripes, {w, span * h}, {edge.node()});
  n->iparam[0] = nk;
  const T* e = edge.value().data();
  for (int x = 0; x < w; ++x)
    for (int b = 0; b < span; ++b) {
      const int xs = x + (b - nk);
      T* out = n->value.data() + (size_t(x) * span + b) * h;
      if (xs < 0 || xs >= w) continue;  // already zero
      for (int y = 0; y < h; ++y) out[y] = e[size_t(y) * w + xs];
    }
  return Tensor<T>(n);
}

}  // namespace oct
