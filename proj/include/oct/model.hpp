#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "oct/jsonutil.hpp"
#include "oct/nn.hpp"
#include "oct/params_io.hpp"
#include "oct/tensor.hpp"

namespace oct {

// Geometry of the three-stage network. Kernel sizes are (rows, cols) for
// the reference 300x800 input; scaled_to() re-derives them for other input
// sizes. boundaries is the number of traced interfaces B; the region head
// predicts B+1 stacked layer masks.
struct ModelConfig {
  int height = 300, width = 800;
  int boundaries = 8;
  int stripe_shifts = 2;  // stripe covers columns x-nk .. x+nk

  int s1_filters = 32;
  int s1_hm_kh = 20, s1_hm_kw = 30;
  int s1_vm_kh = 30, s1_vm_kw = 20;
  int s1_sm1_k = 10, s1_sm2_k = 5;

  int s2_filters = 16;
  int s2_hm_kh = 15, s2_hm_kw = 20;
  int s2_vm_kh = 20, s2_vm_kw = 15;
  int s2_sm1_k = 10, s2_sm2_k = 5;

  int lstm1 = 64, lstm2 = 32;

  int regions() const { return boundaries + 1; }
  int stripe_dim() const { return (2 * stripe_shifts + 1) * height; }

  static ModelConfig m_norm() { return ModelConfig{}; }

  // Reduced variant tracing only the vitreous inner boundary and the two
  // outer interfaces.
  static ModelConfig m_mixed() {
    ModelConfig c;
    c.boundaries = 3;
    return c;
  }

  // Rescale every kernel axis proportionally to the new raster, keeping
  // results odd and at least 3 so each kernel keeps a proper center.
  ModelConfig scaled_to(int new_h, int new_w) const {
    auto sc = [](int k, int from, int to) {
      int v = int(std::lround(double(k) * to / from));
      if (v < 3) v = 3;
      if (v % 2 == 0) ++v;
      return v;
    };
    ModelConfig c = *this;
    c.height = new_h;
    c.width = new_w;
    c.s1_hm_kh = sc(s1_hm_kh, height, new_h);
    c.s1_hm_kw = sc(s1_hm_kw, width, new_w);
    c.s1_vm_kh = sc(s1_vm_kh, height, new_h);
    c.s1_vm_kw = sc(s1_vm_kw, width, new_w);
    c.s1_sm1_k = sc(s1_sm1_k, height, new_h);
    c.s1_sm2_k = sc(s1_sm2_k, height, new_h);
    c.s2_hm_kh = sc(s2_hm_kh, height, new_h);
    c.s2_hm_kw = sc(s2_hm_kw, width, new_w);
    c.s2_vm_kh = sc(s2_vm_kh, height, new_h);
    c.s2_vm_kw = sc(s2_vm_kw, width, new_w);
    c.s2_sm1_k = sc(s2_sm1_k, height, new_h);
    c.s2_sm2_k = sc(s2_sm2_k, height, new_h);
    return c;
  }

  void validate() const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("model config: " + what);
    };
    need(height >= 8 && width >= 8, "raster must be at least 8x8");
    need(boundaries >= 1, "need at least one boundary");
    need(stripe_shifts >= 0, "stripe_shifts must be non-negative");
    need(s1_filters >= 1 && s2_filters >= 1, "filter counts must be positive");
    need(lstm1 >= 1 && lstm2 >= 1, "lstm widths must be positive");
    for (int k : {s1_hm_kh, s1_vm_kh, s1_sm1_k, s1_sm2_k, s2_hm_kh, s2_vm_kh,
                  s2_sm1_k, s2_sm2_k})
      need(k >= 1 && k <= height, "kernel rows must fit the raster height");
    for (int k : {s1_hm_kw, s1_vm_kw, s1_sm1_k, s1_sm2_k, s2_hm_kw, s2_vm_kw,
                  s2_sm1_k, s2_sm2_k})
      need(k >= 1 && k <= width, "kernel cols must fit the raster width");
  }
};

inline Json model_config_to_json(const ModelConfig& c) {
  Json j;
  j["height"] = c.height;
  j["width"] = c.width;
  j["boundaries"] = c.boundaries;
  j["stripe_shifts"] = c.stripe_shifts;
  j["s1_filters"] = c.s1_filters;
  j["s1_hm_kernel"] = {c.s1_hm_kh, c.s1_hm_kw};
  j["s1_vm_kernel"] = {c.s1_vm_kh, c.s1_vm_kw};
  j["s1_sm_kernels"] = {c.s1_sm1_k, c.s1_sm2_k};
  j["s2_filters"] = c.s2_filters;
  j["s2_hm_kernel"] = {c.s2_hm_kh, c.s2_hm_kw};
  j["s2_vm_kernel"] = {c.s2_vm_kh, c.s2_vm_kw};
  j["s2_sm_kernels"] = {c.s2_sm1_k, c.s2_sm2_k};
  j["lstm_widths"] = {c.lstm1, c.lstm2};
  return j;
}

inline ModelConfig model_config_from_json(const Json& j,
                                          const std::string& ctx) {
  reject_unknown_keys(j,
                      {"height", "width", "boundaries", "stripe_shifts",
                       "s1_filters", "s1_hm_kernel", "s1_vm_kernel",
                       "s1_sm_kernels", "s2_filters", "s2_hm_kernel",
                       "s2_vm_kernel", "s2_sm_kernels", "lstm_widths"},
                      ctx);
  ModelConfig c;
  c.height = json_get_or(j, "height", c.height, ctx);
  c.width = json_get_or(j, "width", c.width, ctx);
  c.boundaries = json_get_or(j, "boundaries", c.boundaries, ctx);
  c.stripe_shifts = json_get_or(j, "stripe_shifts", c.stripe_shifts, ctx);
  c.s1_filters = json_get_or(j, "s1_filters", c.s1_filters, ctx);
  auto pair = [&](const char* key, int& a, int& b) {
    if (!j.contains(key)) return;
    auto v = json_get<std::vector<int>>(j, key, ctx);
    if (v.size() != 2)
      throw ConfigError(ctx + ": " + key + " must be a [rows, cols] pair");
    a = v[0];
    b = v[1];
  };
  pair("s1_hm_kernel", c.s1_hm_kh, c.s1_hm_kw);
  pair("s1_vm_kernel", c.s1_vm_kh, c.s1_vm_kw);
  pair("s1_sm_kernels", c.s1_sm1_k, c.s1_sm2_k);
  c.s2_filters = json_get_or(j, "s2_filters", c.s2_filters, ctx);
  pair("s2_hm_kernel", c.s2_hm_kh, c.s2_hm_kw);
  pair("s2_vm_kernel", c.s2_vm_kh, c.s2_vm_kw);
  pair("s2_sm_kernels", c.s2_sm1_k, c.s2_sm2_k);
  pair("lstm_widths", c.lstm1, c.lstm2);
  c.validate();
  return c;
}

template <typename T>
struct StageOutputs {
  Tensor<T> regions;  // [R, H, W] layer probabilities
  Tensor<T> edge;     // [1, H, W] boundary probability map
  Tensor<T> trace;    // [W, B], each entry a row position / height

  // Predicted boundary rows in pixels, [B][W].
  std::vector<std::vector<T>> trace_rows(int height) const {
    const int w = trace.shape()[0], b = trace.shape()[1];
    std::vector<std::vector<T>> rows(static_cast<size_t>(b),
                                     std::vector<T>(static_cast<size_t>(w)));
    for (int x = 0; x < w; ++x)
      for (int j = 0; j < b; ++j)
        rows[size_t(j)][size_t(x)] = trace.value()[size_t(x) * b + j] * height;
    return rows;
  }
};

// Three-stage pipeline: two-branch conv stage producing stacked layer
// probabilities, a second conv stage sharpening them into an edge map, and
// a bidirectional recurrent stage that reads vertical stripes column by
// column and regresses one row per boundary.
template <typename T>
struct Model {
  ModelConfig cfg;

  ConvLayer<T> s1_hm1, s1_hm2, s1_vm1, s1_vm2, s1_sm1, s1_sm2;
  ConvLayer<T> s2_hm1, s2_hm2, s2_vm1, s2_vm2, s2_sm1, s2_sm2;
  BlstmLayer<T> rnn1, rnn2;
  TimeDistributedDense<T> head;

  explicit Model(const ModelConfig& c)
      : cfg((c.validate(), c)),
        s1_hm1("s1.hm1", c.s1_filters, 2, c.s1_hm_kh, c.s1_hm_kw, Act::Relu),
        s1_hm2("s1.hm2", c.s1_filters, c.s1_filters, c.s1_hm_kh, c.s1_hm_kw,
               Act::Relu),
        s1_vm1("s1.vm1", c.s1_filters, 2, c.s1_vm_kh, c.s1_vm_kw, Act::Relu),
        s1_vm2("s1.vm2", c.s1_filters, c.s1_filters, c.s1_vm_kh, c.s1_vm_kw,
               Act::Relu),
        s1_sm1("s1.sm1", c.s1_filters, 2 * c.s1_filters, c.s1_sm1_k,
               c.s1_sm1_k, Act::Relu),
        s1_sm2("s1.sm2", c.regions(), c.s1_filters, c.s1_sm2_k, c.s1_sm2_k,
               Act::Sigmoid),
        s2_hm1("s2.hm1", c.s2_filters, c.regions(), c.s2_hm_kh, c.s2_hm_kw,
               Act::Relu),
        s2_hm2("s2.hm2", c.s2_filters, c.s2_filters, c.s2_hm_kh, c.s2_hm_kw,
               Act::Relu),
        s2_vm1("s2.vm1", c.s2_filters, c.regions(), c.s2_vm_kh, c.s2_vm_kw,
               Act::Relu),
        s2_vm2("s2.vm2", c.s2_filters, c.s2_filters, c.s2_vm_kh, c.s2_vm_kw,
               Act::Relu),
        s2_sm1("s2.sm1", c.s2_filters, 2 * c.s2_filters, c.s2_sm1_k,
               c.s2_sm1_k, Act::Relu),
        s2_sm2("s2.sm2", 1, c.s2_filters, c.s2_sm2_k, c.s2_sm2_k, Act::Sigmoid),
        rnn1("s3.rnn1", c.stripe_dim(), c.lstm1),
        rnn2("s3.rnn2", 2 * c.lstm1, c.lstm2),
        head("s3.head", 2 * c.lstm2, c.boundaries, true) {}

  void init(Rng& rng) {
    s1_hm1.init(rng);
    s1_hm2.init(rng);
    s1_vm1.init(rng);
    s1_vm2.init(rng);
    s1_sm1.init(rng);
    s1_sm2.init(rng);
    s2_hm1.init(rng);
    s2_hm2.init(rng);
    s2_vm1.init(rng);
    s2_vm2.init(rng);
    s2_sm1.init(rng);
    s2_sm2.init(rng);
    rnn1.init(rng);
    rnn2.init(rng);
    head.init(rng);
  }

  ParamGroup<T> params() {
    ParamGroup<T> g;
    s1_hm1.collect(g);
    s1_hm2.collect(g);
    s1_vm1.collect(g);
    s1_vm2.collect(g);
    s1_sm1.collect(g);
    s1_sm2.collect(g);
    s2_hm1.collect(g);
    s2_hm2.collect(g);
    s2_vm1.collect(g);
    s2_vm2.collect(g);
    s2_sm1.collect(g);
    s2_sm2.collect(g);
    rnn1.collect(g);
    rnn2.collect(g);
    head.collect(g);
    return g;
  }

  long param_count() { return params().scalar_count(); }

  // input [2, H, W]: normalized intensity plus the vertical position cue.
  Tensor<T> stage1(Graph<T>& g, Tensor<T> input) {
    if (input.shape() != Shape{2, cfg.height, cfg.width})
      throw DimensionError("stage1: input must be [2, H, W]");
    auto hm = s1_hm2.forward(g, s1_hm1.forward(g, input));
    auto vm = s1_vm2.forward(g, s1_vm1.forward(g, input));
    auto both = concat0(hm, vm);
    return s1_sm2.forward(g, s1_sm1.forward(g, both));
  }

  Tensor<T> stage2(Graph<T>& g, Tensor<T> regions) {
    if (regions.shape() != Shape{cfg.regions(), cfg.height, cfg.width})
      throw DimensionError("stage2: input must be [R, H, W]");
    auto hm = s2_hm2.forward(g, s2_hm1.forward(g, regions));
    auto vm = s2_vm2.forward(g, s2_vm1.forward(g, regions));
    auto both = concat0(hm, vm);
    return s2_sm2.forward(g, s2_sm1.forward(g, both));
  }

  Tensor<T> stage3(Graph<T>& g, Tensor<T> edge) {
    if (edge.shape() != Shape{1, cfg.height, cfg.width})
      throw DimensionError("stage3: input must be [1, H, W]");
    auto stripes = extract_stripes(edge, cfg.stripe_shifts);
    std::vector<Tensor<T>> seq(size_t(cfg.width));
    for (int t = 0; t < cfg.width; ++t) seq[size_t(t)] = row(stripes, t);
    auto a = rnn1.forward(g, seq);
    auto b = rnn2.forward(g, a);
    auto y = head.forward(g, b);
    return stack_rows(y);
  }

  StageOutputs<T> forward(Graph<T>& g, Tensor<T> input) {
    StageOutputs<T> out;
    out.regions = stage1(g, input);
    out.edge = stage2(g, out.regions);
    out.trace = stage3(g, out.edge);
    return out;
  }
};

// Model checkpoint: config JSON next to the flat parameter file.
template <typename T>
void save_model(Model<T>& model, const std::string& dir) {
  Json j;
  j["format_version"] = 1;
  j["config"] = model_config_to_json(model.cfg);
  save_json(j, dir + "/model.json");
  auto group = model.params();
  save_params(group, dir + "/model.bin");
}

template <typename T>
Model<T> load_model(const std::string& dir) {
  Json j = load_json(dir + "/model.json");
  reject_unknown_keys(j, {"format_version", "config"}, dir + "/model.json");
  if (json_get<int>(j, "format_version", dir) != 1)
    throw ConfigError(dir + ": unsupported model format version");
  Model<T> model(model_config_from_json(j.at("config"), dir + "/model.json"));
  auto group = model.params();
  load_params(group, dir + "/model.bin");
  return model;
}

}  // namespace oct
