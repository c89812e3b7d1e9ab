#include "oct/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "oct/params_io.hpp"
#include "oct/phantom.hpp"
#include "oct/preprocess.hpp"

namespace fs = std::filesystem;

namespace oct {

template <typename T>
void adadelta_update(std::vector<T>& value, const std::vector<T>& grad,
                     std::vector<T>& eg, std::vector<T>& ed, T rho, T eps,
                     T scale) {
  contract(value.size() == grad.size() && value.size() == eg.size() &&
               value.size() == ed.size(),
           "adadelta: slot size mismatch");
  for (size_t i = 0; i < value.size(); ++i) {
    const T g = scale * grad[i];
    eg[i] = rho * eg[i] + (T(1) - rho) * g * g;
    const T dx = -std::sqrt(ed[i] + eps) / std::sqrt(eg[i] + eps) * g;
    ed[i] = rho * ed[i] + (T(1) - rho) * dx * dx;
    value[i] += dx;
  }
}

template void adadelta_update<double>(std::vector<double>&,
                                      const std::vector<double>&,
                                      std::vector<double>&,
                                      std::vector<double>&, double, double,
                                      double);
template void adadelta_update<float>(std::vector<float>&,
                                     const std::vector<float>&,
                                     std::vector<float>&, std::vector<float>&,
                                     float, float, float);

template <typename T>
void AdaDelta<T>::attach(const ParamGroup<T>& group) {
  eg.clear();
  ed.clear();
  for (const auto* p : group.items) {
    eg.emplace_back(p->value.size(), T(0));
    ed.emplace_back(p->value.size(), T(0));
  }
}

template <typename T>
void AdaDelta<T>::step(ParamGroup<T>& group,
                       const std::vector<std::vector<T>>& grads, T scale) {
  contract(group.items.size() == eg.size() && grads.size() == eg.size(),
           "adadelta: step on a group it was not attached to");
  for (size_t i = 0; i < group.items.size(); ++i)
    adadelta_update(group.items[i]->value, grads[i], eg[i], ed[i], rho, eps,
                    scale);
}

template <typename T>
void AdaDelta<T>::save(const ParamGroup<T>& group,
                       const std::string& path) const {
  contract(group.items.size() == eg.size(),
           "adadelta: save on a group it was not attached to");
  std::vector<ArrayRef<T>> refs;
  for (size_t i = 0; i < group.items.size(); ++i) {
    refs.push_back({group.items[i]->name + ".eg", &group.items[i]->shape,
                    &eg[i]});
    refs.push_back({group.items[i]->name + ".ed", &group.items[i]->shape,
                    &ed[i]});
  }
  save_arrays(refs, path);
}

template <typename T>
void AdaDelta<T>::load(const ParamGroup<T>& group, const std::string& path) {
  attach(group);
  std::vector<ArrayMut<T>> muts;
  for (size_t i = 0; i < group.items.size(); ++i) {
    muts.push_back({group.items[i]->name + ".eg", &group.items[i]->shape,
                    &eg[i]});
    muts.push_back({group.items[i]->name + ".ed", &group.items[i]->shape,
                    &ed[i]});
  }
  load_arrays(muts, path);
}

template struct AdaDelta<double>;
template struct AdaDelta<float>;

template <typename T>
double global_norm(const std::vector<std::vector<T>>& grads) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (T v : g) sq += double(v) * double(v);
  return std::sqrt(sq);
}

template double global_norm<double>(const std::vector<std::vector<double>>&);
template double global_norm<float>(const std::vector<std::vector<float>>&);

void EmphasisState::init(int n) {
  contract(n >= 1, "emphasis: need at least one volume");
  last_loss.assign(static_cast<size_t>(n), 0.0);
  refresh_uniform();
}

void EmphasisState::refresh_uniform() {
  probs.assign(last_loss.size(), 1.0 / double(last_loss.size()));
}

void EmphasisState::refresh(double tau) {
  contract(tau > 0.0, "emphasis: tau must be positive");
  const size_t n = last_loss.size();
  double top = last_loss[0];
  for (double l : last_loss) top = std::max(top, l);
  std::vector<double> soft(n);
  double z = 0.0;
  for (size_t i = 0; i < n; ++i) {
    soft[i] = std::exp((last_loss[i] - top) / tau);
    z += soft[i];
  }
  probs.resize(n);
  for (size_t i = 0; i < n; ++i)
    probs[i] = 0.75 * soft[i] / z + 0.25 / double(n);
}

int EmphasisState::draw(Rng& rng) const {
  const double u = rng.uniform();
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return int(i);
  }
  return int(probs.size()) - 1;
}

void DivergenceMonitor::observe(double epoch_loss) {
  if (initial < 0.0) {
    initial = epoch_loss;
    return;
  }
  if (epoch_loss > factor * initial) {
    if (++streak >= patience)
      throw TrainingError("loss stayed above " + std::to_string(factor) +
                          "x the initial epoch for " + std::to_string(streak) +
                          " epochs; aborting");
  } else {
    streak = 0;
  }
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("train config: " + what);
  };
  need(epochs >= 1, "epochs must be positive");
  need(rho > 0.0 && rho < 1.0, "rho must be in (0, 1)");
  need(epsilon > 0.0, "epsilon must be positive");
  need(clip_norm > 0.0, "clip_norm must be positive");
  need(w_regions >= 0.0 && w_edge >= 0.0 && w_trace >= 0.0,
       "loss weights must be non-negative");
  need(w_regions + w_edge + w_trace > 0.0, "all loss weights are zero");
  need(emphasis_tau > 0.0, "emphasis_tau must be positive");
  need(checkpoint_every >= 1, "checkpoint_every must be positive");
  need(divergence_factor > 1.0, "divergence_factor must exceed one");
  need(divergence_patience >= 1, "divergence_patience must be positive");
  for (int j : boundary_subset)
    need(j >= 0, "boundary_subset entries must be non-negative");
  augment.validate();
}

Json train_config_to_json(const TrainConfig& c) {
  Json j;
  j["epochs"] = c.epochs;
  j["rho"] = c.rho;
  j["epsilon"] = c.epsilon;
  j["clip_norm"] = c.clip_norm;
  j["loss_weights"] = {c.w_regions, c.w_edge, c.w_trace};
  j["emphasis_tau"] = c.emphasis_tau;
  j["checkpoint_every"] = c.checkpoint_every;
  j["seed"] = c.seed;
  j["augment_enabled"] = c.augment_enabled;
  j["augment"] = augment_config_to_json(c.augment);
  j["boundary_subset"] = c.boundary_subset;
  j["divergence_factor"] = c.divergence_factor;
  j["divergence_patience"] = c.divergence_patience;
  return j;
}

TrainConfig train_config_from_json(const Json& j, const std::string& ctx) {
  reject_unknown_keys(j,
                      {"epochs", "rho", "epsilon", "clip_norm", "loss_weights",
                       "emphasis_tau", "checkpoint_every", "seed",
                       "augment_enabled", "augment", "boundary_subset",
                       "divergence_factor", "divergence_patience"},
                      ctx);
  TrainConfig c;
  c.epochs = json_get_or(j, "epochs", c.epochs, ctx);
  c.rho = json_get_or(j, "rho", c.rho, ctx);
  c.epsilon = json_get_or(j, "epsilon", c.epsilon, ctx);
  c.clip_norm = json_get_or(j, "clip_norm", c.clip_norm, ctx);
  if (j.contains("loss_weights")) {
    const auto w = j.at("loss_weights").get<std::vector<double>>();
    if (w.size() != 3)
      throw ConfigError(ctx + ": loss_weights needs three entries");
    c.w_regions = w[0];
    c.w_edge = w[1];
    c.w_trace = w[2];
  }
  c.emphasis_tau = json_get_or(j, "emphasis_tau", c.emphasis_tau, ctx);
  c.checkpoint_every = json_get_or(j, "checkpoint_every", c.checkpoint_every, ctx);
  c.seed = json_get_or(j, "seed", c.seed, ctx);
  c.augment_enabled = json_get_or(j, "augment_enabled", c.augment_enabled, ctx);
  if (j.contains("augment"))
    c.augment = augment_config_from_json(j.at("augment"), ctx + "/augment");
  if (j.contains("boundary_subset"))
    c.boundary_subset = j.at("boundary_subset").get<std::vector<int>>();
  c.divergence_factor = json_get_or(j, "divergence_factor", c.divergence_factor, ctx);
  c.divergence_patience =
      json_get_or(j, "divergence_patience", c.divergence_patience, ctx);
  c.validate();
  return c;
}

TrainVolume prepare_volume(const std::vector<PhantomSlice>& slices,
                           const ModelConfig& mc,
                           const std::vector<int>& boundary_subset) {
  contract(!slices.empty(), "prepare_volume: empty volume");
  TrainVolume out;
  for (const auto& slice : slices) {
    const Preprocessed pre =
        preprocess_scan(slice.image, mc.height, mc.width);
    const GroundTruth picked = boundary_subset.empty()
                                   ? slice.gt
                                   : slice.gt.select(boundary_subset);
    GroundTruth gt = transform_gt(picked, pre, mc.height);
    if (gt.boundaries != mc.boundaries)
      throw DataError("volume has " + std::to_string(gt.boundaries) +
                      " interfaces after selection; the model expects " +
                      std::to_string(mc.boundaries));
    long ok = 0;
    for (uint8_t v : gt.valid) ok += v;
    if (ok == 0) throw DataError("a slice lost every valid column");

    Image norm(mc.height, mc.width);
    std::copy_n(pre.input.begin(), norm.px.size(), norm.px.begin());
    out.norm.push_back(std::move(norm));
    out.gt.push_back(std::move(gt));
  }
  return out;
}

std::vector<double> model_input(const Image& norm) {
  const int h = norm.h, w = norm.w;
  std::vector<double> input(size_t(2) * h * w);
  std::copy(norm.px.begin(), norm.px.end(), input.begin());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      input[(size_t(h) + y) * w + x] = double(y) / (h - 1);
  return input;
}

SliceLoss slice_loss(Graph<double>& g, Model<double>& model, const Image& norm,
                     const GroundTruth& gt, const TrainConfig& cfg) {
  const int h = model.cfg.height, w = model.cfg.width;
  contract(norm.h == h && norm.w == w, "slice_loss: scan is off the raster");
  contract(gt.boundaries == model.cfg.boundaries && gt.width == w,
           "slice_loss: boundary table mismatch");
  const int b = gt.boundaries, r = b + 1;

  auto input = g.leaf({2, h, w}, model_input(norm), false);
  StageOutputs<double> out = model.forward(g, input);

  const auto stack = encode_regions(gt, h);
  const auto edges = encode_edge(gt, h);
  std::vector<double> reg_t(stack.begin(), stack.end());
  std::vector<double> edge_t(edges.begin(), edges.end());
  std::vector<double> reg_m(size_t(r) * h * w), edge_m(size_t(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = gt.valid[size_t(x)] ? 1.0 : 0.0;
      edge_m[size_t(y) * w + x] = v;
      for (int c = 0; c < r; ++c) reg_m[(size_t(c) * h + y) * w + x] = v;
    }
  std::vector<double> trace_t(size_t(w) * b), trace_m(size_t(w) * b);
  for (int x = 0; x < w; ++x)
    for (int j = 0; j < b; ++j) {
      trace_t[size_t(x) * b + j] = gt.coords[size_t(j)][size_t(x)] / h;
      trace_m[size_t(x) * b + j] = gt.valid[size_t(x)] ? 1.0 : 0.0;
    }

  auto l_reg = bce_loss(out.regions, g.leaf({r, h, w}, reg_t, false),
                        g.leaf({r, h, w}, reg_m, false));
  auto l_edge = bce_loss(out.edge, g.leaf({1, h, w}, edge_t, false),
                         g.leaf({1, h, w}, edge_m, false));
  auto l_trace = mse_loss(out.trace, g.leaf({w, b}, trace_t, false),
                          g.leaf({w, b}, trace_m, false));

  SliceLoss sl;
  sl.regions = l_reg.value()[0];
  sl.edge = l_edge.value()[0];
  sl.trace = l_trace.value()[0];
  sl.total = add(add(scale(l_reg, cfg.w_regions), scale(l_edge, cfg.w_edge)),
                 scale(l_trace, cfg.w_trace));
  return sl;
}

namespace {

double heldout_loss(Model<double>& model, const TrainVolume& vol,
                    const TrainConfig& cfg) {
  double total = 0.0;
  for (size_t s = 0; s < vol.norm.size(); ++s) {
    Graph<double> g;
    total += slice_loss(g, model, vol.norm[s], vol.gt[s], cfg).total.value()[0];
  }
  return total / double(vol.norm.size());
}

}  // namespace

FitResult fit(Model<double>& model, const std::vector<TrainVolume>& volumes,
              const TrainConfig& cfg, const std::string& out_dir, bool resume,
              const TrainVolume* heldout) {
  cfg.validate();
  contract(!volumes.empty(), "fit: no training volumes");
  for (const auto& v : volumes)
    contract(v.norm.size() == v.gt.size() && !v.norm.empty(),
             "fit: malformed training volume");

  ParamGroup<double> group = model.params();
  AdaDelta<double> opt;
  opt.rho = cfg.rho;
  opt.eps = cfg.epsilon;
  opt.attach(group);

  const int n = int(volumes.size());
  EmphasisState emph;
  emph.init(n);
  DivergenceMonitor mon;
  mon.factor = cfg.divergence_factor;
  mon.patience = cfg.divergence_patience;
  Rng rng(cfg.seed);
  int epoch0 = 0;

  if (!out_dir.empty()) fs::create_directories(out_dir);
  if (resume) {
    contract(!out_dir.empty(), "fit: resume needs a run directory");
    load_params(group, out_dir + "/model.bin");
    opt.load(group, out_dir + "/optim.bin");
    const Json st = load_json(out_dir + "/train_state.json");
    reject_unknown_keys(st,
                        {"format_version", "epoch", "rng_state", "emphasis",
                         "monitor_initial", "monitor_streak"},
                        "train_state.json");
    epoch0 = json_get<int>(st, "epoch", "train_state.json");
    rng.set_state(json_get<uint64_t>(st, "rng_state", "train_state.json"));
    const auto ll = st.at("emphasis").get<std::vector<double>>();
    if (int(ll.size()) != n)
      throw DataError("train_state.json: emphasis entries do not match the "
                      "volume count");
    emph.last_loss = ll;
    mon.initial = json_get<double>(st, "monitor_initial", "train_state.json");
    mon.streak = json_get<int>(st, "monitor_streak", "train_state.json");
  }

  std::vector<std::vector<double>> accum;
  for (const auto* p : group.items)
    accum.emplace_back(p->value.size(), 0.0);

  FitResult result;
  for (int epoch = epoch0; epoch < cfg.epochs; ++epoch) {
    if (epoch > 0)
      emph.refresh(cfg.emphasis_tau);
    else
      emph.refresh_uniform();

    double ep_loss = 0.0, ep_reg = 0.0, ep_edge = 0.0, ep_trace = 0.0;
    for (int step = 0; step < n; ++step) {
      const int v = emph.draw(rng);
      const auto& tv = volumes[size_t(v)];
      const double inv = 1.0 / double(tv.norm.size());
      for (auto& a : accum) std::fill(a.begin(), a.end(), 0.0);

      double vol_total = 0.0, vol_reg = 0.0, vol_edge = 0.0, vol_trace = 0.0;
      for (size_t s = 0; s < tv.norm.size(); ++s) {
        Image img;
        GroundTruth sgt;
        if (cfg.augment_enabled) {
          Augmented a = augment(tv.norm[s], tv.gt[s], cfg.augment, rng);
          img = std::move(a.image);
          sgt = std::move(a.gt);
        } else {
          img = tv.norm[s];
          sgt = tv.gt[s];
        }
        Graph<double> g;
        SliceLoss sl = slice_loss(g, model, img, sgt, cfg);
        g.backward(sl.total);
        for (size_t i = 0; i < group.items.size(); ++i)
          if (const auto* gr = group.items[i]->grad())
            for (size_t k = 0; k < accum[i].size(); ++k)
              accum[i][k] += inv * (*gr)[k];
        vol_total += inv * sl.total.value()[0];
        vol_reg += inv * sl.regions;
        vol_edge += inv * sl.edge;
        vol_trace += inv * sl.trace;
      }

      const double norm = global_norm(accum);
      const double clip =
          norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
      opt.step(group, accum, clip);
      emph.record(v, vol_total);

      ep_loss += vol_total / n;
      ep_reg += vol_reg / n;
      ep_edge += vol_edge / n;
      ep_trace += vol_trace / n;
    }

    result.epochs_run = epoch + 1;
    result.final_loss = ep_loss;

    const bool last = epoch + 1 == cfg.epochs;
    const bool cadence = (epoch + 1) % cfg.checkpoint_every == 0;
    if (!out_dir.empty()) {
      Json line;
      line["epoch"] = epoch;
      line["loss"] = ep_loss;
      line["regions"] = ep_reg;
      line["edge"] = ep_edge;
      line["trace"] = ep_trace;
      if (heldout && (cadence || last))
        line["val"] = heldout_loss(model, *heldout, cfg);
      std::ofstream m(out_dir + "/metrics.jsonl", std::ios::app);
      m << line.dump() << "\n";
    }

    if (!out_dir.empty() && (cadence || last)) {
      save_model(model, out_dir);
      opt.save(group, out_dir + "/optim.bin");
      Json st;
      st["format_version"] = 1;
      st["epoch"] = epoch + 1;
      st["rng_state"] = rng.state();
      st["emphasis"] = emph.last_loss;
      st["monitor_initial"] = mon.initial;
      st["monitor_streak"] = mon.streak;
      save_json(st, out_dir + "/train_state.json");
    }

    mon.observe(ep_loss);
  }
  return result;
}

}  // namespace oct
