#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oct/augment.hpp"
#include "oct/groundtruth.hpp"
#include "oct/image.hpp"
#include "oct/jsonutil.hpp"
#include "oct/model.hpp"
#include "oct/nn.hpp"
#include "oct/phantom.hpp"
#include "oct/rng.hpp"

namespace oct {

// Standard adaptive-step recurrences: the running gradient and update
// magnitudes set each coordinate's step, no learning rate involved.
template <typename T>
void adadelta_update(std::vector<T>& value, const std::vector<T>& grad,
                     std::vector<T>& eg, std::vector<T>& ed, T rho, T eps,
                     T scale = T(1));

template <typename T>
struct AdaDelta {
  T rho = T(0.95), eps = T(1e-6);
  std::vector<std::vector<T>> eg, ed;  // aligned with the attached group

  void attach(const ParamGroup<T>& group);
  // `grads` is one vector per parameter (external accumulation lets a batch
  // span several graphs); `scale` folds in gradient clipping.
  void step(ParamGroup<T>& group, const std::vector<std::vector<T>>& grads,
            T scale = T(1));
  void save(const ParamGroup<T>& group, const std::string& path) const;
  void load(const ParamGroup<T>& group, const std::string& path);
};

template <typename T>
double global_norm(const std::vector<std::vector<T>>& grads);

// Volumes with large recent losses are revisited more often:
// p = 0.75 * softmax(loss / tau) + 0.25 * uniform. The first epoch has no
// recorded losses and samples uniformly.
struct EmphasisState {
  std::vector<double> last_loss;
  std::vector<double> probs;

  void init(int n);
  void refresh_uniform();
  void refresh(double tau);
  int draw(Rng& rng) const;
  void record(int i, double loss) { last_loss.at(size_t(i)) = loss; }
};

// Aborts a run whose epoch loss stays above ten times the first epoch's for
// three epochs straight.
struct DivergenceMonitor {
  double factor = 10.0;
  int patience = 3;
  double initial = -1.0;
  int streak = 0;

  void observe(double epoch_loss);
};

struct TrainConfig {
  int epochs = 250;
  double rho = 0.95, epsilon = 1e-6;
  double clip_norm = 5.0;
  double w_regions = 1.0, w_edge = 1.0, w_trace = 1.0;
  double emphasis_tau = 1.0;
  int checkpoint_every = 25;
  uint64_t seed = 1;
  bool augment_enabled = true;
  AugmentConfig augment;
  std::vector<int> boundary_subset;  // empty: train on every interface
  double divergence_factor = 10.0;
  int divergence_patience = 3;

  void validate() const;
};

Json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j, const std::string& ctx);

// One training volume: per-slice normalized scans (the model's intensity
// channel, augmentable as an image) and their aligned boundary tables.
struct TrainVolume {
  std::vector<Image> norm;
  std::vector<GroundTruth> gt;
};

// Preprocesses a raw volume onto the model raster and applies the
// configured boundary subset.
TrainVolume prepare_volume(const std::vector<PhantomSlice>& slices,
                           const ModelConfig& mc,
                           const std::vector<int>& boundary_subset);

// Model input [2, H, W] for a normalized scan: intensities plus the row cue.
std::vector<double> model_input(const Image& norm);

// Slice loss terms built on one graph; exposed for the trainer and eval.
struct SliceLoss {
  Tensor<double> total;
  double regions = 0.0, edge = 0.0, trace = 0.0;
};
SliceLoss slice_loss(Graph<double>& g, Model<double>& model, const Image& norm,
                     const GroundTruth& gt, const TrainConfig& cfg);

struct FitResult {
  int epochs_run = 0;
  double final_loss = 0.0;
};

// Emphasis-sampled volume batches with per-slice online augmentation,
// accumulated gradients, global-norm clipping, and an adaptive step.
// Checkpoints land under out_dir per the cadence (and always at the end):
// model.json/model.bin, optim.bin, train_state.json, metrics.jsonl.
// `resume` picks up parameters, optimizer state, and the sampler mid-run.
FitResult fit(Model<double>& model, const std::vector<TrainVolume>& volumes,
              const TrainConfig& cfg, const std::string& out_dir,
              bool resume = false, const TrainVolume* heldout = nullptr);

}  // namespace oct
