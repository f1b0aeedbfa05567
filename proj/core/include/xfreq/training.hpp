#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xfreq/aos_renderer.hpp"
#include "xfreq/metrics.hpp"
#include "xfreq/rng.hpp"

namespace xfreq {

struct Sample {
  std::string id;
  TxDescriptor tx;
  PASMap map;
};

struct Dataset {
  AngularGrid grid{45, 180};
  ReceiverConfig rx;
  Box bounds;
  std::vector<Sample> samples;

  /// Subset holding the given sample positions, in that order.
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

struct TrainConfig {
  std::uint64_t iterations = 10000;
  double lr_network = 1e-3;
  double lr_means = 1.6e-4;
  bool lr_means_by_extent = true;  // multiply lr_means by half the bounds diagonal
  double lr_logscales = 5e-3;
  double lr_quats = 1e-3;
  double lr_decay_at = 0.8;  // fraction of iterations after which lr_network is scaled
  double lr_decay_factor = 0.1;
  double ssim_weight = 0.2;
  int batch = 1;
  std::uint64_t seed = 0;
  bool deterministic = true;
  std::uint64_t log_interval = 100;
  std::uint64_t prune_interval = 0;  // 0 disables low-contribution pruning
  double prune_threshold = 1e-6;     // peak |w S T|^2 relative to the map maximum

  void validate() const;
};

struct LossValue {
  double loss = 0.0;
  double l1 = 0.0;
  double ssim = 1.0;
  std::vector<double> grad;  // d loss / d pred
};

/// (1 - w) mean|pred - gt| + w (1 - SSIM(pred, gt)), with the gradient
/// with respect to pred when requested.
LossValue loss_with_gradient(const AngularGrid& grid, std::span<const double> pred, std::span<const double> gt,
                             double ssim_weight, bool want_gradient = true);
double loss(const PASMap& pred, const PASMap& gt, double ssim_weight);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct LearningRates {
  double network, means, log_scales, quats;
};

/// First and second moments mirroring every trainable tensor.
struct OptimizerState {
  ModelGradients m;
  ModelGradients v;
  std::uint64_t step = 0;

  static OptimizerState zeros_like(const Model& model);
};

/// One adaptive-moment update followed by quaternion renormalization, scale
/// clamping to [kMinScale, room diagonal] and clamping means into the scene
/// bounds. Bumps model.version.
void adam_step(Model& model, const ModelGradients& grads, OptimizerState& state, const LearningRates& lr,
               const AdamHyper& hyper = {});

/// Per Gaussian, the largest squared contribution |w S T|^2 it makes to any
/// cell of any sample, relative to that sample's peak power.
std::vector<double> contribution_scores(const Model& model, const Dataset& data, const RenderOptions& render = {});

/// Drops Gaussians whose score is below threshold (always keeping the
/// strongest one) together with their optimizer moments. Returns the count removed.
std::size_t prune_gaussians(Model& model, OptimizerState& state, std::span<const double> scores, double threshold);

struct LogRow {
  std::uint64_t iteration;
  double loss;
  double l1;
  double ssim_term;  // 1 - SSIM
  double psnr;
  double wall_ms;
};

/// Drives optimization over a dataset; resumable from saved state.
class Trainer {
 public:
  Trainer(const Dataset& data, Model model, TrainConfig config, RenderOptions render = {});

  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const OptimizerState& optimizer() const { return state_; }
  OptimizerState& optimizer() { return state_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }
  const TrainConfig& config() const { return config_; }
  std::uint64_t iteration() const { return iteration_; }
  void set_iteration(std::uint64_t it) { iteration_ = it; }

  /// Runs one optimization step; returns the loss of that step's sample.
  LogRow step();

  /// Runs until `iteration() == until`, emitting a log row every
  /// log_interval iterations (and at the last one).
  void run(std::uint64_t until, const std::function<void(const LogRow&)>& on_log = {},
           const std::function<void(const Trainer&)>& on_checkpoint = {}, std::uint64_t checkpoint_every = 0);

  LearningRates rates_at(std::uint64_t iteration) const;

 private:
  const Dataset* data_;
  Model model_;
  TrainConfig config_;
  RenderOptions render_;
  OptimizerState state_;
  Rng rng_;
  std::uint64_t iteration_ = 0;
  std::chrono::steady_clock::time_point start_;
};

/// Renders every sample with the model and scores it.
struct SampleScore {
  std::string id;
  double frequency;
  double ssim;
  double psnr;
};
std::vector<SampleScore> score_samples(const Model& model, const Dataset& data, const RenderOptions& render = {});

}  // namespace xfreq
