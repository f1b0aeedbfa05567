#include "xfreq/training.hpp"

#include <algorithm>
#include <cmath>

#include "xfreq/error.hpp"

namespace xfreq {

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset d{grid, rx, bounds, {}};
  d.samples.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= samples.size()) fail(Errc::IndexOutOfRange, "sample index out of range");
    d.samples.push_back(samples[i]);
  }
  return d;
}

void TrainConfig::validate() const {
  if (!(ssim_weight >= 0.0 && ssim_weight <= 1.0)) fail(Errc::ConfigError, "ssim_weight must lie in [0, 1]");
  for (double lr : {lr_network, lr_means, lr_logscales, lr_quats}) {
    if (!(lr > 0.0) || !std::isfinite(lr)) fail(Errc::ConfigError, "learning rates must be positive");
  }
  if (!(lr_decay_at >= 0.0 && lr_decay_at <= 1.0)) fail(Errc::ConfigError, "lr_decay_at must lie in [0, 1]");
  if (!(lr_decay_factor > 0.0)) fail(Errc::ConfigError, "lr_decay_factor must be positive");
  if (batch < 1) fail(Errc::ConfigError, "batch must be at least 1");
  if (log_interval == 0) fail(Errc::ConfigError, "log_interval must be positive");
  if (!(prune_threshold >= 0.0)) fail(Errc::ConfigError, "prune_threshold must be non-negative");
}

LossValue loss_with_gradient(const AngularGrid& grid, std::span<const double> pred, std::span<const double> gt,
                             double ssim_weight, bool want_gradient) {
  if (pred.size() != grid.size() || gt.size() != grid.size()) fail(Errc::GridMismatch, "maps do not match the grid");
  LossValue out;
  const double inv_k = 1.0 / static_cast<double>(grid.size());
  double l1 = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) l1 += std::abs(pred[i] - gt[i]);
  out.l1 = l1 * inv_k;
  std::vector<double> ssim_grad;
  if (ssim_weight > 0.0) {
    out.ssim = want_gradient ? ssim_with_gradient(grid, pred, gt, ssim_grad) : ssim(grid, pred, gt);
  } else {
    out.ssim = grid.rows() >= 11 && grid.cols() >= 11 ? ssim(grid, pred, gt) : 1.0;
  }
  out.loss = (1.0 - ssim_weight) * out.l1 + ssim_weight * (1.0 - out.ssim);
  if (want_gradient) {
    out.grad.resize(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred[i] - gt[i];
      const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      out.grad[i] = (1.0 - ssim_weight) * sign * inv_k;
      if (ssim_weight > 0.0) out.grad[i] -= ssim_weight * ssim_grad[i];
    }
  }
  return out;
}

double loss(const PASMap& pred, const PASMap& gt, double ssim_weight) {
  if (!(pred.grid() == gt.grid())) fail(Errc::GridMismatch, "maps are on different grids");
  return loss_with_gradient(pred.grid(), pred.values(), gt.values(), ssim_weight, false).loss;
}

OptimizerState OptimizerState::zeros_like(const Model& model) {
  OptimizerState s;
  s.m = ModelGradients::zeros_like(model);
  s.v = ModelGradients::zeros_like(model);
  return s;
}

namespace {

struct AdamScalars {
  double beta1, beta2, eps, c1, c2;

  void update(double& p, double g, double& m, double& v, double lr) const {
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    const double mhat = m / c1;
    const double vhat = v / c2;
    p -= lr * mhat / (std::sqrt(vhat) + eps);
  }
};

}  // namespace

void adam_step(Model& model, const ModelGradients& grads, OptimizerState& state, const LearningRates& lr,
               const AdamHyper& hyper) {
  const std::size_t n = model.scene.size();
  if (grads.geometry.size() != n || state.m.geometry.size() != n || state.v.geometry.size() != n) {
    fail(Errc::ShapeMismatch, "gradient or optimizer state does not match the scene");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const AdamScalars a{hyper.beta1, hyper.beta2, hyper.eps, 1.0 - std::pow(hyper.beta1, t),
                      1.0 - std::pow(hyper.beta2, t)};

  for (std::size_t i = 0; i < n; ++i) {
    auto& g = model.scene.gaussians[i];
    const auto& d = grads.geometry[i];
    auto& m = state.m.geometry[i];
    auto& v = state.v.geometry[i];
    for (int k = 0; k < 3; ++k) a.update(g.mean[k], d.mean[k], m.mean[k], v.mean[k], lr.means);
    for (int k = 0; k < 4; ++k) a.update(g.rotation[k], d.rotation[k], m.rotation[k], v.rotation[k], lr.quats);
    for (int k = 0; k < 3; ++k) a.update(g.log_scales[k], d.log_scales[k], m.log_scales[k], v.log_scales[k], lr.log_scales);
  }

  std::vector<std::pair<const double*, std::size_t>> gt, mt, vt;
  const_cast<NetworkGradients&>(grads.net).for_each_tensor([&](double* p, std::size_t k) { gt.emplace_back(p, k); });
  state.m.net.for_each_tensor([&](double* p, std::size_t k) { mt.emplace_back(p, k); });
  state.v.net.for_each_tensor([&](double* p, std::size_t k) { vt.emplace_back(p, k); });
  std::size_t t_idx = 0;
  model.net.for_each_tensor([&](double* p, std::size_t k) {
    if (t_idx >= gt.size() || gt[t_idx].second != k) fail(Errc::ShapeMismatch, "network gradient shape mismatch");
    auto* m = const_cast<double*>(mt[t_idx].first);
    auto* v = const_cast<double*>(vt[t_idx].first);
    const double* g = gt[t_idx].first;
    for (std::size_t i = 0; i < k; ++i) a.update(p[i], g[i], m[i], v[i], lr.network);
    ++t_idx;
  });

  const Box& b = model.scene.bounds;
  const double max_scale = b.diagonal();
  for (auto& g : model.scene.gaussians) {
    enforce_invariants(g, max_scale);
    for (int k = 0; k < 3; ++k) g.mean[k] = std::clamp(g.mean[k], b.min[k], b.max[k]);
  }
  ++model.version;
}

Trainer::Trainer(const Dataset& data, Model model, TrainConfig config, RenderOptions render)
    : data_(&data),
      model_(std::move(model)),
      config_(config),
      render_(render),
      state_(OptimizerState::zeros_like(model_)),
      rng_(config.seed),
      start_(std::chrono::steady_clock::now()) {
  config_.validate();
  if (data.samples.empty()) fail(Errc::EmptyDataset, "training dataset has no samples");
  render_.deterministic = config_.deterministic;
}

LearningRates Trainer::rates_at(std::uint64_t iteration) const {
  LearningRates lr{config_.lr_network, config_.lr_means, config_.lr_logscales, config_.lr_quats};
  if (config_.lr_means_by_extent) lr.means *= 0.5 * (data_->bounds.max - data_->bounds.min).norm();
  const auto decay_at = static_cast<std::uint64_t>(std::llround(config_.lr_decay_at * static_cast<double>(config_.iterations)));
  if (iteration >= decay_at) lr.network *= config_.lr_decay_factor;
  return lr;
}

LogRow Trainer::step() {
  const auto& samples = data_->samples;
  ModelGradients total = ModelGradients::zeros_like(model_);
  double loss_sum = 0.0, l1_sum = 0.0, ssim_sum = 0.0, psnr_sum = 0.0;
  for (int b = 0; b < config_.batch; ++b) {
    const Sample& s = samples[rng_.below(samples.size())];
    const RenderGraph graph = render_graph(model_, s.tx, data_->rx, data_->grid, render_);
    const LossValue lv = loss_with_gradient(data_->grid, graph.normalized, s.map.values(), config_.ssim_weight);
    total.add(backward(graph, model_, lv.grad));
    loss_sum += lv.loss;
    l1_sum += lv.l1;
    ssim_sum += 1.0 - lv.ssim;
    psnr_sum += psnr(graph.normalized, s.map.values());
  }
  const double inv_b = 1.0 / config_.batch;
  if (config_.batch > 1) total.scale(inv_b);
  adam_step(model_, total, state_, rates_at(iteration_));
  ++iteration_;
  if (config_.prune_interval > 0 && iteration_ % config_.prune_interval == 0)
    prune_gaussians(model_, state_, contribution_scores(model_, *data_, render_), config_.prune_threshold);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  return {iteration_, loss_sum * inv_b, l1_sum * inv_b, ssim_sum * inv_b, psnr_sum * inv_b, ms};
}

void Trainer::run(std::uint64_t until, const std::function<void(const LogRow&)>& on_log,
                  const std::function<void(const Trainer&)>& on_checkpoint, std::uint64_t checkpoint_every) {
  while (iteration_ < until) {
    const LogRow row = step();
    if (on_log && (iteration_ % config_.log_interval == 0 || iteration_ == until)) on_log(row);
    if (on_checkpoint && checkpoint_every > 0 && iteration_ % checkpoint_every == 0) on_checkpoint(*this);
  }
}

std::vector<double> contribution_scores(const Model& model, const Dataset& data, const RenderOptions& render) {
  std::vector<double> score(model.scene.size(), 0.0);
  for (const auto& s : data.samples) {
    const RenderGraph g = render_graph(model, s.tx, data.rx, data.grid, render);
    const double peak = g.power[g.max_index];
    for (std::size_t k = 0; k < g.contributors.cells; ++k) {
      Complex transmit(1.0, 0.0);
      for (const auto& e : g.contributors.cell(k)) {
        const auto& a = g.attrs[e.source_index];
        score[e.source_index] = std::max(score[e.source_index], std::norm(e.weight * a.signal * transmit) / peak);
        transmit *= a.attenuation;
      }
    }
  }
  return score;
}

std::size_t prune_gaussians(Model& model, OptimizerState& state, std::span<const double> scores, double threshold) {
  const std::size_t n = model.scene.size();
  if (scores.size() != n) fail(Errc::ShapeMismatch, "one score per Gaussian expected");
  const std::size_t best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
  std::size_t kept = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (scores[i] < threshold && i != best) continue;
    model.scene.gaussians[kept] = model.scene.gaussians[i];
    state.m.geometry[kept] = state.m.geometry[i];
    state.v.geometry[kept] = state.v.geometry[i];
    ++kept;
  }
  model.scene.gaussians.resize(kept);
  state.m.geometry.resize(kept);
  state.v.geometry.resize(kept);
  if (kept != n) ++model.version;
  return n - kept;
}

std::vector<SampleScore> score_samples(const Model& model, const Dataset& data, const RenderOptions& render) {
  std::vector<SampleScore> out;
  out.reserve(data.samples.size());
  for (const auto& s : data.samples) {
    const RenderGraph g = render_graph(model, s.tx, data.rx, data.grid, render);
    out.push_back({s.id, s.tx.frequency, ssim(data.grid, g.normalized, s.map.values()), psnr(g.normalized, s.map.values())});
  }
  return out;
}

}  // namespace xfreq
