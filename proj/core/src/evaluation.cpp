#include "xfreq/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "xfreq/error.hpp"
#include "xfreq/rng.hpp"

namespace xfreq {

namespace {

double parse_number(const std::string& s, const std::string& spec) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end || !std::isfinite(v))
    fail(Errc::InvalidSplitSpec, "bad number '" + s + "' in split '" + spec + "'");
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string ghz(double hz) {
  std::ostringstream os;
  os << std::setprecision(6) << hz / 1e9;
  return os.str();
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

bool same_band(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b)); }

SplitSpec SplitSpec::parse(const std::string& text) {
  SplitSpec s;
  const auto colon = text.find(':');
  if (colon == std::string::npos) fail(Errc::InvalidSplitSpec, "split '" + text + "' has no mode prefix");
  const std::string mode = text.substr(0, colon);
  const std::string rest = text.substr(colon + 1);
  if (mode == "random") {
    const auto parts = split(rest, ':');
    if (parts.size() != 2) fail(Errc::InvalidSplitSpec, "expected random:<fraction>:<seed>, got '" + text + "'");
    s.mode = SplitMode::Random;
    s.test_fraction = parse_number(parts[0], text);
    if (!(s.test_fraction > 0.0 && s.test_fraction < 1.0))
      fail(Errc::InvalidSplitSpec, "random split fraction must lie in (0, 1)");
    const double seed = parse_number(parts[1], text);
    if (seed < 0 || seed != std::floor(seed)) fail(Errc::InvalidSplitSpec, "random split seed must be a non-negative integer");
    s.seed = static_cast<std::uint64_t>(seed);
  } else if (mode == "lofo") {
    s.mode = SplitMode::Lofo;
    s.held_out = parse_number(rest, text) * 1e9;
    if (!(s.held_out > 0.0)) fail(Errc::InvalidSplitSpec, "lofo frequency must be positive");
  } else if (mode == "sparse") {
    const auto at = rest.find('@');
    if (at == std::string::npos) fail(Errc::InvalidSplitSpec, "expected sparse:<list>@<target>, got '" + text + "'");
    s.mode = SplitMode::Sparse;
    for (const auto& f : split(rest.substr(0, at), ',')) s.train_bands.push_back(parse_number(f, text) * 1e9);
    s.target = parse_number(rest.substr(at + 1), text) * 1e9;
    if (s.train_bands.empty()) fail(Errc::InvalidSplitSpec, "sparse split needs at least one training band");
    for (double f : s.train_bands)
      if (!(f > 0.0)) fail(Errc::InvalidSplitSpec, "sparse frequencies must be positive");
    if (!(s.target > 0.0)) fail(Errc::InvalidSplitSpec, "sparse target must be positive");
  } else {
    fail(Errc::InvalidSplitSpec, "unknown split mode '" + mode + "'");
  }
  return s;
}

std::string SplitSpec::to_string() const {
  switch (mode) {
    case SplitMode::Random:
      return "random:" + num(test_fraction) + ":" + std::to_string(seed);
    case SplitMode::Lofo:
      return "lofo:" + ghz(held_out);
    case SplitMode::Sparse: {
      std::string s = "sparse:";
      for (std::size_t i = 0; i < train_bands.size(); ++i) s += (i ? "," : "") + ghz(train_bands[i]);
      return s + "@" + ghz(target);
    }
  }
  return {};
}

SplitPlan make_split(const Dataset& data, const SplitSpec& spec) {
  if (data.samples.empty()) fail(Errc::EmptyDataset, "dataset has no samples");
  SplitPlan plan;
  plan.spec = spec;
  const std::size_t n = data.samples.size();
  switch (spec.mode) {
    case SplitMode::Random: {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      Rng rng(spec.seed);
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      const auto n_test = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(n)));
      if (n_test == 0 || n_test >= n) fail(Errc::InvalidSplit, "random split leaves an empty side");
      plan.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
      plan.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
      std::sort(plan.test.begin(), plan.test.end());
      std::sort(plan.train.begin(), plan.train.end());
      break;
    }
    case SplitMode::Lofo:
      for (std::size_t i = 0; i < n; ++i)
        (same_band(data.samples[i].tx.frequency, spec.held_out) ? plan.test : plan.train).push_back(i);
      break;
    case SplitMode::Sparse: {
      const auto [lo, hi] = std::minmax_element(spec.train_bands.begin(), spec.train_bands.end());
      for (double f : spec.train_bands)
        if (same_band(f, spec.target)) fail(Errc::InvalidSplit, "sparse target " + ghz(spec.target) + " GHz is a training band");
      if (!(spec.target > *lo && spec.target < *hi))
        fail(Errc::InvalidSplit, "sparse target " + ghz(spec.target) + " GHz is not inside the training band range");
      for (std::size_t i = 0; i < n; ++i) {
        const double f = data.samples[i].tx.frequency;
        if (same_band(f, spec.target)) {
          plan.test.push_back(i);
        } else if (std::any_of(spec.train_bands.begin(), spec.train_bands.end(), [&](double b) { return same_band(f, b); })) {
          plan.train.push_back(i);
        }
      }
      break;
    }
  }
  plan.check(data);
  return plan;
}

void SplitPlan::check(const Dataset& data) const {
  if (train.empty()) fail(Errc::InvalidSplit, "split " + spec.to_string() + " has no training samples");
  if (test.empty()) fail(Errc::InvalidSplit, "split " + spec.to_string() + " has no test samples");
  std::set<std::string> train_ids;
  for (auto i : train) {
    if (i >= data.samples.size()) fail(Errc::InvalidSplit, "split refers to a missing sample");
    train_ids.insert(data.samples[i].id);
  }
  for (auto i : test) {
    if (i >= data.samples.size()) fail(Errc::InvalidSplit, "split refers to a missing sample");
    if (train_ids.contains(data.samples[i].id))
      fail(Errc::InvalidSplit, "sample '" + data.samples[i].id + "' is in both train and test");
  }
  const double banned = spec.mode == SplitMode::Lofo ? spec.held_out : spec.mode == SplitMode::Sparse ? spec.target : 0.0;
  if (banned > 0.0) {
    for (auto i : train)
      if (same_band(data.samples[i].tx.frequency, banned))
        fail(Errc::InvalidSplit, "training sample '" + data.samples[i].id + "' is at the held-out frequency");
  }
}

EvalReport EvalReport::from_scores(std::vector<SampleScore> scores) {
  if (scores.empty()) fail(Errc::EmptyList, "no samples to report");
  std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  EvalReport r;
  std::vector<double> s, p;
  for (const auto& x : scores) {
    r.rows.push_back({x.id, x.frequency, x.ssim, x.psnr});
    s.push_back(x.ssim);
    p.push_back(x.psnr);
  }
  r.mean_ssim = mean(s);
  r.median_ssim = median(s);
  r.ssim_at_90 = quantile(s, 0.9);
  r.mean_psnr = mean(p);
  r.median_psnr = median(p);
  r.ssim_cdf = cdf(s);
  r.psnr_cdf = cdf(p);
  return r;
}

std::string EvalReport::rows_csv() const {
  std::ostringstream os;
  os << "id,frequency_ghz,ssim,psnr_db\n" << std::setprecision(17);
  for (const auto& r : rows) os << r.id << ',' << ghz(r.frequency) << ',' << r.ssim << ',' << r.psnr << '\n';
  return os.str();
}

std::string EvalReport::cdf_csv(const std::vector<CdfPoint>& points) {
  std::ostringstream os;
  os << "fraction,threshold\n" << std::setprecision(17);
  for (const auto& c : points) os << c.fraction << ',' << c.threshold << '\n';
  return os.str();
}

std::string EvalReport::summary_yaml() const {
  const SsimConfig cfg;
  std::ostringstream os;
  os << std::setprecision(10);
  os << "label: " << label << '\n';
  os << "split: \"" << split << "\"\n";
  os << "variant: " << variant << '\n';
  os << "seed: " << seed << '\n';
  os << "train_samples: " << train_samples << '\n';
  os << "test_samples: " << rows.size() << '\n';
  os << "conventions:\n";
  os << "  ssim_window: " << cfg.window << '\n';
  os << "  ssim_sigma: " << cfg.sigma << '\n';
  os << "  ssim_c1: " << cfg.c1 << '\n';
  os << "  ssim_c2: " << cfg.c2 << '\n';
  os << "  padding: circular azimuth, reflect elevation\n";
  os << "  dynamic_range: 1\n";
  os << "  psnr_cap_db: " << kPsnrCap << '\n';
  os << "  quantiles: nearest-rank\n";
  os << "ssim:\n";
  os << "  mean: " << mean_ssim << '\n';
  os << "  median: " << median_ssim << '\n';
  os << "  cdf_90: " << ssim_at_90 << '\n';
  os << "psnr_db:\n";
  os << "  mean: " << mean_psnr << '\n';
  os << "  median: " << median_psnr << '\n';
  return os.str();
}

void EvalReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  auto put = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) fail(Errc::IoError, "failed writing " + (dir / name).string());
  };
  put("samples.csv", rows_csv());
  put("summary.yaml", summary_yaml());
  put("cdf_ssim.csv", cdf_csv(ssim_cdf));
  put("cdf_psnr.csv", cdf_csv(psnr_cdf));
}

Model initial_model(const io::RunConfig& cfg, const Dataset& data) {
  Model m;
  m.scene = init_scene(cfg.model.gaussians, data.bounds, cfg.model.init_seed, cfg.model.initial_scale);
  NetworkConfig nc = cfg.network;
  nc.bounds = data.bounds;
  m.net = NetworkParams::random(nc, cfg.model.init_seed + 1);
  m.net.head[1].bias[0] = cfg.model.transmittance_bias;
  m.variant = ModelVariant::from_name(cfg.variant);
  return m;
}

SplitRun run_split(const Dataset& data, const SplitPlan& plan, const io::RunConfig& cfg, const LogFn& on_log) {
  plan.check(data);
  cfg.validate();
  const Dataset train = data.subset(plan.train);
  const Dataset test = data.subset(plan.test);
  Trainer trainer(train, initial_model(cfg, data), cfg.train, cfg.render);
  trainer.run(cfg.train.iterations, on_log);
  SplitRun out{trainer.model(), EvalReport::from_scores(score_samples(trainer.model(), test, cfg.render))};
  out.report.label = "eval";
  out.report.split = plan.spec.to_string();
  out.report.variant = cfg.variant;
  out.report.seed = cfg.train.seed;
  out.report.train_samples = plan.train.size();
  return out;
}

SplitRun ablate(const Dataset& data, const SplitPlan& plan, const io::RunConfig& cfg, const std::string& variant,
                const LogFn& on_log) {
  (void)ModelVariant::from_name(variant);
  io::RunConfig c = cfg;
  c.variant = variant;
  auto run = run_split(data, plan, c, on_log);
  run.report.label = "ablate";
  return run;
}

}  // namespace xfreq
