#include "xfreq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xfreq/error.hpp"

namespace xfreq {
namespace {

void check_same(const AngularGrid& grid, std::size_t a, std::size_t b) {
  if (a != grid.size() || b != grid.size()) fail(Errc::GridMismatch, "maps do not match the grid");
}

int reflect101(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

int wrap(int i, int n) { return ((i % n) + n) % n; }

// Separable windowed filter with the map's padding rules, and its transpose.
class Window {
 public:
  Window(const AngularGrid& grid, const SsimConfig& cfg)
      : rows_(grid.rows()), cols_(grid.cols()), taps_(cfg.taps()), radius_(cfg.window / 2) {}

  void apply(std::span<const double> in, std::vector<double>& out) const {
    std::vector<double> tmp(in.size(), 0.0);
    out.assign(in.size(), 0.0);
    for (int m = 0; m < rows_; ++m) {
      for (int n = 0; n < cols_; ++n) {
        double acc = 0.0;
        for (int t = -radius_; t <= radius_; ++t) acc += taps_[t + radius_] * in[idx(m, wrap(n + t, cols_))];
        tmp[idx(m, n)] = acc;
      }
    }
    for (int m = 0; m < rows_; ++m) {
      for (int n = 0; n < cols_; ++n) {
        double acc = 0.0;
        for (int t = -radius_; t <= radius_; ++t) acc += taps_[t + radius_] * tmp[idx(reflect101(m + t, rows_), n)];
        out[idx(m, n)] = acc;
      }
    }
  }

  void apply_transpose(std::span<const double> in, std::vector<double>& out) const {
    std::vector<double> tmp(in.size(), 0.0);
    out.assign(in.size(), 0.0);
    for (int m = 0; m < rows_; ++m)
      for (int t = -radius_; t <= radius_; ++t) {
        const int src = reflect101(m + t, rows_);
        const double w = taps_[t + radius_];
        for (int n = 0; n < cols_; ++n) tmp[idx(src, n)] += w * in[idx(m, n)];
      }
    for (int m = 0; m < rows_; ++m)
      for (int n = 0; n < cols_; ++n) {
        const double v = tmp[idx(m, n)];
        for (int t = -radius_; t <= radius_; ++t) out[idx(m, wrap(n + t, cols_))] += taps_[t + radius_] * v;
      }
  }

 private:
  std::size_t idx(int m, int n) const { return static_cast<std::size_t>(m) * cols_ + n; }
  int rows_, cols_;
  std::vector<double> taps_;
  int radius_;
};

struct SsimMaps {
  std::vector<double> mx, my, sxx, syy, sxy, s;
  double mean = 0.0;
};

SsimMaps ssim_maps(const AngularGrid& grid, std::span<const double> x, std::span<const double> y,
                   const SsimConfig& cfg) {
  check_same(grid, x.size(), y.size());
  if (cfg.window < 1 || cfg.window % 2 == 0) fail(Errc::InvalidValue, "SSIM window must be odd");
  if (grid.rows() < cfg.window || grid.cols() < cfg.window) {
    fail(Errc::GridTooSmall, "SSIM needs a grid of at least " + std::to_string(cfg.window) + "x" +
                                 std::to_string(cfg.window));
  }
  const Window win(grid, cfg);
  const std::size_t k = x.size();
  std::vector<double> xx(k), yy(k), xy(k);
  for (std::size_t i = 0; i < k; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  SsimMaps r;
  win.apply(x, r.mx);
  win.apply(y, r.my);
  win.apply(xx, r.sxx);
  win.apply(yy, r.syy);
  win.apply(xy, r.sxy);
  r.s.resize(k);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double mx = r.mx[i], my = r.my[i];
    r.sxx[i] -= mx * mx;
    r.syy[i] -= my * my;
    r.sxy[i] -= mx * my;
    const double num = (2 * mx * my + cfg.c1) * (2 * r.sxy[i] + cfg.c2);
    const double den = (mx * mx + my * my + cfg.c1) * (r.sxx[i] + r.syy[i] + cfg.c2);
    r.s[i] = num / den;
    total += r.s[i];
  }
  r.mean = total / static_cast<double>(k);
  return r;
}

}  // namespace

std::vector<double> SsimConfig::taps() const {
  std::vector<double> t(static_cast<std::size_t>(window));
  const int r = window / 2;
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    t[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += t[static_cast<std::size_t>(i + r)];
  }
  for (auto& v : t) v /= sum;
  return t;
}

double psnr(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size() || pred.empty()) fail(Errc::GridMismatch, "maps differ in size");
  double se = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) se += (pred[i] - gt[i]) * (pred[i] - gt[i]);
  const double mse = se / static_cast<double>(pred.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr(const PASMap& pred, const PASMap& gt) {
  if (!(pred.grid() == gt.grid())) fail(Errc::GridMismatch, "maps are on different grids");
  return psnr(pred.values(), gt.values());
}

double ssim(const AngularGrid& grid, std::span<const double> pred, std::span<const double> gt,
            const SsimConfig& cfg) {
  return ssim_maps(grid, pred, gt, cfg).mean;
}

double ssim(const PASMap& pred, const PASMap& gt, const SsimConfig& cfg) {
  if (!(pred.grid() == gt.grid())) fail(Errc::GridMismatch, "maps are on different grids");
  return ssim(pred.grid(), pred.values(), gt.values(), cfg);
}

double ssim_with_gradient(const AngularGrid& grid, std::span<const double> pred, std::span<const double> gt,
                          std::vector<double>& grad, const SsimConfig& cfg) {
  const SsimMaps r = ssim_maps(grid, pred, gt, cfg);
  const std::size_t k = pred.size();
  const double inv_k = 1.0 / static_cast<double>(k);
  // Coefficients of dSSIM/d(blur(x)), d(blur(x^2)), d(blur(xy)) per cell.
  std::vector<double> a(k), b(k), c(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double mx = r.mx[i], my = r.my[i];
    const double a1 = 2 * mx * my + cfg.c1, a2 = 2 * r.sxy[i] + cfg.c2;
    const double b1 = mx * mx + my * my + cfg.c1, b2 = r.sxx[i] + r.syy[i] + cfg.c2;
    const double s = r.s[i] * inv_k;
    a[i] = s * (2 * my / a1 - 2 * my / a2 - 2 * mx / b1 + 2 * mx / b2);
    b[i] = -s / b2;
    c[i] = s * 2.0 / a2;
  }
  const Window win(grid, cfg);
  std::vector<double> ta, tb, tc;
  win.apply_transpose(a, ta);
  win.apply_transpose(b, tb);
  win.apply_transpose(c, tc);
  grad.resize(k);
  for (std::size_t i = 0; i < k; ++i) grad[i] = ta[i] + 2.0 * pred[i] * tb[i] + gt[i] * tc[i];
  return r.mean;
}

double quantile(std::span<const double> values, double p) {
  if (values.empty()) fail(Errc::EmptyList, "quantile of an empty list");
  if (!(p > 0.0 && p <= 1.0)) fail(Errc::InvalidValue, "quantile fraction must be in (0, 1]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const auto n = static_cast<double>(v.size());
  auto rank = static_cast<std::size_t>(std::ceil(p * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  return v[rank - 1];
}

double median(std::span<const double> values) { return quantile(values, 0.5); }

double mean(std::span<const double> values) {
  if (values.empty()) fail(Errc::EmptyList, "mean of an empty list");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

std::vector<CdfPoint> cdf(std::span<const double> values) {
  if (values.empty()) fail(Errc::EmptyList, "CDF of an empty list");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  std::vector<CdfPoint> out;
  out.reserve(100);
  const auto n = static_cast<double>(v.size());
  for (int pct = 1; pct <= 100; ++pct) {
    const double p = pct / 100.0;
    auto rank = static_cast<std::size_t>(std::ceil(p * n - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, v.size());
    out.push_back({p, v[rank - 1]});
  }
  return out;
}

}  // namespace xfreq
