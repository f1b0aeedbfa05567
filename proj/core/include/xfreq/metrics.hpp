#pragma once

#include <span>
#include <vector>

#include "xfreq/types.hpp"

namespace xfreq {

inline constexpr double kPsnrCap = 99.0;  // dB, returned for zero MSE

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double c1 = 1e-4;  // (0.01 L)^2, L = 1
  double c2 = 9e-4;  // (0.03 L)^2

  /// Normalized 1D Gaussian taps; the 2D window is their outer product.
  std::vector<double> taps() const;
};

double psnr(std::span<const double> pred, std::span<const double> gt);
double psnr(const PASMap& pred, const PASMap& gt);

/// Mean local SSIM with a separable Gaussian window, circular padding in
/// azimuth and reflect padding in elevation.
double ssim(const AngularGrid& grid, std::span<const double> pred, std::span<const double> gt,
            const SsimConfig& cfg = {});
double ssim(const PASMap& pred, const PASMap& gt, const SsimConfig& cfg = {});

/// SSIM and its gradient with respect to pred.
double ssim_with_gradient(const AngularGrid& grid, std::span<const double> pred, std::span<const double> gt,
                          std::vector<double>& grad, const SsimConfig& cfg = {});

struct CdfPoint {
  double fraction;
  double threshold;
};

/// Empirical CDF at 1% steps, nearest-rank quantiles.
std::vector<CdfPoint> cdf(std::span<const double> values);

/// Nearest-rank quantile: the ceil(p n)-th smallest value (p in (0, 1]).
double quantile(std::span<const double> values, double p);
double median(std::span<const double> values);
double mean(std::span<const double> values);

}  // namespace xfreq
