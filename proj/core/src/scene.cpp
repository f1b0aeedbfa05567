#include "xfreq/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <Eigen/Cholesky>

#include "xfreq/rng.hpp"

namespace xfreq {

Mat3 rotation_matrix(const Vec4& q_raw) {
  const Vec4 q = q_raw / q_raw.norm();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Mat3 covariance(const GaussianGeometry& g) {
  const Mat3 r = rotation_matrix(g.rotation);
  const Vec3 s2 = (2.0 * g.log_scales).array().exp();
  Mat3 sigma = r * s2.asDiagonal() * r.transpose();
  // Exact symmetry regardless of rounding in the product.
  return 0.5 * (sigma + sigma.transpose());
}

double density(const GaussianGeometry& g, const Vec3& x) {
  const Mat3 r = rotation_matrix(g.rotation);
  // Sigma^-1 = R S^-2 R^T, so the quadratic form is |S^-1 R^T (x - mu)|^2.
  const Vec3 local = r.transpose() * (x - g.mean);
  const Vec3 inv_s = (-g.log_scales).array().exp();
  const double q = (local.array() * inv_s.array()).square().sum();
  return std::exp(-0.5 * q);
}

std::uint64_t content_hash(const GaussianGeometry& g) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  for (int i = 0; i < 3; ++i) mix(g.mean[i]);
  for (int i = 0; i < 4; ++i) mix(g.rotation[i]);
  for (int i = 0; i < 3; ++i) mix(g.log_scales[i]);
  return h;
}

void enforce_invariants(GaussianGeometry& g, double max_scale) {
  const double n = g.rotation.norm();
  if (n > 0.0 && std::isfinite(n)) {
    g.rotation /= n;
  } else {
    g.rotation = Vec4(1.0, 0.0, 0.0, 0.0);
  }
  const double lo = std::log(kMinScale);
  const double hi = std::log(std::max(max_scale, kMinScale));
  for (int i = 0; i < 3; ++i) g.log_scales[i] = std::clamp(g.log_scales[i], lo, hi);
}

GaussianScene init_scene(std::size_t n, const Box& bounds, std::uint64_t seed, double initial_scale) {
  if (n == 0) fail(Errc::InvalidValue, "scene needs at least one Gaussian");
  if (!bounds.valid()) fail(Errc::EmptyBounds, "initialization bounds are empty");
  const double diag = bounds.diagonal();
  double scale = initial_scale > 0.0 ? initial_scale : diag / std::cbrt(static_cast<double>(n));
  scale = std::clamp(scale, kMinScale, std::max(diag, kMinScale));

  Rng rng(seed);
  GaussianScene scene;
  scene.bounds = bounds;
  scene.gaussians.resize(n);
  for (auto& g : scene.gaussians) {
    for (int k = 0; k < 3; ++k) g.mean[k] = rng.uniform(bounds.min[k], bounds.max[k]);
    // Shoemake's uniform random rotation.
    const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
    const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
    g.rotation = Vec4(b * std::cos(2 * kPi * u3), a * std::sin(2 * kPi * u2), a * std::cos(2 * kPi * u2),
                      b * std::sin(2 * kPi * u3));
    g.rotation /= g.rotation.norm();
    g.log_scales = Vec3::Constant(std::log(scale));
  }
  return scene;
}

}  // namespace xfreq
