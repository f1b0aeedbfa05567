#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "xfreq/types.hpp"

namespace xfreq {

using Vec4 = Eigen::Vector4d;

/// Frequency-shared geometry of one RF Gaussian.
struct GaussianGeometry {
  Vec3 mean = Vec3::Zero();
  Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);  // quaternion (w, x, y, z)
  Vec3 log_scales = Vec3::Zero();
};

inline constexpr double kMinScale = 1e-4;  // meters

/// Rotation matrix of the (internally normalized) quaternion.
Mat3 rotation_matrix(const Vec4& q);

/// Sigma = R S S^T R^T.
Mat3 covariance(const GaussianGeometry& g);

/// Unnormalized ellipsoidal density exp(-0.5 (x-mu)^T Sigma^-1 (x-mu)); peak 1 at the mean.
double density(const GaussianGeometry& g, const Vec3& x);

/// Stable 64-bit hash of the geometry parameters; breaks depth ties
/// independently of storage order.
std::uint64_t content_hash(const GaussianGeometry& g);

/// Renormalizes the quaternion and clamps exp(log_scales) to [kMinScale, max_scale].
void enforce_invariants(GaussianGeometry& g, double max_scale);

struct GaussianScene {
  std::vector<GaussianGeometry> gaussians;
  Box bounds;

  std::size_t size() const { return gaussians.size(); }
};

/// Random initialization: means uniform in bounds, rotations uniform on the
/// 3-sphere, isotropic scale. A non-positive initial_scale selects the
/// default diagonal / cbrt(n).
GaussianScene init_scene(std::size_t n, const Box& bounds, std::uint64_t seed, double initial_scale = 0.0);

}  // namespace xfreq
