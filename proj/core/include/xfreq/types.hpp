#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "xfreq/error.hpp"

namespace xfreq {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Complex = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDegPerRad = 180.0 / kPi;
inline constexpr double kRadPerDeg = kPi / 180.0;

/// Amplitude of a complex value.
inline double amplitude(Complex c) { return std::abs(c); }
/// Phase wrapped to (-pi, pi].
double wrapped_phase(Complex c);
inline Complex from_polar(double amp, double phase) { return {amp * std::cos(phase), amp * std::sin(phase)}; }

/// Wraps an azimuth difference in degrees to (-180, 180].
double wrap_degrees(double delta);

/// Axis-aligned box in meters.
struct Box {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
  double diagonal() const { return extent().norm(); }
  bool contains(const Vec3& p) const;
  bool strictly_contains(const Vec3& p) const;
  /// True when min <= max on every axis.
  bool valid() const;
};

/// Equiangular elevation x azimuth grid over the upper hemisphere.
///
/// Elevation rows cover [0, 90) degrees, azimuth columns cover [0, 360).
/// Azimuth is counterclockwise from +x in the xy-plane; elevation is measured
/// from the xy-plane toward +z. Cells are row-major with elevation outer.
class AngularGrid {
 public:
  AngularGrid(int n_elev, int n_azim);

  int rows() const { return n_elev_; }
  int cols() const { return n_azim_; }
  std::size_t size() const { return static_cast<std::size_t>(n_elev_) * n_azim_; }
  double elev_step() const { return 90.0 / n_elev_; }
  double azim_step() const { return 360.0 / n_azim_; }

  double cell_elevation(int m) const { return (m + 0.5) * elev_step(); }
  double cell_azimuth(int n) const { return (n + 0.5) * azim_step(); }
  std::size_t index(int m, int n) const { return static_cast<std::size_t>(m) * n_azim_ + n; }

  bool operator==(const AngularGrid&) const = default;

 private:
  int n_elev_;
  int n_azim_;
};

/// Unit direction for an (azimuth, elevation) pair in degrees.
Vec3 direction_from_angles(double azim_deg, double elev_deg);

/// Unit direction through the center of cell (m, n).
Vec3 cell_direction(const AngularGrid& grid, int m, int n);

/// Nonnegative power map over an AngularGrid. All-zero maps are rejected.
class PASMap {
 public:
  PASMap(AngularGrid grid, std::vector<double> values);

  const AngularGrid& grid() const { return grid_; }
  std::span<const double> values() const { return values_; }
  double at(int m, int n) const { return values_[grid_.index(m, n)]; }
  double max() const;
  /// First cell (row-major) holding the maximum value.
  std::size_t argmax() const;

 private:
  AngularGrid grid_;
  std::vector<double> values_;
};

/// Divides by the maximum value; the output maximum is exactly 1.
PASMap normalize_pas(const PASMap& raw);

/// Same as normalize_pas on a raw buffer; throws AllZeroMap for an all-zero input.
std::vector<double> normalize_values(std::span<const double> raw);

struct TxDescriptor {
  Vec3 position = Vec3::Zero();
  double frequency = 1e9;  // Hz

  void validate() const;
};

struct ReceiverConfig {
  Vec3 center = Vec3::Zero();
  double sphere_radius = 1.0;

  void validate() const;
};

}  // namespace xfreq
