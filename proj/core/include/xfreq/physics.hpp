#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "xfreq/types.hpp"

namespace xfreq::physics {

inline constexpr double kSpeedOfLight = 299'792'458.0;  // m/s

/// One (frequency, value) sample of a dispersive material table.
struct TablePoint {
  double frequency;  // Hz
  double value;
};

/// Dispersive material described by tabulated relative permittivity and
/// permeability. Values between samples are interpolated linearly in
/// log-frequency; a single-sample table is constant at every frequency.
class MaterialSpec {
 public:
  MaterialSpec() = default;
  MaterialSpec(std::string name, std::vector<TablePoint> permittivity, std::vector<TablePoint> permeability);

  /// Frequency-independent material.
  static MaterialSpec constant(std::string name, double rel_permittivity, double rel_permeability = 1.0);
  static MaterialSpec vacuum() { return constant("vacuum", 1.0, 1.0); }

  const std::string& name() const { return name_; }
  const std::vector<TablePoint>& permittivity_table() const { return permittivity_; }
  const std::vector<TablePoint>& permeability_table() const { return permeability_; }

  /// Relative permittivity eps_m(f)/eps_0.
  double relative_permittivity(double frequency) const;
  /// Relative permeability mu_m(f)/mu_0.
  double relative_permeability(double frequency) const;
  bool covers(double frequency) const;

 private:
  std::string name_ = "vacuum";
  std::vector<TablePoint> permittivity_{{1e9, 1.0}};
  std::vector<TablePoint> permeability_{{1e9, 1.0}};
};

struct FresnelRates {
  double reflection;    // R
  double transmission;  // T
  double absorption;    // rho = 1 - R - T
};

/// Free-space path loss (4 pi d f / c)^2 as a linear power ratio.
double fspl(double distance, double frequency);

/// Normal-incidence power reflection/transmission/absorption rates.
FresnelRates fresnel_rates(const MaterialSpec& material, double frequency);

/// Refraction angle (radians) for incidence from vacuum into the material.
double snell_refraction(double theta_i, const MaterialSpec& material, double frequency);

/// Wall ordering used everywhere: -x, +x, -y, +y, -z (floor), +z (ceiling).
enum Wall : int { kWallXMin = 0, kWallXMax, kWallYMin, kWallYMax, kWallZMin, kWallZMax };

struct SceneDescriptor {
  Box room;
  std::array<MaterialSpec, 6> walls;
  ReceiverConfig rx;
  int max_reflection_order = 2;
  double beamwidth_deg = 6.0;

  void validate() const;
};

struct PathContribution {
  Complex gain;        // Delta A_l * exp(j Delta phi_l)
  double aoa_azim;     // degrees in [0, 360)
  double aoa_elev;     // degrees in [-90, 90]
  double length;       // meters
  int order;           // number of reflections
  Vec3 image;          // image-source position
  std::vector<int> wall_sequence;  // walls in propagation order (TX side first)
};

/// Line-of-sight plus image-source reflection paths up to the scene's maximum
/// order, sorted by length then by generation index.
std::vector<PathContribution> enumerate_paths(const SceneDescriptor& scene, const TxDescriptor& tx);

/// Gaussian receive-beam gain for an off-axis angle in degrees.
double beam_gain(double off_axis_deg, double beamwidth_deg);

/// |sum_l gain_l B(angle to path l)|^2 per cell, with each arrival direction
/// taken from the path's image source as seen from rx.
std::vector<double> beamform(std::span<const PathContribution> paths, const Vec3& rx, const AngularGrid& grid,
                             double beamwidth_deg);

/// Beamformed power |y_{m,n}|^2 per cell before normalization.
std::vector<double> synthesize_power(const SceneDescriptor& scene, const TxDescriptor& tx, const AngularGrid& grid);

/// Ground-truth normalized PAS map.
PASMap synthesize_pas(const SceneDescriptor& scene, const TxDescriptor& tx, const AngularGrid& grid);

}  // namespace xfreq::physics
