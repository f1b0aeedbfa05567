#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xfreq/model.hpp"
#include "xfreq/types.hpp"
#include "xfreq/widefreq_net.hpp"

namespace xfreq {

using Jacobian23 = Eigen::Matrix<double, 2, 3>;

inline constexpr double kReceiverEpsilon = 1e-6;   // m
inline constexpr double kPoleElevation = 89.999;   // deg
inline constexpr double kPoleClampElevation = 89.9;

struct RenderOptions {
  double cutoff_sigma = 3.0;
  double cov_regularization = 0.09;  // deg^2 added to the projected covariance
  bool deterministic = true;
  bool clamp_positions = false;
  bool allow_extrapolation = false;
};

/// Receiver-centered direction and equirectangular chart coordinates.
struct Projection {
  Vec3 direction;  // unit
  Vec2 uv;         // (azimuth deg in [0, 360), elevation deg)
  double depth;    // m
  bool pole;       // elevation above kPoleElevation
};

/// Throws GaussianAtReceiver when the mean is within kReceiverEpsilon of the RX.
Projection project(const GaussianGeometry& g, const ReceiverConfig& rx);

/// Analytic d(azimuth, elevation)/d(position) in degrees per meter at offset
/// d = mu - r0. Elevations above the pole threshold are evaluated at the
/// clamped elevation.
Jacobian23 projection_jacobian(const Vec3& offset);

/// C = J Sigma J^T + eps_c I (deg^2).
Mat2 projected_covariance(const GaussianGeometry& g, const ReceiverConfig& rx, double regularization = 0.09);

/// C^f = lambda C.
Mat2 frequency_footprint(const Mat2& cov2d, double spread);

struct ProjectedGaussian {
  Vec2 center_uv;
  Mat2 cov2d;
  Mat2 cov2d_freq;
  double depth = 0.0;
  std::size_t source_index = 0;
  std::uint64_t tie_key = 0;  // content hash for depth ties
  bool pole = false;
};

struct ContributorEntry {
  std::uint32_t source_index;
  double weight;  // projected 2D Gaussian at the cell center
};

/// Per-cell contributor lists in compressed-row form, each ordered by
/// ascending depth (ties: content hash, then source index).
struct RayContributorList {
  std::size_t cells = 0;
  std::vector<std::size_t> offsets;  // cells + 1
  std::vector<ContributorEntry> entries;

  std::span<const ContributorEntry> cell(std::size_t k) const {
    return {entries.data() + offsets[k], offsets[k + 1] - offsets[k]};
  }
};

/// Squared Mahalanobis distance from u to a cell center, azimuth wrapped.
double footprint_mahalanobis2(const ProjectedGaussian& p, double cell_azim, double cell_elev);

RayContributorList bin_contributors(std::span<const ProjectedGaussian> projected, const AngularGrid& grid,
                                    double cutoff_sigma = 3.0);

struct ComplexResponseGrid {
  AngularGrid grid;
  std::vector<Complex> values;
};

/// R_k = sum_i w_ik S_i prod_{m<i} delta_m over each ordered contributor list.
ComplexResponseGrid accumulate(const RayContributorList& contribs, std::span<const RFAttributes> attrs,
                               const AngularGrid& grid);

/// Everything recorded by a forward render that the reverse pass needs.
struct RenderGraph {
  std::uint64_t model_version = 0;
  TxDescriptor tx;
  ReceiverConfig rx;
  AngularGrid grid{1, 1};
  RenderOptions options;
  ModelVariant variant;
  NetworkTape tape;
  std::vector<RFAttributes> attrs;
  std::vector<ProjectedGaussian> projected;  // only non-skipped Gaussians
  std::vector<int> slot_of_source;           // -1 for skipped Gaussians
  std::size_t skipped = 0;
  RayContributorList contributors;
  std::vector<Complex> response;
  std::vector<double> power;       // |R_k|^2
  std::size_t max_index = 0;       // first argmax of power
  std::vector<double> normalized;  // power / max
};

/// Full forward render: network, projection, footprints, binning, ordered
/// complex accumulation, power, normalization. Throws AllZeroMap when no cell
/// receives power.
RenderGraph render_graph(const Model& model, const TxDescriptor& tx, const ReceiverConfig& rx,
                         const AngularGrid& grid, const RenderOptions& opts = {});

PASMap render(const Model& model, const TxDescriptor& tx, const ReceiverConfig& rx, const AngularGrid& grid,
              const RenderOptions& opts = {});

struct GeometryGradient {
  Vec3 mean = Vec3::Zero();
  Vec4 rotation = Vec4::Zero();
  Vec3 log_scales = Vec3::Zero();
};

struct ModelGradients {
  std::vector<GeometryGradient> geometry;
  NetworkGradients net;

  static ModelGradients zeros_like(const Model& m);
  void set_zero();
  void scale(double s);
  void add(const ModelGradients& other);
};

enum class AdjointOf { NormalizedMap, RawPower };

/// Exact reverse-mode adjoints of a render with respect to every Gaussian and
/// network parameter. `adjoint` is dL/d(normalized map) or dL/d(raw power).
/// Throws StaleGraph if the model changed since the graph was recorded.
ModelGradients backward(const RenderGraph& graph, const Model& model, std::span<const double> adjoint,
                        AdjointOf target = AdjointOf::NormalizedMap);

}  // namespace xfreq
