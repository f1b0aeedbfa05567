#include "xfreq/types.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace xfreq {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::AllZeroMap: return "AllZeroMap";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::GridMismatch: return "GridMismatch";
    case Errc::InvalidGrid: return "InvalidGrid";
    case Errc::InvalidValue: return "InvalidValue";
    case Errc::NonPositiveInput: return "NonPositiveInput";
    case Errc::FrequencyOutOfTableRange: return "FrequencyOutOfTableRange";
    case Errc::TotalInternalReflection: return "TotalInternalReflection";
    case Errc::TxOutsideRoom: return "TxOutsideRoom";
    case Errc::TxCoincidentWithRx: return "TxCoincidentWithRx";
    case Errc::InvalidScene: return "InvalidScene";
    case Errc::EmptyBounds: return "EmptyBounds";
    case Errc::FrequencyOutOfRange: return "FrequencyOutOfRange";
    case Errc::PositionOutOfBounds: return "PositionOutOfBounds";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::GaussianAtReceiver: return "GaussianAtReceiver";
    case Errc::MisalignedAttributes: return "MisalignedAttributes";
    case Errc::StaleGraph: return "StaleGraph";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::GridTooSmall: return "GridTooSmall";
    case Errc::EmptyList: return "EmptyList";
    case Errc::InvalidSplit: return "InvalidSplit";
    case Errc::InvalidSplitSpec: return "InvalidSplitSpec";
    case Errc::UnknownVariant: return "UnknownVariant";
    case Errc::ConfigError: return "ConfigError";
    case Errc::ManifestError: return "ManifestError";
    case Errc::FormatError: return "FormatError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

bool is_validation_error(Errc code) noexcept {
  switch (code) {
    case Errc::ConfigError:
    case Errc::ManifestError:
    case Errc::FormatError:
    case Errc::InvalidScene:
    case Errc::InvalidSplitSpec:
    case Errc::InvalidSplit:
    case Errc::UnknownVariant:
    case Errc::FrequencyOutOfRange:
    case Errc::GridMismatch:
    case Errc::InvalidGrid:
    case Errc::InvalidValue:
    case Errc::TxOutsideRoom:
    case Errc::TxCoincidentWithRx:
    case Errc::EmptyDataset:
    case Errc::IoError:
      return true;
    default:
      return false;
  }
}

double wrapped_phase(Complex c) {
  double p = std::arg(c);  // [-pi, pi]
  return p == -kPi ? kPi : p;
}

double wrap_degrees(double delta) {
  double d = std::fmod(delta, 360.0);
  if (d > 180.0) d -= 360.0;
  if (d <= -180.0) d += 360.0;
  return d;
}

bool Box::contains(const Vec3& p) const {
  return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
}

bool Box::strictly_contains(const Vec3& p) const {
  return (p.array() > min.array()).all() && (p.array() < max.array()).all();
}

bool Box::valid() const {
  return min.allFinite() && max.allFinite() && (min.array() <= max.array()).all();
}

AngularGrid::AngularGrid(int n_elev, int n_azim) : n_elev_(n_elev), n_azim_(n_azim) {
  if (n_elev <= 0 || n_azim <= 0) {
    std::ostringstream os;
    os << "grid dimensions must be positive, got " << n_elev << "x" << n_azim;
    fail(Errc::InvalidGrid, os.str());
  }
}

Vec3 direction_from_angles(double azim_deg, double elev_deg) {
  const double a = azim_deg * kRadPerDeg;
  const double b = elev_deg * kRadPerDeg;
  return {std::cos(b) * std::cos(a), std::cos(b) * std::sin(a), std::sin(b)};
}

Vec3 cell_direction(const AngularGrid& grid, int m, int n) {
  if (m < 0 || m >= grid.rows() || n < 0 || n >= grid.cols()) {
    std::ostringstream os;
    os << "cell (" << m << ", " << n << ") outside " << grid.rows() << "x" << grid.cols() << " grid";
    fail(Errc::IndexOutOfRange, os.str());
  }
  return direction_from_angles(grid.cell_azimuth(n), grid.cell_elevation(m));
}

PASMap::PASMap(AngularGrid grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
  if (values_.size() != grid_.size()) {
    fail(Errc::ShapeMismatch, "PAS value count " + std::to_string(values_.size()) + " does not match grid size " +
                                  std::to_string(grid_.size()));
  }
  bool any_positive = false;
  for (double v : values_) {
    if (!std::isfinite(v) || v < 0.0) fail(Errc::InvalidValue, "PAS values must be finite and nonnegative");
    any_positive = any_positive || v > 0.0;
  }
  if (!any_positive) fail(Errc::AllZeroMap, "PAS map has no positive cell");
}

double PASMap::max() const { return values_[argmax()]; }

std::size_t PASMap::argmax() const {
  return static_cast<std::size_t>(std::max_element(values_.begin(), values_.end()) - values_.begin());
}

std::vector<double> normalize_values(std::span<const double> raw) {
  double peak = 0.0;
  for (double v : raw) peak = std::max(peak, v);
  if (!(peak > 0.0)) fail(Errc::AllZeroMap, "cannot normalize an all-zero map");
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / peak;
  return out;
}

PASMap normalize_pas(const PASMap& raw) { return PASMap(raw.grid(), normalize_values(raw.values())); }

void TxDescriptor::validate() const {
  if (!position.allFinite()) fail(Errc::InvalidValue, "TX position must be finite");
  if (!(frequency > 0.0) || !std::isfinite(frequency)) fail(Errc::NonPositiveInput, "TX frequency must be positive");
}

void ReceiverConfig::validate() const {
  if (!center.allFinite()) fail(Errc::InvalidValue, "RX center must be finite");
  if (!(sphere_radius > 0.0)) fail(Errc::NonPositiveInput, "RX sphere radius must be positive");
}

}  // namespace xfreq
