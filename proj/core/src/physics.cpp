#include "xfreq/physics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

namespace xfreq::physics {
namespace {

void validate_table(const std::string& material, const char* what, const std::vector<TablePoint>& table,
                    double floor, bool inclusive) {
  if (table.empty()) fail(Errc::InvalidScene, "material '" + material + "': empty " + what + " table");
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& p = table[i];
    const bool ok = inclusive ? p.value >= floor : p.value > floor;
    if (!(p.frequency > 0.0) || !std::isfinite(p.value) || !ok) {
      std::ostringstream os;
      os << "material '" << material << "': invalid " << what << " sample " << i << " (" << p.frequency << " Hz, "
         << p.value << ")";
      fail(Errc::InvalidScene, os.str());
    }
    if (i > 0 && !(p.frequency > table[i - 1].frequency)) {
      fail(Errc::InvalidScene, "material '" + material + "': " + what + " table not strictly increasing");
    }
  }
}

double interpolate(const std::vector<TablePoint>& table, double f, const std::string& material) {
  if (table.size() == 1) return table.front().value;
  if (f < table.front().frequency || f > table.back().frequency) {
    std::ostringstream os;
    os << "material '" << material << "': " << f << " Hz outside table range [" << table.front().frequency << ", "
       << table.back().frequency << "]";
    fail(Errc::FrequencyOutOfTableRange, os.str());
  }
  auto hi = std::lower_bound(table.begin(), table.end(), f,
                             [](const TablePoint& p, double x) { return p.frequency < x; });
  if (hi->frequency == f) return hi->value;
  auto lo = hi - 1;
  const double t = (std::log(f) - std::log(lo->frequency)) / (std::log(hi->frequency) - std::log(lo->frequency));
  return lo->value + t * (hi->value - lo->value);
}

Vec3 reflect(const Vec3& p, const Box& room, int wall) {
  Vec3 r = p;
  const int axis = wall / 2;
  const double plane = (wall % 2 == 0) ? room.min[axis] : room.max[axis];
  r[axis] = 2.0 * plane - p[axis];
  return r;
}

// Checks that the straight segment from the receiver to the final image,
// unfolded back through each wall in reverse, hits every wall inside its face.
// Paths through an edge, which meet two walls at the same point, are accepted.
bool path_is_valid(const Box& room, const Vec3& rx, const std::vector<Vec3>& images, const std::vector<int>& walls) {
  constexpr double kTol = 1e-9;
  Vec3 from = rx;
  for (int j = static_cast<int>(walls.size()) - 1; j >= 0; --j) {
    const Vec3& target = images[j + 1];
    const int wall = walls[j];
    const int axis = wall / 2;
    const double plane = (wall % 2 == 0) ? room.min[axis] : room.max[axis];
    const double denom = target[axis] - from[axis];
    if (std::abs(denom) < 1e-15) return false;
    const double t = (plane - from[axis]) / denom;
    if (t < -1e-12 || t >= 1.0) return false;
    const Vec3 hit = from + t * (target - from);
    for (int k = 0; k < 3; ++k) {
      if (k == axis) continue;
      if (hit[k] < room.min[k] - kTol || hit[k] > room.max[k] + kTol) return false;
    }
    from = hit;
  }
  return true;
}

}  // namespace

MaterialSpec::MaterialSpec(std::string name, std::vector<TablePoint> permittivity, std::vector<TablePoint> permeability)
    : name_(std::move(name)), permittivity_(std::move(permittivity)), permeability_(std::move(permeability)) {
  validate_table(name_, "permittivity", permittivity_, 1.0, true);
  validate_table(name_, "permeability", permeability_, 0.0, false);
}

MaterialSpec MaterialSpec::constant(std::string name, double rel_permittivity, double rel_permeability) {
  return MaterialSpec(std::move(name), {{1e9, rel_permittivity}}, {{1e9, rel_permeability}});
}

double MaterialSpec::relative_permittivity(double frequency) const {
  return interpolate(permittivity_, frequency, name_);
}

double MaterialSpec::relative_permeability(double frequency) const {
  return interpolate(permeability_, frequency, name_);
}

bool MaterialSpec::covers(double frequency) const {
  auto in = [frequency](const std::vector<TablePoint>& t) {
    return t.size() == 1 || (frequency >= t.front().frequency && frequency <= t.back().frequency);
  };
  return in(permittivity_) && in(permeability_);
}

double fspl(double distance, double frequency) {
  if (!(distance > 0.0) || !(frequency > 0.0)) {
    std::ostringstream os;
    os << "fspl requires positive distance and frequency, got d=" << distance << " f=" << frequency;
    fail(Errc::NonPositiveInput, os.str());
  }
  const double x = 4.0 * kPi * distance * frequency / kSpeedOfLight;
  return x * x;
}

FresnelRates fresnel_rates(const MaterialSpec& material, double frequency) {
  if (!(frequency > 0.0)) fail(Errc::NonPositiveInput, "frequency must be positive");
  const double eps = material.relative_permittivity(frequency);
  const double mu = material.relative_permeability(frequency);
  // Impedances relative to free space, eta_0 = 1.
  const double eta = std::sqrt(mu / eps);
  const double ratio = (eta - 1.0) / (eta + 1.0);
  FresnelRates r{};
  r.reflection = ratio * ratio;
  r.transmission = 4.0 * eta / ((eta + 1.0) * (eta + 1.0));
  r.absorption = std::max(0.0, 1.0 - r.reflection - r.transmission);
  return r;
}

double snell_refraction(double theta_i, const MaterialSpec& material, double frequency) {
  if (!(theta_i >= 0.0 && theta_i < kPi / 2)) {
    fail(Errc::InvalidValue, "incidence angle must lie in [0, pi/2)");
  }
  const double n2 = material.relative_permittivity(frequency) * material.relative_permeability(frequency);
  const double ratio = std::sqrt(1.0 / n2);
  if (ratio == 1.0) return theta_i;
  const double s = std::sin(theta_i) * ratio;
  if (s >= 1.0) fail(Errc::TotalInternalReflection, "no real refraction angle");
  return std::asin(s);
}

void SceneDescriptor::validate() const {
  if (!room.valid() || !((room.max - room.min).array() > 0.0).all()) {
    fail(Errc::InvalidScene, "room must be a nonempty box");
  }
  rx.validate();
  if (!room.strictly_contains(rx.center)) fail(Errc::InvalidScene, "receiver center must lie strictly inside the room");
  if (max_reflection_order < 0 || max_reflection_order > 5) {
    fail(Errc::InvalidScene, "max_reflection_order must lie in [0, 5]");
  }
  if (!(beamwidth_deg > 0.0 && beamwidth_deg <= 10.0)) fail(Errc::InvalidScene, "beamwidth_deg must lie in (0, 10]");
}

std::vector<PathContribution> enumerate_paths(const SceneDescriptor& scene, const TxDescriptor& tx) {
  scene.validate();
  tx.validate();
  if (!scene.room.strictly_contains(tx.position)) fail(Errc::TxOutsideRoom, "transmitter lies outside the room");
  if ((tx.position - scene.rx.center).norm() < 1e-9) {
    fail(Errc::TxCoincidentWithRx, "transmitter coincides with the receiver center");
  }

  std::array<double, 6> amp_factor{};
  for (int w = 0; w < 6; ++w) amp_factor[w] = std::sqrt(fresnel_rates(scene.walls[w], tx.frequency).reflection);

  struct Candidate {
    Vec3 image;
    std::vector<int> walls;
    std::size_t generation;
  };
  std::vector<Candidate> accepted;
  accepted.push_back({tx.position, {}, 0});

  std::vector<Vec3> images{tx.position};
  std::vector<int> walls;
  std::size_t generation = 0;
  const Vec3& rx = scene.rx.center;

  std::function<void(int)> expand = [&](int depth) {
    if (depth == scene.max_reflection_order) return;
    for (int w = 0; w < 6; ++w) {
      if (!walls.empty() && walls.back() == w) continue;
      images.push_back(reflect(images.back(), scene.room, w));
      walls.push_back(w);
      ++generation;
      if (path_is_valid(scene.room, rx, images, walls)) {
        const Vec3& img = images.back();
        const bool duplicate = std::any_of(accepted.begin(), accepted.end(), [&](const Candidate& c) {
          return (c.image - img).norm() < 1e-9;
        });
        if (!duplicate) accepted.push_back({img, walls, generation});
      }
      expand(depth + 1);
      images.pop_back();
      walls.pop_back();
    }
  };
  expand(0);

  std::vector<PathContribution> paths;
  paths.reserve(accepted.size());
  for (const auto& c : accepted) {
    const Vec3 dir = c.image - rx;
    const double length = dir.norm();
    double amp = 1.0 / std::sqrt(fspl(length, tx.frequency));
    for (int w : c.walls) amp *= amp_factor[w];
    const int order = static_cast<int>(c.walls.size());
    const double phase = -2.0 * kPi * tx.frequency * length / kSpeedOfLight + kPi * order;
    double az = std::atan2(dir.y(), dir.x()) * kDegPerRad;
    if (az < 0.0) az += 360.0;
    if (az >= 360.0) az -= 360.0;
    const double el = std::asin(std::clamp(dir.z() / length, -1.0, 1.0)) * kDegPerRad;
    paths.push_back({from_polar(amp, phase), az, el, length, order, c.image, c.walls});
  }
  std::vector<std::size_t> order(paths.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (paths[a].length != paths[b].length) return paths[a].length < paths[b].length;
    return accepted[a].generation < accepted[b].generation;
  });
  std::vector<PathContribution> sorted;
  sorted.reserve(paths.size());
  for (std::size_t i : order) sorted.push_back(std::move(paths[i]));
  return sorted;
}

double beam_gain(double off_axis_deg, double beamwidth_deg) {
  const double sigma = beamwidth_deg / 2.355;
  if (off_axis_deg > 3.0 * sigma) return 0.0;
  return std::exp(-off_axis_deg * off_axis_deg / (2.0 * sigma * sigma));
}

std::vector<double> beamform(std::span<const PathContribution> paths, const Vec3& rx, const AngularGrid& grid,
                             double beamwidth_deg) {
  std::vector<Vec3> aoa;
  aoa.reserve(paths.size());
  for (const auto& p : paths) aoa.push_back((p.image - rx).normalized());

  std::vector<double> power(grid.size(), 0.0);
  for (int m = 0; m < grid.rows(); ++m) {
    for (int n = 0; n < grid.cols(); ++n) {
      const Vec3 c = cell_direction(grid, m, n);
      Complex y{0.0, 0.0};
      for (std::size_t l = 0; l < paths.size(); ++l) {
        const double angle = std::atan2(c.cross(aoa[l]).norm(), c.dot(aoa[l])) * kDegPerRad;
        const double b = beam_gain(angle, beamwidth_deg);
        if (b > 0.0) y += paths[l].gain * b;
      }
      power[grid.index(m, n)] = std::norm(y);
    }
  }
  return power;
}

std::vector<double> synthesize_power(const SceneDescriptor& scene, const TxDescriptor& tx, const AngularGrid& grid) {
  const auto paths = enumerate_paths(scene, tx);
  return beamform(paths, scene.rx.center, grid, scene.beamwidth_deg);
}

PASMap synthesize_pas(const SceneDescriptor& scene, const TxDescriptor& tx, const AngularGrid& grid) {
  auto power = synthesize_power(scene, tx, grid);
  return PASMap(grid, normalize_values(power));
}

}  // namespace xfreq::physics
