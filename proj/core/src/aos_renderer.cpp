#include "xfreq/aos_renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "xfreq/dual.hpp"

namespace xfreq {
namespace {

using detail::Dual;

template <class T>
Eigen::Matrix<T, 2, 3> jacobian_at(const T& x, const T& y, const T& z) {
  using std::sqrt;
  using detail::sqrt;
  const T rho2 = x * x + y * y;
  const T rho = sqrt(rho2);
  const T r2 = rho2 + z * z;
  const T k(kDegPerRad);
  Eigen::Matrix<T, 2, 3> j;
  j(0, 0) = -(y / rho2) * k;
  j(0, 1) = (x / rho2) * k;
  j(0, 2) = T(0.0);
  j(1, 0) = -(x * z / (r2 * rho)) * k;
  j(1, 1) = -(y * z / (r2 * rho)) * k;
  j(1, 2) = (rho / r2) * k;
  return j;
}

template <class T>
Eigen::Matrix<T, 3, 3> covariance_of(const std::array<T, 4>& q_raw, const std::array<T, 3>& s2) {
  using std::sqrt;
  using detail::sqrt;
  const T norm = sqrt(q_raw[0] * q_raw[0] + q_raw[1] * q_raw[1] + q_raw[2] * q_raw[2] + q_raw[3] * q_raw[3]);
  const T w = q_raw[0] / norm, x = q_raw[1] / norm, y = q_raw[2] / norm, z = q_raw[3] / norm;
  const T one(1.0), two(2.0);
  Eigen::Matrix<T, 3, 3> r;
  r(0, 0) = one - two * (y * y + z * z);
  r(0, 1) = two * (x * y - w * z);
  r(0, 2) = two * (x * z + w * y);
  r(1, 0) = two * (x * y + w * z);
  r(1, 1) = one - two * (x * x + z * z);
  r(1, 2) = two * (y * z - w * x);
  r(2, 0) = two * (x * z - w * y);
  r(2, 1) = two * (y * z + w * x);
  r(2, 2) = one - two * (x * x + y * y);
  Eigen::Matrix<T, 3, 3> sigma;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      T acc(0.0);
      for (int k = 0; k < 3; ++k) acc = acc + r(a, k) * s2[static_cast<std::size_t>(k)] * r(b, k);
      sigma(a, b) = acc;
    }
  }
  return sigma;
}

Vec3 clamp_to_pole(const Vec3& offset) {
  const double r = offset.norm();
  const double az = std::atan2(offset.y(), offset.x()) * kDegPerRad;
  const double el = offset.z() > 0 ? kPoleClampElevation : -kPoleClampElevation;
  return r * direction_from_angles(az, el);
}

bool is_pole(const Vec3& offset) {
  const double rho = std::hypot(offset.x(), offset.y());
  return std::abs(std::atan2(offset.z(), rho)) * kDegPerRad > kPoleElevation;
}

struct FootprintInverse {
  double a, b, c, det;  // C^f = [[a, b], [b, c]]
};

FootprintInverse inverse_of(const Mat2& cf) { return {cf(0, 0), cf(0, 1), cf(1, 1), cf(0, 0) * cf(1, 1) - cf(0, 1) * cf(0, 1)}; }

double mahalanobis2(const FootprintInverse& f, double da, double db) {
  return (f.c * da * da - 2.0 * f.b * da * db + f.a * db * db) / f.det;
}

// Cell ranges a footprint can touch.
struct CellRange {
  int row_lo, row_hi;
  bool all_cols;
  int col_lo, col_hi;  // unwrapped column indices
};

CellRange cell_range(const ProjectedGaussian& p, const AngularGrid& grid, double cutoff) {
  const double es = grid.elev_step(), as = grid.azim_step();
  const double el_hw = cutoff * std::sqrt(p.cov2d_freq(1, 1));
  const double az_hw = cutoff * std::sqrt(p.cov2d_freq(0, 0));
  CellRange r{};
  const double lo = std::ceil((p.center_uv[1] - el_hw) / es - 0.5);
  const double hi = std::floor((p.center_uv[1] + el_hw) / es - 0.5);
  r.row_lo = static_cast<int>(std::clamp(lo, 0.0, static_cast<double>(grid.rows())));
  r.row_hi = static_cast<int>(std::clamp(hi, -1.0, static_cast<double>(grid.rows() - 1)));
  if (p.pole && p.center_uv[1] > 0.0) {
    // The top row catches everything near the zenith.
    r.row_hi = grid.rows() - 1;
    r.row_lo = std::min(r.row_lo, grid.rows() - 1);
  }
  r.all_cols = p.pole || az_hw >= 180.0;
  if (!r.all_cols) {
    const double clo = std::ceil((p.center_uv[0] - az_hw) / as - 0.5);
    const double chi = std::floor((p.center_uv[0] + az_hw) / as - 0.5);
    if (chi - clo + 1 >= grid.cols()) {
      r.all_cols = true;
    } else {
      r.col_lo = static_cast<int>(clo);
      r.col_hi = static_cast<int>(chi);
    }
  }
  if (r.all_cols) {
    r.col_lo = 0;
    r.col_hi = grid.cols() - 1;
  }
  return r;
}

template <class Visit>
void visit_footprint(const ProjectedGaussian& p, const AngularGrid& grid, double cutoff, Visit&& visit) {
  const CellRange range = cell_range(p, grid, cutoff);
  const FootprintInverse inv = inverse_of(p.cov2d_freq);
  const double limit = cutoff * cutoff;
  const bool force_top = p.pole && p.center_uv[1] > 0.0;
  for (int m = range.row_lo; m <= range.row_hi; ++m) {
    const double db = grid.cell_elevation(m) - p.center_uv[1];
    const bool forced = force_top && m == grid.rows() - 1;
    for (int n = range.col_lo; n <= range.col_hi; ++n) {
      const int col = ((n % grid.cols()) + grid.cols()) % grid.cols();
      const double da = p.pole ? 0.0 : wrap_degrees(grid.cell_azimuth(col) - p.center_uv[0]);
      const double q = mahalanobis2(inv, da, db);
      if (q <= limit || forced) visit(grid.index(m, col), q);
    }
  }
}

}  // namespace

Projection project(const GaussianGeometry& g, const ReceiverConfig& rx) {
  const Vec3 d = g.mean - rx.center;
  const double r = d.norm();
  if (!(r >= kReceiverEpsilon)) {
    std::ostringstream os;
    os << "Gaussian mean within " << kReceiverEpsilon << " m of the receiver";
    fail(Errc::GaussianAtReceiver, os.str());
  }
  Projection p;
  p.direction = d / r;
  p.depth = r;
  double az = std::atan2(d.y(), d.x()) * kDegPerRad;
  if (az < 0.0) az += 360.0;
  if (az >= 360.0) az -= 360.0;
  const double el = std::atan2(d.z(), std::hypot(d.x(), d.y())) * kDegPerRad;
  p.uv = Vec2(az, el);
  p.pole = std::abs(el) > kPoleElevation;
  return p;
}

Jacobian23 projection_jacobian(const Vec3& offset) {
  const Vec3 d = is_pole(offset) ? clamp_to_pole(offset) : offset;
  return jacobian_at(d.x(), d.y(), d.z());
}

Mat2 projected_covariance(const GaussianGeometry& g, const ReceiverConfig& rx, double regularization) {
  project(g, rx);  // validates distance
  const Jacobian23 j = projection_jacobian(g.mean - rx.center);
  Mat2 c = j * covariance(g) * j.transpose();
  c = 0.5 * (c + c.transpose());
  c += regularization * Mat2::Identity();
  return c;
}

Mat2 frequency_footprint(const Mat2& cov2d, double spread) { return spread * cov2d; }

double footprint_mahalanobis2(const ProjectedGaussian& p, double cell_azim, double cell_elev) {
  const double da = p.pole ? 0.0 : wrap_degrees(cell_azim - p.center_uv[0]);
  return mahalanobis2(inverse_of(p.cov2d_freq), da, cell_elev - p.center_uv[1]);
}

RayContributorList bin_contributors(std::span<const ProjectedGaussian> projected, const AngularGrid& grid,
                                    double cutoff_sigma) {
  std::vector<std::size_t> order(projected.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& pa = projected[a];
    const auto& pb = projected[b];
    if (pa.depth != pb.depth) return pa.depth < pb.depth;
    if (pa.tie_key != pb.tie_key) return pa.tie_key < pb.tie_key;
    return pa.source_index < pb.source_index;
  });

  RayContributorList list;
  list.cells = grid.size();
  std::vector<std::size_t> counts(grid.size() + 1, 0);
  for (std::size_t idx : order) {
    visit_footprint(projected[idx], grid, cutoff_sigma, [&](std::size_t cell, double) { ++counts[cell + 1]; });
  }
  std::partial_sum(counts.begin(), counts.end(), counts.begin());
  list.offsets = counts;
  list.entries.resize(list.offsets.back());
  std::vector<std::size_t> cursor(list.offsets.begin(), list.offsets.end() - 1);
  for (std::size_t idx : order) {
    const auto& p = projected[idx];
    visit_footprint(p, grid, cutoff_sigma, [&](std::size_t cell, double q) {
      list.entries[cursor[cell]++] = {static_cast<std::uint32_t>(p.source_index), std::exp(-0.5 * q)};
    });
  }
  return list;
}

ComplexResponseGrid accumulate(const RayContributorList& contribs, std::span<const RFAttributes> attrs,
                               const AngularGrid& grid) {
  if (contribs.cells != grid.size()) fail(Errc::ShapeMismatch, "contributor list does not match grid");
  for (const auto& e : contribs.entries) {
    if (e.source_index >= attrs.size()) {
      fail(Errc::MisalignedAttributes, "contributor " + std::to_string(e.source_index) + " has no attributes (" +
                                           std::to_string(attrs.size()) + " supplied)");
    }
  }
  ComplexResponseGrid out{grid, std::vector<Complex>(grid.size())};
  const auto cells = static_cast<std::ptrdiff_t>(grid.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < cells; ++k) {
    Complex acc{0.0, 0.0};
    Complex transmit{1.0, 0.0};
    for (const auto& e : contribs.cell(static_cast<std::size_t>(k))) {
      const auto& a = attrs[e.source_index];
      acc += (e.weight * a.signal) * transmit;
      transmit *= a.attenuation;
    }
    out.values[static_cast<std::size_t>(k)] = acc;
  }
  return out;
}

RenderGraph render_graph(const Model& model, const TxDescriptor& tx, const ReceiverConfig& rx,
                         const AngularGrid& grid, const RenderOptions& opts) {
  tx.validate();
  rx.validate();
  const auto& scene = model.scene;
  if (scene.size() == 0) fail(Errc::InvalidValue, "scene has no Gaussians");

  RenderGraph g;
  g.model_version = model.version;
  g.tx = tx;
  g.rx = rx;
  g.grid = grid;
  g.options = opts;
  g.variant = model.variant;

  const NetworkOptions nopts{!model.variant.frequency_modulation, opts.deterministic};
  EncodeOptions enc;
  enc.clamp_positions = opts.clamp_positions;
  enc.allow_extrapolation = opts.allow_extrapolation;
  enc.sever_frequency = nopts.sever_frequency;
  const Matrix inputs = encode_scene(model.net, tx, scene, enc);
  g.tape = forward_tape(model.net, inputs, nopts);
  g.attrs.reserve(scene.size());
  for (Eigen::Index j = 0; j < inputs.cols(); ++j) g.attrs.push_back(decode(model.net, g.tape, j, nopts));

  const Mat2 fixed_footprint = Vec2(grid.azim_step() * grid.azim_step(), grid.elev_step() * grid.elev_step()).asDiagonal();
  g.slot_of_source.assign(scene.size(), -1);
  g.projected.reserve(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const auto& geom = scene.gaussians[i];
    const Vec3 d = geom.mean - rx.center;
    if (!(d.norm() >= kReceiverEpsilon)) {
      ++g.skipped;
      continue;
    }
    const Projection pr = project(geom, rx);
    ProjectedGaussian p;
    p.center_uv = pr.uv;
    p.depth = pr.depth;
    p.pole = pr.pole;
    p.source_index = i;
    p.tie_key = content_hash(geom);
    const Jacobian23 j = projection_jacobian(d);
    Mat2 c = j * covariance(geom) * j.transpose();
    c = 0.5 * (c + c.transpose());
    c += opts.cov_regularization * Mat2::Identity();
    p.cov2d = c;
    p.cov2d_freq = model.variant.adaptive_footprint ? frequency_footprint(c, g.attrs[i].spread) : fixed_footprint;
    g.slot_of_source[i] = static_cast<int>(g.projected.size());
    g.projected.push_back(p);
  }

  g.contributors = bin_contributors(g.projected, grid, opts.cutoff_sigma);
  g.response = accumulate(g.contributors, g.attrs, grid).values;
  g.power.resize(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) g.power[k] = std::norm(g.response[k]);
  g.max_index = static_cast<std::size_t>(std::max_element(g.power.begin(), g.power.end()) - g.power.begin());
  if (!(g.power[g.max_index] > 0.0)) fail(Errc::AllZeroMap, "render produced no power in any cell");
  g.normalized = normalize_values(g.power);
  return g;
}

PASMap render(const Model& model, const TxDescriptor& tx, const ReceiverConfig& rx, const AngularGrid& grid,
              const RenderOptions& opts) {
  auto g = render_graph(model, tx, rx, grid, opts);
  return PASMap(grid, std::move(g.normalized));
}

ModelGradients ModelGradients::zeros_like(const Model& m) {
  ModelGradients g;
  g.geometry.assign(m.scene.size(), GeometryGradient{});
  g.net = NetworkGradients::zeros_like(m.net);
  return g;
}

void ModelGradients::set_zero() {
  std::fill(geometry.begin(), geometry.end(), GeometryGradient{});
  net.set_zero();
}

void ModelGradients::scale(double s) {
  for (auto& g : geometry) {
    g.mean *= s;
    g.rotation *= s;
    g.log_scales *= s;
  }
  net.for_each_tensor([s](double* d, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) d[i] *= s;
  });
}

void ModelGradients::add(const ModelGradients& other) {
  if (other.geometry.size() != geometry.size()) fail(Errc::ShapeMismatch, "gradient sizes differ");
  for (std::size_t i = 0; i < geometry.size(); ++i) {
    geometry[i].mean += other.geometry[i].mean;
    geometry[i].rotation += other.geometry[i].rotation;
    geometry[i].log_scales += other.geometry[i].log_scales;
  }
  std::vector<std::pair<const double*, std::size_t>> src;
  const_cast<NetworkGradients&>(other.net).for_each_tensor([&](double* d, std::size_t n) { src.emplace_back(d, n); });
  std::size_t t = 0;
  net.for_each_tensor([&](double* d, std::size_t n) {
    const auto& [s, m] = src[t++];
    if (m != n) fail(Errc::ShapeMismatch, "gradient tensor sizes differ");
    for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
  });
}

namespace {

// Per-slot adjoints gathered from the cells.
struct SlotAdjoint {
  double du[2];
  double dcf[3];  // (a, b, c) of C^f = [[a, b], [b, c]]
  double ds[2];   // signal re/im
  double dd[2];   // attenuation re/im
};

}  // namespace

ModelGradients backward(const RenderGraph& graph, const Model& model, std::span<const double> adjoint,
                        AdjointOf target) {
  if (graph.model_version != model.version) {
    fail(Errc::StaleGraph, "render graph was recorded for model version " + std::to_string(graph.model_version) +
                               ", model is at " + std::to_string(model.version));
  }
  const AngularGrid& grid = graph.grid;
  const std::size_t cells = grid.size();
  if (adjoint.size() != cells) fail(Errc::ShapeMismatch, "adjoint does not match grid size");
  if (model.scene.size() != graph.attrs.size()) fail(Errc::StaleGraph, "scene size changed since render");

  // Adjoint of the raw power, including the path through the normalizing max.
  std::vector<double> g_power(cells);
  if (target == AdjointOf::NormalizedMap) {
    const double pmax = graph.power[graph.max_index];
    double dot = 0.0;
    for (std::size_t k = 0; k < cells; ++k) {
      g_power[k] = adjoint[k] / pmax;
      dot += adjoint[k] * graph.power[k];
    }
    g_power[graph.max_index] -= dot / (pmax * pmax);
  } else {
    std::copy(adjoint.begin(), adjoint.end(), g_power.begin());
  }

  const std::size_t slots = graph.projected.size();
  const int rows = grid.rows();
  std::vector<SlotAdjoint> partial(static_cast<std::size_t>(rows) * slots, SlotAdjoint{});
  std::vector<FootprintInverse> inverses(slots);
  for (std::size_t s = 0; s < slots; ++s) inverses[s] = inverse_of(graph.projected[s].cov2d_freq);

#pragma omp parallel for schedule(static)
  for (int m = 0; m < rows; ++m) {
    SlotAdjoint* acc = partial.data() + static_cast<std::size_t>(m) * slots;
    std::vector<Complex> transmit;
    for (int n = 0; n < grid.cols(); ++n) {
      const std::size_t k = grid.index(m, n);
      const Complex gr = 2.0 * g_power[k] * graph.response[k];
      if (gr == Complex(0.0, 0.0)) continue;
      const auto list = graph.contributors.cell(k);
      transmit.resize(list.size());
      Complex t{1.0, 0.0};
      for (std::size_t j = 0; j < list.size(); ++j) {
        transmit[j] = t;
        t *= graph.attrs[list[j].source_index].attenuation;
      }
      Complex tail{0.0, 0.0};
      for (std::size_t j = list.size(); j-- > 0;) {
        const auto& e = list[j];
        const auto& a = graph.attrs[e.source_index];
        const int slot = graph.slot_of_source[e.source_index];
        SlotAdjoint& sa = acc[slot];
        const Complex st = a.signal * transmit[j];
        const double gw = std::real(std::conj(gr) * st);
        const Complex gs = gr * std::conj(e.weight * transmit[j]);
        const Complex gd = gr * std::conj(transmit[j] * tail);
        sa.ds[0] += gs.real();
        sa.ds[1] += gs.imag();
        sa.dd[0] += gd.real();
        sa.dd[1] += gd.imag();
        tail = e.weight * a.signal + a.attenuation * tail;

        const auto& p = graph.projected[static_cast<std::size_t>(slot)];
        const FootprintInverse& f = inverses[static_cast<std::size_t>(slot)];
        const double da = p.pole ? 0.0 : wrap_degrees(grid.cell_azimuth(n) - p.center_uv[0]);
        const double db = grid.cell_elevation(m) - p.center_uv[1];
        const double v0 = (f.c * da - f.b * db) / f.det;
        const double v1 = (-f.b * da + f.a * db) / f.det;
        const double gww = gw * e.weight;
        if (!p.pole) sa.du[0] += gww * v0;
        sa.du[1] += gww * v1;
        sa.dcf[0] += 0.5 * gww * v0 * v0;
        sa.dcf[1] += gww * v0 * v1;
        sa.dcf[2] += 0.5 * gww * v1 * v1;
      }
    }
  }

  std::vector<SlotAdjoint> total(slots, SlotAdjoint{});
  for (int m = 0; m < rows; ++m) {
    const SlotAdjoint* acc = partial.data() + static_cast<std::size_t>(m) * slots;
    for (std::size_t s = 0; s < slots; ++s) {
      for (int i = 0; i < 2; ++i) {
        total[s].du[i] += acc[s].du[i];
        total[s].ds[i] += acc[s].ds[i];
        total[s].dd[i] += acc[s].dd[i];
      }
      for (int i = 0; i < 3; ++i) total[s].dcf[i] += acc[s].dcf[i];
    }
  }

  ModelGradients grads = ModelGradients::zeros_like(model);
  std::vector<AttributeAdjoint> attr_adj(model.scene.size());
  const bool adaptive = graph.variant.adaptive_footprint;
  const bool modulated = graph.variant.frequency_modulation;

  for (std::size_t s = 0; s < slots; ++s) {
    const auto& p = graph.projected[s];
    const std::size_t i = p.source_index;
    const auto& geom = model.scene.gaussians[i];
    const SlotAdjoint& sa = total[s];
    auto& out = grads.geometry[i];
    attr_adj[i].signal = Complex(sa.ds[0], sa.ds[1]);
    attr_adj[i].attenuation = Complex(sa.dd[0], sa.dd[1]);

    const Vec3 d = geom.mean - graph.rx.center;
    if (!p.pole) {
      const Jacobian23 j = jacobian_at(d.x(), d.y(), d.z());
      out.mean += j.transpose() * Vec2(sa.du[0], sa.du[1]);
    }
    if (!adaptive) continue;

    const double lambda = graph.attrs[i].spread;
    const Mat2& c = p.cov2d;
    if (modulated) attr_adj[i].spread = sa.dcf[0] * c(0, 0) + sa.dcf[1] * c(0, 1) + sa.dcf[2] * c(1, 1);
    Mat2 mgrad;
    mgrad << lambda * sa.dcf[0], 0.5 * lambda * sa.dcf[1], 0.5 * lambda * sa.dcf[1], lambda * sa.dcf[2];

    const Jacobian23 j = projection_jacobian(d);
    const Mat3 sigma = covariance(geom);
    const Mat3 g_sigma = j.transpose() * mgrad * j;
    const Jacobian23 g_jac = 2.0 * mgrad * j * sigma;

    // Sigma(q, log_scales) via forward-mode duals.
    {
      using D7 = Dual<7>;
      std::array<D7, 4> q;
      for (int k = 0; k < 4; ++k) q[static_cast<std::size_t>(k)] = D7::variable(geom.rotation[k], k);
      std::array<D7, 3> s2;
      for (int k = 0; k < 3; ++k) {
        D7 ls = D7::variable(geom.log_scales[k], 4 + k);
        const double e = std::exp(2.0 * ls.v);
        D7 v(e);
        for (int t = 0; t < 7; ++t) v.d[static_cast<std::size_t>(t)] = 2.0 * e * ls.d[static_cast<std::size_t>(t)];
        s2[static_cast<std::size_t>(k)] = v;
      }
      const auto sig = covariance_of(q, s2);
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          const double gab = g_sigma(a, b);
          for (int k = 0; k < 4; ++k) out.rotation[k] += gab * sig(a, b).d[static_cast<std::size_t>(k)];
          for (int k = 0; k < 3; ++k) out.log_scales[k] += gab * sig(a, b).d[static_cast<std::size_t>(4 + k)];
        }
      }
    }
    // J(mu) via forward-mode duals; the pole-clamped Jacobian is held constant.
    if (!p.pole) {
      using D3 = Dual<3>;
      const auto jd = jacobian_at(D3::variable(d.x(), 0), D3::variable(d.y(), 1), D3::variable(d.z(), 2));
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 3; ++b)
          for (int k = 0; k < 3; ++k) out.mean[k] += g_jac(a, b) * jd(a, b).d[static_cast<std::size_t>(k)];
    }
  }

  const NetworkOptions nopts{!modulated, graph.options.deterministic};
  Matrix input_grad;
  backward(model.net, graph.tape, attr_adj, grads.net, &input_grad, nopts);
  EncodeOptions enc;
  enc.clamp_positions = graph.options.clamp_positions;
  for (std::size_t i = 0; i < model.scene.size(); ++i) {
    grads.geometry[i].mean +=
        center_encoding_backward(model.net.config, model.scene.gaussians[i].mean, input_grad, static_cast<Eigen::Index>(i), enc);
  }
  return grads;
}

}  // namespace xfreq
