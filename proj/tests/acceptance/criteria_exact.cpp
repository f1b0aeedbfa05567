#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "acceptance.hpp"
#include "micro_scene.hpp"
#include "xfreq/metrics.hpp"
#include "xfreq/physics.hpp"
#include "xfreq/training.hpp"

namespace xfreq::acceptance {

namespace {

constexpr double kGeometryGradTol = 1e-3;
constexpr double kNetworkGradTol = 1e-4;
constexpr double kOracleMapTol = 1e-6;
constexpr double kMaxFootprintDeg = 20.0;
constexpr double kRateSumTol = 1e-12;
constexpr double kFsplTargetDb = 40.05;
constexpr double kFsplTolDb = 0.01;
constexpr double kPathTol = 1e-9;
constexpr double kSymmetryTol = 1e-12;
constexpr double kReferenceTol = 1e-12;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

}  // namespace

// ---- 1 -------------------------------------------------------------------

Outcome gradient_exactness(const Options&) {
  const AngularGrid grid(8, 16);
  RenderOptions opts;
  opts.cutoff_sigma = 1e6;
  double worst_geo = 0.0, worst_net = 0.0;
  std::size_t checked = 0;
  std::string label;
  for (const char* variant : {"full", "no_freq_modulation", "no_aos"}) {
    Model m = testing::micro_model();
    m.variant = ModelVariant::from_name(variant);
    // Objective: a fixed random linear read-out of the normalized map.
    Rng rng(23);
    std::vector<double> weights(grid.size());
    for (auto& w : weights) w = rng.normal();
    auto objective = [&](const Model& mm) {
      const auto g = render_graph(mm, testing::micro_tx(), testing::micro_rx(), grid, opts);
      return std::inner_product(weights.begin(), weights.end(), g.normalized.begin(), 0.0);
    };
    const auto graph = render_graph(m, testing::micro_tx(), testing::micro_rx(), grid, opts);
    const auto grads = backward(graph, m, weights);
    const auto r = testing::grad_check(m, grads, objective, 1e-6, 1e-4);
    checked += r.checked;
    if (r.worst_geometry > worst_geo || r.worst_network > worst_net) label = std::string(variant) + " " + r.worst_label;
    worst_geo = std::max(worst_geo, r.worst_geometry);
    worst_net = std::max(worst_net, r.worst_network);
  }
  const bool pass = worst_geo < kGeometryGradTol && worst_net < kNetworkGradTol;
  return {pass, std::to_string(checked) + " parameters over 3 variants; worst relative error geometry " +
                    fmt(worst_geo) + " (< " + fmt(kGeometryGradTol) + "), network " + fmt(worst_net) + " (< " +
                    fmt(kNetworkGradTol) + ")" + (pass ? "" : "; worst " + label)};
}

// ---- 2 -------------------------------------------------------------------

namespace {

double wrap_azimuth(double d) {
  d = std::fmod(d, 360.0);
  if (d > 180.0) d -= 360.0;
  if (d < -180.0) d += 360.0;
  return d;
}

// Every (cell, Gaussian) pair tested directly against the cutoff ellipse.
std::vector<double> all_pairs_power(const RenderGraph& g, double cutoff) {
  const auto& grid = g.grid;
  std::vector<std::size_t> order(g.projected.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& pa = g.projected[a];
    const auto& pb = g.projected[b];
    if (pa.depth != pb.depth) return pa.depth < pb.depth;
    if (pa.tie_key != pb.tie_key) return pa.tie_key < pb.tie_key;
    return pa.source_index < pb.source_index;
  });
  std::vector<double> power(grid.size());
  for (int m = 0; m < grid.rows(); ++m) {
    for (int n = 0; n < grid.cols(); ++n) {
      double re = 0.0, im = 0.0, tr = 1.0, ti = 0.0;
      for (std::size_t s : order) {
        const auto& p = g.projected[s];
        const Mat2& c = p.cov2d_freq;
        const double det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
        const double da = wrap_azimuth(grid.cell_azimuth(n) - p.center_uv[0]);
        const double db = grid.cell_elevation(m) - p.center_uv[1];
        const double q = (c(1, 1) * da * da - 2.0 * c(0, 1) * da * db + c(0, 0) * db * db) / det;
        if (q > cutoff * cutoff) continue;
        const double w = std::exp(-0.5 * q);
        const auto& a = g.attrs[p.source_index];
        const double sr = w * a.signal.real(), si = w * a.signal.imag();
        re += sr * tr - si * ti;
        im += sr * ti + si * tr;
        const double dr = a.attenuation.real(), di = a.attenuation.imag();
        const double nr = tr * dr - ti * di;
        ti = tr * di + ti * dr;
        tr = nr;
      }
      power[grid.index(m, n)] = re * re + im * im;
    }
  }
  return power;
}

// The accumulation written out in real arithmetic over the production lists.
std::vector<Complex> scalar_accumulate(const RenderGraph& g) {
  std::vector<Complex> out(g.grid.size());
  for (std::size_t k = 0; k < g.grid.size(); ++k) {
    double re = 0.0, im = 0.0, tr = 1.0, ti = 0.0;
    for (const auto& e : g.contributors.cell(k)) {
      const auto& a = g.attrs[e.source_index];
      const double sr = e.weight * a.signal.real(), si = e.weight * a.signal.imag();
      re += sr * tr - si * ti;
      im += sr * ti + si * tr;
      const double dr = a.attenuation.real(), di = a.attenuation.imag();
      const double nr = tr * dr - ti * di;
      ti = tr * di + ti * dr;
      tr = nr;
    }
    out[k] = Complex(re, im);
  }
  return out;
}

std::vector<double> normalized(const std::vector<double>& p) {
  const double mx = *std::max_element(p.begin(), p.end());
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] / mx;
  return out;
}

double footprint_radius_deg(const ProjectedGaussian& p, double cutoff) {
  const Eigen::SelfAdjointEigenSolver<Mat2> es(p.cov2d_freq);
  return cutoff * std::sqrt(es.eigenvalues().maxCoeff());
}

}  // namespace

Outcome renderer_oracle(const Options&) {
  const AngularGrid grid(45, 180);
  const Box room{Vec3(0, 0, 0), Vec3(6, 5, 3)};
  const ReceiverConfig rx{Vec3(3.0, 2.5, 0.4), 0.05};
  const TxDescriptor tx{Vec3(1.3, 4.1, 2.2), 24.25e9};
  Rng rng(2024);
  Model m;
  m.scene.bounds = room;
  NetworkConfig nc;
  nc.bounds = room;
  m.net = NetworkParams::random(nc, 77);
  while (m.scene.size() < 100) {
    GaussianGeometry g;
    for (int k = 0; k < 3; ++k) g.mean[k] = rng.uniform(room.min[k], room.max[k]);
    const Vec3 d = g.mean - rx.center;
    const double elev = std::asin(d.z() / d.norm()) * 180.0 / kPi;
    if (d.norm() < 1.0 || elev < 3.0 || elev > 70.0) continue;
    g.rotation = Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    g.rotation /= g.rotation.norm();
    for (int k = 0; k < 3; ++k) g.log_scales[k] = std::log(d.norm() * rng.uniform(0.005, 0.03));
    m.scene.gaussians.push_back(g);
  }
  RenderOptions opts;
  opts.deterministic = true;
  auto graph = render_graph(m, tx, rx, grid, opts);
  // Shrink any Gaussian whose spread-scaled support exceeds the bound, then re-render.
  for (int pass = 0; pass < 8; ++pass) {
    bool changed = false;
    for (const auto& p : graph.projected) {
      const double r = footprint_radius_deg(p, opts.cutoff_sigma);
      if (r > kMaxFootprintDeg) {
        m.scene.gaussians[p.source_index].log_scales.array() += std::log(0.8 * kMaxFootprintDeg / r);
        changed = true;
      }
    }
    if (!changed) break;
    graph = render_graph(m, tx, rx, grid, opts);
  }
  double largest = 0.0;
  for (const auto& p : graph.projected) largest = std::max(largest, footprint_radius_deg(p, opts.cutoff_sigma));
  if (largest > kMaxFootprintDeg) return {false, "could not build a scene with footprints <= 20 deg"};

  const auto oracle = normalized(all_pairs_power(graph, opts.cutoff_sigma));
  double worst = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) worst = std::max(worst, std::abs(oracle[k] - graph.normalized[k]));

  const auto scalar = scalar_accumulate(graph);
  std::size_t ulp_mismatch = 0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double p = scalar[k].real() * scalar[k].real() + scalar[k].imag() * scalar[k].imag();
    if (scalar[k] != graph.response[k] || p != graph.power[k]) ++ulp_mismatch;
  }

  // Informational: the same scene with unbounded support.
  RenderOptions wide = opts;
  wide.cutoff_sigma = 1e6;
  const auto full = render_graph(m, tx, rx, grid, wide);
  double wide_diff = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k)
    wide_diff = std::max(wide_diff, std::abs(full.normalized[k] - graph.normalized[k]));

  const bool pass = worst < kOracleMapTol && ulp_mismatch == 0;
  return {pass, "100 Gaussians, largest 3-sigma footprint " + fmt(largest) + " deg; binned vs all-pairs max |diff| " +
                    fmt(worst) + " (< 1e-6); scalar-loop mismatches " + std::to_string(ulp_mismatch) +
                    " cells (0 ulp required); info: unbounded-support max |diff| " + fmt(wide_diff)};
}

// ---- 3 -------------------------------------------------------------------

namespace {

struct LatticeImage {
  Vec3 image;
  int order;
};

// Mirror images of a box with a corner at the origin: along an axis of
// length L the images of x are 2kL + x (2|k| bounces) and 2kL - x (|2k - 1|).
std::vector<LatticeImage> lattice_images(const Vec3& size, const Vec3& tx, int max_order) {
  std::array<std::vector<std::pair<double, int>>, 3> axis;
  for (int a = 0; a < 3; ++a) {
    for (int k = -max_order; k <= max_order; ++k) {
      if (2 * std::abs(k) <= max_order) axis[a].push_back({2 * k * size[a] + tx[a], 2 * std::abs(k)});
      if (std::abs(2 * k - 1) <= max_order) axis[a].push_back({2 * k * size[a] - tx[a], std::abs(2 * k - 1)});
    }
  }
  std::vector<LatticeImage> out;
  for (const auto& x : axis[0])
    for (const auto& y : axis[1])
      for (const auto& z : axis[2])
        if (x.second + y.second + z.second <= max_order)
          out.push_back({Vec3(x.first, y.first, z.first), x.second + y.second + z.second});
  return out;
}

}  // namespace

Outcome physics_identities(const Options&) {
  using namespace physics;
  Rng rng(3);
  double worst_sum = 0.0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<TablePoint> eps, mu;
    double f = 1e9;
    for (int k = 0; k < 3; ++k) {
      eps.push_back({f, 1.0 + 30.0 * rng.uniform()});
      mu.push_back({f, 0.1 + 8.0 * rng.uniform()});
      f *= 2.0 + 10.0 * rng.uniform();
    }
    const MaterialSpec mat("random", eps, mu);
    const double q = std::exp(rng.uniform(std::log(eps.front().frequency), std::log(eps.back().frequency)));
    const auto r = fresnel_rates(mat, q);
    worst_sum = std::max(worst_sum, std::abs(r.reflection + r.transmission + r.absorption - 1.0));
  }
  const double fspl_db = 10.0 * std::log10(fspl(1.0, 2.4e9));

  int snell_bad = 0;
  for (int i = 0; i <= 100; ++i) {
    const double theta = (kPi / 2) * i / 101.0;
    if (snell_refraction(theta, MaterialSpec::vacuum(), 5e9) != theta) ++snell_bad;
  }

  struct Case {
    Vec3 size, rx, tx;
  };
  const Case cases[] = {{Vec3(6, 5, 3), Vec3(3, 2.5, 0.4), Vec3(1.3, 4.1, 2.2)},
                        {Vec3(4, 4, 4), Vec3(2, 2, 2), Vec3(2, 2, 3)},
                        {Vec3(7.3, 3.1, 2.7), Vec3(0.4, 2.9, 2.5), Vec3(6.8, 0.2, 0.3)},
                        {Vec3(5, 4, 3), Vec3(2.5, 2.0, 0.5), Vec3(4.1, 0.9, 2.6)}};
  double worst_path = 0.0;
  std::size_t paths = 0;
  bool counts_match = true;
  for (const auto& c : cases) {
    SceneDescriptor s;
    s.room = Box{Vec3::Zero(), c.size};
    for (int w = 0; w < 6; ++w) s.walls[w] = MaterialSpec::constant("w" + std::to_string(w), 2.0 + w);
    s.rx = ReceiverConfig{c.rx, 0.05};
    s.max_reflection_order = 2;
    const auto got = enumerate_paths(s, TxDescriptor{c.tx, 24.25e9});
    auto want = lattice_images(c.size, c.tx, 2);
    counts_match = counts_match && got.size() == want.size();
    for (const auto& g : got) {
      double best = 1e300;
      std::size_t best_i = 0;
      for (std::size_t i = 0; i < want.size(); ++i) {
        const double d = (want[i].image - g.image).norm();
        if (d < best) best = d, best_i = i;
      }
      if (want.empty()) {
        counts_match = false;
        break;
      }
      const double len_err = std::abs(g.length - (want[best_i].image - c.rx).norm());
      worst_path = std::max({worst_path, best, len_err});
      if (want[best_i].order != g.order) counts_match = false;
      want.erase(want.begin() + static_cast<std::ptrdiff_t>(best_i));
      ++paths;
    }
  }

  const bool pass = worst_sum <= kRateSumTol && std::abs(fspl_db - kFsplTargetDb) <= kFsplTolDb && snell_bad == 0 &&
                    counts_match && worst_path <= kPathTol;
  std::ostringstream os;
  os.precision(6);
  os << "max |R+T+rho-1| " << worst_sum << " over 1000 materials; FSPL(1 m, 2.4 GHz) " << fspl_db
     << " dB; vacuum Snell mismatches " << snell_bad << "/101; order-2 paths " << paths << " over 4 rooms, "
     << (counts_match ? "counts and orders match" : "COUNT/ORDER MISMATCH") << ", max deviation " << worst_path
     << " m";
  return {pass, os.str()};
}

// ---- 9 -------------------------------------------------------------------

namespace {

double ssim_direct(const AngularGrid& g, const std::vector<double>& x, const std::vector<double>& y) {
  const int rows = g.rows(), cols = g.cols(), h = 5;
  double w1[11], s = 0;
  for (int k = -h; k <= h; ++k) s += w1[k + h] = std::exp(-(k * k) / (2 * 1.5 * 1.5));
  for (double& v : w1) v /= s;
  auto reflect = [&](int m) {
    while (m < 0 || m >= rows) m = m < 0 ? -m : 2 * (rows - 1) - m;
    return m;
  };
  double total = 0;
  for (int m = 0; m < rows; ++m)
    for (int n = 0; n < cols; ++n) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int a = -h; a <= h; ++a)
        for (int b = -h; b <= h; ++b) {
          const double w = w1[a + h] * w1[b + h];
          const std::size_t k = static_cast<std::size_t>(reflect(m + a)) * cols + ((n + b) % cols + cols) % cols;
          mx += w * x[k];
          my += w * y[k];
          xx += w * x[k] * x[k];
          yy += w * y[k] * y[k];
          xy += w * x[k] * y[k];
        }
      const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
      total += (2 * mx * my + 1e-4) * (2 * cxy + 9e-4) / ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4));
    }
  return total / (rows * cols);
}

double psnr_direct(const std::vector<double>& x, const std::vector<double>& y) {
  long double se = 0;
  for (std::size_t i = 0; i < x.size(); ++i) se += static_cast<long double>(x[i] - y[i]) * (x[i] - y[i]);
  const double mse = static_cast<double>(se / x.size());
  return mse == 0 ? kPsnrCap : 10 * std::log10(1.0 / mse);
}

}  // namespace

Outcome metric_correctness(const Options&) {
  const AngularGrid g(45, 180);
  Rng rng(9);
  double self_worst = 0.0, sym_worst = 0.0, ssim_ref_worst = 0.0, psnr_ref_worst = 0.0;
  bool cap_ok = true;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> a(g.size()), b(g.size());
    for (auto& v : a) v = rng.uniform() * rng.uniform();
    for (auto& v : b) v = rng.uniform() * rng.uniform();
    a[rng.below(g.size())] = 1.0;
    b[rng.below(g.size())] = 1.0;
    if (i % 2 == 1) {
      for (std::size_t k = 0; k < a.size(); ++k) b[k] = std::clamp(a[k] + 0.05 * rng.normal(), 0.0, 1.0);
    }
    self_worst = std::max(self_worst, std::abs(ssim(g, a, a) - 1.0));
    cap_ok = cap_ok && psnr(a, a) == kPsnrCap;
    const double sab = ssim(g, a, b);
    sym_worst = std::max(sym_worst, std::abs(sab - ssim(g, b, a)));
    ssim_ref_worst = std::max(ssim_ref_worst, std::abs(sab - ssim_direct(g, a, b)));
    psnr_ref_worst = std::max(psnr_ref_worst, std::abs(psnr(a, b) - psnr_direct(a, b)));
  }
  const bool pass = self_worst <= kReferenceTol && cap_ok && sym_worst <= kSymmetryTol &&
                    ssim_ref_worst <= kReferenceTol && psnr_ref_worst <= kReferenceTol;
  std::ostringstream os;
  os.precision(3);
  os << "100 pairs on 45x180: |SSIM(a,a)-1| " << self_worst << ", PSNR cap " << (cap_ok ? "ok" : "WRONG")
     << ", symmetry " << sym_worst << ", |SSIM-ref| " << ssim_ref_worst << ", |PSNR-ref| " << psnr_ref_worst
     << " (tolerance 1e-12)";
  return {pass, os.str()};
}

}  // namespace xfreq::acceptance
