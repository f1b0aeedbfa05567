#include "xfreq/widefreq_net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "xfreq/rng.hpp"

namespace xfreq {
namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

void require(bool ok, const std::string& what) {
  if (!ok) fail(Errc::ShapeMismatch, what);
}

DenseLayer make_layer(int out, int in, Rng* rng, double gain) {
  DenseLayer l{Matrix::Zero(out, in), Vector::Zero(out)};
  if (rng != nullptr) {
    const double stddev = gain * std::sqrt(2.0 / in);
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = stddev * rng->normal();
  }
  return l;
}

void add_bias(Matrix& z, const Vector& b) { z.colwise() += b; }

void relu_inplace(Matrix& z) { z = z.cwiseMax(0.0); }

}  // namespace

namespace kernels {

namespace {

typedef double V4 __attribute__((vector_size(32)));


}  // namespace

void matmul(const Matrix& a, const Matrix& b, Matrix& c, bool deterministic) {
  require(a.cols() == b.rows(), "matmul inner dimension mismatch");
  if (!deterministic) {
    c.noalias() = a * b;
    return;
  }
  // Each c(i, j) is accumulated from zero over p in ascending order, whatever
  // the tile it falls in.
  constexpr Eigen::Index kRows = 8, kCols = 4;
  const Eigen::Index m = a.rows(), k = a.cols(), n = b.cols();
  c.resize(m, n);
  const double* ad = a.data();
  const double* bd = b.data();
  double* cd = c.data();
  const Eigen::Index m_full = m - m % kRows;
  const Eigen::Index n_full = n - n % kCols;
  for (Eigen::Index j0 = 0; j0 < n_full; j0 += kCols) {
    for (Eigen::Index i0 = 0; i0 < m_full; i0 += kRows) {
      V4 acc[kCols][2] = {};
      for (Eigen::Index p = 0; p < k; ++p) {
        V4 a0, a1;
        std::memcpy(&a0, ad + p * m + i0, sizeof a0);
        std::memcpy(&a1, ad + p * m + i0 + 4, sizeof a1);
        for (Eigen::Index t = 0; t < kCols; ++t) {
          const double bt = bd[(j0 + t) * k + p];
          acc[t][0] += a0 * bt;
          acc[t][1] += a1 * bt;
        }
      }
      for (Eigen::Index t = 0; t < kCols; ++t) std::memcpy(cd + (j0 + t) * m + i0, acc[t], sizeof acc[t]);
    }
    for (Eigen::Index t = 0; t < kCols; ++t) {
      for (Eigen::Index i = m_full; i < m; ++i) {
        double acc = 0.0;
        for (Eigen::Index p = 0; p < k; ++p) acc += ad[p * m + i] * bd[(j0 + t) * k + p];
        cd[(j0 + t) * m + i] = acc;
      }
    }
  }
  for (Eigen::Index j = n_full; j < n; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      double acc = 0.0;
      for (Eigen::Index p = 0; p < k; ++p) acc += ad[p * m + i] * bd[j * k + p];
      cd[j * m + i] = acc;
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool deterministic) {
  require(a.rows() == b.rows(), "matmul_tn inner dimension mismatch");
  if (!deterministic) {
    c.noalias() = a.transpose() * b;
    return;
  }
  const Matrix at = a.transpose();
  matmul(at, b, c, true);
}

void matmul_nt_add(const Matrix& a, const Matrix& b, Matrix& c, bool deterministic) {
  require(a.cols() == b.cols() && c.rows() == a.rows() && c.cols() == b.rows(), "matmul_nt shape mismatch");
  if (!deterministic) {
    c.noalias() += a * b.transpose();
    return;
  }
  // c(i, p) starts from its current value and adds the j terms in ascending order.
  constexpr Eigen::Index kRows = 8, kCols = 4;
  const Eigen::Index m = a.rows(), k = b.rows(), n = a.cols();
  const double* ad = a.data();
  const double* bd = b.data();
  double* cd = c.data();
  const Eigen::Index m_full = m - m % kRows;
  const Eigen::Index k_full = k - k % kCols;
  constexpr Eigen::Index kSpan = 64;
  for (Eigen::Index j0 = 0; j0 < n; j0 += kSpan) {
    const Eigen::Index j1 = std::min(n, j0 + kSpan);
    for (Eigen::Index p0 = 0; p0 < k_full; p0 += kCols) {
      for (Eigen::Index i0 = 0; i0 < m_full; i0 += kRows) {
        V4 acc[kCols][2];
        for (Eigen::Index t = 0; t < kCols; ++t) std::memcpy(acc[t], cd + (p0 + t) * m + i0, sizeof acc[t]);
        for (Eigen::Index j = j0; j < j1; ++j) {
          V4 a0, a1;
          std::memcpy(&a0, ad + j * m + i0, sizeof a0);
          std::memcpy(&a1, ad + j * m + i0 + 4, sizeof a1);
          for (Eigen::Index t = 0; t < kCols; ++t) {
            const double bt = bd[j * k + p0 + t];
            acc[t][0] += a0 * bt;
            acc[t][1] += a1 * bt;
          }
        }
        for (Eigen::Index t = 0; t < kCols; ++t) std::memcpy(cd + (p0 + t) * m + i0, acc[t], sizeof acc[t]);
      }
      for (Eigen::Index t = 0; t < kCols; ++t) {
        for (Eigen::Index i = m_full; i < m; ++i) {
          double acc = cd[(p0 + t) * m + i];
          for (Eigen::Index j = j0; j < j1; ++j) acc += ad[j * m + i] * bd[j * k + p0 + t];
          cd[(p0 + t) * m + i] = acc;
        }
      }
    }
    for (Eigen::Index p = k_full; p < k; ++p) {
      for (Eigen::Index i = 0; i < m; ++i) {
        double acc = cd[p * m + i];
        for (Eigen::Index j = j0; j < j1; ++j) acc += ad[j * m + i] * bd[j * k + p];
        cd[p * m + i] = acc;
      }
    }
  }
}

}  // namespace kernels

void NetworkConfig::validate() const {
  if (hidden_width <= 0 || trunk_layers < 1 || latent_dim < 1 || head_width <= 0 || pos_bands < 0 ||
      freq_bands < 0) {
    fail(Errc::ShapeMismatch, "network dimensions must be positive");
  }
  if (!(spread_min > 0.0 && spread_max > spread_min)) fail(Errc::InvalidValue, "spread range must satisfy 0 < min < max");
  if (!(f_min > 0.0 && f_max > f_min)) fail(Errc::InvalidValue, "frequency range must satisfy 0 < f_min < f_max");
  if (!bounds.valid()) fail(Errc::EmptyBounds, "network position bounds are empty");
}

void positional_encoding(double u, int bands, std::span<double> out) {
  require(out.size() == static_cast<std::size_t>(2 * bands), "encoding output size mismatch");
  double scale = kPi;
  for (int k = 0; k < bands; ++k) {
    out[2 * k] = std::sin(scale * u);
    out[2 * k + 1] = std::cos(scale * u);
    scale *= 2.0;
  }
}

double normalized_log_frequency(double f, double f_min, double f_max) {
  return (std::log(f) - std::log(f_min)) / (std::log(f_max) - std::log(f_min));
}

namespace {

double map_position(double p, double lo, double hi, bool clamp, int* clamped) {
  if (hi <= lo) return 0.0;
  if (p < lo || p > hi) {
    if (!clamp) {
      std::ostringstream os;
      os << "position component " << p << " outside [" << lo << ", " << hi << "]";
      fail(Errc::PositionOutOfBounds, os.str());
    }
    if (clamped != nullptr) ++*clamped;
    p = std::clamp(p, lo, hi);
  }
  return 2.0 * (p - lo) / (hi - lo) - 1.0;
}

void encode_into(const TxDescriptor& tx, const Vec3& center, const NetworkConfig& cfg, const EncodeOptions& opts,
                 int* clamped, double* out) {
  const int pos_width = 2 * cfg.pos_bands;
  std::size_t off = 0;
  for (const Vec3* p : {&tx.position, &center}) {
    for (int c = 0; c < 3; ++c) {
      const double u = map_position((*p)[c], cfg.bounds.min[c], cfg.bounds.max[c], opts.clamp_positions, clamped);
      positional_encoding(u, cfg.pos_bands, std::span<double>(out + off, pos_width));
      off += pos_width;
    }
  }
  const std::span<double> fspan(out + off, 2 * cfg.freq_bands);
  if (opts.sever_frequency) {
    std::fill(fspan.begin(), fspan.end(), 0.0);
    return;
  }
  if (!opts.allow_extrapolation && (tx.frequency < cfg.f_min || tx.frequency > cfg.f_max)) {
    std::ostringstream os;
    os << "frequency " << tx.frequency << " Hz outside trained range [" << cfg.f_min << ", " << cfg.f_max << "]";
    fail(Errc::FrequencyOutOfRange, os.str());
  }
  positional_encoding(normalized_log_frequency(tx.frequency, cfg.f_min, cfg.f_max), cfg.freq_bands, fspan);
}

}  // namespace

std::vector<double> encode_inputs(const TxDescriptor& tx, const Vec3& center, const NetworkConfig& cfg,
                                  const EncodeOptions& opts, int* clamped) {
  std::vector<double> out(static_cast<std::size_t>(cfg.input_dim()));
  encode_into(tx, center, cfg, opts, clamped, out.data());
  return out;
}

Matrix encode_scene(const NetworkParams& params, const TxDescriptor& tx, const GaussianScene& scene,
                    const EncodeOptions& enc, int* clamped) {
  const auto& cfg = params.config;
  Matrix in(cfg.input_dim(), static_cast<Eigen::Index>(scene.size()));
  for (std::size_t i = 0; i < scene.size(); ++i) {
    encode_into(tx, scene.gaussians[i].mean, cfg, enc, clamped, in.col(static_cast<Eigen::Index>(i)).data());
  }
  return in;
}

NetworkParams NetworkParams::random(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  NetworkParams p;
  p.config = cfg;
  int in = cfg.input_dim();
  for (int l = 0; l < cfg.trunk_layers; ++l) {
    const bool last = l + 1 == cfg.trunk_layers;
    const int out = last ? cfg.output_dim() : cfg.hidden_width;
    p.trunk.push_back(make_layer(out, in, &rng, last ? 0.5 : 1.0));
    in = out;
  }
  p.head.push_back(make_layer(cfg.head_width, cfg.latent_dim, &rng, 1.0));
  p.head.push_back(make_layer(4, cfg.head_width, &rng, 0.1));
  return p;
}

NetworkParams NetworkParams::zeros(const NetworkConfig& cfg) {
  cfg.validate();
  NetworkParams p;
  p.config = cfg;
  int in = cfg.input_dim();
  for (int l = 0; l < cfg.trunk_layers; ++l) {
    const int out = l + 1 == cfg.trunk_layers ? cfg.output_dim() : cfg.hidden_width;
    p.trunk.push_back(make_layer(out, in, nullptr, 0.0));
    in = out;
  }
  p.head.push_back(make_layer(cfg.head_width, cfg.latent_dim, nullptr, 0.0));
  p.head.push_back(make_layer(4, cfg.head_width, nullptr, 0.0));
  return p;
}

void NetworkParams::validate() const {
  config.validate();
  require(static_cast<int>(trunk.size()) == config.trunk_layers, "trunk layer count mismatch");
  require(head.size() == 2, "head must have two layers");
  int in = config.input_dim();
  for (std::size_t l = 0; l < trunk.size(); ++l) {
    const int out = l + 1 == trunk.size() ? config.output_dim() : config.hidden_width;
    require(trunk[l].weight.rows() == out && trunk[l].weight.cols() == in && trunk[l].bias.size() == out,
            "trunk layer " + std::to_string(l) + " has wrong shape");
    in = out;
  }
  require(head[0].weight.rows() == config.head_width && head[0].weight.cols() == config.latent_dim &&
              head[0].bias.size() == config.head_width,
          "head layer 0 has wrong shape");
  require(head[1].weight.rows() == 4 && head[1].weight.cols() == config.head_width && head[1].bias.size() == 4,
          "head layer 1 has wrong shape");
  bool finite = true;
  for_each_tensor([&](const double* d, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) finite = finite && std::isfinite(d[i]);
  });
  if (!finite) fail(Errc::InvalidValue, "network parameters contain non-finite values");
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const double*, std::size_t k) { n += k; });
  return n;
}

NetworkGradients NetworkGradients::zeros_like(const NetworkParams& p) {
  NetworkGradients g;
  for (const auto& l : p.trunk) g.trunk.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  for (const auto& l : p.head) g.head.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  return g;
}

void NetworkGradients::set_zero() {
  for_each_tensor([](double* d, std::size_t n) { std::fill(d, d + n, 0.0); });
}

NetworkTape forward_tape(const NetworkParams& params, const Matrix& inputs, const NetworkOptions& opts) {
  const auto& cfg = params.config;
  require(inputs.rows() == cfg.input_dim(), "encoded input has " + std::to_string(inputs.rows()) +
                                                " rows, network expects " + std::to_string(cfg.input_dim()));
  NetworkTape tape;
  tape.activations.reserve(params.trunk.size() + 1);
  tape.activations.push_back(inputs);
  for (std::size_t l = 0; l < params.trunk.size(); ++l) {
    Matrix z;
    kernels::matmul(params.trunk[l].weight, tape.activations.back(), z, opts.deterministic);
    add_bias(z, params.trunk[l].bias);
    if (l + 1 < params.trunk.size()) relu_inplace(z);
    tape.activations.push_back(std::move(z));
  }
  const Matrix& out = tape.activations.back();
  const Matrix latent = out.middleRows(4, cfg.latent_dim);
  kernels::matmul(params.head[0].weight, latent, tape.head_hidden, opts.deterministic);
  add_bias(tape.head_hidden, params.head[0].bias);
  relu_inplace(tape.head_hidden);
  Matrix refine;
  kernels::matmul(params.head[1].weight, tape.head_hidden, refine, opts.deterministic);
  add_bias(refine, params.head[1].bias);
  tape.refined = out.topRows(4) + refine;
  return tape;
}

RFAttributes decode(const NetworkParams& params, const NetworkTape& tape, Eigen::Index j, const NetworkOptions& opts) {
  const auto& cfg = params.config;
  const Matrix& out = tape.activations.back();
  RFAttributes a;
  a.attenuation = from_polar(sigmoid(tape.refined(0, j)), tape.refined(1, j));
  a.signal = from_polar(softplus(tape.refined(2, j)), tape.refined(3, j));
  a.latent.resize(static_cast<std::size_t>(cfg.latent_dim));
  for (int k = 0; k < cfg.latent_dim; ++k) a.latent[static_cast<std::size_t>(k)] = out(4 + k, j);
  a.spread = opts.sever_frequency
                 ? 1.0
                 : cfg.spread_min + (cfg.spread_max - cfg.spread_min) * sigmoid(out(4 + cfg.latent_dim, j));
  return a;
}

RFAttributes forward(const NetworkParams& params, std::span<const double> encoded, const NetworkOptions& opts) {
  require(encoded.size() == static_cast<std::size_t>(params.config.input_dim()),
          "encoded input has " + std::to_string(encoded.size()) + " entries, network expects " +
              std::to_string(params.config.input_dim()));
  Matrix in = Eigen::Map<const Matrix>(encoded.data(), params.config.input_dim(), 1);
  const auto tape = forward_tape(params, in, opts);
  return decode(params, tape, 0, opts);
}

std::vector<RFAttributes> forward_batch(const NetworkParams& params, const TxDescriptor& tx, const GaussianScene& scene,
                                        const NetworkOptions& opts, const EncodeOptions& enc) {
  EncodeOptions e = enc;
  e.sever_frequency = e.sever_frequency || opts.sever_frequency;
  const Matrix in = encode_scene(params, tx, scene, e);
  const auto tape = forward_tape(params, in, opts);
  std::vector<RFAttributes> attrs;
  attrs.reserve(scene.size());
  for (Eigen::Index j = 0; j < in.cols(); ++j) attrs.push_back(decode(params, tape, j, opts));
  return attrs;
}

void backward(const NetworkParams& params, const NetworkTape& tape, std::span<const AttributeAdjoint> adjoints,
              NetworkGradients& grads, Matrix* input_grad, const NetworkOptions& opts) {
  const auto& cfg = params.config;
  const Matrix& out = tape.activations.back();
  const Eigen::Index n = out.cols();
  require(static_cast<Eigen::Index>(adjoints.size()) == n, "adjoint count does not match batch size");
  const bool det = opts.deterministic;

  // Adjoints of the raw outputs.
  Matrix g_refined(4, n);
  Matrix g_out = Matrix::Zero(out.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& adj = adjoints[static_cast<std::size_t>(j)];
    const double r0 = tape.refined(0, j), r1 = tape.refined(1, j);
    const double r2 = tape.refined(2, j), r3 = tape.refined(3, j);
    const double s0 = sigmoid(r0);
    const Complex e1 = from_polar(1.0, r1);
    const Complex delta = s0 * e1;
    // For z = f(x) with real x: dL/dx = Re(conj(G) dz/dx).
    g_refined(0, j) = std::real(std::conj(adj.attenuation) * (s0 * (1.0 - s0) * e1));
    g_refined(1, j) = std::real(std::conj(adj.attenuation) * (Complex(0.0, 1.0) * delta));
    const Complex e3 = from_polar(1.0, r3);
    const Complex sig = softplus(r2) * e3;
    g_refined(2, j) = std::real(std::conj(adj.signal) * (sigmoid(r2) * e3));
    g_refined(3, j) = std::real(std::conj(adj.signal) * (Complex(0.0, 1.0) * sig));
    if (!opts.sever_frequency) {
      const double s = sigmoid(out(4 + cfg.latent_dim, j));
      g_out(4 + cfg.latent_dim, j) = adj.spread * (cfg.spread_max - cfg.spread_min) * s * (1.0 - s);
    }
  }
  g_out.topRows(4) = g_refined;

  // Refinement head.
  const Matrix latent = out.middleRows(4, cfg.latent_dim);
  kernels::matmul_nt_add(g_refined, tape.head_hidden, grads.head[1].weight, det);
  grads.head[1].bias += g_refined.rowwise().sum();
  Matrix g_hidden;
  kernels::matmul_tn(params.head[1].weight, g_refined, g_hidden, det);
  g_hidden = g_hidden.cwiseProduct((tape.head_hidden.array() > 0.0).cast<double>().matrix());
  kernels::matmul_nt_add(g_hidden, latent, grads.head[0].weight, det);
  grads.head[0].bias += g_hidden.rowwise().sum();
  Matrix g_latent;
  kernels::matmul_tn(params.head[0].weight, g_hidden, g_latent, det);
  g_out.middleRows(4, cfg.latent_dim) += g_latent;

  // Trunk.
  Matrix g = std::move(g_out);
  for (std::size_t l = params.trunk.size(); l-- > 0;) {
    const Matrix& a_in = tape.activations[l];
    kernels::matmul_nt_add(g, a_in, grads.trunk[l].weight, det);
    grads.trunk[l].bias += g.rowwise().sum();
    if (l == 0 && input_grad == nullptr) break;
    Matrix g_in;
    kernels::matmul_tn(params.trunk[l].weight, g, g_in, det);
    if (l == 0) {
      *input_grad = std::move(g_in);
      break;
    }
    g = g_in.cwiseProduct((a_in.array() > 0.0).cast<double>().matrix());
  }
}

Vec3 center_encoding_backward(const NetworkConfig& cfg, const Vec3& center, const Matrix& input_grad, Eigen::Index j,
                              const EncodeOptions& enc) {
  Vec3 g = Vec3::Zero();
  const int pos_width = 2 * cfg.pos_bands;
  const Eigen::Index base = 3 * pos_width;  // skip the TX encoding
  for (int c = 0; c < 3; ++c) {
    const double lo = cfg.bounds.min[c], hi = cfg.bounds.max[c];
    if (hi <= lo) continue;
    const double p = center[c];
    if (p < lo || p > hi) {
      if (!enc.clamp_positions) fail(Errc::PositionOutOfBounds, "center outside network bounds");
      continue;  // clamped: zero derivative
    }
    const double u = 2.0 * (p - lo) / (hi - lo) - 1.0;
    const double du = 2.0 / (hi - lo);
    double scale = kPi;
    double acc = 0.0;
    for (int k = 0; k < cfg.pos_bands; ++k) {
      const Eigen::Index row = base + c * pos_width + 2 * k;
      acc += input_grad(row, j) * scale * std::cos(scale * u);
      acc -= input_grad(row + 1, j) * scale * std::sin(scale * u);
      scale *= 2.0;
    }
    g[c] = acc * du;
  }
  return g;
}

}  // namespace xfreq
