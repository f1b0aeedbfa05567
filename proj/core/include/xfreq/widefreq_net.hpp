#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "xfreq/scene.hpp"
#include "xfreq/types.hpp"

namespace xfreq {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Fixed architecture of the attribute network.
struct NetworkConfig {
  int hidden_width = 256;
  int trunk_layers = 6;  // linear layers; all but the last use ReLU
  int latent_dim = 16;
  int head_width = 32;  // refinement head consuming the latent code
  int pos_bands = 10;
  int freq_bands = 4;
  double spread_min = 0.25;
  double spread_max = 4.0;
  Box bounds;              // positions mapped affinely from here to [-1, 1]^3
  double f_min = 1e9;      // Hz
  double f_max = 94e9;     // Hz

  int input_dim() const { return 2 * pos_bands * 3 * 2 + 2 * freq_bands; }
  /// Raw trunk outputs: attenuation (2), signal (2), latent, spread.
  int output_dim() const { return 4 + latent_dim + 1; }
  void validate() const;
};

struct EncodeOptions {
  bool clamp_positions = false;      // warn-and-clamp instead of PositionOutOfBounds
  bool allow_extrapolation = false;  // permit frequencies outside [f_min, f_max]
  bool sever_frequency = false;      // frequency encoding zeroed (ablation)
};

/// Writes [sin(2^0 pi u), cos(2^0 pi u), ..., sin(2^{L-1} pi u), cos(2^{L-1} pi u)].
void positional_encoding(double u, int bands, std::span<double> out);

/// (ln f - ln f_min) / (ln f_max - ln f_min).
double normalized_log_frequency(double f, double f_min, double f_max);

/// enc(p_tx) || enc(center) || enc(f_norm). Counts clamped position
/// components in *clamped when clamping is enabled.
std::vector<double> encode_inputs(const TxDescriptor& tx, const Vec3& center, const NetworkConfig& cfg,
                                  const EncodeOptions& opts = {}, int* clamped = nullptr);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;
};

struct NetworkParams {
  NetworkConfig config;
  std::vector<DenseLayer> trunk;
  std::vector<DenseLayer> head;  // latent -> head_width -> 4

  /// He-normal weights, zero biases; the head's output layer is scaled down.
  static NetworkParams random(const NetworkConfig& cfg, std::uint64_t seed);
  static NetworkParams zeros(const NetworkConfig& cfg);

  void validate() const;
  std::size_t parameter_count() const;

  /// Visits every weight and bias buffer in a fixed order.
  template <class F>
  void for_each_tensor(F&& f) {
    for (auto& l : trunk) {
      f(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      f(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    for (auto& l : head) {
      f(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      f(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    const_cast<NetworkParams*>(this)->for_each_tensor([&](double* p, std::size_t n) { f(static_cast<const double*>(p), n); });
  }
};

/// Same layout as NetworkParams, holding gradients.
struct NetworkGradients {
  std::vector<DenseLayer> trunk;
  std::vector<DenseLayer> head;

  static NetworkGradients zeros_like(const NetworkParams& p);
  void set_zero();
  template <class F>
  void for_each_tensor(F&& f) {
    for (auto& l : trunk) {
      f(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      f(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    for (auto& l : head) {
      f(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      f(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
  }
};

struct RFAttributes {
  Complex attenuation;         // delta = dA exp(j dpsi), dA in [0, 1]
  Complex signal;              // S = A exp(j psi), A >= 0
  std::vector<double> latent;  // z
  double spread = 1.0;         // lambda
};

struct NetworkOptions {
  bool sever_frequency = false;  // also forces lambda = 1
  bool deterministic = true;     // fixed-order matrix kernels
};

/// Recorded batched forward pass (columns are Gaussians).
struct NetworkTape {
  std::vector<Matrix> activations;  // [0] = input, [l+1] = output of trunk layer l
  Matrix head_hidden;
  Matrix refined;  // 4 x N: raw attenuation/signal after the head
};

/// Runs the network on encoded inputs (input_dim x N) and records the tape.
NetworkTape forward_tape(const NetworkParams& params, const Matrix& inputs, const NetworkOptions& opts = {});

/// Decodes column j of a tape.
RFAttributes decode(const NetworkParams& params, const NetworkTape& tape, Eigen::Index j, const NetworkOptions& opts = {});

RFAttributes forward(const NetworkParams& params, std::span<const double> encoded, const NetworkOptions& opts = {});

/// Per-Gaussian attributes for one (TX, frequency) query in a single batched pass.
std::vector<RFAttributes> forward_batch(const NetworkParams& params, const TxDescriptor& tx, const GaussianScene& scene,
                                        const NetworkOptions& opts = {}, const EncodeOptions& enc = {});

/// Encoded input matrix for a whole scene.
Matrix encode_scene(const NetworkParams& params, const TxDescriptor& tx, const GaussianScene& scene,
                    const EncodeOptions& enc, int* clamped = nullptr);

/// Adjoints of the decoded attributes for one Gaussian.
struct AttributeAdjoint {
  Complex attenuation{0.0, 0.0};  // dL/dRe + i dL/dIm
  Complex signal{0.0, 0.0};
  double spread = 0.0;
};

/// Reverse pass. Accumulates parameter gradients into grads and, when
/// input_grad is non-null, writes dL/d(inputs) (input_dim x N).
void backward(const NetworkParams& params, const NetworkTape& tape, std::span<const AttributeAdjoint> adjoints,
              NetworkGradients& grads, Matrix* input_grad, const NetworkOptions& opts = {});

/// d(encoding of center)/d(center): adds to grad_mean the chain-rule product of
/// the center-encoding slice of input_grad column j.
Vec3 center_encoding_backward(const NetworkConfig& cfg, const Vec3& center, const Matrix& input_grad, Eigen::Index j,
                              const EncodeOptions& enc = {});

namespace kernels {
/// C = A * B with a fixed per-element summation order when deterministic.
void matmul(const Matrix& a, const Matrix& b, Matrix& c, bool deterministic);
/// C = A^T * B.
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool deterministic);
/// C += A * B^T.
void matmul_nt_add(const Matrix& a, const Matrix& b, Matrix& c, bool deterministic);
}  // namespace kernels

}  // namespace xfreq
