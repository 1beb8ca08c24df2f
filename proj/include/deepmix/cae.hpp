#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "deepmix/data.hpp"
#include "deepmix/numerics.hpp"

namespace deepmix {

/// Cross-entropy probabilities are clamped to [kProbClamp, 1 - kProbClamp].
inline constexpr double kProbClamp = 1e-12;

/**
 * Contractive auto-encoder with tied weights:
 *   h = sigmoid(W x + b),  r = sigmoid(W^T h + c)
 * trained on cross-entropy(x, r) + alpha * ||dh/dx||_F^2.
 */
struct Cae {
  Matrix weights;       ///< n_hidden x n_input
  Vector hidden_bias;   ///< b
  Vector visible_bias;  ///< c
  double alpha = 0.1;

  [[nodiscard]] std::size_t n_input() const { return weights.cols(); }
  [[nodiscard]] std::size_t n_hidden() const { return weights.rows(); }

  static Cae zeros(std::size_t n_input, std::size_t n_hidden, double alpha);
  /// W ~ Uniform(-r, r) with r = 4 sqrt(6 / (n_input + n_hidden)); biases zero.
  static Cae glorot(std::size_t n_input, std::size_t n_hidden, double alpha, Prng& rng);

  void validate() const;
};

Vector encode(const Cae& m, std::span<const double> x);
Matrix encode(const Cae& m, const Matrix& x);
Vector decode(const Cae& m, std::span<const double> h);
Matrix decode(const Cae& m, const Matrix& h);

/// J[i][j] = h_i (1 - h_i) W[i][j] at h = encode(x).
Matrix jacobian(const Cae& m, std::span<const double> x);

struct CaeLoss {
  double total = 0.0;
  double reconstruction = 0.0;  ///< cross-entropy, summed over inputs
  double contraction = 0.0;     ///< ||J||_F^2
};

CaeLoss loss(const Cae& m, std::span<const double> x);
/// Per-example losses averaged over rows.
CaeLoss mean_loss(const Cae& m, const Matrix& batch);

struct CaeGradient {
  Matrix weights;
  Vector hidden_bias;
  Vector visible_bias;
};

/**
 * Exact gradient of mean_loss(m, batch). The reconstruction part uses
 * dCE/d(pre-sigmoid) = r - x, which is the derivative of the unclamped
 * cross-entropy; the two differ only where the clamp is active.
 */
CaeGradient loss_gradient(const Cae& m, const Matrix& batch);

struct StackedCae {
  std::vector<Cae> layers;

  [[nodiscard]] std::size_t depth() const { return layers.size(); }
  [[nodiscard]] std::size_t input_dim() const { return layers.front().n_input(); }
  [[nodiscard]] std::size_t width(std::size_t level) const;
  [[nodiscard]] StackedCae truncated(std::size_t level) const;

  void validate() const;
};

Vector encode(const StackedCae& s, std::span<const double> x, std::size_t level);
Matrix encode(const StackedCae& s, const Matrix& x, std::size_t level);
/// Decoders of layers level-1 .. 0 applied top-down.
Vector decode(const StackedCae& s, std::span<const double> h, std::size_t level);
Matrix decode(const StackedCae& s, const Matrix& h, std::size_t level);

struct CaeTrainConfig {
  double learning_rate = 0.01;
  std::size_t minibatch_size = 64;
  std::size_t epochs = 10;

  void validate() const;
};

struct CaeEpochLog {
  std::size_t layer = 0;
  std::size_t epoch = 0;
  CaeLoss train;
  CaeLoss valid;  ///< NaN fields when no validation data
};

struct CaeTrainResult {
  StackedCae model;
  std::vector<CaeEpochLog> log;
};

/**
 * Greedy layerwise minibatch gradient descent. layer_sizes includes the input
 * width; layer i draws its initialization and epoch permutations from
 * rng.split(i) and trains on the encodings of the layers below.
 */
CaeTrainResult train(const Split& split, std::span<const std::size_t> layer_sizes, double alpha,
                     const CaeTrainConfig& cfg, Prng& rng);

struct CaeSamplerConfig {
  double noise_std = 0.5;
  std::size_t n_steps = 1;
  std::size_t keep_every = 1;

  void validate() const;
};

/**
 * J J^T eps for the composed encoder of all layers, evaluated at x, where
 * J = J_L ... J_1 and eps has the width of the top layer. Computed as two
 * chains of matrix-vector products without forming J.
 */
Vector hidden_perturbation(const StackedCae& s, std::span<const double> x,
                           std::span<const double> eps);

/**
 * One sampler transition in the top representation:
 *   h = encode(x), h' = h + J J^T eps with eps ~ Normal(0, noise_std^2 I),
 *   x' = decode(h').
 * Draws: one normal per top-layer unit.
 */
Vector sampler_step(const StackedCae& s, std::span<const double> x,
                    const CaeSamplerConfig& cfg, Prng& rng);
Vector sampler_step(const Cae& m, std::span<const double> x, const CaeSamplerConfig& cfg,
                    Prng& rng);

}  // namespace deepmix
