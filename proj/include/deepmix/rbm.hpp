#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "deepmix/numerics.hpp"

namespace deepmix {

enum class VisibleKind { binary, gaussian };

std::string to_string(VisibleKind kind);
VisibleKind parse_visible_kind(const std::string& text);

/// Restricted Boltzmann machine with binary hidden units. Gaussian visible
/// units have unit variance.
struct Rbm {
  Matrix weights;  ///< n_hidden x n_visible
  Vector visible_bias;
  Vector hidden_bias;
  VisibleKind visible_kind = VisibleKind::binary;

  [[nodiscard]] std::size_t n_visible() const { return weights.cols(); }
  [[nodiscard]] std::size_t n_hidden() const { return weights.rows(); }

  static Rbm zeros(std::size_t n_visible, std::size_t n_hidden,
                   VisibleKind kind = VisibleKind::binary);
  /// Weights ~ Normal(0, scale^2), biases zero.
  static Rbm random(std::size_t n_visible, std::size_t n_hidden, double scale, Prng& rng,
                    VisibleKind kind = VisibleKind::binary);

  void validate() const;
};

/// sigmoid(W v + c)
Vector hidden_means(const Rbm& m, std::span<const double> v);
Matrix hidden_means(const Rbm& m, const Matrix& batch);
/// binary: sigmoid(W^T h + b); gaussian: W^T h + b
Vector visible_means(const Rbm& m, std::span<const double> h);
Matrix visible_means(const Rbm& m, const Matrix& batch);

/// h ~ Bernoulli(hidden_means(v)); n_hidden uniform draws.
Vector sample_hidden(const Rbm& m, std::span<const double> v, Prng& rng);
/// Binary: n_visible uniform draws; gaussian: n_visible normal draws.
Vector sample_visible(const Rbm& m, std::span<const double> h, Prng& rng);

struct GibbsState {
  Vector visible;
  Vector hidden;
};

/// One full v -> h -> v' sweep (sample_hidden, then sample_visible).
GibbsState gibbs_step(const Rbm& m, std::span<const double> v, Prng& rng);

double free_energy(const Rbm& m, std::span<const double> v);

inline constexpr std::size_t kMaxEnumeratedVisible = 20;

/// P(v) over all 2^n_visible binary states; state index bit j holds v_j.
Vector exact_model_distribution(const Rbm& m);
/// log Z by enumerating visible states (binary kind only).
double exact_log_partition(const Rbm& m);
/// Mean over rows of log P(v) under the exact model distribution.
double exact_mean_log_likelihood(const Rbm& m, const Matrix& data);

struct CdConfig {
  std::size_t k = 1;
  double learning_rate = 0.05;
  std::size_t minibatch_size = 64;
  std::size_t epochs = 10;
  double weight_init_scale = 0.01;
  double momentum = 0.5;
  /// Start visible biases at logit(per-unit data mean) (binary kind only).
  bool init_visible_bias_from_data = false;

  void validate() const;
};

/// Momentum buffers carried between cd_update calls.
struct CdVelocity {
  Matrix weights;
  Vector visible_bias;
  Vector hidden_bias;

  static CdVelocity zeros_like(const Rbm& m);
};

/**
 * One CD-k parameter update on a minibatch.
 *
 * Positive phase pairs data rows with hidden means; negative phase pairs the
 * k-th sampled visible state with its hidden means. The step is
 * learning_rate * (positive - negative) averaged over rows, accumulated into
 * `velocity` with cfg.momentum when a velocity is supplied.
 *
 * Draw order: for each row in order, for t = 1..k: hidden sample (n_hidden
 * draws) then visible sample (n_visible draws; normals for gaussian kind).
 */
Rbm cd_update(const Rbm& m, const Matrix& batch, const CdConfig& cfg, Prng& rng,
              CdVelocity* velocity = nullptr);

struct RbmEpochLog {
  std::size_t epoch = 0;
  double train_reconstruction = 0.0;  ///< mean squared error of E[v | E[h|v]]
  double valid_reconstruction = 0.0;  ///< NaN when no validation data
};

struct RbmTrainResult {
  Rbm model;
  std::vector<RbmEpochLog> log;
};

/// Mean squared error between rows and their mean-field reconstructions.
double reconstruction_error(const Rbm& m, const Matrix& data);

/// Minibatch CD-k with momentum; one permutation per epoch drawn from rng.
RbmTrainResult train_rbm(const Matrix& data, std::size_t n_hidden, const CdConfig& cfg,
                         Prng& rng, VisibleKind kind = VisibleKind::binary,
                         const Matrix* validation = nullptr);

}  // namespace deepmix
