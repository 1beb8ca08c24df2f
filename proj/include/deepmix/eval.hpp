#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "deepmix/cae.hpp"
#include "deepmix/data.hpp"
#include "deepmix/dbn.hpp"
#include "deepmix/errors.hpp"

namespace deepmix {

// ---------------------------------------------------------------------------
// Parzen-window scoring of generated sample banks

/// Isotropic Gaussian kernel density over a bank of generated samples.
struct ParzenEstimator {
  Matrix bank;
  double bandwidth = 0.2;

  void validate() const;
};

struct LogLikelihood {
  double mean = 0.0;
  double std_err = 0.0;  ///< sample standard deviation / sqrt(n)
};

/**
 * log((1/m) sum_i N(x; bank_i, sigma^2 I)) for every test row, evaluated as
 * log_sum_exp(-||x - bank_i||^2 / (2 sigma^2)) - log m - (d/2) log(2 pi sigma^2).
 * Parallel over test rows.
 */
Vector parzen_point_log_likelihoods(const ParzenEstimator& est, const Matrix& test);
LogLikelihood parzen_log_likelihood(const ParzenEstimator& est, const Matrix& test);

/// 12 log-spaced bandwidths from 0.05 to 1.0.
std::vector<double> default_bandwidth_grid();

/// Validation mean log-likelihood for each grid bandwidth (distances computed once).
Vector bandwidth_scores(const Matrix& bank, const Matrix& validation, std::span<const double> grid);
/// Grid value with the highest validation mean log-likelihood; ties go to the smaller value.
double select_bandwidth(const Matrix& bank, const Matrix& validation, std::span<const double> grid);

// ---------------------------------------------------------------------------
// Mixing

struct MixingHistogram {
  std::size_t window_length = 0;
  std::map<std::size_t, std::size_t> counts;  ///< distinct classes -> number of windows
  double mean_distinct = 0.0;
  std::size_t windows = 0;
};

/// Distinct classes per non-overlapping window of `window_length` labels.
MixingHistogram mixing_histogram(std::span<const int> labels, std::size_t window_length);

/// Row-wise argmax with ties to the lower class index.
std::vector<int> argmax_rows(const Matrix& scores);

/// Classifier is any type with `Matrix scores(const Matrix&) const`.
template <class Classifier>
std::vector<int> label_samples(const Classifier& classifier, const Matrix& samples) {
  return argmax_rows(classifier.scores(samples));
}

// ---------------------------------------------------------------------------
// Linear probe

enum class ProbeLoss { hinge, logistic };

struct LinearProbeConfig {
  ProbeLoss loss = ProbeLoss::hinge;
  double regularization = 1e-4;  ///< L2 on weights (not biases)
  std::size_t epochs = 20;
  double learning_rate = 0.01;   ///< epoch e uses learning_rate / sqrt(1 + e)
  std::size_t minibatch_size = 64;
};

/// Multiclass linear classifier: scores = features * weights^T + bias.
struct LinearProbe {
  Matrix weights;  ///< num_classes x feature_dim
  Vector bias;
  double regularization = 0.0;

  [[nodiscard]] Matrix scores(const Matrix& features) const;
};

/**
 * Minibatch subgradient descent on the L2-regularized multiclass hinge loss
 * max(0, 1 + max_{j != y} s_j - s_y) (or softmax cross-entropy). Weights start
 * at zero; one permutation per epoch drawn from rng.
 */
LinearProbe train_linear_probe(const Matrix& features, std::span<const int> labels,
                               const LinearProbeConfig& cfg, Prng& rng);

template <class Classifier>
double probe_error(const Classifier& classifier, const Matrix& features,
                   std::span<const int> labels) {
  if (features.rows() != labels.size()) throw ShapeError("probe_error: label count mismatch");
  if (labels.empty()) throw ArgumentError("probe_error: empty evaluation set");
  const auto predicted = label_samples(classifier, features);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) wrong += predicted[i] != labels[i];
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

/// k-nearest-neighbor test error (majority vote, ties to the lower label).
double knn_error(const Matrix& train_features, std::span<const int> train_labels,
                 const Matrix& test_features, std::span<const int> test_labels, std::size_t k);

// ---------------------------------------------------------------------------
// Fine-tuned MLP

struct DenseLayer {
  Matrix weights;  ///< out x in
  Vector bias;
};

/// Sigmoid hidden layers followed by a softmax output layer.
struct Mlp {
  std::vector<DenseLayer> hidden;
  DenseLayer output;

  [[nodiscard]] std::size_t input_dim() const;
  [[nodiscard]] std::size_t num_classes() const { return output.weights.rows(); }
  /// Output-layer logits.
  [[nodiscard]] Matrix scores(const Matrix& x) const;
};

/// Hidden layers copied from the encoders; output layer all zeros.
Mlp mlp_from_stack(const StackedCae& stack, int num_classes);
Mlp mlp_from_stack(const Dbn& stack, int num_classes);

/// Mean softmax cross-entropy.
double mlp_loss(const Mlp& mlp, const Matrix& x, std::span<const int> labels);

struct MlpGradient {
  std::vector<DenseLayer> hidden;
  DenseLayer output;
};

MlpGradient mlp_loss_gradient(const Mlp& mlp, const Matrix& x, std::span<const int> labels);

struct FineTuneConfig {
  std::size_t epochs = 10;
  double learning_rate = 0.1;
  std::size_t minibatch_size = 64;
};

struct FineTuneEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_error = 0.0;  ///< NaN without validation data
};

struct FineTuneResult {
  Mlp classifier;
  double test_error = 0.0;
  std::vector<FineTuneEpoch> log;
};

/// Backpropagation through every layer, plain minibatch gradient descent.
FineTuneResult fine_tune_mlp(const Mlp& init, const Split& split, const FineTuneConfig& cfg,
                             Prng& rng);
FineTuneResult fine_tune_mlp(const StackedCae& stack, const Split& split,
                             const FineTuneConfig& cfg, Prng& rng);
FineTuneResult fine_tune_mlp(const Dbn& stack, const Split& split, const FineTuneConfig& cfg,
                             Prng& rng);

}  // namespace deepmix
