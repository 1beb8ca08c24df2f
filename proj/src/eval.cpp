#include "deepmix/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "deepmix/kernels.hpp"

namespace deepmix {

namespace {

// Test rows scored per distance block; bounds the block to chunk x bank doubles.
constexpr std::size_t kChunkRows = 256;

double parzen_point(std::span<const double> sq_dist, double bandwidth, std::size_t dim,
                    Vector& scratch) {
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  scratch.resize(sq_dist.size());
  for (std::size_t i = 0; i < sq_dist.size(); ++i) scratch[i] = -sq_dist[i] * inv;
  return log_sum_exp(scratch) - std::log(static_cast<double>(sq_dist.size())) -
         0.5 * static_cast<double>(dim) *
             std::log(2.0 * std::numbers::pi * bandwidth * bandwidth);
}

int checked_num_classes(std::span<const int> labels) {
  if (labels.empty()) throw ArgumentError("empty label set");
  const std::set<int> distinct(labels.begin(), labels.end());
  if (*distinct.begin() < 0) throw ArgumentError("negative label");
  if (distinct.size() < 2) throw ArgumentError("degenerate training set: only one class present");
  return *distinct.rbegin() + 1;
}

void check_rows(const char* op, const Matrix& x, std::span<const int> labels) {
  if (x.rows() != labels.size()) {
    throw ShapeError(std::string(op) + ": " + std::to_string(x.rows()) + " rows but " +
                     std::to_string(labels.size()) + " labels");
  }
}

void dense_forward(const DenseLayer& layer, Matrix& x) {
  x = kernels::matmul_nt(x, layer.weights);
  add_row_vector(x, layer.bias);
}

/// Softmax probabilities of logits, row-wise, and the mean cross-entropy.
double softmax_inplace(Matrix& logits, std::span<const int> labels) {
  double loss = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const double lse = log_sum_exp(row);
    loss += lse - row[static_cast<std::size_t>(labels[r])];
    for (double& z : row) z = std::exp(z - lse);
  }
  return loss / static_cast<double>(logits.rows());
}

}  // namespace

void ParzenEstimator::validate() const {
  if (bank.rows() == 0) throw ArgumentError("ParzenEstimator: empty bank");
  if (!(bandwidth > 0.0)) throw ArgumentError("ParzenEstimator: bandwidth must be positive");
}

Vector parzen_point_log_likelihoods(const ParzenEstimator& est, const Matrix& test) {
  est.validate();
  if (test.rows() == 0) throw ArgumentError("parzen_log_likelihood: empty test set");
  if (test.cols() != est.bank.cols()) {
    throw ShapeError("parzen_log_likelihood: test " + test.shape_string() + " vs bank " +
                     est.bank.shape_string());
  }
  Vector out(test.rows());
  for (std::size_t start = 0; start < test.rows(); start += kChunkRows) {
    const std::size_t stop = std::min(test.rows(), start + kChunkRows);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const Matrix dist = kernels::sq_distances(gather_rows(test, idx), est.bank);
    const auto rows = static_cast<std::ptrdiff_t>(dist.rows());
#pragma omp parallel
    {
      Vector scratch;
#pragma omp for schedule(static)
      for (std::ptrdiff_t r = 0; r < rows; ++r) {
        const auto row = static_cast<std::size_t>(r);
        out[start + row] = parzen_point(dist.row(row), est.bandwidth, test.cols(), scratch);
      }
    }
  }
  return out;
}

LogLikelihood parzen_log_likelihood(const ParzenEstimator& est, const Matrix& test) {
  const Vector ll = parzen_point_log_likelihoods(est, test);
  const auto n = static_cast<double>(ll.size());
  double mean = 0.0;
  for (double v : ll) mean += v;
  mean /= n;
  if (ll.size() < 2) return {mean, 0.0};
  double var = 0.0;
  for (double v : ll) var += (v - mean) * (v - mean);
  var /= n - 1.0;
  return {mean, std::sqrt(var / n)};
}

std::vector<double> default_bandwidth_grid() {
  constexpr std::size_t kPoints = 12;
  const double lo = std::log(0.05);
  const double hi = std::log(1.0);
  std::vector<double> grid(kPoints);
  for (std::size_t i = 0; i < kPoints; ++i) {
    grid[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) / (kPoints - 1));
  }
  return grid;
}

Vector bandwidth_scores(const Matrix& bank, const Matrix& validation, std::span<const double> grid) {
  if (grid.empty()) throw ArgumentError("select_bandwidth: empty grid");
  if (bank.rows() == 0 || validation.rows() == 0) {
    throw ArgumentError("select_bandwidth: empty bank or validation set");
  }
  if (bank.cols() != validation.cols()) throw ShapeError("select_bandwidth: dimension mismatch");
  for (double s : grid) {
    if (!(s > 0.0)) throw ArgumentError("select_bandwidth: bandwidths must be positive");
  }

  Vector totals(grid.size(), 0.0);
  for (std::size_t start = 0; start < validation.rows(); start += kChunkRows) {
    const std::size_t stop = std::min(validation.rows(), start + kChunkRows);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const Matrix dist = kernels::sq_distances(gather_rows(validation, idx), bank);
    Matrix point(dist.rows(), grid.size());
    const auto rows = static_cast<std::ptrdiff_t>(dist.rows());
#pragma omp parallel
    {
      Vector scratch;
#pragma omp for schedule(static)
      for (std::ptrdiff_t r = 0; r < rows; ++r) {
        const auto row = static_cast<std::size_t>(r);
        for (std::size_t g = 0; g < grid.size(); ++g) {
          point(row, g) = parzen_point(dist.row(row), grid[g], bank.cols(), scratch);
        }
      }
    }
    for (std::size_t r = 0; r < point.rows(); ++r)
      for (std::size_t g = 0; g < grid.size(); ++g) totals[g] += point(r, g);
  }
  for (double& t : totals) t /= static_cast<double>(validation.rows());
  return totals;
}

double select_bandwidth(const Matrix& bank, const Matrix& validation, std::span<const double> grid) {
  const Vector scores = bandwidth_scores(bank, validation, grid);
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (scores[g] > scores[best] || (scores[g] == scores[best] && grid[g] < grid[best])) best = g;
  }
  return grid[best];
}

MixingHistogram mixing_histogram(std::span<const int> labels, std::size_t window_length) {
  if (window_length < 1) throw ArgumentError("mixing_histogram: window length must be positive");
  if (labels.size() < window_length) {
    throw ArgumentError("mixing_histogram: sequence of length " + std::to_string(labels.size()) +
                        " shorter than window " + std::to_string(window_length));
  }
  MixingHistogram hist;
  hist.window_length = window_length;
  hist.windows = labels.size() / window_length;
  double total = 0.0;
  for (std::size_t w = 0; w < hist.windows; ++w) {
    const auto window = labels.subspan(w * window_length, window_length);
    const std::set<int> distinct(window.begin(), window.end());
    ++hist.counts[distinct.size()];
    total += static_cast<double>(distinct.size());
  }
  hist.mean_distinct = total / static_cast<double>(hist.windows);
  return hist;
}

std::vector<int> argmax_rows(const Matrix& scores) {
  std::vector<int> out(scores.rows());
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    const auto row = scores.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

Matrix LinearProbe::scores(const Matrix& features) const {
  if (features.cols() != weights.cols()) {
    throw ShapeError("LinearProbe: features " + features.shape_string() + " vs weights " +
                     weights.shape_string());
  }
  Matrix s = kernels::matmul_nt(features, weights);
  add_row_vector(s, bias);
  return s;
}

LinearProbe train_linear_probe(const Matrix& features, std::span<const int> labels,
                               const LinearProbeConfig& cfg, Prng& rng) {
  check_rows("train_linear_probe", features, labels);
  const int classes = checked_num_classes(labels);
  if (cfg.minibatch_size < 1) throw ArgumentError("train_linear_probe: minibatch_size must be positive");

  LinearProbe probe{Matrix(static_cast<std::size_t>(classes), features.cols()),
                    Vector(static_cast<std::size_t>(classes), 0.0), cfg.regularization};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double rate = cfg.learning_rate / std::sqrt(1.0 + static_cast<double>(epoch));
    const auto order = random_permutation(features.rows(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.minibatch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Matrix x = gather_rows(features, idx);
      Matrix coeff = probe.scores(x);  // becomes d loss / d score
      for (std::size_t r = 0; r < coeff.rows(); ++r) {
        auto s = coeff.row(r);
        const auto y = static_cast<std::size_t>(labels[idx[r]]);
        if (cfg.loss == ProbeLoss::hinge) {
          std::size_t rival = y == 0 ? 1 : 0;
          for (std::size_t j = 0; j < s.size(); ++j) {
            if (j != y && s[j] > s[rival]) rival = j;
          }
          const bool violated = 1.0 + s[rival] - s[y] > 0.0;
          std::fill(s.begin(), s.end(), 0.0);
          if (violated) {
            s[y] = -1.0;
            s[rival] = 1.0;
          }
        } else {
          const double lse = log_sum_exp(s);
          for (double& z : s) z = std::exp(z - lse);
          s[y] -= 1.0;
        }
      }
      const double inv_n = 1.0 / static_cast<double>(x.rows());
      const Matrix grad_w = kernels::matmul_tn(coeff, x);
      const Vector grad_b = column_means(coeff);
      for (std::size_t i = 0; i < probe.weights.size(); ++i) {
        double& w = probe.weights.values()[i];
        w -= rate * (grad_w.values()[i] * inv_n + cfg.regularization * w);
      }
      for (std::size_t c = 0; c < probe.bias.size(); ++c) probe.bias[c] -= rate * grad_b[c];
    }
    if (!probe.weights.all_finite()) {
      throw NumericError("train_linear_probe: diverged at epoch " + std::to_string(epoch));
    }
  }
  return probe;
}

double knn_error(const Matrix& train_features, std::span<const int> train_labels,
                 const Matrix& test_features, std::span<const int> test_labels, std::size_t k) {
  check_rows("knn_error", train_features, train_labels);
  check_rows("knn_error", test_features, test_labels);
  if (k < 1 || k > train_features.rows()) throw ArgumentError("knn_error: k out of range");
  if (test_features.rows() == 0) throw ArgumentError("knn_error: empty test set");
  const int classes = *std::max_element(train_labels.begin(), train_labels.end()) + 1;

  std::size_t wrong = 0;
  for (std::size_t start = 0; start < test_features.rows(); start += kChunkRows) {
    const std::size_t stop = std::min(test_features.rows(), start + kChunkRows);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const Matrix dist = kernels::sq_distances(gather_rows(test_features, idx), train_features);
    for (std::size_t r = 0; r < dist.rows(); ++r) {
      std::vector<std::pair<double, std::size_t>> order(dist.cols());
      for (std::size_t j = 0; j < dist.cols(); ++j) order[j] = {dist(r, j), j};
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
      std::vector<std::size_t> votes(static_cast<std::size_t>(classes), 0);
      for (std::size_t i = 0; i < k; ++i) ++votes[static_cast<std::size_t>(train_labels[order[i].second])];
      const auto winner = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
      wrong += winner != test_labels[start + r];
    }
  }
  return static_cast<double>(wrong) / static_cast<double>(test_features.rows());
}

std::size_t Mlp::input_dim() const {
  return hidden.empty() ? output.weights.cols() : hidden.front().weights.cols();
}

Matrix Mlp::scores(const Matrix& x) const {
  if (x.cols() != input_dim()) {
    throw ShapeError("Mlp: input " + x.shape_string() + " vs input width " +
                     std::to_string(input_dim()));
  }
  Matrix a = x;
  for (const DenseLayer& layer : hidden) {
    dense_forward(layer, a);
    sigmoid_inplace(a);
  }
  dense_forward(output, a);
  return a;
}

namespace {

Mlp with_zero_output(std::vector<DenseLayer> hidden, int num_classes) {
  if (num_classes < 2) throw ArgumentError("mlp_from_stack: need at least two classes");
  const std::size_t top = hidden.back().weights.rows();
  const auto classes = static_cast<std::size_t>(num_classes);
  return Mlp{std::move(hidden), DenseLayer{Matrix(classes, top), Vector(classes, 0.0)}};
}

}  // namespace

Mlp mlp_from_stack(const StackedCae& stack, int num_classes) {
  stack.validate();
  std::vector<DenseLayer> hidden;
  for (const Cae& layer : stack.layers) hidden.push_back({layer.weights, layer.hidden_bias});
  return with_zero_output(std::move(hidden), num_classes);
}

Mlp mlp_from_stack(const Dbn& stack, int num_classes) {
  stack.validate();
  std::vector<DenseLayer> hidden;
  for (const Rbm& layer : stack.layers) hidden.push_back({layer.weights, layer.hidden_bias});
  return with_zero_output(std::move(hidden), num_classes);
}

double mlp_loss(const Mlp& mlp, const Matrix& x, std::span<const int> labels) {
  check_rows("mlp_loss", x, labels);
  if (x.rows() == 0) throw ArgumentError("mlp_loss: empty batch");
  Matrix logits = mlp.scores(x);
  return softmax_inplace(logits, labels);
}

MlpGradient mlp_loss_gradient(const Mlp& mlp, const Matrix& x, std::span<const int> labels) {
  check_rows("mlp_loss_gradient", x, labels);
  if (x.rows() == 0) throw ArgumentError("mlp_loss_gradient: empty batch");
  if (x.cols() != mlp.input_dim()) throw ShapeError("mlp_loss_gradient: input width mismatch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= mlp.num_classes()) {
      throw ArgumentError("mlp_loss_gradient: label outside the output layer");
    }
  }

  std::vector<Matrix> acts{x};
  for (const DenseLayer& layer : mlp.hidden) {
    Matrix a = acts.back();
    dense_forward(layer, a);
    sigmoid_inplace(a);
    acts.push_back(std::move(a));
  }
  Matrix delta = acts.back();
  dense_forward(mlp.output, delta);
  softmax_inplace(delta, labels);
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  for (std::size_t r = 0; r < delta.rows(); ++r) {
    delta(r, static_cast<std::size_t>(labels[r])) -= 1.0;
    for (double& d : delta.row(r)) d *= inv_n;
  }

  auto layer_grad = [](const Matrix& d, const Matrix& input) {
    DenseLayer g{kernels::matmul_tn(d, input), Vector(d.cols(), 0.0)};
    for (std::size_t r = 0; r < d.rows(); ++r)
      for (std::size_t c = 0; c < d.cols(); ++c) g.bias[c] += d(r, c);
    return g;
  };

  MlpGradient grad;
  grad.output = layer_grad(delta, acts.back());
  grad.hidden.resize(mlp.hidden.size());
  const DenseLayer* above = &mlp.output;
  for (std::size_t l = mlp.hidden.size(); l-- > 0;) {
    delta = kernels::matmul(delta, above->weights);
    const Matrix& a = acts[l + 1];
    for (std::size_t i = 0; i < delta.size(); ++i) {
      const double v = a.values()[i];
      delta.values()[i] *= v * (1.0 - v);
    }
    grad.hidden[l] = layer_grad(delta, acts[l]);
    above = &mlp.hidden[l];
  }
  return grad;
}

FineTuneResult fine_tune_mlp(const Mlp& init, const Split& split, const FineTuneConfig& cfg,
                             Prng& rng) {
  if (split.train.size() == 0 || !split.train.has_labels()) {
    throw ArgumentError("fine_tune_mlp: labeled training data required");
  }
  if (cfg.minibatch_size < 1) throw ArgumentError("fine_tune_mlp: minibatch_size must be positive");
  if (split.train.dim() != init.input_dim()) {
    throw ShapeError("fine_tune_mlp: stack input width " + std::to_string(init.input_dim()) +
                     " does not match data dimension " + std::to_string(split.train.dim()));
  }

  FineTuneResult result{init, std::numeric_limits<double>::quiet_NaN(), {}};
  Mlp& mlp = result.classifier;
  auto step = [&](DenseLayer& layer, const DenseLayer& g) {
    for (std::size_t i = 0; i < layer.weights.size(); ++i) {
      layer.weights.values()[i] -= cfg.learning_rate * g.weights.values()[i];
    }
    for (std::size_t i = 0; i < layer.bias.size(); ++i) layer.bias[i] -= cfg.learning_rate * g.bias[i];
  };

  const Matrix& x = split.train.examples;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = random_permutation(x.rows(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.minibatch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      std::vector<int> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = split.train.labels[idx[i]];
      const MlpGradient g = mlp_loss_gradient(mlp, gather_rows(x, idx), y);
      step(mlp.output, g.output);
      for (std::size_t l = 0; l < mlp.hidden.size(); ++l) step(mlp.hidden[l], g.hidden[l]);
    }
    FineTuneEpoch entry{epoch, mlp_loss(mlp, x, split.train.labels),
                        std::numeric_limits<double>::quiet_NaN()};
    if (!std::isfinite(entry.train_loss)) {
      throw NumericError("fine_tune_mlp: diverged at epoch " + std::to_string(epoch));
    }
    if (split.valid.size() > 0 && split.valid.has_labels()) {
      entry.valid_error = probe_error(mlp, split.valid.examples, split.valid.labels);
    }
    result.log.push_back(entry);
  }
  if (split.test.size() > 0 && split.test.has_labels()) {
    result.test_error = probe_error(mlp, split.test.examples, split.test.labels);
  }
  return result;
}

namespace {

int split_classes(const Split& split) {
  return std::max({split.train.num_classes(), split.valid.num_classes(), split.test.num_classes()});
}

}  // namespace

FineTuneResult fine_tune_mlp(const StackedCae& stack, const Split& split,
                             const FineTuneConfig& cfg, Prng& rng) {
  return fine_tune_mlp(mlp_from_stack(stack, split_classes(split)), split, cfg, rng);
}

FineTuneResult fine_tune_mlp(const Dbn& stack, const Split& split, const FineTuneConfig& cfg,
                             Prng& rng) {
  return fine_tune_mlp(mlp_from_stack(stack, split_classes(split)), split, cfg, rng);
}

}  // namespace deepmix
