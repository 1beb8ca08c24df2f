#include "deepmix/cae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "deepmix/errors.hpp"
#include "deepmix/kernels.hpp"

namespace deepmix {

namespace {

void check_length(const char* op, std::size_t expected, std::size_t got) {
  if (expected != got) {
    throw ShapeError(std::string(op) + ": expected length " + std::to_string(expected) +
                     ", got " + std::to_string(got));
  }
}

void check_level(const StackedCae& s, std::size_t level, std::size_t min_level) {
  if (level < min_level || level > s.depth()) {
    throw ArgumentError("level " + std::to_string(level) + " out of range [" +
                        std::to_string(min_level) + ", " + std::to_string(s.depth()) + "]");
  }
}

double cross_entropy(double x, double r) {
  const double p = std::clamp(r, kProbClamp, 1.0 - kProbClamp);
  return -(x * std::log(p) + (1.0 - x) * std::log(1.0 - p));
}

Vector row_norms_squared(const Matrix& w) {
  Vector q(w.rows(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (double v : w.row(i)) q[i] += v * v;
  }
  return q;
}

}  // namespace

Cae Cae::zeros(std::size_t n_input, std::size_t n_hidden, double alpha) {
  return Cae{Matrix(n_hidden, n_input), Vector(n_hidden, 0.0), Vector(n_input, 0.0), alpha};
}

Cae Cae::glorot(std::size_t n_input, std::size_t n_hidden, double alpha, Prng& rng) {
  Cae m = zeros(n_input, n_hidden, alpha);
  const double range = 4.0 * std::sqrt(6.0 / static_cast<double>(n_input + n_hidden));
  for (double& w : m.weights.values()) w = range * (2.0 * rng.uniform() - 1.0);
  return m;
}

void Cae::validate() const {
  if (hidden_bias.size() != n_hidden() || visible_bias.size() != n_input()) {
    throw ShapeError("Cae: bias lengths do not match weights " + weights.shape_string());
  }
  if (!(alpha >= 0.0)) throw ArgumentError("Cae: alpha must be non-negative");
  if (!weights.all_finite() || !all_finite(hidden_bias) || !all_finite(visible_bias)) {
    throw NumericError("Cae: non-finite parameter");
  }
}

Vector encode(const Cae& m, std::span<const double> x) {
  check_length("encode", m.n_input(), x.size());
  Vector h = kernels::matvec(m.weights, x);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = sigmoid(h[i] + m.hidden_bias[i]);
  return h;
}

Matrix encode(const Cae& m, const Matrix& x) {
  check_length("encode", m.n_input(), x.cols());
  Matrix h = kernels::matmul_nt(x, m.weights);
  add_row_vector(h, m.hidden_bias);
  sigmoid_inplace(h);
  return h;
}

Vector decode(const Cae& m, std::span<const double> h) {
  check_length("decode", m.n_hidden(), h.size());
  Vector r = kernels::matvec_t(m.weights, h);
  for (std::size_t j = 0; j < r.size(); ++j) r[j] = sigmoid(r[j] + m.visible_bias[j]);
  return r;
}

Matrix decode(const Cae& m, const Matrix& h) {
  check_length("decode", m.n_hidden(), h.cols());
  Matrix r = kernels::matmul(h, m.weights);
  add_row_vector(r, m.visible_bias);
  sigmoid_inplace(r);
  return r;
}

Matrix jacobian(const Cae& m, std::span<const double> x) {
  const Vector h = encode(m, x);
  Matrix j = m.weights;
  for (std::size_t i = 0; i < j.rows(); ++i) {
    const double slope = h[i] * (1.0 - h[i]);
    for (double& v : j.row(i)) v *= slope;
  }
  return j;
}

CaeLoss loss(const Cae& m, std::span<const double> x) {
  const Vector h = encode(m, x);
  const Vector r = decode(m, h);
  const Vector q = row_norms_squared(m.weights);
  CaeLoss out;
  for (std::size_t j = 0; j < x.size(); ++j) out.reconstruction += cross_entropy(x[j], r[j]);
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double slope = h[i] * (1.0 - h[i]);
    out.contraction += slope * slope * q[i];
  }
  out.total = out.reconstruction + m.alpha * out.contraction;
  return out;
}

CaeLoss mean_loss(const Cae& m, const Matrix& batch) {
  check_length("mean_loss", m.n_input(), batch.cols());
  CaeLoss out;
  if (batch.rows() == 0) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan, nan};
  }
  const Matrix h = encode(m, batch);
  const Matrix r = decode(m, h);
  const Vector q = row_norms_squared(m.weights);
  for (std::size_t row = 0; row < batch.rows(); ++row) {
    for (std::size_t j = 0; j < batch.cols(); ++j) {
      out.reconstruction += cross_entropy(batch(row, j), r(row, j));
    }
    for (std::size_t i = 0; i < h.cols(); ++i) {
      const double slope = h(row, i) * (1.0 - h(row, i));
      out.contraction += slope * slope * q[i];
    }
  }
  const auto n = static_cast<double>(batch.rows());
  out.reconstruction /= n;
  out.contraction /= n;
  out.total = out.reconstruction + m.alpha * out.contraction;
  return out;
}

CaeGradient loss_gradient(const Cae& m, const Matrix& batch) {
  check_length("loss_gradient", m.n_input(), batch.cols());
  const std::size_t n = batch.rows();
  if (n == 0) throw ArgumentError("loss_gradient: empty batch");
  const std::size_t nh = m.n_hidden();

  const Matrix h = encode(m, batch);
  Matrix delta_out = decode(m, h);  // becomes r - x
  for (std::size_t i = 0; i < delta_out.size(); ++i) delta_out.values()[i] -= batch.values()[i];

  // Backprop into the encoder pre-activation: (W (r - x)) * s, plus the
  // contraction term's dependence on h:
  //   d/da_i [s_i^2 q_i] = 2 s_i^2 q_i (1 - 2 h_i).
  const Vector q = row_norms_squared(m.weights);
  Matrix delta_hidden = kernels::matmul_nt(delta_out, m.weights);
  Vector mean_slope_sq(nh, 0.0);
  for (std::size_t row = 0; row < n; ++row) {
    for (std::size_t i = 0; i < nh; ++i) {
      const double hi = h(row, i);
      const double slope = hi * (1.0 - hi);
      const double contraction = 2.0 * slope * slope * q[i] * (1.0 - 2.0 * hi);
      delta_hidden(row, i) = delta_hidden(row, i) * slope + m.alpha * contraction;
      mean_slope_sq[i] += slope * slope;
    }
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  CaeGradient g;
  g.weights = kernels::matmul_tn(delta_hidden, batch);
  const Matrix decoder_part = kernels::matmul_tn(h, delta_out);
  for (std::size_t i = 0; i < nh; ++i) {
    const double direct = 2.0 * m.alpha * mean_slope_sq[i] * inv_n;
    for (std::size_t j = 0; j < m.n_input(); ++j) {
      g.weights(i, j) = (g.weights(i, j) + decoder_part(i, j)) * inv_n + direct * m.weights(i, j);
    }
  }
  g.hidden_bias = column_means(delta_hidden);
  g.visible_bias = column_means(delta_out);

  if (!g.weights.all_finite()) throw NumericError("non-finite gradient in block weights");
  if (!all_finite(g.hidden_bias)) throw NumericError("non-finite gradient in block hidden_bias");
  if (!all_finite(g.visible_bias)) throw NumericError("non-finite gradient in block visible_bias");
  return g;
}

std::size_t StackedCae::width(std::size_t level) const {
  check_level(*this, level, 0);
  return level == 0 ? input_dim() : layers[level - 1].n_hidden();
}

StackedCae StackedCae::truncated(std::size_t level) const {
  check_level(*this, level, 1);
  return StackedCae{
      std::vector<Cae>(layers.begin(), layers.begin() + static_cast<std::ptrdiff_t>(level))};
}

void StackedCae::validate() const {
  if (layers.empty()) throw ArgumentError("StackedCae: at least one layer required");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].validate();
    if (i + 1 < layers.size() && layers[i].n_hidden() != layers[i + 1].n_input()) {
      throw ShapeError("StackedCae: layer " + std::to_string(i) +
                       " output width does not match the next layer's input");
    }
  }
}

Vector encode(const StackedCae& s, std::span<const double> x, std::size_t level) {
  check_level(s, level, 0);
  Vector h(x.begin(), x.end());
  for (std::size_t i = 0; i < level; ++i) h = encode(s.layers[i], h);
  return h;
}

Matrix encode(const StackedCae& s, const Matrix& x, std::size_t level) {
  check_level(s, level, 0);
  Matrix h = x;
  for (std::size_t i = 0; i < level; ++i) h = encode(s.layers[i], h);
  return h;
}

Vector decode(const StackedCae& s, std::span<const double> h, std::size_t level) {
  check_level(s, level, 0);
  Vector r(h.begin(), h.end());
  for (std::size_t i = level; i-- > 0;) r = decode(s.layers[i], r);
  return r;
}

Matrix decode(const StackedCae& s, const Matrix& h, std::size_t level) {
  check_level(s, level, 0);
  Matrix r = h;
  for (std::size_t i = level; i-- > 0;) r = decode(s.layers[i], r);
  return r;
}

void CaeTrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ArgumentError("CaeTrainConfig: learning_rate must be non-negative");
  if (minibatch_size < 1) throw ArgumentError("CaeTrainConfig: minibatch_size must be positive");
}

CaeTrainResult train(const Split& split, std::span<const std::size_t> layer_sizes, double alpha,
                     const CaeTrainConfig& cfg, Prng& rng) {
  cfg.validate();
  if (layer_sizes.size() < 2) throw ArgumentError("train: need input and one hidden size");
  if (layer_sizes.front() != split.train.dim()) {
    throw ShapeError("train: input size " + std::to_string(layer_sizes.front()) +
                     " does not match data dimension " + std::to_string(split.train.dim()));
  }
  if (split.train.size() == 0) throw ArgumentError("train: empty training set");

  CaeTrainResult result;
  Matrix inputs = split.train.examples;
  Matrix valid = split.valid.size() > 0 ? split.valid.examples : Matrix(0, split.train.dim());
  for (std::size_t layer = 0; layer + 1 < layer_sizes.size(); ++layer) {
    Prng layer_rng = rng.split(layer);
    Cae m = Cae::glorot(layer_sizes[layer], layer_sizes[layer + 1], alpha, layer_rng);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      const auto order = random_permutation(inputs.rows(), layer_rng);
      for (std::size_t start = 0; start < order.size(); start += cfg.minibatch_size) {
        const std::size_t stop = std::min(order.size(), start + cfg.minibatch_size);
        const Matrix batch =
            gather_rows(inputs, std::span<const std::size_t>(order).subspan(start, stop - start));
        const CaeGradient g = loss_gradient(m, batch);
        for (std::size_t i = 0; i < m.weights.size(); ++i) {
          m.weights.values()[i] -= cfg.learning_rate * g.weights.values()[i];
        }
        for (std::size_t i = 0; i < m.hidden_bias.size(); ++i) {
          m.hidden_bias[i] -= cfg.learning_rate * g.hidden_bias[i];
        }
        for (std::size_t j = 0; j < m.visible_bias.size(); ++j) {
          m.visible_bias[j] -= cfg.learning_rate * g.visible_bias[j];
        }
      }
      CaeEpochLog entry{layer, epoch, mean_loss(m, inputs), mean_loss(m, valid)};
      if (!std::isfinite(entry.train.total)) {
        throw NumericError("train: loss diverged at layer " + std::to_string(layer) + " epoch " +
                           std::to_string(epoch));
      }
      result.log.push_back(entry);
    }
    if (layer + 2 < layer_sizes.size()) {
      inputs = encode(m, inputs);
      valid = valid.rows() > 0 ? encode(m, valid) : Matrix(0, m.n_hidden());
    }
    result.model.layers.push_back(std::move(m));
  }
  return result;
}

void CaeSamplerConfig::validate() const {
  if (!(noise_std > 0.0)) throw ArgumentError("CaeSamplerConfig: noise_std must be positive");
  if (keep_every < 1) throw ArgumentError("CaeSamplerConfig: keep_every must be at least 1");
}

namespace {

struct UpwardPass {
  std::vector<Vector> slopes;  ///< h (1 - h) per layer
  Vector top;
};

UpwardPass upward(const StackedCae& s, std::span<const double> x) {
  UpwardPass pass;
  Vector z(x.begin(), x.end());
  for (const Cae& layer : s.layers) {
    z = encode(layer, z);
    Vector slope(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) slope[i] = z[i] * (1.0 - z[i]);
    pass.slopes.push_back(std::move(slope));
  }
  pass.top = std::move(z);
  return pass;
}

Vector perturbation(const StackedCae& s, const UpwardPass& pass, std::span<const double> eps) {
  // u = J^T eps with J_i = diag(slope_i) W_i, applied top-down.
  Vector u(eps.begin(), eps.end());
  for (std::size_t i = s.depth(); i-- > 0;) {
    for (std::size_t k = 0; k < u.size(); ++k) u[k] *= pass.slopes[i][k];
    u = kernels::matvec_t(s.layers[i].weights, u);
  }
  // J u, bottom-up.
  for (std::size_t i = 0; i < s.depth(); ++i) {
    u = kernels::matvec(s.layers[i].weights, u);
    for (std::size_t k = 0; k < u.size(); ++k) u[k] *= pass.slopes[i][k];
  }
  return u;
}

}  // namespace

Vector hidden_perturbation(const StackedCae& s, std::span<const double> x,
                           std::span<const double> eps) {
  check_length("hidden_perturbation", s.input_dim(), x.size());
  check_length("hidden_perturbation", s.width(s.depth()), eps.size());
  return perturbation(s, upward(s, x), eps);
}

Vector sampler_step(const StackedCae& s, std::span<const double> x, const CaeSamplerConfig& cfg,
                    Prng& rng) {
  cfg.validate();
  check_length("sampler_step", s.input_dim(), x.size());
  const UpwardPass pass = upward(s, x);
  Vector eps(pass.top.size());
  for (double& e : eps) e = cfg.noise_std * rng.normal();
  Vector h = pass.top;
  const Vector shift = perturbation(s, pass, eps);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] += shift[i];
  return decode(s, h, s.depth());
}

Vector sampler_step(const Cae& m, std::span<const double> x, const CaeSamplerConfig& cfg,
                    Prng& rng) {
  return sampler_step(StackedCae{{m}}, x, cfg, rng);
}

}  // namespace deepmix
