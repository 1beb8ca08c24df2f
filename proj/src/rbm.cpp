#include "deepmix/rbm.hpp"

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

void check_finite(const char* block, std::span<const double> values) {
  if (!all_finite(values)) throw NumericError(std::string("non-finite gradient in block ") + block);
}

Vector state_vector(std::size_t state, std::size_t n) {
  Vector v(n);
  for (std::size_t j = 0; j < n; ++j) v[j] = static_cast<double>((state >> j) & 1U);
  return v;
}

}  // namespace

std::string to_string(VisibleKind kind) {
  return kind == VisibleKind::binary ? "binary" : "gaussian";
}

VisibleKind parse_visible_kind(const std::string& text) {
  if (text == "binary") return VisibleKind::binary;
  if (text == "gaussian") return VisibleKind::gaussian;
  throw ArgumentError("unknown visible kind '" + text + "'");
}

Rbm Rbm::zeros(std::size_t n_visible, std::size_t n_hidden, VisibleKind kind) {
  return Rbm{Matrix(n_hidden, n_visible), Vector(n_visible, 0.0), Vector(n_hidden, 0.0), kind};
}

Rbm Rbm::random(std::size_t n_visible, std::size_t n_hidden, double scale, Prng& rng,
                VisibleKind kind) {
  Rbm m = zeros(n_visible, n_hidden, kind);
  for (double& w : m.weights.values()) w = scale * rng.normal();
  return m;
}

void Rbm::validate() const {
  if (visible_bias.size() != n_visible() || hidden_bias.size() != n_hidden()) {
    throw ShapeError("Rbm: bias lengths do not match weights " + weights.shape_string());
  }
  if (!weights.all_finite() || !all_finite(visible_bias) || !all_finite(hidden_bias)) {
    throw NumericError("Rbm: non-finite parameter");
  }
}

Vector hidden_means(const Rbm& m, std::span<const double> v) {
  check_length("hidden_means", m.n_visible(), v.size());
  Vector h = kernels::matvec(m.weights, v);
  for (std::size_t j = 0; j < h.size(); ++j) h[j] = sigmoid(h[j] + m.hidden_bias[j]);
  return h;
}

Matrix hidden_means(const Rbm& m, const Matrix& batch) {
  check_length("hidden_means", m.n_visible(), batch.cols());
  Matrix h = kernels::matmul_nt(batch, m.weights);
  add_row_vector(h, m.hidden_bias);
  sigmoid_inplace(h);
  return h;
}

Vector visible_means(const Rbm& m, std::span<const double> h) {
  check_length("visible_means", m.n_hidden(), h.size());
  Vector v = kernels::matvec_t(m.weights, h);
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] += m.visible_bias[i];
    if (m.visible_kind == VisibleKind::binary) v[i] = sigmoid(v[i]);
  }
  return v;
}

Matrix visible_means(const Rbm& m, const Matrix& batch) {
  check_length("visible_means", m.n_hidden(), batch.cols());
  Matrix v = kernels::matmul(batch, m.weights);
  add_row_vector(v, m.visible_bias);
  if (m.visible_kind == VisibleKind::binary) sigmoid_inplace(v);
  return v;
}

Vector sample_hidden(const Rbm& m, std::span<const double> v, Prng& rng) {
  Vector h = hidden_means(m, v);
  for (double& x : h) x = rng.bernoulli(x) ? 1.0 : 0.0;
  return h;
}

Vector sample_visible(const Rbm& m, std::span<const double> h, Prng& rng) {
  Vector v = visible_means(m, h);
  if (m.visible_kind == VisibleKind::binary) {
    for (double& x : v) x = rng.bernoulli(x) ? 1.0 : 0.0;
  } else {
    for (double& x : v) x += rng.normal();
  }
  return v;
}

GibbsState gibbs_step(const Rbm& m, std::span<const double> v, Prng& rng) {
  GibbsState s;
  s.hidden = sample_hidden(m, v, rng);
  s.visible = sample_visible(m, s.hidden, rng);
  return s;
}

double free_energy(const Rbm& m, std::span<const double> v) {
  check_length("free_energy", m.n_visible(), v.size());
  const Vector pre = kernels::matvec(m.weights, v);
  double energy = 0.0;
  if (m.visible_kind == VisibleKind::binary) {
    energy = -dot(m.visible_bias, v);
  } else {
    energy = 0.5 * squared_distance(v, m.visible_bias);
  }
  for (std::size_t j = 0; j < pre.size(); ++j) energy -= softplus(pre[j] + m.hidden_bias[j]);
  return energy;
}

Vector exact_model_distribution(const Rbm& m) {
  if (m.visible_kind != VisibleKind::binary) {
    throw ArgumentError("exact_model_distribution: binary visible units only");
  }
  if (m.n_visible() > kMaxEnumeratedVisible) {
    throw CapacityError("exact_model_distribution: " + std::to_string(m.n_visible()) +
                        " visible units exceeds the enumeration bound of " +
                        std::to_string(kMaxEnumeratedVisible));
  }
  const std::size_t states = std::size_t{1} << m.n_visible();
  Vector logp(states);
  for (std::size_t s = 0; s < states; ++s) logp[s] = -free_energy(m, state_vector(s, m.n_visible()));
  const double log_z = log_sum_exp(logp);
  for (double& x : logp) x = std::exp(x - log_z);
  return logp;
}

double exact_log_partition(const Rbm& m) {
  if (m.visible_kind != VisibleKind::binary) {
    throw ArgumentError("exact_log_partition: binary visible units only");
  }
  if (m.n_visible() > kMaxEnumeratedVisible) {
    throw CapacityError("exact_log_partition: too many visible units");
  }
  const std::size_t states = std::size_t{1} << m.n_visible();
  Vector neg_f(states);
  for (std::size_t s = 0; s < states; ++s) neg_f[s] = -free_energy(m, state_vector(s, m.n_visible()));
  return log_sum_exp(neg_f);
}

double exact_mean_log_likelihood(const Rbm& m, const Matrix& data) {
  if (data.rows() == 0) throw ArgumentError("exact_mean_log_likelihood: empty data");
  const double log_z = exact_log_partition(m);
  double acc = 0.0;
  for (std::size_t r = 0; r < data.rows(); ++r) acc += -free_energy(m, data.row(r)) - log_z;
  return acc / static_cast<double>(data.rows());
}

void CdConfig::validate() const {
  if (k < 1) throw ArgumentError("CdConfig: k must be at least 1");
  if (!(learning_rate > 0.0)) throw ArgumentError("CdConfig: learning_rate must be positive");
  if (minibatch_size < 1) throw ArgumentError("CdConfig: minibatch_size must be positive");
  if (!(weight_init_scale > 0.0)) throw ArgumentError("CdConfig: weight_init_scale must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("CdConfig: momentum must be in [0,1)");
}

CdVelocity CdVelocity::zeros_like(const Rbm& m) {
  return {Matrix(m.n_hidden(), m.n_visible()), Vector(m.n_visible(), 0.0),
          Vector(m.n_hidden(), 0.0)};
}

Rbm cd_update(const Rbm& m, const Matrix& batch, const CdConfig& cfg, Prng& rng,
              CdVelocity* velocity) {
  if (cfg.k < 1) throw ArgumentError("cd_update: k must be at least 1");
  check_length("cd_update", m.n_visible(), batch.cols());
  const std::size_t n = batch.rows();
  if (n == 0) return m;
  const std::size_t nh = m.n_hidden();
  const std::size_t nv = m.n_visible();
  const bool binary = m.visible_kind == VisibleKind::binary;

  // Pre-draw the per-row chain noise so the batched math below consumes it
  // in the documented row-major order.
  std::vector<Matrix> hidden_noise(cfg.k, Matrix(n, nh));
  std::vector<Matrix> visible_noise(cfg.k, Matrix(n, nv));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t t = 0; t < cfg.k; ++t) {
      for (double& u : hidden_noise[t].row(r)) u = rng.uniform();
      for (double& u : visible_noise[t].row(r)) u = binary ? rng.uniform() : rng.normal();
    }
  }

  const Matrix positive_hidden = hidden_means(m, batch);
  Matrix hidden_prob = positive_hidden;
  Matrix visible;
  for (std::size_t t = 0; t < cfg.k; ++t) {
    Matrix hidden(n, nh);
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      hidden.values()[i] = hidden_noise[t].values()[i] < hidden_prob.values()[i] ? 1.0 : 0.0;
    }
    visible = visible_means(m, hidden);
    for (std::size_t i = 0; i < visible.size(); ++i) {
      double& x = visible.values()[i];
      const double noise = visible_noise[t].values()[i];
      x = binary ? (noise < x ? 1.0 : 0.0) : x + noise;
    }
    hidden_prob = hidden_means(m, visible);
  }

  const double scale = cfg.learning_rate / static_cast<double>(n);
  Matrix grad_w = kernels::matmul_tn(positive_hidden, batch);
  const Matrix negative_w = kernels::matmul_tn(hidden_prob, visible);
  for (std::size_t i = 0; i < grad_w.size(); ++i) {
    grad_w.values()[i] = scale * (grad_w.values()[i] - negative_w.values()[i]);
  }
  Vector grad_b(nv, 0.0);
  Vector grad_c(nh, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < nv; ++i) grad_b[i] += batch(r, i) - visible(r, i);
    for (std::size_t j = 0; j < nh; ++j) grad_c[j] += positive_hidden(r, j) - hidden_prob(r, j);
  }
  for (double& g : grad_b) g *= scale;
  for (double& g : grad_c) g *= scale;
  check_finite("weights", grad_w.values());
  check_finite("visible_bias", grad_b);
  check_finite("hidden_bias", grad_c);

  Rbm out = m;
  auto apply = [&](std::span<double> params, std::span<const double> step,
                   std::span<double> vel) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (velocity) {
        vel[i] = cfg.momentum * vel[i] + step[i];
        params[i] += vel[i];
      } else {
        params[i] += step[i];
      }
    }
  };
  if (velocity) {
    apply(out.weights.values(), grad_w.values(), velocity->weights.values());
    apply(out.visible_bias, grad_b, velocity->visible_bias);
    apply(out.hidden_bias, grad_c, velocity->hidden_bias);
  } else {
    apply(out.weights.values(), grad_w.values(), {});
    apply(out.visible_bias, grad_b, {});
    apply(out.hidden_bias, grad_c, {});
  }
  return out;
}

double reconstruction_error(const Rbm& m, const Matrix& data) {
  if (data.rows() == 0) return std::numeric_limits<double>::quiet_NaN();
  const Matrix recon = visible_means(m, hidden_means(m, data));
  double acc = 0.0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const double d = recon.values()[i] - data.values()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(data.rows());
}

RbmTrainResult train_rbm(const Matrix& data, std::size_t n_hidden, const CdConfig& cfg, Prng& rng,
                         VisibleKind kind, const Matrix* validation) {
  cfg.validate();
  if (data.rows() == 0) throw ArgumentError("train_rbm: empty training data");
  RbmTrainResult result;
  result.model = Rbm::random(data.cols(), n_hidden, cfg.weight_init_scale, rng, kind);
  if (cfg.init_visible_bias_from_data && kind == VisibleKind::binary) {
    const Vector mean = column_means(data);
    for (std::size_t i = 0; i < mean.size(); ++i) {
      const double p = std::clamp(mean[i], 1e-3, 1.0 - 1e-3);
      result.model.visible_bias[i] = std::log(p / (1.0 - p));
    }
  }

  CdVelocity velocity = CdVelocity::zeros_like(result.model);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = random_permutation(data.rows(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.minibatch_size);
      const Matrix batch =
          gather_rows(data, std::span<const std::size_t>(order).subspan(start, stop - start));
      result.model = cd_update(result.model, batch, cfg, rng, &velocity);
    }
    RbmEpochLog entry;
    entry.epoch = epoch;
    entry.train_reconstruction = reconstruction_error(result.model, data);
    entry.valid_reconstruction = validation ? reconstruction_error(result.model, *validation)
                                            : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(entry.train_reconstruction)) {
      throw NumericError("train_rbm: diverged at epoch " + std::to_string(epoch));
    }
    result.log.push_back(entry);
  }
  return result;
}

}  // namespace deepmix
