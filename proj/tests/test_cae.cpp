#include <cmath>
#include <functional>

#include "cae_oracles.hpp"
#include "deepmix/errors.hpp"
#include "doctest.h"

using namespace deepmix;

namespace {

Vector to_vec(std::span<const double> s) { return Vector(s.begin(), s.end()); }

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Central differences of mean_loss over every parameter; returns the worst relative error.
double gradient_check(const Cae& m, const Matrix& batch, double step = 1e-5) {
  const CaeGradient g = loss_gradient(m, batch);
  double worst = 0;
  auto probe = [&](std::function<double&(Cae&)> param, double analytic) {
    Cae plus = m, minus = m;
    param(plus) += step;
    param(minus) -= step;
    const double numeric = (mean_loss(plus, batch).total - mean_loss(minus, batch).total) / (2 * step);
    worst = std::max(worst, relative_error(analytic, numeric));
  };
  for (std::size_t i = 0; i < m.weights.size(); ++i)
    probe([i](Cae& c) -> double& { return c.weights.values()[i]; }, g.weights.values()[i]);
  for (std::size_t i = 0; i < m.hidden_bias.size(); ++i)
    probe([i](Cae& c) -> double& { return c.hidden_bias[i]; }, g.hidden_bias[i]);
  for (std::size_t i = 0; i < m.visible_bias.size(); ++i)
    probe([i](Cae& c) -> double& { return c.visible_bias[i]; }, g.visible_bias[i]);
  return worst;
}

StackedCae random_stack(Prng& rng) {
  StackedCae s;
  s.layers.push_back(oracle::random_cae(6, 4, 0.1, rng));
  s.layers.push_back(oracle::random_cae(4, 3, 0.1, rng));
  return s;
}

}  // namespace

TEST_CASE("encode and decode examples") {
  const Cae zero = Cae::zeros(5, 3, 0.1);
  const Vector x{0.2, 0.4, 0.6, 0.8, 1.0};
  for (double h : encode(zero, x)) CHECK(h == 0.5);
  for (double r : decode(zero, encode(zero, x))) CHECK(r == 0.5);

  Prng rng(1);
  const Cae m = oracle::random_cae(5, 3, 0.1, rng);
  const Vector h = encode(m, x);
  const Vector want_h = oracle::cae_encode(m, x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(h[i] - want_h[i]) <= 1e-12);
  const Vector r = decode(m, h);
  const Vector want_r = oracle::cae_decode(m, want_h);
  for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(r[j] - want_r[j]) <= 1e-12);

  const Matrix batch{{0.2, 0.4, 0.6, 0.8, 1.0}, {0, 0, 1, 1, 0.5}};
  const Matrix hb = encode(m, batch);
  for (std::size_t i = 0; i < 3; ++i) CHECK(hb(0, i) == doctest::Approx(h[i]).epsilon(1e-14));
  CHECK_THROWS_AS(encode(m, Vector(4)), ShapeError);
  CHECK_THROWS_AS(decode(m, Vector(5)), ShapeError);
}

TEST_CASE("jacobian examples") {
  const Vector x{0.1, 0.5, 0.9, 0.3};
  const Matrix zero_j = jacobian(Cae::zeros(4, 3, 0.1), x);
  for (double v : zero_j.values()) CHECK(v == 0.0);
  CHECK(loss(Cae::zeros(4, 3, 0.1), x).contraction == 0.0);

  Prng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const Cae m = oracle::random_cae(4, 3, 0.1, rng);
    const Matrix j = jacobian(m, x);
    const double step = 1e-5;
    for (std::size_t k = 0; k < 4; ++k) {
      Vector xp = x, xm = x;
      xp[k] += step;
      xm[k] -= step;
      const Vector hp = encode(m, xp), hm = encode(m, xm);
      for (std::size_t i = 0; i < 3; ++i) {
        const double fd = (hp[i] - hm[i]) / (2 * step);
        CHECK(std::abs(j(i, k) - fd) <= 1e-6);
        if (std::abs(fd) > 1e-3) CHECK(relative_error(j(i, k), fd) < 1e-4);
      }
    }
    CHECK(oracle::max_abs_diff(j, oracle::cae_jacobian(m, x)) <= 1e-15);
  }
}

TEST_CASE("loss examples") {
  Prng rng(3);
  Cae m = oracle::random_cae(4, 3, 0.0, rng);
  const Vector x{0.0, 1.0, 0.25, 0.75};
  const CaeLoss plain = loss(m, x);
  CHECK(plain.total == plain.reconstruction);

  const Vector half(7, 0.5);
  CHECK(loss(Cae::zeros(7, 2, 0.3), half).reconstruction == doctest::Approx(7 * std::log(2.0)).epsilon(1e-14));

  m.alpha = 0.7;
  const CaeLoss full = loss(m, x);
  CHECK(std::abs(full.total - oracle::cae_total_loss(m, x)) <= 1e-12);
  CHECK(full.total == doctest::Approx(full.reconstruction + 0.7 * full.contraction).epsilon(1e-15));
}

TEST_CASE("cross-entropy clamps saturated reconstructions") {
  Cae m = Cae::zeros(2, 1, 0.0);
  m.visible_bias = {800.0, -800.0};
  const CaeLoss l = loss(m, Vector{0.0, 1.0});
  CHECK(std::isfinite(l.total));
  CHECK(l.reconstruction == doctest::Approx(-2 * std::log(kProbClamp)).epsilon(1e-6));
}

TEST_CASE("mean_loss averages per-example losses") {
  Prng rng(4);
  const Cae m = oracle::random_cae(4, 3, 0.2, rng);
  const Matrix batch{{0.1, 0.2, 0.3, 0.4}, {1, 0, 1, 0}, {0.5, 0.5, 0.5, 0.5}};
  double total = 0;
  for (std::size_t r = 0; r < 3; ++r) total += oracle::cae_total_loss(m, to_vec(batch.row(r)));
  CHECK(mean_loss(m, batch).total == doctest::Approx(total / 3).epsilon(1e-13));
}

TEST_CASE("symmetric zero model has zero weight gradient") {
  const Matrix batch(5, 6, 0.5);
  const CaeGradient g = loss_gradient(Cae::zeros(6, 4, 0.0), batch);
  for (double v : g.weights.values()) CHECK(v == 0.0);
}

TEST_CASE("loss_gradient matches central differences") {
  Prng rng(5);
  for (double alpha : {0.0, 0.1, 1.0}) {
    for (int trial = 0; trial < 3; ++trial) {
      const Cae m = oracle::random_cae(6, 4, alpha, rng);
      const Matrix batch = oracle::random_matrix(3, 6, rng, 0.0, 1.0);
      CHECK(gradient_check(m, batch) < 1e-4);
    }
  }
}

TEST_CASE("gradient is linear in alpha") {
  Prng rng(6);
  Cae m = oracle::random_cae(6, 4, 0.0, rng);
  const Matrix batch = oracle::random_matrix(4, 6, rng, 0.0, 1.0);
  auto grad_at = [&](double alpha) {
    m.alpha = alpha;
    return loss_gradient(m, batch);
  };
  const CaeGradient g0 = grad_at(0.0), g1 = grad_at(1.0), g2 = grad_at(2.0);
  for (std::size_t i = 0; i < g0.weights.size(); ++i) {
    const double lhs = g2.weights.values()[i] - g0.weights.values()[i];
    const double rhs = 2 * (g1.weights.values()[i] - g0.weights.values()[i]);
    CHECK(std::abs(lhs - rhs) <= 1e-10);
  }
  for (std::size_t i = 0; i < g0.hidden_bias.size(); ++i)
    CHECK(std::abs((g2.hidden_bias[i] - g0.hidden_bias[i]) - 2 * (g1.hidden_bias[i] - g0.hidden_bias[i])) <= 1e-10);
  for (std::size_t i = 0; i < g0.visible_bias.size(); ++i)
    CHECK(g2.visible_bias[i] == g0.visible_bias[i]);
}

TEST_CASE("non-finite gradients name the block") {
  Cae m = Cae::zeros(2, 1, 0.1);
  m.weights(0, 0) = std::nan("");
  try {
    loss_gradient(m, Matrix{{0.5, 0.5}});
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("weights") != std::string::npos);
  }
}

TEST_CASE("training regression bound and null training") {
  const Dataset data = make_synthetic_manifold(10, 7);
  const Split s = split(data, {1.0, 0.0, 0.0}, 1);
  const std::vector<std::size_t> sizes{256, 20};
  Prng rng(8);
  const CaeTrainResult fit = train(s, sizes, 0.0, CaeTrainConfig{0.05, 10, 300}, rng);
  Prng init_rng = Prng(8).split(0);
  const Cae init = Cae::glorot(256, 20, 0.0, init_rng);
  const double before = mean_loss(init, s.train.examples).reconstruction;
  const double after = mean_loss(fit.model.layers[0], s.train.examples).reconstruction;
  CHECK(after <= 0.5 * before);
  CHECK(fit.log.size() == 300);

  Prng zero_rng(8);
  const CaeTrainResult untrained = train(s, sizes, 0.0, CaeTrainConfig{0.05, 10, 0}, zero_rng);
  CHECK(untrained.model.layers[0].weights == init.weights);
  CHECK(untrained.model.layers[0].hidden_bias == init.hidden_bias);
  CHECK(untrained.log.empty());
}

TEST_CASE("glorot initialization range") {
  Prng rng(9);
  const Cae m = Cae::glorot(30, 20, 0.1, rng);
  const double r = 4 * std::sqrt(6.0 / 50.0);
  double max_abs = 0;
  for (double w : m.weights.values()) max_abs = std::max(max_abs, std::abs(w));
  CHECK(max_abs <= r);
  CHECK(max_abs > 0.9 * r);
  for (double b : m.hidden_bias) CHECK(b == 0.0);
}

TEST_CASE("stacks of MNIST size are accepted and layers train on encodings") {
  Prng rng(10);
  Dataset data;
  data.examples = oracle::random_matrix(3, 784, rng, 0.0, 1.0);
  const Split s = split(data, {1.0, 0.0, 0.0}, 1);
  const std::vector<std::size_t> sizes{784, 1000, 1000};
  const CaeTrainResult r = train(s, sizes, 0.1, CaeTrainConfig{0.01, 64, 0}, rng);
  CHECK(r.model.width(1) == 1000);
  CHECK(r.model.width(2) == 1000);

  const Dataset small = make_synthetic_manifold(40, 2);
  const Split t = split(small, {1.0, 0.0, 0.0}, 1);
  const std::vector<std::size_t> two{256, 12, 6};
  Prng a(11);
  const CaeTrainResult stacked = train(t, two, 0.1, CaeTrainConfig{0.01, 8, 3}, a);
  REQUIRE(stacked.log.size() == 6);
  const CaeEpochLog& last = stacked.log.back();
  CHECK(last.layer == 1);
  CHECK(last.epoch == 2);
  const Matrix encoded = encode(stacked.model.layers[0], t.train.examples);
  CHECK(last.train.total == doctest::Approx(mean_loss(stacked.model.layers[1], encoded).total).epsilon(1e-13));
  CHECK(std::isnan(last.valid.total));
}

TEST_CASE("contraction shrinks as alpha grows") {
  const Dataset data = make_synthetic_manifold(400, 12);
  const Split s = split(data, {1.0, 0.0, 0.0}, 2);
  const std::vector<std::size_t> sizes{256, 40};
  std::vector<double> contraction;
  for (double alpha : {0.01, 0.1, 1.0}) {
    Prng rng(13);
    const CaeTrainResult r = train(s, sizes, alpha, CaeTrainConfig{0.01, 32, 30}, rng);
    contraction.push_back(mean_loss(r.model.layers[0], s.train.examples).contraction);
  }
  CHECK(contraction[1] <= 1.05 * contraction[0]);
  CHECK(contraction[2] <= 1.05 * contraction[1]);
}

TEST_CASE("stack encode and decode compose layers") {
  Prng rng(14);
  const StackedCae s = random_stack(rng);
  const Vector x{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  const Vector h = oracle::cae_encode(s.layers[1], oracle::cae_encode(s.layers[0], x));
  const Vector got = encode(s, x, 2);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(got[i] - h[i]) <= 1e-12);
  CHECK(encode(s, x, 0) == x);
  const Vector r = oracle::cae_decode(s.layers[0], oracle::cae_decode(s.layers[1], h));
  const Vector back = decode(s, got, 2);
  for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(back[j] - r[j]) <= 1e-12);
  CHECK_THROWS_AS(encode(s, x, 3), ArgumentError);
  CHECK_NOTHROW(s.validate());
  StackedCae bad = s;
  bad.layers[1] = Cae::zeros(5, 3, 0.1);
  CHECK_THROWS_AS(bad.validate(), ShapeError);
}

TEST_CASE("hidden perturbation equals the explicit J J^T eps") {
  Prng rng(15);
  const StackedCae s = random_stack(rng);
  const Vector x{0.9, 0.1, 0.5, 0.3, 0.7, 0.2};
  const Vector eps = oracle::random_vector(3, rng);

  // composed Jacobian J = J2 J1, then J (J^T eps)
  const Matrix j1 = oracle::cae_jacobian(s.layers[0], x);
  const Matrix j2 = oracle::cae_jacobian(s.layers[1], oracle::cae_encode(s.layers[0], x));
  const Matrix j = oracle::matmul(j2, j1);
  Vector jt_eps(6, 0.0);
  for (std::size_t k = 0; k < 6; ++k)
    for (std::size_t i = 0; i < 3; ++i) jt_eps[k] += j(i, k) * eps[i];
  Vector want(3, 0.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 6; ++k) want[i] += j(i, k) * jt_eps[k];

  const Vector got = hidden_perturbation(s, x, eps);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);

  // one layer: J J^T eps with the layer's own Jacobian
  const StackedCae single{{s.layers[0]}};
  const Vector eps4 = oracle::random_vector(4, rng);
  const Vector one = hidden_perturbation(single, x, eps4);
  for (std::size_t i = 0; i < 4; ++i) {
    double acc = 0;
    for (std::size_t k = 0; k < 6; ++k) {
      double t = 0;
      for (std::size_t l = 0; l < 4; ++l) t += j1(l, k) * eps4[l];
      acc += j1(i, k) * t;
    }
    CHECK(std::abs(one[i] - acc) <= 1e-12);
  }
}

TEST_CASE("sampler_step examples") {
  Prng rng(16);
  const StackedCae s = random_stack(rng);
  const Vector x{0.9, 0.1, 0.5, 0.3, 0.7, 0.2};

  CaeSamplerConfig quiet;
  quiet.noise_std = 1e-14;
  Prng a(17);
  const Vector almost = sampler_step(s, x, quiet, a);
  const Vector recon = decode(s, encode(s, x, 2), 2);
  for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(almost[j] - recon[j]) <= 1e-12);

  StackedCae zero{{Cae::zeros(6, 4, 0.1)}};
  Prng b(18);
  for (double v : sampler_step(zero, x, CaeSamplerConfig{}, b)) CHECK(v == 0.5);

  // one normal per top unit
  Prng c(19), d(19);
  sampler_step(s, x, CaeSamplerConfig{}, c);
  for (int i = 0; i < 3; ++i) d.normal();
  CHECK(c.next_u64() == d.next_u64());

  // single-layer overload agrees with a one-layer stack
  Prng e(20), f(20);
  CHECK(sampler_step(s.layers[0], x, CaeSamplerConfig{}, e) ==
        sampler_step(StackedCae{{s.layers[0]}}, x, CaeSamplerConfig{}, f));
}

TEST_CASE("sampler chains stay in the open unit interval and replay") {
  Prng rng(21);
  const StackedCae s = random_stack(rng);
  CaeSamplerConfig cfg;
  cfg.noise_std = 2.0;
  Vector x{0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
  Vector y = x;
  Prng a(22), b(22);
  for (int step = 0; step < 200; ++step) {
    x = sampler_step(s, x, cfg, a);
    y = sampler_step(s, y, cfg, b);
    for (double v : x) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
  CHECK(x == y);
  CaeSamplerConfig bad;
  bad.noise_std = 0.0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}
