#include <algorithm>
#include <cmath>
#include <numeric>

#include "cae_oracles.hpp"
#include "deepmix/errors.hpp"
#include "deepmix/experiments.hpp"
#include "doctest.h"

using namespace deepmix;

namespace {

StackedCae toy_cae(std::uint64_t seed, std::size_t in = 8) {
  Prng rng(seed);
  StackedCae s;
  s.layers.push_back(oracle::random_cae(in, 5, 0.1, rng, 0.7));
  s.layers.push_back(oracle::random_cae(5, 3, 0.1, rng, 0.7));
  return s;
}

Dbn toy_dbn(std::uint64_t seed, std::size_t in = 8) {
  Prng rng(seed);
  Dbn d;
  d.layers.push_back(Rbm::random(in, 5, 1.0, rng));
  d.layers.push_back(Rbm::random(5, 3, 1.0, rng));
  return d;
}

void check_unit(const Matrix& m) {
  const auto v = m.values();
  CHECK(std::all_of(v.begin(), v.end(), [](double x) { return x >= 0.0 && x <= 1.0; }));
}

}  // namespace

TEST_CASE("run_chains shapes, metadata and reproducibility") {
  const Model cae = toy_cae(1);
  const Model dbn = toy_dbn(2);
  Prng data_rng(3);
  const Matrix pool = oracle::random_matrix(20, 8, data_rng, 0.0, 1.0);

  for (const Model* m : {&cae, &dbn}) {
    const SampleRun fig = run_chains(*m, 2, ChainConfig{}, pool, Prng(4), "toy");
    CHECK(fig.inputs.rows() == 25);
    CHECK(fig.meta.size() == 25);
    CHECK(fig.depth == 2);
    CHECK(fig.model_id == "toy");
    CHECK(fig.seed == Prng(4).key());
    for (std::size_t s = 0; s < 25; ++s) {
      CHECK(fig.meta[s].chain == 0);
      CHECK(fig.meta[s].step == s + 1);
    }
    check_unit(fig.inputs);

    ChainConfig big;
    big.n_chains = 7;
    big.n_samples = 10000;
    big.steps_between = 2;
    big.burn_in = 3;
    const SampleRun bank = run_chains(*m, 1, big, {}, Prng(5));
    CHECK(bank.inputs.rows() == 10000);
    check_unit(bank.inputs);
    std::vector<std::size_t> per_chain(7, 0);
    for (const auto& meta : bank.meta) ++per_chain[meta.chain];
    CHECK(*std::max_element(per_chain.begin(), per_chain.end()) -
              *std::min_element(per_chain.begin(), per_chain.end()) <= 1);
    CHECK(bank.meta[1].step == 4);

    const SampleRun again = run_chains(*m, 1, big, {}, Prng(5));
    CHECK(again.inputs == bank.inputs);
    CHECK(again.meta == bank.meta);
  }
  CHECK_THROWS_AS(run_chains(cae, 0, ChainConfig{}, pool, Prng(1)), ArgumentError);
  CHECK_THROWS_AS(run_chains(cae, 3, ChainConfig{}, pool, Prng(1)), ArgumentError);
  CHECK_THROWS_AS(run_chains(cae, 1, ChainConfig{}, Matrix(3, 7), Prng(1)), ShapeError);
  ChainConfig bad;
  bad.n_chains = 5;
  bad.n_samples = 4;
  CHECK_THROWS_AS(run_chains(cae, 1, bad, pool, Prng(1)), ArgumentError);
}

TEST_CASE("a CAE chain follows the sampler step by step") {
  const StackedCae s = toy_cae(6);
  Prng data_rng(7);
  const Matrix pool = oracle::random_matrix(5, 8, data_rng, 0.0, 1.0);
  ChainConfig cfg;
  cfg.n_samples = 4;
  cfg.steps_between = 2;
  cfg.burn_in = 1;
  const Prng root(8);
  const SampleRun run = run_chains(Model{s}, 2, cfg, pool, root);

  Prng init_rng = root.split(0).split(0);
  Prng step_rng = root.split(0).split(1);
  const auto start = pool.row(init_rng.uniform_index(5));
  Vector x(start.begin(), start.end());
  const CaeSamplerConfig sampler{cfg.noise_std, 1, 1};
  x = sampler_step(s, x, sampler, step_rng);
  for (std::size_t k = 0; k < 4; ++k) {
    x = sampler_step(s, x, sampler, step_rng);
    x = sampler_step(s, x, sampler, step_rng);
    const auto row = run.inputs.row(k);
    CHECK(Vector(row.begin(), row.end()) == x);
  }
}

TEST_CASE("nearest_neighbors examples") {
  const Matrix pts{{0, 0}, {0, 1}, {5, 5}};
  CHECK(nearest_neighbors(pts, 0, 1) == std::vector<std::size_t>{1});
  CHECK(nearest_neighbors(pts, 2, 2) == std::vector<std::size_t>{1, 0});
  CHECK_THROWS_AS(nearest_neighbors(pts, 0, 3), ArgumentError);
  CHECK_THROWS_AS(nearest_neighbors(pts, 0, 0), ArgumentError);
  CHECK_THROWS_AS(nearest_neighbors(pts, 3, 1), ArgumentError);

  const Matrix ties{{0}, {1}, {-1}, {1}};
  CHECK(nearest_neighbors(ties, 0, 3) == std::vector<std::size_t>{1, 2, 3});
}

TEST_CASE("nearest_neighbors agrees with a full sort") {
  Prng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix reps = oracle::random_matrix(100, 10, rng);
    const std::size_t query = rng.uniform_index(100);
    const std::size_t k = 1 + rng.uniform_index(99);
    std::vector<std::size_t> order(100);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> dist(100);
    for (std::size_t j = 0; j < 100; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < 10; ++c) s += (reps(j, c) - reps(query, c)) * (reps(j, c) - reps(query, c));
      dist[j] = s;
    }
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return dist[a] < dist[b]; });
    order.erase(std::find(order.begin(), order.end(), query));
    order.resize(k);
    const auto got = nearest_neighbors(reps, query, k);
    CHECK(got == order);
    CHECK(std::find(got.begin(), got.end(), query) == got.end());
  }
}

TEST_CASE("interpolate_path endpoints and linearity") {
  const Model cae = toy_cae(10);
  const Vector a{0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  const Vector b{1, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3};
  const Vector t{0.0, 0.25, 0.5, 1.0};

  const Matrix raw = interpolate_path(cae, 0, a, b, t, Prng(1));
  CHECK(Vector(raw.row(0).begin(), raw.row(0).end()) == a);
  CHECK(Vector(raw.row(3).begin(), raw.row(3).end()) == b);
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(raw(2, j) == doctest::Approx((a[j] + b[j]) / 2).epsilon(1e-15));
    // affine in t: the 0.25 point sits a quarter of the way along
    CHECK(raw(1, j) == doctest::Approx(a[j] + 0.25 * (b[j] - a[j])).epsilon(1e-14));
  }

  const auto& s = std::get<StackedCae>(cae);
  const Matrix deep = interpolate_path(cae, 2, a, b, t, Prng(1));
  const Vector recon = decode(s, encode(s, a, 2), 2);
  for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(deep(0, j) - recon[j]) <= 1e-12);
  check_unit(deep);

  CHECK_THROWS_AS(interpolate_path(cae, 0, Vector(7), b, t, Prng(1)), ShapeError);
  const Vector bad_t{1.5};
  CHECK_THROWS_AS(interpolate_path(cae, 0, a, b, bad_t, Prng(1)), ArgumentError);

  const Model dbn = toy_dbn(11);
  const Matrix dbn_path = interpolate_path(dbn, 2, a, b, t, Prng(2));
  CHECK(dbn_path == interpolate_path(dbn, 2, a, b, t, Prng(2)));
  check_unit(dbn_path);
}

TEST_CASE("knn_midpoint_probe") {
  const Model cae = toy_cae(12);
  Prng rng(13);
  Matrix data = oracle::random_matrix(30, 8, rng, 0.0, 1.0);

  // duplicated rows: the first neighbor of an example at depth 0 is its twin
  Matrix twins(60, 8);
  for (std::size_t r = 0; r < 60; ++r) std::copy(data.row(r / 2).begin(), data.row(r / 2).end(), twins.row(r).begin());
  const std::vector<std::size_t> one{1};
  const auto banks = knn_midpoint_probe(cae, 0, twins, one, 50, Prng(14));
  REQUIRE(banks.size() == 1);
  for (std::size_t s = 0; s < 50; ++s) {
    bool found = false;
    for (std::size_t r = 0; r < 60 && !found; ++r) found = std::equal(banks[0].samples.row(s).begin(), banks[0].samples.row(s).end(), twins.row(r).begin());
    CHECK(found);
  }

  const std::vector<std::size_t> ks{1, 5, 29};
  const auto deep = knn_midpoint_probe(cae, 2, data, ks, 40, Prng(15));
  REQUIRE(deep.size() == 3);
  for (std::size_t g = 0; g < 3; ++g) {
    CHECK(deep[g].parameter == static_cast<double>(ks[g]));
    CHECK(deep[g].samples.rows() == 40);
    check_unit(deep[g].samples);
  }
  const auto again = knn_midpoint_probe(cae, 2, data, ks, 40, Prng(15));
  CHECK(again[2].samples == deep[2].samples);
  const auto raw_space = knn_midpoint_probe(cae, 2, data, ks, 40, Prng(15), NeighborSpace::raw);
  CHECK(raw_space[0].samples.rows() == 40);

  const std::vector<std::size_t> too_big{30};
  CHECK_THROWS_AS(knn_midpoint_probe(cae, 1, data, too_big, 10, Prng(1)), ArgumentError);

  // midpoint of a known pair at depth 0
  const Matrix pair{{0.0, 0.0, 0, 0, 0, 0, 0, 0}, {1.0, 0.5, 0, 0, 0, 0, 0, 0}};
  const auto mid = knn_midpoint_probe(cae, 0, pair, one, 3, Prng(16));
  for (std::size_t s = 0; s < 3; ++s) {
    CHECK(mid[0].samples(s, 0) == 0.5);
    CHECK(mid[0].samples(s, 1) == 0.25);
  }
}

TEST_CASE("noise_ball_probe") {
  const Model cae = toy_cae(17);
  Prng rng(18);
  const Matrix data = oracle::random_matrix(20, 8, rng, 0.0, 1.0);
  const std::vector<double> sigmas{0.01, 0.5, 5.0};
  const auto deep = noise_ball_probe(cae, 2, data, sigmas, 100, Prng(19));
  REQUIRE(deep.size() == 3);
  for (const auto& b : deep) check_unit(b.samples);
  CHECK(deep.front().parameter == 0.01);
  CHECK(deep.back().parameter == 5.0);

  // small noise stays near the plain reconstruction of the chosen examples
  const auto& s = std::get<StackedCae>(cae);
  Prng pick = Prng(19).split(0).split(0);
  double worst = 0;
  for (std::size_t r = 0; r < 100; ++r) {
    const auto x = data.row(pick.uniform_index(20));
    const Vector recon = decode(s, encode(s, x, 2), 2);
    worst = std::max(worst, std::sqrt(squared_distance(recon, deep[0].samples.row(r))));
  }
  MESSAGE("largest L2 distance from reconstruction at sigma 0.01: " << worst);
  CHECK(worst < 0.05);

  // depth 0 adds pixel noise and clips
  const auto raw = noise_ball_probe(cae, 0, data, sigmas, 100, Prng(20));
  Prng idx = Prng(20).split(2).split(0);
  Prng noise = Prng(20).split(2).split(1);
  for (std::size_t r = 0; r < 100; ++r) {
    const auto x = data.row(idx.uniform_index(20));
    for (std::size_t j = 0; j < 8; ++j) {
      const double want = std::clamp(x[j] + 5.0 * noise.normal(), 0.0, 1.0);
      CHECK(raw[2].samples(r, j) == want);
    }
  }
  const std::vector<double> bad{0.0};
  CHECK_THROWS_AS(noise_ball_probe(cae, 1, data, bad, 10, Prng(1)), ArgumentError);
}

TEST_CASE("probe spec validation") {
  ProbeSpec spec;
  CHECK_NOTHROW(spec.validate());
  CHECK(spec.samples_per_point == 500);
  CHECK(spec.k_grid.back() == 500);
  CHECK(spec.sigma_grid.front() == 0.01);
  CHECK(spec.sigma_grid.back() == 5.0);
  spec.k_grid = {0};
  CHECK_THROWS_AS(spec.validate(), ArgumentError);
  spec = ProbeSpec{};
  spec.t_grid = {-0.1};
  CHECK_THROWS_AS(spec.validate(), ArgumentError);
  spec = ProbeSpec{};
  spec.sigma_grid = {-1};
  CHECK_THROWS_AS(spec.validate(), ArgumentError);
  spec = ProbeSpec{};
  spec.samples_per_point = 0;
  CHECK_THROWS_AS(spec.validate(), ArgumentError);
}

TEST_CASE("model helpers") {
  const Model cae = toy_cae(21);
  const Model dbn = toy_dbn(22);
  CHECK(model_kind(cae) == "cae");
  CHECK(model_kind(dbn) == "dbn");
  CHECK(model_depth(dbn) == 2);
  CHECK(model_input_dim(cae) == 8);
  const Matrix h{{1, 0, 1}, {0, 1, 1}};
  CHECK(decode(dbn, h, 2, Prng(3)) == decode(dbn, h, 2, Prng(3)));
  // row r of a DBN decode uses stream split(r)
  Prng row1 = Prng(3).split(1);
  const Vector v = project_down(std::get<Dbn>(dbn), h.row(1), 2, row1);
  const Matrix dec = decode(dbn, h, 2, Prng(3));
  for (std::size_t j = 0; j < 8; ++j) CHECK(dec(1, j) == v[j]);
}
