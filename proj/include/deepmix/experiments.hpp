#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "deepmix/cae.hpp"
#include "deepmix/dbn.hpp"

namespace deepmix {

using Model = std::variant<Dbn, StackedCae>;

std::size_t model_depth(const Model& model);
std::size_t model_input_dim(const Model& model);
/// "dbn" or "cae"
std::string model_kind(const Model& model);

/// Deterministic encoding to `depth`; depth 0 is the identity.
Matrix encode(const Model& model, const Matrix& x, std::size_t depth);
/**
 * Representation rows at `depth` back to input space. CAE: the decoder stack.
 * DBN: project_down of row i with rng.split(i). Depth 0 is the identity.
 * Results are clipped to [0, 1].
 */
Matrix decode(const Model& model, const Matrix& h, std::size_t depth, const Prng& rng);

struct SampleMeta {
  std::size_t chain = 0;
  std::size_t step = 0;  ///< sampler step index after burn-in
  bool operator==(const SampleMeta&) const = default;
};

struct SampleRun {
  std::string model_id;
  std::size_t depth = 0;
  Matrix inputs;
  std::vector<SampleMeta> meta;
  std::uint64_t seed = 0;
};

struct ChainConfig {
  std::size_t n_chains = 1;
  std::size_t n_samples = 25;  ///< total over all chains
  std::size_t steps_between = 1;
  std::size_t burn_in = 0;
  double noise_std = 0.5;  ///< CAE sampler only

  void validate() const;
};

/**
 * Independent chains at `depth`. Chain c draws from rng.split(c): its start
 * example index from split(0) and its transitions from split(1). Chains start
 * at a random row of `init_pool`; with an empty pool a DBN starts from
 * Bernoulli(0.5) top units and a CAE from Uniform(0, 1) pixels. Sample counts
 * are spread as evenly as possible, earlier chains taking the remainder.
 */
SampleRun run_chains(const Model& model, std::size_t depth, const ChainConfig& cfg,
                     const Matrix& init_pool, const Prng& rng, std::string model_id = {});

/// Indices of the k rows closest to row `query` (itself excluded), nearest first;
/// ties go to the lower index.
std::vector<std::size_t> nearest_neighbors(const Matrix& reps, std::size_t query, std::size_t k);

/// decode((1 - t) h_a + t h_b) for each t; every t shares the same decode stream.
Matrix interpolate_path(const Model& model, std::size_t depth, std::span<const double> x_a,
                        std::span<const double> x_b, std::span<const double> t_grid,
                        const Prng& rng);

enum class NeighborSpace { representation, raw };

enum class ProbeKind { interpolation_path, knn_midpoint, noise_ball };

struct ProbeSpec {
  ProbeKind kind = ProbeKind::knn_midpoint;
  std::vector<std::size_t> k_grid = {1, 10, 50, 100, 200, 500};
  std::vector<double> t_grid = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> sigma_grid = {0.01, 0.05, 0.1, 0.5, 1.0, 5.0};
  std::size_t samples_per_point = 500;
  NeighborSpace space = NeighborSpace::representation;

  void validate() const;
};

struct ProbeBank {
  double parameter = 0.0;  ///< k or sigma
  Matrix samples;
};

/**
 * For each k (grid entry g uses rng.split(g)): draw samples_per_point example
 * indices with replacement, find each one's k-th nearest neighbor in the
 * chosen space, and decode the representation-space midpoint.
 */
std::vector<ProbeBank> knn_midpoint_probe(const Model& model, std::size_t depth,
                                          const Matrix& data, std::span<const std::size_t> k_grid,
                                          std::size_t samples_per_point, const Prng& rng,
                                          NeighborSpace space = NeighborSpace::representation);

/**
 * For each sigma: encode random examples to `depth`, add Normal(0, sigma^2 I),
 * decode. At depth 0 this is clip(x + sigma n) in pixel space.
 */
std::vector<ProbeBank> noise_ball_probe(const Model& model, std::size_t depth, const Matrix& data,
                                        std::span<const double> sigma_grid,
                                        std::size_t samples_per_point, const Prng& rng);

}  // namespace deepmix
