#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "deepmix/data.hpp"
#include "deepmix/rbm.hpp"

namespace deepmix {

/// Greedily stacked RBMs; layer i's hidden layer is layer i+1's visible layer.
struct Dbn {
  std::vector<Rbm> layers;

  [[nodiscard]] std::size_t depth() const { return layers.size(); }
  [[nodiscard]] std::size_t input_dim() const { return layers.front().n_visible(); }
  /// Size of the representation at `level` (0 = raw input).
  [[nodiscard]] std::size_t width(std::size_t level) const;
  /// The first `level` layers.
  [[nodiscard]] Dbn truncated(std::size_t level) const;

  void validate() const;
};

struct DbnTrainResult {
  Dbn model;
  std::vector<std::vector<RbmEpochLog>> logs;  ///< one per layer
};

/**
 * Layer 0 is trained on split.train; layer i > 0 on the mean activations of
 * the trained layers below. layer_sizes includes the input width. Layer i
 * draws from rng.split(i), so a one-layer stack equals train_rbm with
 * rng.split(0).
 */
DbnTrainResult train_greedy(const Split& split, std::span<const std::size_t> layer_sizes,
                            std::span<const CdConfig> configs, Prng& rng,
                            VisibleKind input_kind = VisibleKind::binary);

/// Deterministic mean-field encoding through the first `level` layers.
Vector encode(const Dbn& d, std::span<const double> x, std::size_t level);
Matrix encode(const Dbn& d, const Matrix& x, std::size_t level);

/**
 * Maps a state of the level-`level` representation to input space: binary
 * samples through P(v|h) of layers level-1 .. 1, then E[v|h] of layer 0.
 */
Vector project_down(const Dbn& d, std::span<const double> top_state, std::size_t level,
                    Prng& rng);

struct DbnChainConfig {
  std::size_t n_samples = 25;
  std::size_t steps_between = 1;
  std::size_t burn_in = 0;
};

struct DbnChain {
  Matrix inputs;      ///< n_samples x input_dim, mean-field decodings
  Matrix top_states;  ///< n_samples x width(level), sampled hidden states
};

/**
 * Gibbs chain in the RBM at `level` (layers[level - 1]).
 *
 * `init` is a raw-input vector encoded up to the top RBM's visible layer; when
 * empty the top visible units start at Bernoulli(0.5). Chain transitions draw
 * from rng.split(0), projections from rng.split(1), random init from
 * rng.split(2). After burn_in steps, every steps_between-th step is retained.
 */
DbnChain sample_chain(const Dbn& d, std::size_t level, const DbnChainConfig& cfg,
                      std::span<const double> init, Prng& rng);

}  // namespace deepmix
