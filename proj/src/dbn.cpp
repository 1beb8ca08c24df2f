#include "deepmix/dbn.hpp"

#include "deepmix/errors.hpp"

namespace deepmix {

namespace {

void check_level(const Dbn& d, std::size_t level, std::size_t min_level) {
  if (level < min_level || level > d.depth()) {
    throw ArgumentError("level " + std::to_string(level) + " out of range [" +
                        std::to_string(min_level) + ", " + std::to_string(d.depth()) + "]");
  }
}

}  // namespace

std::size_t Dbn::width(std::size_t level) const {
  if (level > depth()) throw ArgumentError("Dbn::width: level out of range");
  return level == 0 ? input_dim() : layers[level - 1].n_hidden();
}

Dbn Dbn::truncated(std::size_t level) const {
  check_level(*this, level, 1);
  return Dbn{std::vector<Rbm>(layers.begin(), layers.begin() + static_cast<std::ptrdiff_t>(level))};
}

void Dbn::validate() const {
  if (layers.empty()) throw ArgumentError("Dbn: at least one layer required");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].validate();
    if (i > 0 && layers[i].visible_kind != VisibleKind::binary) {
      throw ArgumentError("Dbn: only layer 0 may have gaussian visible units");
    }
    if (i + 1 < layers.size() && layers[i].n_hidden() != layers[i + 1].n_visible()) {
      throw ShapeError("Dbn: layer " + std::to_string(i) + " hidden size does not match layer " +
                       std::to_string(i + 1) + " visible size");
    }
  }
}

DbnTrainResult train_greedy(const Split& split, std::span<const std::size_t> layer_sizes,
                            std::span<const CdConfig> configs, Prng& rng,
                            VisibleKind input_kind) {
  if (layer_sizes.size() < 2) throw ArgumentError("train_greedy: need input and one hidden size");
  if (layer_sizes.front() != split.train.dim()) {
    throw ShapeError("train_greedy: input size " + std::to_string(layer_sizes.front()) +
                     " does not match data dimension " + std::to_string(split.train.dim()));
  }
  const std::size_t n_layers = layer_sizes.size() - 1;
  if (configs.size() != n_layers && configs.size() != 1) {
    throw ArgumentError("train_greedy: need one CdConfig per layer (or one shared)");
  }

  DbnTrainResult result;
  Matrix inputs = split.train.examples;
  Matrix valid = split.valid.examples;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const CdConfig& cfg = configs.size() == 1 ? configs[0] : configs[i];
    Prng layer_rng = rng.split(i);
    const VisibleKind kind = i == 0 ? input_kind : VisibleKind::binary;
    auto trained = train_rbm(inputs, layer_sizes[i + 1], cfg, layer_rng, kind,
                             valid.rows() > 0 ? &valid : nullptr);
    if (i + 1 < n_layers) {
      inputs = hidden_means(trained.model, inputs);
      if (valid.rows() > 0) valid = hidden_means(trained.model, valid);
    }
    result.model.layers.push_back(std::move(trained.model));
    result.logs.push_back(std::move(trained.log));
  }
  return result;
}

Vector encode(const Dbn& d, std::span<const double> x, std::size_t level) {
  check_level(d, level, 0);
  Vector h(x.begin(), x.end());
  for (std::size_t i = 0; i < level; ++i) h = hidden_means(d.layers[i], h);
  return h;
}

Matrix encode(const Dbn& d, const Matrix& x, std::size_t level) {
  check_level(d, level, 0);
  Matrix h = x;
  for (std::size_t i = 0; i < level; ++i) h = hidden_means(d.layers[i], h);
  return h;
}

Vector project_down(const Dbn& d, std::span<const double> top_state, std::size_t level,
                    Prng& rng) {
  check_level(d, level, 1);
  if (top_state.size() != d.width(level)) {
    throw ShapeError("project_down: state length " + std::to_string(top_state.size()) +
                     " does not match level width " + std::to_string(d.width(level)));
  }
  Vector s(top_state.begin(), top_state.end());
  for (std::size_t i = level - 1; i >= 1; --i) s = sample_visible(d.layers[i], s, rng);
  return visible_means(d.layers[0], s);
}

DbnChain sample_chain(const Dbn& d, std::size_t level, const DbnChainConfig& cfg,
                      std::span<const double> init, Prng& rng) {
  check_level(d, level, 1);
  if (cfg.n_samples < 1 || cfg.steps_between < 1) {
    throw ArgumentError("sample_chain: n_samples and steps_between must be at least 1");
  }
  const Rbm& top = d.layers[level - 1];
  Prng chain_rng = rng.split(0);
  Prng projection_rng = rng.split(1);

  Vector visible;
  if (init.empty()) {
    Prng init_rng = rng.split(2);
    visible.resize(top.n_visible());
    for (double& v : visible) v = init_rng.bernoulli(0.5) ? 1.0 : 0.0;
  } else {
    if (init.size() != d.input_dim()) throw ShapeError("sample_chain: init has wrong length");
    visible = encode(d, init, level - 1);
  }

  DbnChain out{Matrix(cfg.n_samples, d.input_dim()), Matrix(cfg.n_samples, top.n_hidden())};
  for (std::size_t step = 0; step < cfg.burn_in; ++step) {
    visible = gibbs_step(top, visible, chain_rng).visible;
  }
  for (std::size_t kept = 0; kept < cfg.n_samples; ++kept) {
    GibbsState state;
    for (std::size_t step = 0; step < cfg.steps_between; ++step) {
      state = gibbs_step(top, visible, chain_rng);
      visible = state.visible;
    }
    const Vector raw = project_down(d, state.hidden, level, projection_rng);
    std::copy(raw.begin(), raw.end(), out.inputs.row(kept).begin());
    std::copy(state.hidden.begin(), state.hidden.end(), out.top_states.row(kept).begin());
  }
  return out;
}

}  // namespace deepmix
