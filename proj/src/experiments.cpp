#include "deepmix/experiments.hpp"

#include <algorithm>
#include <utility>

#include "deepmix/errors.hpp"
#include "deepmix/kernels.hpp"

namespace deepmix {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_depth(const Model& model, std::size_t depth, std::size_t min_depth) {
  if (depth < min_depth || depth > model_depth(model)) {
    throw ArgumentError("depth " + std::to_string(depth) + " out of range [" +
                        std::to_string(min_depth) + ", " + std::to_string(model_depth(model)) +
                        "] for " + model_kind(model) + " model");
  }
}

void clip_unit(std::span<double> v) {
  for (double& x : v) x = std::clamp(x, 0.0, 1.0);
}

std::vector<std::size_t> draw_indices(std::size_t count, std::size_t n, Prng rng) {
  std::vector<std::size_t> idx(count);
  for (auto& i : idx) i = rng.uniform_index(n);
  return idx;
}

std::size_t kth_neighbor(std::span<const double> distances, std::size_t self, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(distances.size());
  for (std::size_t j = 0; j < distances.size(); ++j) {
    if (j != self) order.emplace_back(distances[j], j);
  }
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end());
  return order[k - 1].second;
}

}  // namespace

std::size_t model_depth(const Model& model) {
  return std::visit([](const auto& m) { return m.depth(); }, model);
}

std::size_t model_input_dim(const Model& model) {
  return std::visit([](const auto& m) { return m.input_dim(); }, model);
}

std::string model_kind(const Model& model) {
  return std::holds_alternative<Dbn>(model) ? "dbn" : "cae";
}

Matrix encode(const Model& model, const Matrix& x, std::size_t depth) {
  check_depth(model, depth, 0);
  return std::visit([&](const auto& m) { return encode(m, x, depth); }, model);
}

Matrix decode(const Model& model, const Matrix& h, std::size_t depth, const Prng& rng) {
  check_depth(model, depth, 0);
  if (depth == 0) {
    Matrix out = h;
    clip_unit(out.values());
    return out;
  }
  return std::visit(
      Overloaded{
          [&](const StackedCae& s) { return decode(s, h, depth); },
          [&](const Dbn& d) {
            Matrix out(h.rows(), d.input_dim());
            const auto rows = static_cast<std::ptrdiff_t>(h.rows());
#pragma omp parallel for schedule(static)
            for (std::ptrdiff_t r = 0; r < rows; ++r) {
              const auto row = static_cast<std::size_t>(r);
              Prng row_rng = rng.split(row);
              Vector v = project_down(d, h.row(row), depth, row_rng);
              clip_unit(v);
              std::copy(v.begin(), v.end(), out.row(row).begin());
            }
            return out;
          },
      },
      model);
}

void ChainConfig::validate() const {
  if (n_chains < 1 || n_samples < n_chains) {
    throw ArgumentError("ChainConfig: need at least one chain and one sample per chain");
  }
  if (steps_between < 1) throw ArgumentError("ChainConfig: steps_between must be at least 1");
  if (!(noise_std > 0.0)) throw ArgumentError("ChainConfig: noise_std must be positive");
}

SampleRun run_chains(const Model& model, std::size_t depth, const ChainConfig& cfg,
                     const Matrix& init_pool, const Prng& rng, std::string model_id) {
  cfg.validate();
  check_depth(model, depth, 1);
  const std::size_t dim = model_input_dim(model);
  if (init_pool.rows() > 0 && init_pool.cols() != dim) {
    throw ShapeError("run_chains: init pool " + init_pool.shape_string() +
                     " does not match model input " + std::to_string(dim));
  }

  std::vector<std::size_t> offsets(cfg.n_chains + 1, 0);
  for (std::size_t c = 0; c < cfg.n_chains; ++c) {
    const std::size_t share = cfg.n_samples / cfg.n_chains + (c < cfg.n_samples % cfg.n_chains);
    offsets[c + 1] = offsets[c] + share;
  }

  SampleRun run;
  run.model_id = std::move(model_id);
  run.depth = depth;
  run.seed = rng.key();
  run.inputs = Matrix(cfg.n_samples, dim);
  run.meta.resize(cfg.n_samples);

  const Model truncated = std::visit(
      [&](const auto& m) -> Model { return m.truncated(depth); }, model);

  const auto chains = static_cast<std::ptrdiff_t>(cfg.n_chains);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ci = 0; ci < chains; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    const Prng chain_rng = rng.split(c);
    Prng init_rng = chain_rng.split(0);
    Prng step_rng = chain_rng.split(1);
    const std::size_t count = offsets[c + 1] - offsets[c];

    Vector start;
    if (init_pool.rows() > 0) {
      const auto row = init_pool.row(init_rng.uniform_index(init_pool.rows()));
      start.assign(row.begin(), row.end());
    }

    if (const auto* dbn = std::get_if<Dbn>(&truncated)) {
      const DbnChain chain = sample_chain(*dbn, depth, {count, cfg.steps_between, cfg.burn_in},
                                          start, step_rng);
      for (std::size_t s = 0; s < count; ++s) {
        auto dst = run.inputs.row(offsets[c] + s);
        std::copy(chain.inputs.row(s).begin(), chain.inputs.row(s).end(), dst.begin());
        clip_unit(dst);
      }
    } else {
      const auto& stack = std::get<StackedCae>(truncated);
      if (start.empty()) {
        start.resize(dim);
        for (double& x : start) x = init_rng.uniform();
      }
      const CaeSamplerConfig sampler{cfg.noise_std, 1, 1};
      Vector x = std::move(start);
      for (std::size_t step = 0; step < cfg.burn_in; ++step) x = sampler_step(stack, x, sampler, step_rng);
      for (std::size_t s = 0; s < count; ++s) {
        for (std::size_t step = 0; step < cfg.steps_between; ++step) {
          x = sampler_step(stack, x, sampler, step_rng);
        }
        std::copy(x.begin(), x.end(), run.inputs.row(offsets[c] + s).begin());
      }
    }
    for (std::size_t s = 0; s < count; ++s) {
      run.meta[offsets[c] + s] = SampleMeta{c, (s + 1) * cfg.steps_between};
    }
  }
  return run;
}

std::vector<std::size_t> nearest_neighbors(const Matrix& reps, std::size_t query, std::size_t k) {
  if (query >= reps.rows()) throw ArgumentError("nearest_neighbors: query out of range");
  if (k < 1 || k >= reps.rows()) {
    throw ArgumentError("nearest_neighbors: k=" + std::to_string(k) + " must be in [1, " +
                        std::to_string(reps.rows() - 1) + "]");
  }
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(reps.rows() - 1);
  for (std::size_t j = 0; j < reps.rows(); ++j) {
    if (j != query) order.emplace_back(squared_distance(reps.row(query), reps.row(j)), j);
  }
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = order[i].second;
  return out;
}

Matrix interpolate_path(const Model& model, std::size_t depth, std::span<const double> x_a,
                        std::span<const double> x_b, std::span<const double> t_grid,
                        const Prng& rng) {
  check_depth(model, depth, 0);
  const std::size_t dim = model_input_dim(model);
  if (x_a.size() != dim || x_b.size() != dim) {
    throw ShapeError("interpolate_path: endpoints must have length " + std::to_string(dim));
  }
  for (double t : t_grid) {
    if (!(t >= 0.0 && t <= 1.0)) throw ArgumentError("interpolate_path: t outside [0,1]");
  }
  Matrix endpoints(2, dim);
  std::copy(x_a.begin(), x_a.end(), endpoints.row(0).begin());
  std::copy(x_b.begin(), x_b.end(), endpoints.row(1).begin());
  const Matrix ends = encode(model, endpoints, depth);
  Matrix out(t_grid.size(), dim);
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    const double t = t_grid[i];
    Matrix h(1, ends.cols());
    for (std::size_t j = 0; j < ends.cols(); ++j) h(0, j) = (1.0 - t) * ends(0, j) + t * ends(1, j);
    const Matrix x = decode(model, h, depth, rng);
    std::copy(x.row(0).begin(), x.row(0).end(), out.row(i).begin());
  }
  return out;
}

void ProbeSpec::validate() const {
  if (samples_per_point < 1) throw ArgumentError("ProbeSpec: samples_per_point must be positive");
  for (std::size_t k : k_grid) {
    if (k < 1) throw ArgumentError("ProbeSpec: k must be at least 1");
  }
  for (double t : t_grid) {
    if (!(t >= 0.0 && t <= 1.0)) throw ArgumentError("ProbeSpec: t outside [0,1]");
  }
  for (double s : sigma_grid) {
    if (!(s > 0.0)) throw ArgumentError("ProbeSpec: sigma must be positive");
  }
}

std::vector<ProbeBank> knn_midpoint_probe(const Model& model, std::size_t depth,
                                          const Matrix& data, std::span<const std::size_t> k_grid,
                                          std::size_t samples_per_point, const Prng& rng,
                                          NeighborSpace space) {
  check_depth(model, depth, 0);
  if (samples_per_point < 1) throw ArgumentError("knn_midpoint_probe: samples_per_point must be positive");
  for (std::size_t k : k_grid) {
    if (k < 1 || k >= data.rows()) {
      throw ArgumentError("knn_midpoint_probe: k=" + std::to_string(k) +
                          " outside [1, dataset size - 1]");
    }
  }
  const Matrix reps = encode(model, data, depth);
  const Matrix& search = space == NeighborSpace::representation ? reps : data;

  std::vector<ProbeBank> banks;
  for (std::size_t g = 0; g < k_grid.size(); ++g) {
    const std::size_t k = k_grid[g];
    const Prng grid_rng = rng.split(g);
    const auto chosen = draw_indices(samples_per_point, data.rows(), grid_rng.split(0));
    const Matrix distances = kernels::sq_distances(gather_rows(search, chosen), search);

    Matrix mid(samples_per_point, reps.cols());
    const auto count = static_cast<std::ptrdiff_t>(samples_per_point);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t si = 0; si < count; ++si) {
      const auto s = static_cast<std::size_t>(si);
      const std::size_t other = kth_neighbor(distances.row(s), chosen[s], k);
      for (std::size_t j = 0; j < reps.cols(); ++j) {
        mid(s, j) = 0.5 * (reps(chosen[s], j) + reps(other, j));
      }
    }
    banks.push_back({static_cast<double>(k), decode(model, mid, depth, grid_rng.split(1))});
  }
  return banks;
}

std::vector<ProbeBank> noise_ball_probe(const Model& model, std::size_t depth, const Matrix& data,
                                        std::span<const double> sigma_grid,
                                        std::size_t samples_per_point, const Prng& rng) {
  check_depth(model, depth, 0);
  if (samples_per_point < 1) throw ArgumentError("noise_ball_probe: samples_per_point must be positive");
  if (data.rows() == 0) throw ArgumentError("noise_ball_probe: empty dataset");
  for (double s : sigma_grid) {
    if (!(s > 0.0)) throw ArgumentError("noise_ball_probe: sigma must be positive");
  }

  std::vector<ProbeBank> banks;
  for (std::size_t g = 0; g < sigma_grid.size(); ++g) {
    const double sigma = sigma_grid[g];
    const Prng grid_rng = rng.split(g);
    const auto chosen = draw_indices(samples_per_point, data.rows(), grid_rng.split(0));
    Matrix reps = encode(model, gather_rows(data, chosen), depth);
    Prng noise_rng = grid_rng.split(1);
    for (double& h : reps.values()) h += sigma * noise_rng.normal();
    banks.push_back({sigma, decode(model, reps, depth, grid_rng.split(2))});
  }
  return banks;
}

}  // namespace deepmix
