#include "commands.hpp"

#include <fmt/format.h>

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <ostream>
#include <set>

#include "deepmix/data.hpp"
#include "deepmix/eval.hpp"
#include "deepmix/experiments.hpp"
#include "deepmix/model_io.hpp"

namespace deepmix::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

/// Anything the user can fix by changing arguments or the config; exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const std::set<std::size_t> kMixingWindows = {10, 20, 100};
constexpr double kMinNoiseSigma = 0.01;
constexpr double kMaxNoiseSigma = 5.0;

// Every config key is also a command-line option of the same name; the
// command line wins.
struct Settings {
  int config_version = 0;

  std::string dataset = "synthetic";
  std::string data_dir;
  std::size_t synthetic_n = 2000;
  std::uint64_t synthetic_seed = 1;
  std::size_t n_train = 1600;
  std::size_t n_valid = 200;
  std::size_t n_test = 200;
  std::uint64_t split_seed = 1;

  std::string model = "cae";
  std::vector<std::size_t> layers;
  std::size_t epochs = 10;
  double cae_alpha = 0.1;
  double cae_learning_rate = 0.01;
  std::size_t cae_minibatch_size = 64;
  std::size_t rbm_k = 1;
  double rbm_learning_rate = 0.05;
  std::size_t rbm_minibatch_size = 64;
  double rbm_momentum = 0.5;
  double rbm_weight_init_scale = 0.01;
  bool rbm_visible_bias_from_data = false;

  std::size_t n_chains = 1;
  std::size_t n_samples = 25;
  std::size_t steps_between = 1;
  std::size_t burn_in = 0;
  double noise_std = 0.5;
  std::string chain_init = "data";

  std::vector<std::size_t> mixing_windows = {10, 20, 100};

  std::vector<std::size_t> k_grid = ProbeSpec{}.k_grid;
  std::vector<double> sigma_grid = ProbeSpec{}.sigma_grid;
  std::vector<double> t_grid = ProbeSpec{}.t_grid;
  std::size_t samples_per_point = 500;
  std::string neighbor_space = "representation";
  double bandwidth = 0.0;  ///< 0 selects on the validation split

  std::size_t ft_epochs = 10;
  double ft_learning_rate = 0.1;
  std::size_t ft_minibatch_size = 64;

  std::string probe_loss = "hinge";
  std::size_t probe_epochs = 20;
  double probe_learning_rate = 0.01;
  double probe_regularization = 1e-4;
  std::size_t probe_minibatch_size = 64;

  // Common flags; the seed has no default.
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> depth;
};

void add_config_options(CLI::App& app, Settings& s) {
  app.add_option("--config_version", s.config_version, "Config format version (must be 1)")
      ->required();

  app.add_option("--dataset", s.dataset, "mnist or synthetic")
      ->check(CLI::IsMember({"mnist", "synthetic"}));
  app.add_option("--data_dir", s.data_dir, "Directory with the MNIST IDX files");
  app.add_option("--synthetic_n", s.synthetic_n, "Examples generated for the synthetic dataset");
  app.add_option("--synthetic_seed", s.synthetic_seed);
  app.add_option("--n_train", s.n_train);
  app.add_option("--n_valid", s.n_valid);
  app.add_option("--n_test", s.n_test);
  app.add_option("--split_seed", s.split_seed);

  app.add_option("--model", s.model, "cae or dbn")->check(CLI::IsMember({"cae", "dbn"}));
  app.add_option("--layers", s.layers, "Layer sizes including the input width")->delimiter(',');
  app.add_option("--epochs", s.epochs, "Epochs per layer");
  app.add_option("--cae_alpha", s.cae_alpha);
  app.add_option("--cae_learning_rate", s.cae_learning_rate);
  app.add_option("--cae_minibatch_size", s.cae_minibatch_size);
  app.add_option("--rbm_k", s.rbm_k);
  app.add_option("--rbm_learning_rate", s.rbm_learning_rate);
  app.add_option("--rbm_minibatch_size", s.rbm_minibatch_size);
  app.add_option("--rbm_momentum", s.rbm_momentum);
  app.add_option("--rbm_weight_init_scale", s.rbm_weight_init_scale);
  app.add_option("--rbm_visible_bias_from_data", s.rbm_visible_bias_from_data);

  app.add_option("--n_chains", s.n_chains);
  app.add_option("--n_samples", s.n_samples, "Samples over all chains");
  app.add_option("--steps_between", s.steps_between);
  app.add_option("--burn_in", s.burn_in);
  app.add_option("--noise_std", s.noise_std, "CAE sampler noise");
  app.add_option("--chain_init", s.chain_init, "data or random")
      ->check(CLI::IsMember({"data", "random"}));

  app.add_option("--mixing_windows", s.mixing_windows)->delimiter(',');

  app.add_option("--k_grid", s.k_grid)->delimiter(',');
  app.add_option("--sigma_grid", s.sigma_grid)->delimiter(',');
  app.add_option("--t_grid", s.t_grid)->delimiter(',');
  app.add_option("--samples_per_point", s.samples_per_point);
  app.add_option("--neighbor_space", s.neighbor_space, "representation or raw")
      ->check(CLI::IsMember({"representation", "raw"}));
  app.add_option("--bandwidth", s.bandwidth, "Parzen bandwidth; 0 selects on validation data");

  app.add_option("--ft_epochs", s.ft_epochs);
  app.add_option("--ft_learning_rate", s.ft_learning_rate);
  app.add_option("--ft_minibatch_size", s.ft_minibatch_size);

  app.add_option("--probe_loss", s.probe_loss, "hinge or logistic")
      ->check(CLI::IsMember({"hinge", "logistic"}));
  app.add_option("--probe_epochs", s.probe_epochs);
  app.add_option("--probe_learning_rate", s.probe_learning_rate);
  app.add_option("--probe_regularization", s.probe_regularization);
  app.add_option("--probe_minibatch_size", s.probe_minibatch_size);

  app.add_option("--seed", s.seed, "Seed of the command's random stream");
  app.add_option("--out", s.out, "Output file");
  app.add_option("--depth", s.depth, "Representation depth");
}

// ---------------------------------------------------------------------------
// Validation helpers

template <class F>
void as_usage(F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

std::uint64_t require_seed(const Settings& s) {
  if (!s.seed) throw UsageError("--seed is required (config key 'seed' or flag)");
  return *s.seed;
}

fs::path require_out(const Settings& s) {
  if (s.out.empty()) throw UsageError("--out is required");
  const fs::path out(s.out);
  const fs::path parent = out.parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw UsageError("output directory does not exist: " + parent.string());
  }
  return out;
}

std::size_t dataset_dim(const Settings& s) {
  return s.dataset == "mnist" ? 784 : kSyntheticSide * kSyntheticSide;
}

ImageShape dataset_shape(const Settings& s) {
  return s.dataset == "mnist" ? ImageShape{28, 28} : ImageShape{kSyntheticSide, kSyntheticSide};
}

std::vector<std::size_t> layer_sizes(const Settings& s) {
  if (!s.layers.empty()) return s.layers;
  if (s.dataset == "mnist") {
    return s.model == "cae" ? std::vector<std::size_t>{784, 1000, 1000}
                            : std::vector<std::size_t>{784, 1024, 1024};
  }
  return {kSyntheticSide * kSyntheticSide, 100, 100};
}

void validate_common(const Settings& s) {
  if (s.config_version != kConfigVersion) {
    throw UsageError(fmt::format("unsupported config_version {} (expected {})", s.config_version,
                                 kConfigVersion));
  }
  if (s.dataset == "mnist") {
    if (s.data_dir.empty()) throw UsageError("dataset = mnist needs data_dir");
    for (const char* name : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte"}) {
      if (!fs::is_regular_file(fs::path(s.data_dir) / name)) {
        throw UsageError(fmt::format("missing {} in data_dir {}", name, s.data_dir));
      }
    }
  } else if (s.n_train + s.n_valid + s.n_test > s.synthetic_n) {
    throw UsageError("n_train + n_valid + n_test exceeds synthetic_n");
  }
  if (s.n_train == 0) throw UsageError("n_train must be positive");
}

Split load_split(const Settings& s) {
  Dataset all;
  if (s.dataset == "mnist") {
    const fs::path dir(s.data_dir);
    all = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    all.name = "mnist";
  } else {
    all = make_synthetic_manifold(s.synthetic_n, s.synthetic_seed);
  }
  const double n = static_cast<double>(all.size());
  if (s.n_train + s.n_valid + s.n_test > all.size()) {
    throw UsageError(fmt::format("n_train + n_valid + n_test exceeds the {} available examples",
                                 all.size()));
  }
  return split(all,
               {static_cast<double>(s.n_train) / n, static_cast<double>(s.n_valid) / n,
                static_cast<double>(s.n_test) / n},
               s.split_seed);
}

Model load_generative(const fs::path& path) {
  ModelFile f = load_model(path);
  if (auto* d = std::get_if<Dbn>(&f.model)) return std::move(*d);
  if (auto* c = std::get_if<StackedCae>(&f.model)) return std::move(*c);
  throw UsageError(path.string() + " holds a classifier, not a dbn or cae");
}

std::size_t require_depth(const Settings& s, const Model& m, std::size_t min_depth) {
  const std::size_t depth = s.depth.value_or(model_depth(m));
  if (depth < min_depth || depth > model_depth(m)) {
    throw UsageError(fmt::format("depth {} invalid for a {}-layer {} (allowed {}..{})", depth,
                                 model_depth(m), model_kind(m), min_depth, model_depth(m)));
  }
  return depth;
}

void check_input_dim(const Settings& s, const Model& m) {
  if (model_input_dim(m) != dataset_dim(s)) {
    throw UsageError(fmt::format("model input width {} does not match dataset {} width {}",
                                 model_input_dim(m), s.dataset, dataset_dim(s)));
  }
}

// ---------------------------------------------------------------------------
// Output helpers

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write " + path.string());
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw FormatError("write failed for " + path.string());
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  return fs::path(p.string() + suffix);
}

class Csv {
 public:
  explicit Csv(std::initializer_list<std::string_view> columns) {
    text_ = "schema_version";
    for (auto c : columns) text_ += fmt::format(",{}", c);
    text_ += '\n';
  }
  template <class... T>
  void row(const T&... values) {
    text_ += fmt::format("{}", kCsvSchemaVersion);
    ((text_ += fmt::format(",{}", values)), ...);
    text_ += '\n';
  }
  void save(const fs::path& path) const { write_text(path, text_); }

 private:
  std::string text_;
};

ModelMeta training_meta(const Settings& s, std::uint64_t seed) {
  std::string layers;
  for (std::size_t n : layer_sizes(s)) layers += (layers.empty() ? "" : ",") + std::to_string(n);
  ModelMeta meta{
      {"config_version", std::to_string(kConfigVersion)},
      {"dataset", s.dataset},
      {"layers", layers},
      {"epochs", std::to_string(s.epochs)},
      {"n_train", std::to_string(s.n_train)},
      {"split_seed", std::to_string(s.split_seed)},
      {"seed", std::to_string(seed)},
  };
  if (s.model == "cae") {
    meta["alpha"] = fmt::format("{}", s.cae_alpha);
    meta["learning_rate"] = fmt::format("{}", s.cae_learning_rate);
    meta["minibatch_size"] = std::to_string(s.cae_minibatch_size);
  } else {
    meta["cd_k"] = std::to_string(s.rbm_k);
    meta["learning_rate"] = fmt::format("{}", s.rbm_learning_rate);
    meta["minibatch_size"] = std::to_string(s.rbm_minibatch_size);
    meta["momentum"] = fmt::format("{}", s.rbm_momentum);
  }
  return meta;
}

double choose_bandwidth(const Settings& s, const Matrix& bank, const Split& sp) {
  if (s.bandwidth > 0.0) return s.bandwidth;
  if (sp.valid.size() == 0) throw UsageError("bandwidth = 0 needs a validation split (n_valid)");
  const auto grid = default_bandwidth_grid();
  return select_bandwidth(bank, sp.valid.examples, grid);
}

void require_test_split(const Split& sp) {
  if (sp.test.size() == 0) throw UsageError("this command needs a test split (n_test > 0)");
}

// ---------------------------------------------------------------------------
// Commands

int cmd_train(const Settings& s, std::ostream& out) {
  const std::uint64_t seed = require_seed(s);
  const fs::path path = require_out(s);
  const auto sizes = layer_sizes(s);
  if (sizes.size() < 2) throw UsageError("layers needs an input width and at least one layer");
  if (sizes.front() != dataset_dim(s)) {
    throw UsageError(fmt::format("layers starts at {} but the {} input width is {}", sizes.front(),
                                 s.dataset, dataset_dim(s)));
  }
  CaeTrainConfig cae_cfg{s.cae_learning_rate, s.cae_minibatch_size, s.epochs};
  CdConfig cd_cfg;
  cd_cfg.k = s.rbm_k;
  cd_cfg.learning_rate = s.rbm_learning_rate;
  cd_cfg.minibatch_size = s.rbm_minibatch_size;
  cd_cfg.epochs = s.epochs;
  cd_cfg.momentum = s.rbm_momentum;
  cd_cfg.weight_init_scale = s.rbm_weight_init_scale;
  cd_cfg.init_visible_bias_from_data = s.rbm_visible_bias_from_data;
  as_usage([&] { s.model == "cae" ? cae_cfg.validate() : cd_cfg.validate(); });
  if (s.model == "cae" && !(s.cae_alpha >= 0.0)) throw UsageError("cae_alpha must be >= 0");

  const Split sp = load_split(s);
  Prng rng(seed);
  Csv log({"layer", "epoch", "train_loss", "valid_loss"});
  if (s.model == "cae") {
    const CaeTrainResult r = train(sp, sizes, s.cae_alpha, cae_cfg, rng);
    for (const auto& e : r.log) log.row(e.layer, e.epoch, e.train.total, e.valid.total);
    save_model(path, r.model, training_meta(s, seed));
  } else {
    const std::vector<CdConfig> configs(sizes.size() - 1, cd_cfg);
    const DbnTrainResult r = train_greedy(sp, sizes, configs, rng);
    for (std::size_t l = 0; l < r.logs.size(); ++l) {
      for (const auto& e : r.logs[l]) {
        log.row(l, e.epoch, e.train_reconstruction, e.valid_reconstruction);
      }
    }
    save_model(path, r.model, training_meta(s, seed));
  }
  log.save(with_suffix(path, ".log.csv"));
  out << fmt::format("wrote {} and {}\n", path.string(), with_suffix(path, ".log.csv").string());
  return kExitOk;
}

struct SampleArgs {
  std::string model;
};

int cmd_sample(const Settings& s, const SampleArgs& a, std::ostream& out) {
  const std::uint64_t seed = require_seed(s);
  const fs::path path = require_out(s);
  const ChainConfig cc{s.n_chains, s.n_samples, s.steps_between, s.burn_in, s.noise_std};
  as_usage([&] { cc.validate(); });
  const Model m = load_generative(a.model);
  const std::size_t depth = require_depth(s, m, 1);
  check_input_dim(s, m);

  Matrix pool(0, model_input_dim(m));
  if (s.chain_init == "data") pool = load_split(s).train.examples;
  const std::string model_id = fs::path(a.model).filename().string();
  const SampleRun run = run_chains(m, depth, cc, pool, Prng(seed), model_id);

  const ImageShape shape = dataset_shape(s);
  write_idx_images(path, run.inputs, shape);
  json meta;
  meta["schema_version"] = kCsvSchemaVersion;
  meta["model"] = model_id;
  meta["model_kind"] = model_kind(m);
  meta["depth"] = depth;
  meta["seed"] = seed;
  meta["n_samples"] = run.inputs.rows();
  meta["n_chains"] = cc.n_chains;
  meta["steps_between"] = cc.steps_between;
  meta["burn_in"] = cc.burn_in;
  meta["noise_std"] = cc.noise_std;
  meta["chain_init"] = s.chain_init;
  meta["image_shape"] = {shape.height, shape.width};
  json chains = json::array();
  json steps = json::array();
  for (const SampleMeta& sm : run.meta) {
    chains.push_back(sm.chain);
    steps.push_back(sm.step);
  }
  meta["chain"] = std::move(chains);
  meta["step"] = std::move(steps);
  write_text(with_suffix(path, ".json"), meta.dump(1) + "\n");
  out << fmt::format("wrote {} samples to {}\n", run.inputs.rows(), path.string());
  return kExitOk;
}

struct Bank {
  Matrix samples;
  std::optional<json> meta;
};

Bank read_bank(const fs::path& path) {
  Bank b;
  b.samples = load_idx(path).examples;
  const fs::path sidecar = with_suffix(path, ".json");
  if (fs::is_regular_file(sidecar)) {
    std::ifstream f(sidecar);
    try {
      b.meta = json::parse(f);
    } catch (const json::exception& e) {
      throw FormatError(sidecar.string() + ": " + e.what());
    }
  }
  return b;
}

struct BankArgs {
  std::vector<std::string> banks;
  std::string model_name;
  std::string classifier;
};

int cmd_eval_parzen(const Settings& s, const BankArgs& a, std::ostream& out) {
  const fs::path path = require_out(s);
  const Split sp = load_split(s);
  require_test_split(sp);
  Csv csv({"depth", "model", "mean_ll", "std_err", "bandwidth"});
  for (const std::string& bank_path : a.banks) {
    const Bank b = read_bank(bank_path);
    std::size_t depth = 0;
    std::string model = a.model_name;
    if (s.depth) {
      depth = *s.depth;
    } else if (b.meta && b.meta->contains("depth")) {
      depth = b.meta->at("depth").get<std::size_t>();
    } else {
      throw UsageError(bank_path + ": no sidecar depth; pass --depth");
    }
    if (model.empty()) {
      model = b.meta && b.meta->contains("model_kind") ? b.meta->at("model_kind").get<std::string>()
                                                       : "unknown";
    }
    if (b.samples.cols() != sp.test.dim()) {
      throw UsageError(fmt::format("{}: width {} does not match dataset width {}", bank_path,
                                   b.samples.cols(), sp.test.dim()));
    }
    const double bw = choose_bandwidth(s, b.samples, sp);
    const LogLikelihood ll = parzen_log_likelihood({b.samples, bw}, sp.test.examples);
    csv.row(depth, model, ll.mean, ll.std_err, bw);
    out << fmt::format("{}: depth {} mean_ll {:.3f} +- {:.3f} (bandwidth {:.4f})\n", bank_path,
                       depth, ll.mean, ll.std_err, bw);
  }
  csv.save(path);
  return kExitOk;
}

int cmd_eval_mixing(const Settings& s, const BankArgs& a, std::ostream& out) {
  const fs::path path = require_out(s);
  for (std::size_t w : s.mixing_windows) {
    if (!kMixingWindows.contains(w)) {
      throw UsageError(fmt::format("mixing window {} not in {{10, 20, 100}}", w));
    }
  }
  if (s.mixing_windows.empty()) throw UsageError("mixing_windows is empty");
  ModelFile clf = load_model(a.classifier);
  const Mlp* mlp = std::get_if<Mlp>(&clf.model);
  if (mlp == nullptr) throw UsageError(a.classifier + " is not a classifier (run fine-tune)");

  Csv csv({"window", "distinct_classes", "frequency"});
  std::map<std::size_t, MixingHistogram> totals;
  for (const std::string& bank_path : a.banks) {
    const Bank b = read_bank(bank_path);
    if (b.samples.cols() != mlp->input_dim()) {
      throw UsageError(bank_path + ": bank width does not match the classifier");
    }
    const std::vector<int> labels = label_samples(*mlp, b.samples);
    // windows never straddle two chains
    std::vector<std::size_t> chain(labels.size(), 0);
    if (b.meta && b.meta->contains("chain")) {
      chain = b.meta->at("chain").get<std::vector<std::size_t>>();
      if (chain.size() != labels.size()) throw FormatError(bank_path + ": sidecar length mismatch");
    }
    for (std::size_t w : s.mixing_windows) {
      MixingHistogram& total = totals[w];
      total.window_length = w;
      std::size_t begin = 0;
      while (begin < labels.size()) {
        std::size_t end = begin;
        while (end < labels.size() && chain[end] == chain[begin]) ++end;
        if (end - begin >= w) {
          const auto h = mixing_histogram(std::span(labels).subspan(begin, end - begin), w);
          for (const auto& [k, v] : h.counts) total.counts[k] += v;
          total.mean_distinct += h.mean_distinct * static_cast<double>(h.windows);
          total.windows += h.windows;
        }
        begin = end;
      }
    }
  }
  for (auto& [w, h] : totals) {
    if (h.windows == 0) throw UsageError(fmt::format("no chain is as long as window {}", w));
    for (const auto& [k, v] : h.counts) csv.row(w, k, v);
    out << fmt::format("window {}: mean distinct classes {:.3f} over {} windows\n", w,
                       h.mean_distinct / static_cast<double>(h.windows), h.windows);
  }
  csv.save(path);
  return kExitOk;
}

struct ModelArgs {
  std::string model;
  std::vector<std::size_t> pair;
  std::string path_out;
  std::string banks_dir;
};

void write_probe_csv(const Settings& s, const Model& m, std::size_t depth,
                     const std::vector<ProbeBank>& banks, const Split& sp, const fs::path& path,
                     const ModelArgs& a, const char* prefix, std::ostream& out) {
  Csv csv({"k_or_sigma", "depth", "mean_ll", "std_err"});
  for (const ProbeBank& b : banks) {
    const double bw = choose_bandwidth(s, b.samples, sp);
    const LogLikelihood ll = parzen_log_likelihood({b.samples, bw}, sp.test.examples);
    csv.row(b.parameter, depth, ll.mean, ll.std_err);
    out << fmt::format("{} {}: depth {} mean_ll {:.3f} +- {:.3f}\n", prefix, b.parameter, depth,
                       ll.mean, ll.std_err);
    if (!a.banks_dir.empty()) {
      const auto file = fs::path(a.banks_dir) /
                        fmt::format("{}_{}_depth{}_{}.idx", model_kind(m), prefix, depth, b.parameter);
      write_idx_images(file, b.samples, dataset_shape(s));
    }
  }
  csv.save(path);
}

int cmd_interpolate(const Settings& s, const ModelArgs& a, std::ostream& out) {
  const std::uint64_t seed = require_seed(s);
  const fs::path path = require_out(s);
  ProbeSpec spec;
  spec.kind = ProbeKind::knn_midpoint;
  spec.k_grid = s.k_grid;
  spec.t_grid = s.t_grid;
  spec.samples_per_point = s.samples_per_point;
  spec.space = s.neighbor_space == "raw" ? NeighborSpace::raw : NeighborSpace::representation;
  as_usage([&] { spec.validate(); });
  if (!a.pair.empty() && (a.pair.size() != 2 || a.path_out.empty())) {
    throw UsageError("--pair takes two training-row indices and needs --path_out");
  }
  const Model m = load_generative(a.model);
  const std::size_t depth = require_depth(s, m, 0);
  check_input_dim(s, m);
  const Split sp = load_split(s);
  require_test_split(sp);

  if (!a.pair.empty()) {
    const std::size_t n = sp.train.size();
    if (a.pair[0] >= n || a.pair[1] >= n) throw UsageError("--pair index outside the training split");
    const Matrix path_images = interpolate_path(m, depth, sp.train.examples.row(a.pair[0]),
                                                sp.train.examples.row(a.pair[1]), spec.t_grid,
                                                Prng(seed).split(1));
    write_idx_images(a.path_out, path_images, dataset_shape(s));
  }
  const auto banks = knn_midpoint_probe(m, depth, sp.train.examples, spec.k_grid,
                                        spec.samples_per_point, Prng(seed).split(0), spec.space);
  write_probe_csv(s, m, depth, banks, sp, path, a, "k", out);
  return kExitOk;
}

int cmd_noise_ball(const Settings& s, const ModelArgs& a, std::ostream& out) {
  const std::uint64_t seed = require_seed(s);
  const fs::path path = require_out(s);
  if (s.sigma_grid.empty()) throw UsageError("sigma_grid is empty");
  for (double sigma : s.sigma_grid) {
    if (!(sigma >= kMinNoiseSigma && sigma <= kMaxNoiseSigma)) {
      throw UsageError(fmt::format("sigma {} outside [0.01, 5]", sigma));
    }
  }
  if (s.samples_per_point == 0) throw UsageError("samples_per_point must be positive");
  const Model m = load_generative(a.model);
  const std::size_t depth = require_depth(s, m, 0);
  check_input_dim(s, m);
  const Split sp = load_split(s);
  require_test_split(sp);
  const auto banks =
      noise_ball_probe(m, depth, sp.train.examples, s.sigma_grid, s.samples_per_point, Prng(seed));
  write_probe_csv(s, m, depth, banks, sp, path, a, "sigma", out);
  return kExitOk;
}

int cmd_probe(const Settings& s, const ModelArgs& a, std::ostream& out) {
  const std::uint64_t seed = require_seed(s);
  const fs::path path = require_out(s);
  LinearProbeConfig cfg;
  cfg.loss = s.probe_loss == "logistic" ? ProbeLoss::logistic : ProbeLoss::hinge;
  cfg.epochs = s.probe_epochs;
  cfg.learning_rate = s.probe_learning_rate;
  cfg.regularization = s.probe_regularization;
  cfg.minibatch_size = s.probe_minibatch_size;
  if (cfg.minibatch_size == 0 || !(cfg.learning_rate > 0) || !(cfg.regularization >= 0)) {
    throw UsageError("probe settings need minibatch_size > 0, learning_rate > 0, regularization >= 0");
  }
  const Model m = load_generative(a.model);
  const std::size_t depth = require_depth(s, m, 0);
  check_input_dim(s, m);
  const Split sp = load_split(s);
  require_test_split(sp);
  if (!sp.train.has_labels()) throw UsageError("probe needs a labeled dataset");

  auto features = [&](const Matrix& x) {
    std::vector<Matrix> blocks;
    for (std::size_t l = 0; l <= depth; ++l) blocks.push_back(encode(m, x, l));
    std::vector<const Matrix*> ptrs;
    for (const auto& b : blocks) ptrs.push_back(&b);
    return concat_columns(ptrs);
  };
  std::string names = "raw";
  for (std::size_t l = 1; l <= depth; ++l) names += fmt::format("+L{}", l);

  Prng rng(seed);
  const LinearProbe p = train_linear_probe(features(sp.train.examples), sp.train.labels, cfg, rng);
  const double valid_error = sp.valid.size() > 0 && sp.valid.has_labels()
                                 ? probe_error(p, features(sp.valid.examples), sp.valid.labels)
                                 : std::nan("");
  const double test_error = probe_error(p, features(sp.test.examples), sp.test.labels);
  Csv csv({"depth", "features", "valid_error", "test_error"});
  csv.row(depth, names, valid_error, test_error);
  csv.save(path);
  out << fmt::format("{}: test error {:.4f}\n", names, test_error);
  return kExitOk;
}

int cmd_fine_tune(const Settings& s, const ModelArgs& a, std::ostream& out) {
  const std::uint64_t seed = require_seed(s);
  const fs::path path = require_out(s);
  const FineTuneConfig cfg{s.ft_epochs, s.ft_learning_rate, s.ft_minibatch_size};
  if (cfg.minibatch_size == 0 || !(cfg.learning_rate > 0)) {
    throw UsageError("fine-tune needs ft_minibatch_size > 0 and ft_learning_rate > 0");
  }
  const Model m = load_generative(a.model);
  check_input_dim(s, m);
  const Split sp = load_split(s);
  if (!sp.train.has_labels()) throw UsageError("fine-tune needs a labeled dataset");
  Prng rng(seed);
  const FineTuneResult r = std::visit(
      [&](const auto& stack) { return fine_tune_mlp(stack, sp, cfg, rng); }, m);
  Csv log({"epoch", "train_loss", "valid_error"});
  for (const auto& e : r.log) log.row(e.epoch, e.train_loss, e.valid_error);
  ModelMeta meta{{"config_version", std::to_string(kConfigVersion)},
                 {"dataset", s.dataset},
                 {"base_model", fs::path(a.model).filename().string()},
                 {"epochs", std::to_string(cfg.epochs)},
                 {"learning_rate", fmt::format("{}", cfg.learning_rate)},
                 {"seed", std::to_string(seed)},
                 {"test_error", fmt::format("{}", r.test_error)}};
  save_model(path, r.classifier, meta);
  log.save(with_suffix(path, ".log.csv"));
  out << fmt::format("test error {:.4f}; wrote {}\n", r.test_error, path.string());
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sampling and representation experiments with deep generative stacks", "deepmix"};
  app.set_config("--config", "", "INI config file (flat key = value; config_version = 1)", true);
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1, 1);
  app.fallthrough();

  Settings s;
  add_config_options(app, s);
  SampleArgs sample_args;
  BankArgs bank_args;
  ModelArgs model_args;

  auto* train_cmd = app.add_subcommand("train", "Train a stack; writes the model and <out>.log.csv");
  auto* sample_cmd = app.add_subcommand("sample", "Draw a sample bank; writes IDX and <out>.json");
  sample_cmd->add_option("--model_file", sample_args.model, "Trained model")
      ->required()
      ->check(CLI::ExistingFile);
  auto* parzen_cmd = app.add_subcommand("eval-parzen", "Parzen log-likelihood of sample banks");
  parzen_cmd->add_option("--bank", bank_args.banks, "IDX sample bank (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);
  parzen_cmd->add_option("--model_name", bank_args.model_name, "Overrides the sidecar model kind");
  auto* mixing_cmd = app.add_subcommand("eval-mixing", "Distinct classes per window of a chain");
  mixing_cmd->add_option("--bank", bank_args.banks, "IDX sample bank (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);
  mixing_cmd->add_option("--classifier", bank_args.classifier, "Fine-tuned classifier")
      ->required()
      ->check(CLI::ExistingFile);

  std::vector<CLI::App*> model_cmds;
  auto* probe_cmd = app.add_subcommand("probe", "Linear probe on raw + layer features");
  auto* interp_cmd = app.add_subcommand("interpolate", "k-NN midpoint interpolation probe");
  auto* ball_cmd = app.add_subcommand("noise-ball", "Noise-ball probe around encoded examples");
  auto* ft_cmd = app.add_subcommand("fine-tune", "Fine-tune an MLP classifier from a stack");
  for (CLI::App* cmd : {probe_cmd, interp_cmd, ball_cmd, ft_cmd}) {
    cmd->add_option("--model_file", model_args.model, "Trained model")
        ->required()
        ->check(CLI::ExistingFile);
  }
  for (CLI::App* cmd : {interp_cmd, ball_cmd}) {
    cmd->add_option("--banks_dir", model_args.banks_dir, "Also write each bank as IDX here")
        ->check(CLI::ExistingDirectory);
  }
  interp_cmd->add_option("--pair", model_args.pair, "Two training rows for a path")->delimiter(',');
  interp_cmd->add_option("--path_out", model_args.path_out, "IDX file for the path images");

  std::vector<const char*> argv{"deepmix"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    validate_common(s);
    if (train_cmd->parsed()) return cmd_train(s, out);
    if (sample_cmd->parsed()) return cmd_sample(s, sample_args, out);
    if (parzen_cmd->parsed()) return cmd_eval_parzen(s, bank_args, out);
    if (mixing_cmd->parsed()) return cmd_eval_mixing(s, bank_args, out);
    if (probe_cmd->parsed()) return cmd_probe(s, model_args, out);
    if (interp_cmd->parsed()) return cmd_interpolate(s, model_args, out);
    if (ball_cmd->parsed()) return cmd_noise_ball(s, model_args, out);
    if (ft_cmd->parsed()) return cmd_fine_tune(s, model_args, out);
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace deepmix::cli
