#pragma once

// Grid sweep over (dimension, grouping factor, capacity, beta, repeat):
// configuration, trial execution, best-ELBO trajectory and its quadratic fit.

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "stcvae/datasets.hpp"
#include "stcvae/errors.hpp"
#include "stcvae/linalg.hpp"
#include "stcvae/metrics.hpp"
#include "stcvae/tc_decomposition.hpp"
#include "stcvae/vae.hpp"

namespace stcvae {

/// Coefficient of the factor-one (beta-TCVAE) line as published.
inline constexpr double kReferenceCoefficient = 0.178;

inline const std::vector<std::size_t>& paper_dimensions() {
  static const std::vector<std::size_t> dims{6, 8, 10, 12, 14, 16, 18, 20};
  return dims;
}

/// Mean factor-one grouping coefficient over `dimensions`.
inline double reference_coefficient(const std::vector<std::size_t>& dimensions) {
  if (dimensions.empty()) throw std::invalid_argument("reference_coefficient: empty dimension list");
  double s = 0.0;
  for (std::size_t n : dimensions) s += normalize_coefficient(1, n);
  return s / static_cast<double>(dimensions.size());
}

// ---- configuration ---------------------------------------------------------

enum class DatasetKind { kDspritesMini, kIdx };

struct SweepConfig {
  std::vector<std::size_t> dimensions = paper_dimensions();
  std::vector<std::size_t> capacities{128, 256, 512};
  std::vector<double> betas{4.0};
  std::size_t repeats = 3;
  std::size_t iterations = 2000;
  Objective objective = Objective::kStcvae;
  double gamma = 1.0;  // within-group TC weight, hfvae only
  double alpha = 1.0;
  double lambda = 1.0;
  double epsilon = 1e-3;
  double delta = 1e-2;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double holdout_fraction = 0.2;
  std::size_t mig_bins = 20;
  std::size_t entropy_samples = 1000;
  Activation activation = Activation::kTanh;
  Likelihood likelihood = Likelihood::kBernoulli;
  DatasetKind dataset = DatasetKind::kDspritesMini;
  double dataset_noise = 0.0;
  std::string idx_images;
  std::string idx_labels;

  void validate() const {
    if (dimensions.empty() || capacities.empty() || betas.empty()) {
      throw ConfigError("config: dimensions, capacities and betas must be non-empty");
    }
    for (std::size_t n : dimensions)
      if (n < 2) throw ConfigError("config: every dimension must be >= 2, got " + std::to_string(n));
    for (std::size_t c : capacities)
      if (c < 4) throw ConfigError("config: every capacity must be >= 4, got " + std::to_string(c));
    for (double b : betas)
      if (!std::isfinite(b) || b < 0.0) throw ConfigError("config: betas must be finite and >= 0");
    if (repeats < 1) throw ConfigError("config: repeats must be >= 1");
    if (iterations < 1) throw ConfigError("config: iterations must be >= 1");
    if (batch_size < 2) throw ConfigError("config: batch_size must be >= 2");
    if (!(learning_rate > 0.0)) throw ConfigError("config: learning_rate must be > 0");
    if (!(epsilon > 0.0) || !(delta > 0.0) || delta >= 1.0) {
      throw ConfigError("config: epsilon must be > 0 and delta in (0, 1)");
    }
    if (!(holdout_fraction > 0.0) || holdout_fraction >= 1.0) {
      throw ConfigError("config: holdout_fraction must lie in (0, 1)");
    }
    if (mig_bins < 1) throw ConfigError("config: mig_bins must be >= 1");
    if (entropy_samples < 100) throw ConfigError("config: entropy_samples must be >= 100");
    if (dataset == DatasetKind::kIdx && (idx_images.empty() || idx_labels.empty())) {
      throw ConfigError("config: dataset = idx needs idx_images and idx_labels");
    }
  }

  /// Iteration and repeat counts of the published protocol.
  void apply_paper_protocol() {
    iterations = 20000;
    repeats = 20;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& value, const std::string& key) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("config: empty element in list '" + key + "'");
    out.push_back(item);
  }
  if (out.empty()) throw ConfigError("config: list '" + key + "' is empty");
  return out;
}

inline double parse_real(const std::string& s, const std::string& key) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size()) throw ConfigError("config: '" + key + "' expects a number, got '" + s + "'");
  return v;
}

inline std::uint64_t parse_count(const std::string& s, const std::string& key) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + s + "'");
  }
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' is out of range");
  }
}

}  // namespace detail

/// Parses flat `key = value` text. Lists are comma separated, `#` starts a
/// comment. Unknown and repeated keys are errors.
inline SweepConfig parse_sweep_config(std::istream& in) {
  using detail::parse_count;
  using detail::parse_real;
  SweepConfig c;
  std::set<std::string> seen;
  const std::map<std::string, std::function<void(const std::string&, const std::string&)>> handlers{
      {"dimensions",
       [&](const std::string& k, const std::string& v) {
         c.dimensions.clear();
         for (const auto& s : detail::split_list(v, k)) c.dimensions.push_back(parse_count(s, k));
       }},
      {"capacities",
       [&](const std::string& k, const std::string& v) {
         c.capacities.clear();
         for (const auto& s : detail::split_list(v, k)) c.capacities.push_back(parse_count(s, k));
       }},
      {"betas",
       [&](const std::string& k, const std::string& v) {
         c.betas.clear();
         for (const auto& s : detail::split_list(v, k)) c.betas.push_back(parse_real(s, k));
       }},
      {"repeats", [&](const std::string& k, const std::string& v) { c.repeats = parse_count(v, k); }},
      {"iterations", [&](const std::string& k, const std::string& v) { c.iterations = parse_count(v, k); }},
      {"objective",
       [&](const std::string&, const std::string& v) {
         try {
           c.objective = parse_objective(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(std::string("config: ") + e.what());
         }
       }},
      {"gamma", [&](const std::string& k, const std::string& v) { c.gamma = parse_real(v, k); }},
      {"alpha", [&](const std::string& k, const std::string& v) { c.alpha = parse_real(v, k); }},
      {"lambda", [&](const std::string& k, const std::string& v) { c.lambda = parse_real(v, k); }},
      {"epsilon", [&](const std::string& k, const std::string& v) { c.epsilon = parse_real(v, k); }},
      {"delta", [&](const std::string& k, const std::string& v) { c.delta = parse_real(v, k); }},
      {"batch_size", [&](const std::string& k, const std::string& v) { c.batch_size = parse_count(v, k); }},
      {"learning_rate", [&](const std::string& k, const std::string& v) { c.learning_rate = parse_real(v, k); }},
      {"seed", [&](const std::string& k, const std::string& v) { c.seed = parse_count(v, k); }},
      {"holdout_fraction",
       [&](const std::string& k, const std::string& v) { c.holdout_fraction = parse_real(v, k); }},
      {"mig_bins", [&](const std::string& k, const std::string& v) { c.mig_bins = parse_count(v, k); }},
      {"entropy_samples", [&](const std::string& k, const std::string& v) { c.entropy_samples = parse_count(v, k); }},
      {"activation",
       [&](const std::string& k, const std::string& v) {
         if (v == "tanh") c.activation = Activation::kTanh;
         else if (v == "relu") c.activation = Activation::kRelu;
         else throw ConfigError("config: '" + k + "' must be tanh or relu");
       }},
      {"likelihood",
       [&](const std::string& k, const std::string& v) {
         if (v == "bernoulli") c.likelihood = Likelihood::kBernoulli;
         else if (v == "gaussian") c.likelihood = Likelihood::kGaussianFixedVariance;
         else throw ConfigError("config: '" + k + "' must be bernoulli or gaussian");
       }},
      {"dataset",
       [&](const std::string& k, const std::string& v) {
         if (v == "dsprites_mini") c.dataset = DatasetKind::kDspritesMini;
         else if (v == "idx") c.dataset = DatasetKind::kIdx;
         else throw ConfigError("config: '" + k + "' must be dsprites_mini or idx");
       }},
      {"dataset_noise", [&](const std::string& k, const std::string& v) { c.dataset_noise = parse_real(v, k); }},
      {"idx_images", [&](const std::string&, const std::string& v) { c.idx_images = v; }},
      {"idx_labels", [&](const std::string&, const std::string& v) { c.idx_labels = v; }},
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": key '" + key + "' given twice");
    }
    if (value.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty value for '" + key + "'");
    it->second(key, value);
  }
  c.validate();
  return c;
}

inline SweepConfig load_sweep_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  return parse_sweep_config(in);
}

// ---- grid ------------------------------------------------------------------

struct TrialSpec {
  std::size_t index = 0;
  std::size_t dimension = 0;
  std::size_t grouping_factor = 1;
  double grouping_coefficient = 0.0;
  std::size_t capacity = 0;
  double beta = 0.0;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0;
  for (auto p : parts) h = splitmix(h ^ p);
  return h;
}

}  // namespace detail

/// dimensions x groupings x capacities x betas x repeats, in that nesting.
/// The trial seed leaves out the grouping factor so every factor of a cell
/// sees the same initialization and batches.
inline std::vector<TrialSpec> expand_grid(const SweepConfig& config) {
  config.validate();
  std::vector<TrialSpec> out;
  for (std::size_t n : config.dimensions) {
    for (std::size_t i : enumerate_groupings(n)) {
      for (std::size_t cap : config.capacities) {
        for (double beta : config.betas) {
          for (std::size_t r = 0; r < config.repeats; ++r) {
            TrialSpec t;
            t.index = out.size();
            t.dimension = n;
            t.grouping_factor = i;
            t.grouping_coefficient = normalize_coefficient(i, n);
            t.capacity = cap;
            t.beta = beta;
            t.repeat = r;
            t.seed = detail::mix_seed({config.seed, n, cap, std::bit_cast<std::uint64_t>(beta), r});
            out.push_back(t);
          }
        }
      }
    }
  }
  return out;
}

// ---- trials ----------------------------------------------------------------

struct SweepRecord {
  TrialSpec spec;
  std::string objective;
  bool ok = true;
  std::string error;
  double initial_elbo = std::numeric_limits<double>::quiet_NaN();
  double final_elbo = std::numeric_limits<double>::quiet_NaN();
  double mig = std::numeric_limits<double>::quiet_NaN();
  MigReport mig_report;  // full table; not part of records.csv
  std::vector<double> entropies;         // differential, per latent dimension
  std::vector<double> binned_entropies;  // discrete companion, per latent dimension
  double wall_time = 0.0;                // seconds

  /// Factor one is the beta-TCVAE reference line.
  bool is_reference() const { return spec.grouping_factor == 1; }
};

/// The training/evaluation split shared by every trial of a sweep.
struct PreparedData {
  FactorDataset full;
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
  ad::Tensor train_x;
  ad::Tensor holdout_x;
};

inline PreparedData prepare_data(FactorDataset dataset, const SweepConfig& config) {
  dataset.validate();
  if (config.likelihood == Likelihood::kBernoulli) dataset = dataset.binarized(0.5);
  PreparedData p;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(detail::mix_seed({config.seed, 0x686f6c64ULL}));
  std::shuffle(order.begin(), order.end(), rng);
  const auto held = static_cast<std::size_t>(std::ceil(config.holdout_fraction * static_cast<double>(order.size())));
  if (held == 0 || order.size() - held < config.batch_size) {
    throw ConfigError("config: dataset of " + std::to_string(order.size()) +
                      " samples is too small for the holdout fraction and batch size");
  }
  p.holdout.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  p.train.assign(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  std::sort(p.holdout.begin(), p.holdout.end());
  std::sort(p.train.begin(), p.train.end());
  p.full = std::move(dataset);
  p.train_x = p.full.gather(p.train);
  p.holdout_x = p.full.gather(p.holdout);
  return p;
}

inline FactorDataset load_dataset(const SweepConfig& config) {
  if (config.dataset == DatasetKind::kIdx) {
    return dataset_from_idx(read_idx_file(config.idx_images), read_idx_file(config.idx_labels));
  }
  SyntheticFactorSpec spec;
  spec.noise_stddev = config.dataset_noise;
  return gen_dsprites_mini(spec, config.seed);
}

namespace detail {

inline Matrix to_matrix(const ad::Tensor& t) {
  return Matrix(t.dim(0), t.dim(1), std::vector<double>(t.data().begin(), t.data().end()));
}

/// Posterior means, log-variances and one sample for every row, in chunks.
inline void encode_all(const VaeParams& params, const FactorDataset& ds, std::span<const std::size_t> rows,
                       std::mt19937_64& rng, Matrix& means, Matrix& log_vars, Matrix& z) {
  const std::size_t n = params.config().latent_dim;
  means = Matrix(rows.size(), n);
  log_vars = Matrix(rows.size(), n);
  z = Matrix(rows.size(), n);
  std::normal_distribution<double> normal;
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < rows.size(); start += kChunk) {
    const std::size_t len = std::min(kChunk, rows.size() - start);
    const Posterior q = encode(params, ds.gather(rows.subspan(start, len)));
    for (std::size_t r = 0; r < len; ++r) {
      for (std::size_t k = 0; k < n; ++k) {
        const double m = q.mean[r * n + k], lv = q.log_var[r * n + k];
        means(start + r, k) = m;
        log_vars(start + r, k) = lv;
        z(start + r, k) = m + std::exp(0.5 * lv) * normal(rng);
      }
    }
  }
}

}  // namespace detail

inline ObjectiveConfig objective_for(const SweepConfig& config, const TrialSpec& spec) {
  ObjectiveConfig o;
  o.objective = config.objective;
  o.grouping_factor = spec.grouping_factor;
  o.beta = spec.beta;
  o.gamma = config.gamma;
  o.weights = TermWeights{config.alpha, config.lambda};
  return o;
}

/// Called on the worker thread with each successfully trained model.
using ModelSink = std::function<void(const TrialSpec&, const VaeParams&)>;

/// Trains one model and measures it. Training faults produce a failed record.
inline SweepRecord run_trial(const TrialSpec& spec, const SweepConfig& config, const PreparedData& data,
                             const ModelSink& on_model = {}) {
  const auto start = std::chrono::steady_clock::now();
  SweepRecord rec;
  rec.spec = spec;
  rec.objective = objective_name(config.objective);
  try {
    const auto arch = EncoderDecoderConfig::from_capacity(data.full.input_dim, spec.capacity, spec.dimension,
                                                          config.activation, config.likelihood);
    VaeParams params = VaeParams::init(arch, detail::mix_seed({spec.seed, 1}));
    Adam adam(AdamConfig{config.learning_rate});
    std::mt19937_64 noise_rng(detail::mix_seed({spec.seed, 2}));
    BatchIterator batches(data.train.size(), config.batch_size, detail::mix_seed({spec.seed, 3}), true);
    const std::uint64_t eval_seed = detail::mix_seed({spec.seed, 4});
    const ObjectiveConfig objective = objective_for(config, spec);

    std::mt19937_64 eval_rng(eval_seed);
    rec.initial_elbo = evaluate_elbo(params, data.holdout_x, eval_rng);
    for (std::size_t it = 0; it < config.iterations; ++it) {
      std::vector<std::size_t> rows = batches.next();
      for (auto& r : rows) r = data.train[r];
      train_step(params, adam, data.full.gather(rows), data.train.size(), objective, noise_rng);
    }
    eval_rng.seed(eval_seed);
    rec.final_elbo = evaluate_elbo(params, data.holdout_x, eval_rng);
    if (!std::isfinite(rec.final_elbo)) throw TrainingFault("non-finite held-out ELBO");
    if (on_model) on_model(spec, params);

    // Entropies on a fixed subsample of the whole dataset.
    std::vector<std::size_t> rows(data.full.size());
    std::iota(rows.begin(), rows.end(), 0);
    if (rows.size() > config.entropy_samples) {
      std::mt19937_64 pick(detail::mix_seed({config.seed, 5}));
      std::shuffle(rows.begin(), rows.end(), pick);
      rows.resize(config.entropy_samples);
      std::sort(rows.begin(), rows.end());
    }
    std::mt19937_64 sample_rng(detail::mix_seed({spec.seed, 6}));
    Matrix means, log_vars, z;
    if (rows.size() >= 100) {
      detail::encode_all(params, data.full, rows, sample_rng, means, log_vars, z);
      rec.entropies = marginal_entropies(z, means, log_vars);
      for (std::size_t k = 0; k < z.cols(); ++k) {
        std::vector<double> col(z.rows());
        for (std::size_t s = 0; s < z.rows(); ++s) col[s] = z(s, k);
        rec.binned_entropies.push_back(binned_entropy(col, config.mig_bins));
      }
    }

    std::vector<std::size_t> all(data.full.size());
    std::iota(all.begin(), all.end(), 0);
    detail::encode_all(params, data.full, all, sample_rng, means, log_vars, z);
    std::vector<bool> flags;
    for (double h : rec.entropies) flags.push_back(h < config.epsilon);
    try {
      rec.mig_report = stcvae::mig(means, data.full, config.mig_bins, flags);
      rec.mig = rec.mig_report.mig;
    } catch (const MigDistortionError& e) {
      rec.error = e.what();
    }
  } catch (const TrainingFault& e) {
    rec.ok = false;
    rec.error = e.what();
    if (e.layer()) rec.error += " (layer " + std::to_string(*e.layer()) + ")";
  }
  rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

// ---- worker pool -----------------------------------------------------------

/// Unbounded multi-producer queue drained by one consumer.
template <typename T>
class Channel {
 public:
  void push(T value) {
    {
      std::lock_guard lock(mutex_);
      queue_.push(std::move(value));
    }
    ready_.notify_one();
  }

  T pop() {
    std::unique_lock lock(mutex_);
    ready_.wait(lock, [&] { return !queue_.empty(); });
    T v = std::move(queue_.front());
    queue_.pop();
    return v;
  }

 private:
  std::mutex mutex_;
  std::condition_variable ready_;
  std::queue<T> queue_;
};

/// Runs every trial on `workers` threads. `on_record` is called on the
/// calling thread, in completion order. Returned records are in grid order.
inline std::vector<SweepRecord> run_sweep(const SweepConfig& config, const PreparedData& data,
                                          const std::vector<TrialSpec>& trials, std::size_t workers,
                                          const std::function<void(const SweepRecord&)>& on_record = {},
                                          const ModelSink& on_model = {}) {
  workers = std::max<std::size_t>(1, std::min(workers, trials.size()));
  std::atomic<std::size_t> next{0};
  Channel<SweepRecord> channel;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < trials.size(); k = next++) channel.push(run_trial(trials[k], config, data, on_model));
    });
  }
  std::vector<SweepRecord> out(trials.size());
  for (std::size_t received = 0; received < trials.size(); ++received) {
    SweepRecord r = channel.pop();
    if (on_record) on_record(r);
    const std::size_t slot = std::find_if(trials.begin(), trials.end(),
                                          [&](const TrialSpec& t) { return t.index == r.spec.index; }) -
                             trials.begin();
    out[slot] = std::move(r);
  }
  return out;
}

// ---- trajectory ------------------------------------------------------------

struct TrajectoryPoint {
  std::size_t capacity = 0;
  std::size_t capacity_index = 0;  // position in the ascending capacity list
  double best_coefficient = 0.0;
  double best_mean_elbo = 0.0;
  std::map<double, double> coefficient_elbo;  // mean ELBO per coefficient
};

struct Trajectory {
  std::vector<TrajectoryPoint> points;
  std::vector<std::string> warnings;
};

/// Per capacity: mean ELBO over repeats per (dimension, coefficient) cell,
/// then the mean over dimensions sharing a coefficient, then the argmax with
/// ties going to the smaller coefficient. Failed records are ignored.
inline Trajectory best_elbo_trajectory(const std::vector<SweepRecord>& records,
                                       const std::vector<std::size_t>& capacities = {}) {
  std::set<std::size_t> caps(capacities.begin(), capacities.end());
  for (const auto& r : records) caps.insert(r.spec.capacity);
  Trajectory out;
  std::size_t index = 0;
  for (std::size_t cap : caps) {
    std::map<std::pair<std::size_t, double>, std::pair<double, std::size_t>> cells;
    for (const auto& r : records) {
      if (!r.ok || r.spec.capacity != cap || !std::isfinite(r.final_elbo)) continue;
      auto& cell = cells[{r.spec.dimension, r.spec.grouping_coefficient}];
      cell.first += r.final_elbo;
      cell.second += 1;
    }
    const std::size_t this_index = index++;
    if (cells.empty()) {
      out.warnings.push_back("capacity " + std::to_string(cap) + " has no successful records; omitted");
      continue;
    }
    std::map<double, std::pair<double, std::size_t>> by_coef;
    for (const auto& [key, cell] : cells) {
      auto& c = by_coef[key.second];
      c.first += cell.first / static_cast<double>(cell.second);
      c.second += 1;
    }
    TrajectoryPoint p;
    p.capacity = cap;
    p.capacity_index = this_index;
    bool first = true;
    for (const auto& [coef, acc] : by_coef) {  // ascending coefficient
      const double mean = acc.first / static_cast<double>(acc.second);
      p.coefficient_elbo[coef] = mean;
      if (first || mean > p.best_mean_elbo) {
        p.best_coefficient = coef;
        p.best_mean_elbo = mean;
        first = false;
      }
    }
    out.points.push_back(std::move(p));
  }
  return out;
}

struct TrajectoryFit {
  double a = 0.0, b = 0.0, c = 0.0;  // y = a x^2 + b x + c
  double residual_rms = 0.0;
  std::array<double, 3> standard_errors{};  // of (a, b, c); NaN with no spare degrees of freedom
  std::vector<std::pair<double, double>> points;

  double operator()(double x) const { return (a * x + b) * x + c; }
};

/// Least-squares quadratic through (x, y) via the normal equations.
inline TrajectoryFit fit_quadratic(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) throw std::invalid_argument("fit_quadratic: need at least 3 points");
  std::set<double> xs;
  for (const auto& [x, y] : points) xs.insert(x);
  if (xs.size() < 3) throw std::invalid_argument("fit_quadratic: singular system, fewer than 3 distinct x values");
  Matrix normal(3, 3);
  std::vector<double> rhs(3, 0.0);
  for (const auto& [x, y] : points) {
    const double basis[3] = {x * x, x, 1.0};
    for (int i = 0; i < 3; ++i) {
      rhs[i] += basis[i] * y;
      for (int j = 0; j < 3; ++j) normal(i, j) += basis[i] * basis[j];
    }
  }
  std::vector<double> coef;
  Matrix cov;
  try {
    coef = solve(normal, rhs);
    cov = inverse(normal);
  } catch (const SingularMatrixError& e) {
    throw std::invalid_argument(std::string("fit_quadratic: singular system: ") + e.what());
  }
  TrajectoryFit fit;
  fit.a = coef[0];
  fit.b = coef[1];
  fit.c = coef[2];
  fit.points = points;
  double rss = 0.0;
  for (const auto& [x, y] : points) rss += (y - fit(x)) * (y - fit(x));
  fit.residual_rms = std::sqrt(rss / static_cast<double>(points.size()));
  const std::size_t dof = points.size() - 3;
  for (int i = 0; i < 3; ++i) {
    fit.standard_errors[i] =
        dof == 0 ? std::numeric_limits<double>::quiet_NaN() : std::sqrt(rss / static_cast<double>(dof) * cov(i, i));
  }
  return fit;
}

/// Fit of best coefficient against capacity index, when there are enough points.
inline std::optional<TrajectoryFit> fit_trajectory(const Trajectory& t, std::string* why_not = nullptr) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : t.points) pts.emplace_back(static_cast<double>(p.capacity_index), p.best_coefficient);
  try {
    return fit_quadratic(pts);
  } catch (const std::invalid_argument& e) {
    if (why_not) *why_not = e.what();
    return std::nullopt;
  }
}

// ---- omniscient configurations ---------------------------------------------

struct ConfigurationFlag {
  std::size_t dimension = 0;
  std::size_t grouping_factor = 0;
  std::size_t capacity = 0;
  double beta = 0.0;
  std::size_t models = 0;
  OmniscientResult result;
};

/// Omniscient-latent detection per (dimension, factor, capacity, beta) over repeats.
inline std::vector<ConfigurationFlag> omniscient_by_configuration(const std::vector<SweepRecord>& records,
                                                                  double epsilon, double delta) {
  std::map<std::tuple<std::size_t, std::size_t, std::size_t, double>, std::vector<std::vector<double>>> groups;
  for (const auto& r : records) {
    if (!r.ok || r.entropies.empty()) continue;
    groups[{r.spec.dimension, r.spec.grouping_factor, r.spec.capacity, r.spec.beta}].push_back(r.entropies);
  }
  std::vector<ConfigurationFlag> out;
  for (const auto& [key, population] : groups) {
    ConfigurationFlag f;
    std::tie(f.dimension, f.grouping_factor, f.capacity, f.beta) = key;
    f.models = population.size();
    f.result = omniscient_detect(population, epsilon, delta);
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace stcvae
