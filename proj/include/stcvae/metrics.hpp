#pragma once

// Disentanglement and information metrics: discrete MI, MIG, aggregate
// marginal entropy and omniscient-latent detection.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "stcvae/datasets.hpp"
#include "stcvae/gaussian.hpp"
#include "stcvae/linalg.hpp"

namespace stcvae {

/// Two-latent MIG with one omniscient latent: the runner-up MI is always 0.
class MigDistortionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Shannon entropy (nats) of a histogram. Zero cells contribute nothing.
inline double discrete_entropy(std::span<const double> counts) {
  double total = 0.0;
  for (double c : counts) {
    if (c < 0.0 || !std::isfinite(c)) throw std::invalid_argument("discrete_entropy: counts must be finite and >= 0");
    total += c;
  }
  if (total <= 0.0) throw std::invalid_argument("discrete_entropy: all-zero histogram");
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) h -= (c / total) * std::log(c / total);
  }
  return h;
}

/// I(a; b) in nats from a joint count table (rows a, columns b).
inline double mutual_info_discrete(const Matrix& counts) {
  double total = 0.0;
  for (double c : counts.data()) {
    if (c < 0.0 || !std::isfinite(c)) throw std::invalid_argument("mutual_info_discrete: counts must be finite and >= 0");
    total += c;
  }
  if (total <= 0.0) throw std::invalid_argument("mutual_info_discrete: all-zero table");
  std::vector<double> pa(counts.rows(), 0.0), pb(counts.cols(), 0.0);
  for (std::size_t i = 0; i < counts.rows(); ++i) {
    for (std::size_t j = 0; j < counts.cols(); ++j) {
      pa[i] += counts(i, j) / total;
      pb[j] += counts(i, j) / total;
    }
  }
  double mi = 0.0;
  for (std::size_t i = 0; i < counts.rows(); ++i) {
    for (std::size_t j = 0; j < counts.cols(); ++j) {
      const double p = counts(i, j) / total;
      if (p > 0.0) mi += p * std::log(p / (pa[i] * pb[j]));
    }
  }
  return std::max(mi, 0.0);
}

/// Equal-width bin index of every value over the empirical range; a constant
/// column lands entirely in bin 0.
inline std::vector<std::size_t> equal_width_bins(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("equal_width_bins: bins must be positive");
  if (values.empty()) return {};
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<std::size_t> out(values.size(), 0);
  if (!(hi > lo)) return out;
  for (std::size_t s = 0; s < values.size(); ++s) {
    const double t = (values[s] - lo) / (hi - lo) * static_cast<double>(bins);
    out[s] = std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, std::floor(t))));
  }
  return out;
}

struct MigReport {
  std::vector<double> per_factor_gap;
  double mig = 0.0;
  std::vector<std::vector<double>> mi_table;  // factor x latent, nats
};

/// MIG from latent codes (samples x latents, typically posterior means).
/// `omniscient` optionally flags latents; with exactly two latents and one
/// flagged the metric is refused.
inline MigReport mig(const Matrix& codes, const FactorDataset& dataset, std::size_t bins = 20,
                     const std::vector<bool>& omniscient = {}) {
  const std::size_t n = codes.rows();
  const std::size_t latents = codes.cols();
  if (latents < 2) throw std::invalid_argument("mig: need at least 2 latent dimensions");
  if (n != dataset.size()) throw ShapeError("mig: code rows do not match dataset size");
  if (n == 0) throw std::invalid_argument("mig: empty dataset");
  if (dataset.factor_count() == 0) throw std::invalid_argument("mig: dataset has no factors");
  if (!omniscient.empty() && omniscient.size() != latents) {
    throw ShapeError("mig: omniscient flags do not match latent count");
  }
  if (latents == 2 && std::count(omniscient.begin(), omniscient.end(), true) >= 1) {
    throw MigDistortionError(
        "mig: refused for 2 latents with an omniscient latent; the second highest mutual information will always "
        "be 0, resulting in MIG distortion");
  }

  std::vector<std::vector<std::size_t>> binned(latents);
  std::vector<double> column(n);
  for (std::size_t k = 0; k < latents; ++k) {
    for (std::size_t s = 0; s < n; ++s) column[s] = codes(s, k);
    binned[k] = equal_width_bins(column, bins);
  }

  MigReport report;
  for (std::size_t f = 0; f < dataset.factor_count(); ++f) {
    const std::size_t card = dataset.cardinalities[f];
    std::vector<double> marginal(card, 0.0);
    for (std::size_t s = 0; s < n; ++s) marginal[dataset.factor(s, f)] += 1.0;
    const double h = discrete_entropy(marginal);
    std::vector<double> row(latents);
    for (std::size_t k = 0; k < latents; ++k) {
      Matrix joint(card, bins);
      for (std::size_t s = 0; s < n; ++s) joint(dataset.factor(s, f), binned[k][s]) += 1.0;
      row[k] = mutual_info_discrete(joint);
    }
    std::vector<double> sorted = row;
    std::partial_sort(sorted.begin(), sorted.begin() + 2, sorted.end(), std::greater<>());
    // A constant factor carries no information to recover.
    report.per_factor_gap.push_back(h > 0.0 ? (sorted[0] - sorted[1]) / h : 0.0);
    report.mi_table.push_back(std::move(row));
  }
  double total = 0.0;
  for (double g : report.per_factor_gap) total += g;
  report.mig = total / static_cast<double>(report.per_factor_gap.size());
  return report;
}

/// Monte-Carlo differential entropy of one coordinate's aggregate posterior,
/// -mean_s log((1/M) sum_m N(z_s; mean_m, exp(log_var_m))).
inline double marginal_entropy_estimate(std::span<const double> z, std::span<const double> means,
                                        std::span<const double> log_vars) {
  if (z.size() < 100) throw std::invalid_argument("marginal_entropy_estimate: need at least 100 samples");
  if (means.empty() || means.size() != log_vars.size()) {
    throw ShapeError("marginal_entropy_estimate: mixture means and log-variances must be non-empty and equal length");
  }
  const double log_m = std::log(static_cast<double>(means.size()));
  std::vector<double> terms(means.size());
  double acc = 0.0;
  for (double zs : z) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < means.size(); ++m) {
      const double d = zs - means[m];
      terms[m] = -0.5 * (kLog2Pi + log_vars[m] + d * d * std::exp(-log_vars[m]));
      peak = std::max(peak, terms[m]);
    }
    double s = 0.0;
    for (double t : terms) s += std::exp(t - peak);
    acc += -(peak + std::log(s) - log_m);
  }
  return acc / static_cast<double>(z.size());
}

/// Per-dimension aggregate entropies from an (M, n) batch of posterior
/// parameters and samples.
inline std::vector<double> marginal_entropies(const Matrix& z, const Matrix& means, const Matrix& log_vars) {
  if (z.rows() != means.rows() || z.cols() != means.cols() || means.rows() != log_vars.rows() ||
      means.cols() != log_vars.cols()) {
    throw ShapeError("marginal_entropies: z, means and log-variances must share one (M, n) shape");
  }
  std::vector<double> out;
  std::vector<double> zc(z.rows()), mc(z.rows()), lc(z.rows());
  for (std::size_t k = 0; k < z.cols(); ++k) {
    for (std::size_t s = 0; s < z.rows(); ++s) {
      zc[s] = z(s, k);
      mc[s] = means(s, k);
      lc[s] = log_vars(s, k);
    }
    out.push_back(marginal_entropy_estimate(zc, mc, lc));
  }
  return out;
}

/// Discrete reading of the entropy threshold: Shannon entropy of the samples
/// histogrammed into equal-width bins. Logged next to the differential value.
inline double binned_entropy(std::span<const double> z, std::size_t bins = 20) {
  if (z.empty()) throw std::invalid_argument("binned_entropy: no samples");
  std::vector<double> hist(bins, 0.0);
  for (std::size_t b : equal_width_bins(z, bins)) hist[b] += 1.0;
  return discrete_entropy(hist);
}

struct OmniscientResult {
  bool flagged = false;
  std::vector<double> fraction_below;  // per dimension, over models
  std::size_t worst_dimension = 0;
};

/// Flags a configuration when, for some dimension, the fraction of trained
/// models whose entropy falls below epsilon is at least 1 - delta.
/// `entropies` is models x dimensions.
inline OmniscientResult omniscient_detect(const std::vector<std::vector<double>>& entropies, double epsilon = 1e-3,
                                          double delta = 1e-2) {
  if (!(epsilon > 0.0) || !(delta > 0.0)) throw std::invalid_argument("omniscient_detect: epsilon and delta must be > 0");
  if (entropies.empty()) throw std::invalid_argument("omniscient_detect: need at least one model");
  const std::size_t dims = entropies.front().size();
  for (const auto& row : entropies) {
    if (row.size() != dims) throw ShapeError("omniscient_detect: models disagree on dimension count");
  }
  OmniscientResult r;
  r.fraction_below.assign(dims, 0.0);
  for (std::size_t k = 0; k < dims; ++k) {
    std::size_t below = 0;
    for (const auto& row : entropies) below += row[k] < epsilon ? 1 : 0;
    r.fraction_below[k] = static_cast<double>(below) / static_cast<double>(entropies.size());
    if (r.fraction_below[k] > r.fraction_below[r.worst_dimension]) r.worst_dimension = k;
  }
  r.flagged = dims > 0 && r.fraction_below[r.worst_dimension] >= 1.0 - delta;
  return r;
}

/// Metric report with the fixed field names.
inline nlohmann::json metrics_json(const MigReport& report, const std::vector<double>& entropy, bool omniscient_flag) {
  return nlohmann::json{{"mig", report.mig},
                        {"per_factor_gap", report.per_factor_gap},
                        {"mi_table", report.mi_table},
                        {"entropy", entropy},
                        {"omniscient_flag", omniscient_flag}};
}

}  // namespace stcvae
