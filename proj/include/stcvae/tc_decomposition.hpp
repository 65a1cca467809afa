#pragma once

// Grouped total correlation.
//
// Exact side: bottom-up tree decomposition of TC(z) for a full Gaussian.
// Starting from singleton groups, every round pairs the current groups
// (adjacent pairing by default), records the mutual information released by
// the merges (MU) and the TC remaining between the merged groups (TC_joint),
// and stops once two groups remain. Then
//
//     TC(z) = MU_1 + MU_2 + ... + I(last group 1; last group 2).
//
// Estimator side: minibatch mixture estimates of log q(z), log q(group_j) and
// log q(z_k), differentiable with respect to the posterior parameters, from
// which the grouped-TC training penalties are assembled.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stcvae/autodiff.hpp"
#include "stcvae/errors.hpp"
#include "stcvae/gaussian.hpp"

namespace stcvae {

struct PairingPlan {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::optional<std::size_t> remainder;
};

/// (1st, 2nd), (3rd, 4th), ...; the last index is the remainder when the
/// count is odd.
inline PairingPlan make_adjacent_pairing(std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_adjacent_pairing: empty index list");
  PairingPlan plan;
  for (std::size_t k = 0; k + 1 < indices.size(); k += 2) plan.pairs.emplace_back(indices[k], indices[k + 1]);
  if (indices.size() % 2 == 1) plan.remainder = indices.back();
  return plan;
}

/// Chooses which groups merge in one round, given their positions.
using PairingStrategy = std::function<PairingPlan(std::span<const std::size_t>)>;

/// Contiguous grouping of n latent indices into n / factor blocks of size factor.
class GroupingScheme {
 public:
  GroupingScheme(std::size_t n, std::size_t factor) : n_(n), factor_(factor) {
    if (factor == 0 || n == 0 || n % factor != 0) {
      throw std::invalid_argument("GroupingScheme: grouping factor " + std::to_string(factor) +
                                  " does not divide dimension " + std::to_string(n));
    }
  }

  std::size_t dimension() const { return n_; }
  std::size_t factor() const { return factor_; }
  std::size_t group_count() const { return n_ / factor_; }

  Partition groups() const {
    Partition p(group_count());
    for (std::size_t j = 0; j < p.size(); ++j)
      for (std::size_t k = 0; k < factor_; ++k) p[j].push_back(j * factor_ + k);
    return p;
  }

 private:
  std::size_t n_;
  std::size_t factor_;
};

// ---- exact decomposition ---------------------------------------------------

namespace detail {
inline void check_plan(const PairingPlan& plan, std::size_t group_count) {
  std::vector<int> seen(group_count, 0);
  auto mark = [&](std::size_t g) {
    if (g >= group_count || seen[g]++ != 0) {
      throw std::invalid_argument("pairing plan does not match the current partition (group " + std::to_string(g) +
                                  ")");
    }
  };
  for (const auto& [a, b] : plan.pairs) {
    mark(a);
    mark(b);
  }
  if (plan.remainder) mark(*plan.remainder);
  for (std::size_t g = 0; g < group_count; ++g) {
    if (seen[g] == 0) throw std::invalid_argument("pairing plan leaves group " + std::to_string(g) + " unassigned");
  }
  if (plan.remainder.has_value() != (group_count % 2 == 1)) {
    throw std::invalid_argument("pairing plan remainder inconsistent with group count parity");
  }
}
}  // namespace detail

/// Groups after merging each planned pair; the remainder group goes last.
inline Partition merge_pairs(const Partition& current, const PairingPlan& plan) {
  detail::check_plan(plan, current.size());
  Partition merged;
  for (const auto& [a, b] : plan.pairs) {
    IndexGroup g = current[a];
    g.insert(g.end(), current[b].begin(), current[b].end());
    merged.push_back(std::move(g));
  }
  if (plan.remainder) merged.push_back(current[*plan.remainder]);
  return merged;
}

/// Sum over planned pairs (A, B) of I(A; B). Plan entries are positions in `current`.
inline double mu_joint_exact(const FullGaussian& g, const Partition& current, const PairingPlan& plan) {
  validate_partition(current, g.dim());
  detail::check_plan(plan, current.size());
  double mu = 0.0;
  for (const auto& [a, b] : plan.pairs) mu += mutual_info_exact(g, current[a], current[b]);
  return mu;
}

inline double tc_joint_exact(const FullGaussian& g, const GroupingScheme& scheme) {
  if (scheme.dimension() != g.dim()) {
    throw std::invalid_argument("tc_joint_exact: scheme is for dimension " + std::to_string(scheme.dimension()) +
                                ", Gaussian has " + std::to_string(g.dim()));
  }
  return tc_exact(g, scheme.groups());
}

struct DecompositionRound {
  Partition groups_before;
  PairingPlan plan;
  double mu = 0.0;        // information released by this round's merges
  double tc_joint = 0.0;  // TC between the merged groups
};

struct DecompositionTrace {
  std::vector<DecompositionRound> rounds;
  Partition final_groups;  // exactly two
  double final_mi = 0.0;
  double total_tc = 0.0;

  /// total_tc - (sum of MU + final_mi); zero up to round-off.
  double identity_residual() const {
    double s = final_mi;
    for (const auto& r : rounds) s += r.mu;
    return total_tc - s;
  }
};

inline DecompositionTrace decompose_tc_exact(const FullGaussian& g,
                                             const PairingStrategy& strategy = make_adjacent_pairing) {
  if (g.dim() < 2) throw std::invalid_argument("decompose_tc_exact: need at least 2 dimensions");
  DecompositionTrace trace;
  Partition groups = singleton_partition(g.dim());
  trace.total_tc = tc_exact(g, groups);
  while (groups.size() > 2) {
    std::vector<std::size_t> positions(groups.size());
    for (std::size_t k = 0; k < positions.size(); ++k) positions[k] = k;
    DecompositionRound round;
    round.plan = strategy(positions);
    round.mu = mu_joint_exact(g, groups, round.plan);
    round.groups_before = groups;
    groups = merge_pairs(groups, round.plan);
    round.tc_joint = tc_exact(g, groups);
    trace.rounds.push_back(std::move(round));
  }
  trace.final_groups = groups;
  trace.final_mi = mutual_info_exact(g, groups[0], groups[1]);
  return trace;
}

// ---- grouping factors ------------------------------------------------------

/// Divisors of n strictly below n, ascending.
inline std::vector<std::size_t> enumerate_groupings(std::size_t n) {
  if (n < 2) throw std::invalid_argument("enumerate_groupings: dimension must be at least 2");
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i < n; ++i)
    if (n % i == 0) out.push_back(i);
  return out;
}

inline std::size_t largest_proper_divisor(std::size_t n) { return enumerate_groupings(n).back(); }

/// Grouping coefficient i / m, m the largest proper divisor of n.
inline double normalize_coefficient(std::size_t factor, std::size_t n) {
  if (n < 2 || factor == 0 || factor >= n || n % factor != 0) {
    throw std::invalid_argument("normalize_coefficient: " + std::to_string(factor) +
                                " is not a proper divisor of " + std::to_string(n));
  }
  return static_cast<double>(factor) / static_cast<double>(largest_proper_divisor(n));
}

// ---- minibatch estimators --------------------------------------------------

enum class DensityNormalization {
  /// q^(.) = (1/M) sum_m q(. | x_m): consistent for the aggregate density.
  kBatchMixture,
  /// q^(.) = (1/(N M)) sum_m q(. | x_m): shifts every log density by -log N.
  kDatasetWeighted,
};

struct EstimatorOptions {
  DensityNormalization normalization = DensityNormalization::kBatchMixture;
  bool allow_single_sample = false;  // testing only; M = 1 makes the mixture degenerate
};

struct LogAggregates {
  ad::Tensor log_qz;        // (M)
  ad::Tensor log_q_groups;  // (M, n / factor)
  ad::Tensor log_q_dims;    // (M, n)
  std::size_t factor = 1;
};

/// Mixture estimates of log q(z), log q(group_j), log q(z_k) at each sample
/// z_a, using the batch posteriors N(mean_m, exp(log_var_m)) as components.
/// mean, log_var and z are (M, n).
inline LogAggregates estimate_log_aggregates(const ad::Tensor& mean, const ad::Tensor& log_var, const ad::Tensor& z,
                                             const GroupingScheme& scheme, std::size_t dataset_size,
                                             const EstimatorOptions& options = {}) {
  if (mean.rank() != 2 || mean.shape() != log_var.shape() || mean.shape() != z.shape()) {
    throw ShapeError("estimate_log_aggregates: expected equal (M, n) shapes, got " + ad::to_string(mean.shape()) +
                     ", " + ad::to_string(log_var.shape()) + ", " + ad::to_string(z.shape()));
  }
  const std::size_t m = mean.dim(0);
  const std::size_t n = mean.dim(1);
  if (scheme.dimension() != n) throw std::invalid_argument("estimate_log_aggregates: scheme dimension mismatch");
  if (m < 2 && !options.allow_single_sample) {
    throw std::invalid_argument("estimate_log_aggregates: batch size must be at least 2");
  }
  if (dataset_size < m) throw std::invalid_argument("estimate_log_aggregates: dataset smaller than batch");

  double log_norm = std::log(static_cast<double>(m));
  if (options.normalization == DensityNormalization::kDatasetWeighted) {
    log_norm += std::log(static_cast<double>(dataset_size));
  }

  // dens[a, b, k] = log q(z_a[k] | x_b)
  const ad::Tensor dens = log_density_elementwise(ad::reshape(z, {m, 1, n}), mean, log_var);
  const std::size_t g = scheme.group_count();
  const std::size_t i = scheme.factor();

  LogAggregates out;
  out.factor = i;
  out.log_qz = ad::logsumexp(ad::sum(dens, 2), 1) - log_norm;
  out.log_q_groups = ad::logsumexp(ad::sum(ad::reshape(dens, {m, m, g, i}), 3), 1) - log_norm;
  out.log_q_dims = ad::logsumexp(dens, 1) - log_norm;
  return out;
}

/// Batch mean of log q(z) - sum_j log q(group_j).
inline ad::Tensor estimate_tc_joint_minibatch(const LogAggregates& agg) {
  return ad::mean(agg.log_qz - ad::sum(agg.log_q_groups, 1));
}

/// Batch mean of log q(z) - sum_k log q(z_k), via the per-dimension estimates.
inline ad::Tensor estimate_tc_full_minibatch(const LogAggregates& agg) {
  return ad::mean(agg.log_qz - ad::sum(agg.log_q_dims, 1));
}

/// Per-group TC within each block, shape (n / factor).
inline ad::Tensor estimate_subgroup_tc_minibatch(const LogAggregates& agg) {
  const std::size_t m = agg.log_q_dims.dim(0);
  const std::size_t g = agg.log_q_groups.dim(1);
  const ad::Tensor dims_per_group = ad::sum(ad::reshape(agg.log_q_dims, {m, g, agg.factor}), 2);
  return ad::mean(agg.log_q_groups - dims_per_group, 0);
}

}  // namespace stcvae
