#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "stcvae/tc_decomposition.hpp"
#include "test_support.hpp"

using namespace stcvae;

namespace {

std::vector<std::size_t> iota_vec(std::size_t n, std::size_t start = 0) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), start);
  return v;
}

Matrix correlated(std::size_t n, std::size_t a, std::size_t b, double rho) {
  Matrix c = Matrix::identity(n);
  c(a, b) = c(b, a) = rho;
  return c;
}

}  // namespace

// ---- pairing ---------------------------------------------------------------

TEST(AdjacentPairing, EvenCount) {
  const std::vector<std::size_t> idx{1, 2, 3, 4};
  const auto plan = make_adjacent_pairing(idx);
  ASSERT_EQ(plan.pairs.size(), 2u);
  EXPECT_EQ(plan.pairs[0], (std::pair<std::size_t, std::size_t>{1, 2}));
  EXPECT_EQ(plan.pairs[1], (std::pair<std::size_t, std::size_t>{3, 4}));
  EXPECT_FALSE(plan.remainder.has_value());
}

TEST(AdjacentPairing, OddCountKeepsLastAsRemainder) {
  const std::vector<std::size_t> idx{1, 2, 3, 4, 5};
  const auto plan = make_adjacent_pairing(idx);
  ASSERT_EQ(plan.pairs.size(), 2u);
  ASSERT_TRUE(plan.remainder.has_value());
  EXPECT_EQ(*plan.remainder, 5u);
}

TEST(AdjacentPairing, SinglePairAndEmptyInput) {
  const std::vector<std::size_t> idx{7, 9};
  const auto plan = make_adjacent_pairing(idx);
  ASSERT_EQ(plan.pairs.size(), 1u);
  EXPECT_EQ(plan.pairs[0], (std::pair<std::size_t, std::size_t>{7, 9}));
  EXPECT_THROW(make_adjacent_pairing(std::vector<std::size_t>{}), std::invalid_argument);
}

// ---- exact MU and grouped TC -----------------------------------------------

TEST(MuJointExact, DiagonalHasNoMutualInformation) {
  const FullGaussian g(Matrix::identity(4));
  const auto plan = make_adjacent_pairing(iota_vec(4));
  EXPECT_NEAR(mu_joint_exact(g, singleton_partition(4), plan), 0.0, 1e-12);
}

TEST(MuJointExact, SingleCorrelatedPair) {
  const FullGaussian g(correlated(4, 0, 1, 0.6));
  const auto plan = make_adjacent_pairing(iota_vec(4));
  EXPECT_NEAR(mu_joint_exact(g, singleton_partition(4), plan), -0.5 * std::log(1 - 0.36), 1e-12);
  EXPECT_NEAR(mu_joint_exact(g, singleton_partition(4), plan), 0.22314, 1e-5);
}

TEST(MuJointExact, TelescopesBetweenPartitions) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng() % 9;
    const FullGaussian g(test_support::random_spd(n, rng));
    const Partition fine = singleton_partition(n);
    const auto plan = make_adjacent_pairing(iota_vec(n));
    const double mu = mu_joint_exact(g, fine, plan);
    EXPECT_NEAR(mu, tc_exact(g, fine) - tc_exact(g, merge_pairs(fine, plan)), 1e-10);
    EXPECT_GE(mu, -1e-9);
  }
}

TEST(MuJointExact, RejectsMismatchedPlan) {
  const FullGaussian g(Matrix::identity(4));
  PairingPlan bad;
  bad.pairs = {{0, 1}};
  EXPECT_THROW(mu_joint_exact(g, singleton_partition(4), bad), std::invalid_argument);
  bad.pairs = {{0, 1}, {1, 2}};
  EXPECT_THROW(mu_joint_exact(g, singleton_partition(4), bad), std::invalid_argument);
}

TEST(TcJointExact, FactorOneIsFullTc) {
  std::mt19937_64 rng(4);
  const FullGaussian g(test_support::random_spd(6, rng));
  EXPECT_DOUBLE_EQ(tc_joint_exact(g, GroupingScheme(6, 1)), tc_exact(g, singleton_partition(6)));
}

TEST(TcJointExact, WithinGroupCorrelationIsReleased) {
  // Correlations only inside {0,1} and {2,3}.
  Matrix c = Matrix::identity(4);
  c(0, 1) = c(1, 0) = 0.5;
  c(2, 3) = c(3, 2) = -0.3;
  const FullGaussian g(c);
  EXPECT_NEAR(tc_joint_exact(g, GroupingScheme(4, 2)), 0.0, 1e-12);
  EXPECT_GT(tc_joint_exact(g, GroupingScheme(4, 1)), 0.1);
}

TEST(TcJointExact, SingleGroupAndBadFactor) {
  std::mt19937_64 rng(8);
  const FullGaussian g(test_support::random_spd(6, rng));
  EXPECT_NEAR(tc_joint_exact(g, GroupingScheme(6, 6)), 0.0, 1e-12);
  try {
    GroupingScheme bad(6, 4);
    FAIL();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('4'), std::string::npos);
    EXPECT_NE(msg.find('6'), std::string::npos);
  }
}

TEST(TcJointExact, NeverExceedsFullTc) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng() % 11;
    const FullGaussian g(test_support::random_spd(n, rng));
    const double full = tc_exact(g, singleton_partition(n));
    for (std::size_t i : enumerate_groupings(n)) EXPECT_LE(tc_joint_exact(g, GroupingScheme(n, i)), full + 1e-9);
  }
}

TEST(TcJointExact, InvariantUnderPermutationWithinGroups) {
  std::mt19937_64 rng(35);
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 12;
    const Matrix c = test_support::random_spd(n, rng);
    for (std::size_t i : {2u, 3u, 4u}) {
      std::vector<std::size_t> perm = iota_vec(n);
      for (std::size_t j = 0; j < n / i; ++j) {
        std::shuffle(perm.begin() + j * i, perm.begin() + (j + 1) * i, rng);
      }
      const GroupingScheme s(n, i);
      EXPECT_NEAR(tc_joint_exact(FullGaussian(c), s), tc_joint_exact(FullGaussian(c.principal(perm)), s), 1e-10);
    }
  }
}

// ---- decomposition ---------------------------------------------------------

TEST(DecomposeTcExact, DiagonalCovarianceGivesZeros) {
  for (std::size_t n : {2u, 3u, 5u, 8u}) {
    const auto trace = decompose_tc_exact(FullGaussian(Matrix::identity(n)));
    for (const auto& r : trace.rounds) EXPECT_NEAR(r.mu, 0.0, 1e-12);
    EXPECT_NEAR(trace.final_mi, 0.0, 1e-12);
    EXPECT_NEAR(trace.total_tc, 0.0, 1e-12);
  }
}

TEST(DecomposeTcExact, FourDimensionalIdentity) {
  std::mt19937_64 rng(2);
  const auto trace = decompose_tc_exact(FullGaussian(test_support::random_spd(4, rng)));
  ASSERT_EQ(trace.rounds.size(), 1u);
  EXPECT_NEAR(trace.identity_residual(), 0.0, 1e-8);
}

TEST(DecomposeTcExact, SixDimensionsCarriesRemainder) {
  std::mt19937_64 rng(6);
  const auto trace = decompose_tc_exact(FullGaussian(test_support::random_spd(6, rng)));
  // 6 singletons -> 3 pairs (odd) -> one merged pair + remainder.
  ASSERT_EQ(trace.rounds.size(), 2u);
  ASSERT_TRUE(trace.rounds[1].plan.remainder.has_value());
  EXPECT_EQ(trace.final_groups[0], (IndexGroup{0, 1, 2, 3}));
  EXPECT_EQ(trace.final_groups[1], (IndexGroup{4, 5}));
  EXPECT_NEAR(trace.identity_residual(), 0.0, 1e-8);
}

TEST(DecomposeTcExact, EightDimensionsTakesTwoMuRounds) {
  std::mt19937_64 rng(7);
  const auto trace = decompose_tc_exact(FullGaussian(test_support::random_spd(8, rng)));
  EXPECT_EQ(trace.rounds.size(), 2u);
}

TEST(DecomposeTcExact, RejectsOneDimension) {
  EXPECT_THROW(decompose_tc_exact(FullGaussian(Matrix::identity(1))), std::invalid_argument);
}

TEST(DecomposeTcExact, IdentityAndMonotonicityOnRandomCovariances) {
  std::mt19937_64 rng(1234);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng() % 11;
    const auto trace = decompose_tc_exact(FullGaussian(test_support::random_spd(n, rng)));
    EXPECT_NEAR(trace.identity_residual(), 0.0, 1e-8) << "n=" << n;
    double previous = trace.total_tc;
    for (const auto& r : trace.rounds) {
      EXPECT_LE(r.tc_joint, previous + 1e-9);
      EXPECT_GE(r.mu, -1e-9);
      previous = r.tc_joint;
    }
  }
}

TEST(DecomposeTcExact, AcceptsCustomPairingStrategy) {
  // Pair outermost first: (0, last), (1, last - 1), ...
  const PairingStrategy mirrored = [](std::span<const std::size_t> idx) {
    PairingPlan plan;
    std::size_t lo = 0, hi = idx.size() - 1;
    while (lo < hi) plan.pairs.emplace_back(idx[lo++], idx[hi--]);
    if (lo == hi) plan.remainder = idx[lo];
    return plan;
  };
  std::mt19937_64 rng(99);
  const auto trace = decompose_tc_exact(FullGaussian(test_support::random_spd(7, rng)), mirrored);
  EXPECT_NEAR(trace.identity_residual(), 0.0, 1e-8);
}

// ---- grouping factors ------------------------------------------------------

TEST(EnumerateGroupings, ProperDivisors) {
  EXPECT_EQ(enumerate_groupings(12), (std::vector<std::size_t>{1, 2, 3, 4, 6}));
  EXPECT_EQ(enumerate_groupings(6), (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(enumerate_groupings(7), (std::vector<std::size_t>{1}));
  EXPECT_THROW(enumerate_groupings(1), std::invalid_argument);
}

TEST(NormalizeCoefficient, DividesByLargestProperDivisor) {
  EXPECT_NEAR(normalize_coefficient(2, 12), 2.0 / 6.0, 1e-15);
  EXPECT_DOUBLE_EQ(normalize_coefficient(6, 12), 1.0);
  EXPECT_DOUBLE_EQ(normalize_coefficient(1, 7), 1.0);
  EXPECT_THROW(normalize_coefficient(5, 12), std::invalid_argument);
  EXPECT_THROW(normalize_coefficient(12, 12), std::invalid_argument);
}

TEST(NormalizeCoefficient, FactorOneAveragedOverDefaultDimensions) {
  double s = 0.0;
  const std::vector<std::size_t> dims{6, 8, 10, 12, 14, 16, 18, 20};
  for (std::size_t n : dims) s += normalize_coefficient(1, n);
  EXPECT_NEAR(s / dims.size(), 0.178, 1e-3);
  EXPECT_NEAR(s / dims.size(), 0.178621, 1e-6);
}

// ---- minibatch estimators --------------------------------------------------

namespace {

struct Batch {
  ad::Tensor mean, log_var, z;
};

// Posteriors N(mu_m, 0.5 I) with mu_m ~ N(0, C - 0.5 I), where C is the
// identity plus correlation rho between dims a and b. The aggregate over the
// posterior population is exactly N(0, C).
Batch correlated_batch(std::size_t m, std::size_t n, std::size_t a, std::size_t b, double rho, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  const double s = std::sqrt(0.5);
  std::vector<double> mu(m * n), lv(m * n, std::log(0.5)), z(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    // Covariance of mu restricted to (a, b) is [[.5, rho], [rho, .5]].
    const double e1 = normal(rng), e2 = normal(rng);
    for (std::size_t k = 0; k < n; ++k) mu[r * n + k] = s * normal(rng);
    const double l11 = s, l21 = rho / s, l22 = std::sqrt(std::max(0.0, 0.5 - l21 * l21));
    mu[r * n + a] = l11 * e1;
    mu[r * n + b] = l21 * e1 + l22 * e2;
    for (std::size_t k = 0; k < n; ++k) z[r * n + k] = mu[r * n + k] + s * normal(rng);
  }
  return {ad::Tensor({m, n}, mu), ad::Tensor({m, n}, lv), ad::Tensor({m, n}, z)};
}

}  // namespace

TEST(EstimateLogAggregates, SingleSampleDatasetWeighted) {
  const ad::Tensor mean({1, 3}, {0.1, -0.2, 0.3});
  const ad::Tensor lv({1, 3}, {0.0, 0.5, -0.5});
  const ad::Tensor z({1, 3}, {0.4, 0.1, -0.1});
  EstimatorOptions opts;
  opts.allow_single_sample = true;
  opts.normalization = DensityNormalization::kDatasetWeighted;
  const std::size_t n_data = 100;
  const auto agg = estimate_log_aggregates(mean, lv, z, GroupingScheme(3, 1), n_data, opts);
  const DiagGaussian q{{0.1, -0.2, 0.3}, {0.0, 0.5, -0.5}};
  const std::vector<double> zz{0.4, 0.1, -0.1};
  EXPECT_NEAR(agg.log_qz.item(), log_pdf_diag(q, zz) - std::log(100.0), 1e-12);
  EXPECT_THROW(estimate_log_aggregates(mean, lv, z, GroupingScheme(3, 1), n_data), std::invalid_argument);
}

TEST(EstimateLogAggregates, AllDimensionGroupMatchesJoint) {
  std::mt19937_64 rng(3);
  const auto b = correlated_batch(16, 4, 1, 2, 0.5, rng);
  const auto agg = estimate_log_aggregates(b.mean, b.log_var, b.z, GroupingScheme(4, 4), 16);
  for (std::size_t a = 0; a < 16; ++a) EXPECT_EQ(agg.log_q_groups[a], agg.log_qz[a]);
  EXPECT_THROW(estimate_log_aggregates(b.mean, b.log_var, b.z, GroupingScheme(4, 4), 8), std::invalid_argument);
}

TEST(EstimateLogAggregates, EqualPosteriorsRecoverClosedFormDensity) {
  const std::size_t m = 256, n = 3;
  const std::vector<double> mu0{0.5, -1.0, 0.2}, lv0{0.3, -0.4, 0.0};
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal;
  std::vector<double> mu, lv, z;
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t k = 0; k < n; ++k) {
      mu.push_back(mu0[k]);
      lv.push_back(lv0[k]);
      z.push_back(mu0[k] + std::exp(0.5 * lv0[k]) * normal(rng));
    }
  }
  const auto agg = estimate_log_aggregates(ad::Tensor({m, n}, mu), ad::Tensor({m, n}, lv), ad::Tensor({m, n}, z),
                                           GroupingScheme(n, 1), 1000);
  const DiagGaussian q{mu0, lv0};
  for (std::size_t a = 0; a < m; ++a) {
    const std::vector<double> za(z.begin() + a * n, z.begin() + (a + 1) * n);
    const double exact = std::exp(log_pdf_diag(q, za));
    EXPECT_LT(std::abs(std::exp(agg.log_qz[a]) - exact) / exact, 0.02);
  }
}

TEST(EstimateTcJoint, OneGroupIsExactlyZero) {
  std::mt19937_64 rng(5);
  const auto b = correlated_batch(32, 6, 1, 4, 0.5, rng);
  const auto agg = estimate_log_aggregates(b.mean, b.log_var, b.z, GroupingScheme(6, 6), 1000);
  EXPECT_EQ(estimate_tc_joint_minibatch(agg).item(), 0.0);
}

TEST(EstimateTcJoint, FactorOneMatchesPerDimensionRoute) {
  std::mt19937_64 rng(6);
  const auto b = correlated_batch(32, 6, 1, 4, 0.5, rng);
  const auto agg = estimate_log_aggregates(b.mean, b.log_var, b.z, GroupingScheme(6, 1), 1000);
  EXPECT_EQ(estimate_tc_joint_minibatch(agg).item(), estimate_tc_full_minibatch(agg).item());
  const auto sub = estimate_subgroup_tc_minibatch(agg);
  for (double v : sub.data()) EXPECT_EQ(v, 0.0);
}

TEST(EstimateTcJoint, PermutationInvariantOverBatchOrder) {
  std::mt19937_64 rng(8);
  const std::size_t m = 40, n = 4;
  const auto b = correlated_batch(m, n, 1, 2, 0.5, rng);
  std::vector<std::size_t> perm = iota_vec(m);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto permute = [&](const ad::Tensor& t) {
    std::vector<double> out(m * n);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t k = 0; k < n; ++k) out[r * n + k] = t[perm[r] * n + k];
    return ad::Tensor({m, n}, out);
  };
  const GroupingScheme s(n, 2);
  const double base = estimate_tc_joint_minibatch(estimate_log_aggregates(b.mean, b.log_var, b.z, s, 500)).item();
  const double shuffled = estimate_tc_joint_minibatch(
                              estimate_log_aggregates(permute(b.mean), permute(b.log_var), permute(b.z), s, 500))
                              .item();
  EXPECT_NEAR(base, shuffled, 1e-12);
}

TEST(EstimateTcJoint, ConsistentWithGaussianOracle) {
  const std::size_t m = 512, n = 4;
  const FullGaussian aggregate(correlated(n, 1, 2, 0.5));
  std::mt19937_64 rng(2024);
  for (std::size_t factor : {1u, 2u}) {
    const GroupingScheme s(n, factor);
    double total = 0.0;
    const int batches = 50;
    for (int k = 0; k < batches; ++k) {
      const auto b = correlated_batch(m, n, 1, 2, 0.5, rng);
      total += estimate_tc_joint_minibatch(estimate_log_aggregates(b.mean, b.log_var, b.z, s, 100000)).item();
    }
    const double exact = tc_joint_exact(aggregate, s);
    EXPECT_NEAR(exact, -0.5 * std::log(0.75), 1e-12);
    EXPECT_LT(std::abs(total / batches - exact) / exact, 0.05) << "factor " << factor;
  }
}

TEST(EstimateTcJoint, GradientsFlowToPosteriorParameters) {
  std::mt19937_64 rng(10);
  const auto b = correlated_batch(6, 4, 1, 2, 0.5, rng);
  const std::size_t m = 6, n = 4;
  std::vector<double> packed;
  for (const auto* t : {&b.mean, &b.log_var}) packed.insert(packed.end(), t->data().begin(), t->data().end());
  std::vector<double> noise(m * n);
  for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = (b.z[i] - b.mean[i]) / std::sqrt(0.5);
  const ad::Tensor eps({m, n}, noise);
  auto f = [&](const ad::Tensor& p) {
    const ad::Tensor mean = ad::reshape(ad::slice(p, 0, 0, m * n), {m, n});
    const ad::Tensor lv = ad::reshape(ad::slice(p, 0, m * n, m * n), {m, n});
    const ad::Tensor z = sample_reparam(mean, lv, eps);
    return estimate_tc_joint_minibatch(estimate_log_aggregates(mean, lv, z, GroupingScheme(n, 2), 100));
  };
  EXPECT_LT(ad::grad_check(f, ad::Tensor::vector(packed), 1e-5), 1e-4);
}
