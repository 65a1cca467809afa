#pragma once

// Oracle and property checks shared by `sweep verify` and the acceptance
// binary. Each check recomputes its reference values independently of the
// code under test (own elimination, brute-force sums, hand-built bytes).

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "stcvae/checkpoint.hpp"
#include "stcvae/datasets.hpp"
#include "stcvae/gaussian.hpp"
#include "stcvae/metrics.hpp"
#include "stcvae/reports.hpp"
#include "stcvae/sweep.hpp"
#include "stcvae/tc_decomposition.hpp"
#include "stcvae/vae.hpp"

namespace stcvae::verify {

struct CheckResult {
  int criterion = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

namespace oracle {

/// log|det A| by Gaussian elimination with partial pivoting.
inline double log_abs_det(Matrix a) {
  const std::size_t n = a.rows();
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(p, k))) p = i;
    if (p != k)
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(p, j));
    acc += std::log(std::abs(a(k, k)));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return acc;
}

/// Gaussian TC against a partition: (sum_g log det C_g - log det C) / 2.
inline double gaussian_tc(const Matrix& c, const Partition& parts) {
  double s = 0.0;
  for (const auto& g : parts) s += log_abs_det(c.principal(g));
  return 0.5 * (s - log_abs_det(c));
}

inline Matrix random_spd(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix a(n, n);
  for (double& v : a.data()) v = normal(rng);
  Matrix c(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += a(i, k) * a(j, k);
      c(i, j) = c(j, i) = s / static_cast<double>(n) + (i == j ? 0.05 : 0.0);
    }
  return c;
}

/// Random partition and a random coarsening of it.
inline std::pair<Partition, Partition> nested_partitions(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> label(n);
  const std::size_t fine_k = 1 + rng() % n;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i = 0; i < n; ++i) label[perm[i]] = i < fine_k ? i : rng() % fine_k;
  const std::size_t coarse_k = 1 + rng() % fine_k;
  std::vector<std::size_t> merge(fine_k);
  for (std::size_t g = 0; g < fine_k; ++g) merge[g] = g < coarse_k ? g : rng() % coarse_k;
  Partition fine(fine_k), coarse(coarse_k);
  for (std::size_t i = 0; i < n; ++i) {
    fine[label[i]].push_back(i);
    coarse[merge[label[i]]].push_back(i);
  }
  return {fine, coarse};
}

/// I(a; b) = H(a) + H(b) - H(a, b) from raw counts.
inline double mutual_info(const Matrix& t) {
  double total = 0.0;
  for (double v : t.data()) total += v;
  auto h = [&](const std::vector<double>& cells) {
    double s = 0.0;
    for (double c : cells)
      if (c > 0.0) s -= c / total * std::log(c / total);
    return s;
  };
  std::vector<double> rows(t.rows(), 0.0), cols(t.cols(), 0.0), all;
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) {
      rows[i] += t(i, j);
      cols[j] += t(i, j);
      all.push_back(t(i, j));
    }
  return h(rows) + h(cols) - h(all);
}

}  // namespace oracle

/// Posterior means and samples whose population aggregate is exactly
/// N(0, C), C the identity with correlation rho between dims a and b;
/// every posterior is N(mu_m, 0.5 I).
struct PosteriorBatch {
  ad::Tensor mean, log_var, z;
};

inline PosteriorBatch correlated_posterior_batch(std::size_t m, std::size_t n, std::size_t a, std::size_t b,
                                                 double rho, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  const double s = std::sqrt(0.5);
  const double l21 = rho / s, l22 = std::sqrt(std::max(0.0, 0.5 - l21 * l21));
  std::vector<double> mu(m * n), lv(m * n, std::log(0.5)), z(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t k = 0; k < n; ++k) mu[r * n + k] = s * normal(rng);
    const double e1 = normal(rng), e2 = normal(rng);
    mu[r * n + a] = s * e1;
    mu[r * n + b] = l21 * e1 + l22 * e2;
    for (std::size_t k = 0; k < n; ++k) z[r * n + k] = mu[r * n + k] + s * normal(rng);
  }
  return {ad::Tensor({m, n}, mu), ad::Tensor({m, n}, lv), ad::Tensor({m, n}, z)};
}

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream o;
  o.precision(4);
  o << v;
  return o.str();
}

inline CheckResult timed(int criterion, std::string name, const std::function<bool(std::string&)>& body) {
  CheckResult r;
  r.criterion = criterion;
  r.name = std::move(name);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    r.passed = body(r.detail);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace detail

inline CheckResult decomposition_identity() {
  return detail::timed(1, "decomposition identity", [](std::string& d) {
    std::mt19937_64 rng(101);
    double worst = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    for (int t = 0; t < 200; ++t) {
      const std::size_t n = 2 + rng() % 11;
      const Matrix c = oracle::random_spd(n, rng);
      const DecompositionTrace trace = decompose_tc_exact(FullGaussian(c));
      double mu_sum = 0.0;
      for (const auto& round : trace.rounds) mu_sum += round.mu;
      const double tc = oracle::gaussian_tc(c, singleton_partition(n));
      worst = std::max(worst, std::abs(tc - (mu_sum + trace.final_mi)));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    d = "200 covariances, max |TC - (sum MU + final MI)| = " + detail::fmt(worst) + " (tol 1e-8), " +
        detail::fmt(secs) + " s (limit 10 s)";
    return worst <= 1e-8 && secs < 10.0;
  });
}

inline CheckResult refinement_monotonicity() {
  return detail::timed(2, "coarser partitions never raise TC", [](std::string& d) {
    std::mt19937_64 rng(202);
    double worst = -1e300;
    const auto t0 = std::chrono::steady_clock::now();
    for (int t = 0; t < 500; ++t) {
      const std::size_t n = 2 + rng() % 11;
      const FullGaussian g(oracle::random_spd(n, rng));
      const auto [fine, coarse] = oracle::nested_partitions(n, rng);
      worst = std::max(worst, tc_exact(g, coarse) - tc_exact(g, fine));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    d = "500 nested pairs, max TC(coarse) - TC(fine) = " + detail::fmt(worst) + " (tol 1e-9), " + detail::fmt(secs) +
        " s (limit 10 s)";
    return worst <= 1e-9 && secs < 10.0;
  });
}

inline CheckResult reduction_identities() {
  return detail::timed(3, "objective reduction identities", [](std::string& d) {
    std::mt19937_64 rng(303);
    double worst_tc = 0.0, worst_hf = 0.0;
    for (int t = 0; t < 50; ++t) {
      const std::size_t n = (rng() % 2 == 0) ? 4 : 6;
      const EncoderDecoderConfig cfg{3 + rng() % 6, {2 + rng() % 6, 2 + rng() % 6}, n, Activation::kTanh,
                                     Likelihood::kBernoulli};
      const VaeParams p = VaeParams::init(cfg, rng());
      const std::size_t m = 4 + rng() % 29;
      std::vector<double> x(m * cfg.input_dim);
      for (double& v : x) v = static_cast<double>(rng() % 2);
      const ad::Tensor batch({m, cfg.input_dim}, x);
      const ad::Tensor noise = standard_normal({m, n}, rng);
      const double beta = 0.5 + static_cast<double>(rng() % 90) / 10.0;
      const auto t1 = elbo_terms(p, batch, GroupingScheme(n, 1), 1000, noise);
      const double a = loss_stcvae(t1, beta).item(), b = loss_tcvae(t1, beta).item();
      worst_tc = std::max(worst_tc, std::abs(a - b) / std::max(1.0, std::abs(b)));
      const auto t2 = elbo_terms(p, batch, GroupingScheme(n, 2), 1000, noise);
      const double c = loss_hfvae(t2, beta, 0.0).item(), e = loss_stcvae(t2, beta).item();
      worst_hf = std::max(worst_hf, std::abs(c - e) / std::max(1.0, std::abs(e)));
    }
    d = "50 batches, max rel diff i=1 vs beta-TCVAE " + detail::fmt(worst_tc) + ", gamma=0 vs grouped " +
        detail::fmt(worst_hf) + " (tol 1e-12)";
    return worst_tc <= 1e-12 && worst_hf <= 1e-12;
  });
}

inline CheckResult estimator_consistency() {
  return detail::timed(4, "minibatch TC estimator consistency", [](std::string& d) {
    const std::size_t m = 512, n = 4;
    const double closed_form = -0.5 * std::log(0.75);
    Matrix c = Matrix::identity(n);
    c(1, 2) = c(2, 1) = 0.5;
    std::mt19937_64 rng(404);
    bool ok = true;
    std::ostringstream o;
    for (std::size_t factor : {1u, 2u}) {
      const GroupingScheme scheme(n, factor);
      double total = 0.0;
      for (int k = 0; k < 50; ++k) {
        const auto b = correlated_posterior_batch(m, n, 1, 2, 0.5, rng);
        total += estimate_tc_joint_minibatch(estimate_log_aggregates(b.mean, b.log_var, b.z, scheme, 100000)).item();
      }
      const double est = total / 50.0;
      const double exact = oracle::gaussian_tc(c, scheme.groups());
      const double rel = std::abs(est - exact) / exact;
      const double rel_closed = std::abs(est - closed_form) / closed_form;
      ok = ok && rel < 0.05 && std::abs(tc_joint_exact(FullGaussian(c), scheme) - exact) < 1e-12;
      if (factor == 1) ok = ok && rel_closed < 0.05;
      o << "i=" << factor << ": estimate " << detail::fmt(est) << " vs exact " << detail::fmt(exact) << " (rel " << detail::fmt(rel) << "); ";
    }
    d = o.str() + "tol 5%";
    return ok;
  });
}

inline CheckResult gradient_correctness() {
  return detail::timed(5, "gradient check of the grouped loss", [](std::string& d) {
    std::mt19937_64 rng(505);
    double worst = 0.0;
    for (int t = 0; t < 10; ++t) {
      const std::size_t n = (t % 2 == 0) ? 2 : 4;
      const std::size_t factor = (n == 4 && t % 4 == 1) ? 2 : 1;
      const EncoderDecoderConfig cfg{2 + rng() % 4, {2 + rng() % 3, 2 + rng() % 3}, n, Activation::kTanh,
                                     t % 3 == 0 ? Likelihood::kGaussianFixedVariance : Likelihood::kBernoulli};
      const VaeParams base = VaeParams::init(cfg, rng());
      const std::size_t m = 3 + rng() % 3;
      std::vector<double> x(m * cfg.input_dim);
      for (double& v : x) v = static_cast<double>(rng() % 2);
      const ad::Tensor batch({m, cfg.input_dim}, x);
      const ad::Tensor noise = standard_normal({m, n}, rng);
      const double beta = 1.0 + static_cast<double>(rng() % 8);
      std::vector<double> flat;
      for (const auto& p : base.tensors()) flat.insert(flat.end(), p.data().begin(), p.data().end());
      auto f = [&](const ad::Tensor& theta) {
        std::size_t off = 0;
        auto take = [&](const ad::Tensor& like) {
          const ad::Tensor part = ad::reshape(ad::slice(theta, 0, off, like.size()), like.shape());
          off += like.size();
          return part;
        };
        std::vector<DenseLayer> enc, dec;
        for (const auto& l : base.encoder()) {
          ad::Tensor w = take(l.weight);
          enc.push_back({w, take(l.bias)});
        }
        for (const auto& l : base.decoder()) {
          ad::Tensor w = take(l.weight);
          dec.push_back({w, take(l.bias)});
        }
        const VaeParams p = VaeParams::from_layers(cfg, std::move(enc), std::move(dec));
        return loss_stcvae(elbo_terms(p, batch, GroupingScheme(n, factor), 50, noise), beta);
      };
      worst = std::max(worst, ad::grad_check(f, ad::Tensor::vector(flat), 1e-5));
    }
    d = "10 random configurations, max relative error " + detail::fmt(worst) + " (tol 1e-4)";
    return worst < 1e-4;
  });
}

inline CheckResult protocol_arithmetic() {
  return detail::timed(6, "grouping enumeration and reference coefficient", [](std::string& d) {
    const bool groups_ok = enumerate_groupings(12) == std::vector<std::size_t>{1, 2, 3, 4, 6};
    // 1/m for the largest proper divisor m of each default dimension.
    const std::vector<std::size_t> largest{3, 4, 5, 6, 7, 8, 9, 10};
    double mean = 0.0;
    for (std::size_t m : largest) mean += 1.0 / static_cast<double>(m);
    mean /= static_cast<double>(largest.size());
    const double computed = reference_coefficient(paper_dimensions());
    d = "enumerate_groupings(12) " + std::string(groups_ok ? "= {1,2,3,4,6}" : "differs") + ", mean coefficient " +
        detail::fmt(computed) + " (oracle " + detail::fmt(mean) + ", target 0.178 +/- 0.001)";
    return groups_ok && std::abs(computed - mean) < 1e-15 && std::abs(computed - 0.178) <= 1e-3;
  });
}

inline CheckResult mig_oracles() {
  return detail::timed(7, "MIG and discrete MI oracles", [](std::string& d) {
    const FactorDataset ds = gen_dsprites_mini();
    Matrix aligned(ds.size(), ds.factor_count());
    for (std::size_t s = 0; s < ds.size(); ++s)
      for (std::size_t f = 0; f < ds.factor_count(); ++f) aligned(s, f) = static_cast<double>(ds.factor(s, f));
    const double axis = mig(aligned, ds).mig;

    FactorDataset single;
    single.input_dim = 1;
    single.cardinalities = {6};
    for (std::size_t s = 0; s < 120; ++s) {
      single.samples.push_back(0.0);
      single.factors.push_back(s % 6);
    }
    Matrix dup(120, 2);
    for (std::size_t s = 0; s < 120; ++s) dup(s, 0) = dup(s, 1) = static_cast<double>(s % 6);
    const double gap = mig(dup, single).per_factor_gap.at(0);

    std::mt19937_64 rng(707);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      Matrix table(1 + rng() % 7, 1 + rng() % 7);
      for (double& v : table.data()) v = static_cast<double>(rng() % 25);
      table(0, 0) += 1.0;
      worst = std::max(worst, std::abs(mutual_info_discrete(table) - oracle::mutual_info(table)));
    }
    d = "axis-aligned mig " + detail::fmt(axis) + ", duplicated gap " + detail::fmt(gap) +
        ", max MI error over 100 tables " + detail::fmt(worst) + " (tols 1e-9, 1e-9, 1e-12)";
    return std::abs(axis - 1.0) <= 1e-9 && std::abs(gap) <= 1e-9 && worst <= 1e-12;
  });
}

inline CheckResult omniscient_detection() {
  return detail::timed(8, "omniscient-latent detection", [](std::string& d) {
    const double eps = 0.001, delta = 0.01;
    std::vector<std::vector<double>> flagged(1000, std::vector<double>{1.2, 0.8, -2.0, 1.0});
    for (std::size_t k = 0; k < 5; ++k) flagged[k][2] = 0.7;  // 995 of 1000 below epsilon
    std::vector<std::vector<double>> clean(1000, std::vector<double>{1.2, 0.8, 0.5, 1.0});
    const auto a = omniscient_detect(flagged, eps, delta);
    const auto b = omniscient_detect(clean, eps, delta);
    d = "99.5% population flagged=" + std::string(a.flagged ? "yes" : "no") + " (fraction " +
        detail::fmt(a.fraction_below[2]) + "), clean population flagged=" + (b.flagged ? "yes" : "no");
    return a.flagged && a.worst_dimension == 2 && !b.flagged;
  });
}

inline CheckResult serialization_round_trips() {
  return detail::timed(10, "checkpoint and IDX round-trips", [](std::string& d) {
    std::mt19937_64 rng(1010);
    bool ok = true;
    for (int t = 0; t < 25; ++t) {
      std::vector<NamedTensor> tensors;
      for (std::size_t k = 0, count = 1 + rng() % 4; k < count; ++k) {
        NamedTensor nt;
        nt.name = "t" + std::to_string(rng() % 1000);
        for (std::size_t r = 0, rank = rng() % 4; r < rank; ++r) nt.shape.push_back(1 + rng() % 4);
        for (std::size_t i = 0; i < ad::numel(nt.shape); ++i) nt.data.push_back(std::bit_cast<double>(rng()));
        tensors.push_back(std::move(nt));
      }
      std::stringstream ss;
      write_checkpoint(ss, tensors);
      const auto back = read_checkpoint(ss);
      for (std::size_t k = 0; k < tensors.size(); ++k) {
        ok = ok && back[k].name == tensors[k].name && back[k].shape == tensors[k].shape;
        for (std::size_t i = 0; i < tensors[k].data.size(); ++i) {
          ok = ok && std::bit_cast<std::uint64_t>(back[k].data[i]) == std::bit_cast<std::uint64_t>(tensors[k].data[i]);
        }
      }
    }
    // Hand-built checkpoint: one tensor "x" of shape [2] holding 1.0 and -2.0.
    const std::string fixture("STCV\x01\0\0\0\x01\0\0\0\x01\0\0\0x\x01\0\0\0\x02\0\0\0"
                              "\0\0\0\0\0\0\xf0\x3f\0\0\0\0\0\0\0\xc0",
                              41);
    std::stringstream fs(fixture);
    const auto parsed = read_checkpoint(fs);
    ok = ok && parsed.size() == 1 && parsed[0].name == "x" && parsed[0].data == std::vector<double>{1.0, -2.0};
    std::stringstream rewritten;
    write_checkpoint(rewritten, parsed);
    ok = ok && rewritten.str() == fixture;

    for (int t = 0; t < 25; ++t) {
      IdxArray a;
      a.magic = t % 2 ? kIdxLabels : kIdxImages;
      a.dims = t % 2 ? std::vector<std::uint32_t>{static_cast<std::uint32_t>(1 + rng() % 50)}
                     : std::vector<std::uint32_t>{static_cast<std::uint32_t>(1 + rng() % 4),
                                                  static_cast<std::uint32_t>(1 + rng() % 6),
                                                  static_cast<std::uint32_t>(1 + rng() % 6)};
      std::size_t total = 1;
      for (auto v : a.dims) total *= v;
      for (std::size_t i = 0; i < total; ++i) a.data.push_back(static_cast<std::uint8_t>(rng()));
      ok = ok && read_idx(write_idx(a)) == a;
    }
    const std::vector<std::uint8_t> images{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 9, 8, 7, 6, 5, 4, 3, 2};
    const IdxArray im = read_idx(images);
    ok = ok && im.dims == std::vector<std::uint32_t>{2, 2, 2} && im.data.front() == 9 && im.data.back() == 2 &&
         write_idx(im) == images;
    const std::vector<std::uint8_t> labels{0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3};
    ok = ok && read_idx(labels).data == std::vector<std::uint8_t>{1, 2, 3};
    d = "25 random checkpoints, 25 random IDX arrays and hand-built fixtures " + std::string(ok ? "match" : "differ");
    return ok;
  });
}

/// The fast checks (every criterion except the end-to-end sweep).
inline std::vector<CheckResult> run_oracle_suite() {
  return {decomposition_identity(), refinement_monotonicity(), reduction_identities(), estimator_consistency(),
          gradient_correctness(),   protocol_arithmetic(),     mig_oracles(),          omniscient_detection(),
          serialization_round_trips()};
}

/// Sweep settings of the desk-scale end-to-end run.
inline SweepConfig end_to_end_config() {
  SweepConfig c;
  c.dimensions = {6};
  c.capacities = {256};
  c.betas = {4.0};
  c.repeats = 3;
  c.iterations = 2000;
  c.batch_size = 64;
  c.seed = 2024;
  return c;
}

namespace detail {

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

/// records.csv with the wall-time column blanked.
inline std::string csv_without_wall_time(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  auto rows = parse_csv(is);
  std::ostringstream o;
  for (auto& row : rows) {
    if (!row.empty()) row.back().clear();
    for (const auto& f : row) o << f << '\x1f';
    o << '\n';
  }
  return o.str();
}

/// Minimal well-formedness: balanced, properly nested tags.
inline bool balanced_xml(const std::string& s) {
  std::vector<std::string> stack;
  for (std::size_t i = s.find('<'); i != std::string::npos; i = s.find('<', i + 1)) {
    const std::size_t j = s.find('>', i);
    if (j == std::string::npos) return false;
    const std::string tag = s.substr(i + 1, j - i - 1);
    if (tag.empty() || tag[0] == '?' || tag[0] == '!') continue;
    if (tag.back() == '/') continue;
    if (tag[0] == '/') {
      if (stack.empty() || stack.back() != tag.substr(1)) return false;
      stack.pop_back();
    } else {
      stack.push_back(tag.substr(0, tag.find_first_of(" \t\n")));
    }
  }
  return stack.empty();
}

}  // namespace detail

/// Runs the end-to-end sweep twice into `work_dir`/a and `work_dir`/b.
inline CheckResult end_to_end(const std::filesystem::path& work_dir, std::size_t workers = 1) {
  return detail::timed(9, "desk-scale end-to-end sweep", [&](std::string& d) {
    const SweepConfig config = end_to_end_config();
    const PreparedData data = prepare_data(load_dataset(config), config);
    const auto trials = expand_grid(config);
    double slowest = 0.0;
    std::vector<std::filesystem::path> dirs{work_dir / "a", work_dir / "b"};
    std::vector<SweepRecord> first;
    for (const auto& dir : dirs) {
      const auto t0 = std::chrono::steady_clock::now();
      auto records = run_sweep(config, data, trials, workers);
      emit_reports(records, dir, ReportSettings{config.epsilon, config.delta, config.dimensions}, config.capacities);
      slowest = std::max(slowest, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      if (first.empty()) first = std::move(records);
    }
    std::size_t ok = 0, improved = 0;
    for (const auto& r : first) {
      if (!r.ok) continue;
      ++ok;
      improved += r.final_elbo > r.initial_elbo ? 1 : 0;
    }
    const bool deterministic =
        detail::csv_without_wall_time(dirs[0] / "records.csv") == detail::csv_without_wall_time(dirs[1] / "records.csv");
    const std::string svg = detail::read_file(dirs[0] / "trajectory.svg");
    const bool svg_ok = svg.find("<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\"") != std::string::npos &&
                        svg.find("id=\"reference\" data-coefficient=\"0.17799999999999999\"") != std::string::npos &&
                        detail::balanced_xml(svg);
    d = std::to_string(trials.size()) + " trials, " + std::to_string(ok) + " ok, " + std::to_string(improved) +
        " improved ELBO; records.csv " + (deterministic ? "identical" : "DIFFERS") + " across runs; svg " +
        (svg_ok ? "valid with 0.178 line" : "INVALID") + "; slowest run " + detail::fmt(slowest) + " s (limit 600 s)";
    return trials.size() == 9 && ok > 0 && improved == ok && deterministic && svg_ok && slowest < 600.0;
  });
}

inline std::string format_line(const CheckResult& r) {
  std::ostringstream o;
  o << "criterion " << r.criterion << ": " << (r.passed ? "PASS" : "FAIL") << "  " << r.name << "  [" << r.detail
    << "]";
  return o.str();
}

}  // namespace stcvae::verify
