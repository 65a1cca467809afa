#pragma once

// Diagonal Gaussian posteriors (training path) and full-covariance Gaussian
// closed forms (exact oracle for every total-correlation quantity).
// All information quantities are in nats.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "stcvae/autodiff.hpp"
#include "stcvae/errors.hpp"
#include "stcvae/linalg.hpp"

namespace stcvae {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // ln(2*pi)

using IndexGroup = std::vector<std::size_t>;
using Partition = std::vector<IndexGroup>;

struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> log_var;

  std::size_t dim() const { return mean.size(); }

  void validate() const {
    if (mean.size() != log_var.size()) {
      throw ShapeError("DiagGaussian: mean has length " + std::to_string(mean.size()) + ", log_var has " +
                       std::to_string(log_var.size()));
    }
    for (double v : log_var) {
      if (!std::isfinite(v)) throw DomainError("DiagGaussian: non-finite log_var");
    }
  }
};

class FullGaussian {
 public:
  FullGaussian(std::vector<double> mean, Matrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
    if (cov_.rows() != cov_.cols() || cov_.rows() != mean_.size()) {
      throw ShapeError("FullGaussian: covariance is " + std::to_string(cov_.rows()) + "x" +
                       std::to_string(cov_.cols()) + " for a mean of length " + std::to_string(mean_.size()));
    }
    for (std::size_t i = 0; i < dim(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (std::abs(cov_(i, j) - cov_(j, i)) > 1e-12) {
          throw std::invalid_argument("FullGaussian: covariance is not symmetric");
        }
      }
    }
    cholesky(cov_);  // throws SingularMatrixError if not positive definite
  }

  /// Zero-mean Gaussian.
  explicit FullGaussian(Matrix cov) : FullGaussian(std::vector<double>(cov.rows(), 0.0), std::move(cov)) {}

  std::size_t dim() const { return mean_.size(); }
  const std::vector<double>& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }

 private:
  std::vector<double> mean_;
  Matrix cov_;
};

// ---- diagonal posteriors ---------------------------------------------------

/// z = mean + exp(log_var / 2) * noise.
inline std::vector<double> sample_reparam(const DiagGaussian& q, std::span<const double> noise) {
  q.validate();
  if (noise.size() != q.dim()) {
    throw ShapeError("sample_reparam: noise length " + std::to_string(noise.size()) + " != " +
                     std::to_string(q.dim()));
  }
  std::vector<double> z(q.dim());
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = q.mean[k] + std::exp(0.5 * q.log_var[k]) * noise[k];
  return z;
}

/// Differentiable reparameterized sample; all three tensors share one shape.
inline ad::Tensor sample_reparam(const ad::Tensor& mean, const ad::Tensor& log_var, const ad::Tensor& noise) {
  if (mean.shape() != log_var.shape() || mean.shape() != noise.shape()) {
    throw ShapeError("sample_reparam: shapes " + ad::to_string(mean.shape()) + ", " +
                     ad::to_string(log_var.shape()) + ", " + ad::to_string(noise.shape()) + " differ");
  }
  return mean + ad::exp(log_var * 0.5) * noise;
}

inline double log_pdf_diag(const DiagGaussian& q, std::span<const double> z) {
  q.validate();
  if (z.size() != q.dim()) throw ShapeError("log_pdf_diag: dimension mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double d = z[k] - q.mean[k];
    s += -0.5 * kLog2Pi - 0.5 * q.log_var[k] - 0.5 * d * d / std::exp(q.log_var[k]);
  }
  return s;
}

/// Elementwise log N(z; mean, exp(log_var)) with broadcasting; callers sum
/// over the latent axis.
inline ad::Tensor log_density_elementwise(const ad::Tensor& z, const ad::Tensor& mean, const ad::Tensor& log_var) {
  const ad::Tensor diff = z - mean;
  return (ad::square(diff) * ad::exp(-log_var) + log_var + kLog2Pi) * -0.5;
}

/// Per-dimension KL(q || N(0, 1)).
inline std::vector<double> kl_diag_to_standard(const DiagGaussian& q) {
  q.validate();
  std::vector<double> kl(q.dim());
  for (std::size_t k = 0; k < kl.size(); ++k) {
    kl[k] = 0.5 * (std::exp(q.log_var[k]) + q.mean[k] * q.mean[k] - 1.0 - q.log_var[k]);
  }
  return kl;
}

inline ad::Tensor kl_diag_to_standard(const ad::Tensor& mean, const ad::Tensor& log_var) {
  return (ad::exp(log_var) + ad::square(mean) - log_var - 1.0) * 0.5;
}

// ---- full-covariance oracle ------------------------------------------------

namespace detail {
inline void check_subset(std::span<const std::size_t> subset, std::size_t n, const char* op) {
  if (subset.empty()) throw std::invalid_argument(std::string(op) + ": empty index subset");
  std::vector<bool> seen(n, false);
  for (std::size_t i : subset) {
    if (i >= n) throw std::out_of_range(std::string(op) + ": index " + std::to_string(i) + " out of range");
    if (seen[i]) throw std::invalid_argument(std::string(op) + ": duplicate index " + std::to_string(i));
    seen[i] = true;
  }
}
}  // namespace detail

/// Differential entropy of the marginal over `subset`.
inline double entropy_full(const FullGaussian& g, std::span<const std::size_t> subset) {
  detail::check_subset(subset, g.dim(), "entropy_full");
  const double k = static_cast<double>(subset.size());
  return 0.5 * k * (kLog2Pi + 1.0) + 0.5 * log_det_spd(g.cov().principal(subset));
}

inline double entropy_full(const FullGaussian& g) {
  IndexGroup all(g.dim());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return entropy_full(g, all);
}

/// Throws unless `partition` covers 0..n-1 exactly once with non-empty groups.
inline void validate_partition(const Partition& partition, std::size_t n) {
  std::vector<int> count(n, 0);
  for (const auto& group : partition) {
    if (group.empty()) throw std::invalid_argument("partition: empty group");
    for (std::size_t i : group) {
      if (i >= n) throw std::invalid_argument("partition: index " + std::to_string(i) + " out of range");
      if (++count[i] > 1) throw std::invalid_argument("partition: index " + std::to_string(i) + " appears twice");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (count[i] == 0) throw std::invalid_argument("partition: index " + std::to_string(i) + " not covered");
  }
}

inline Partition singleton_partition(std::size_t n) {
  Partition p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = {i};
  return p;
}

/// KL(g || prod_j g[group_j]) = sum_j H(group_j) - H(all).
inline double tc_exact(const FullGaussian& g, const Partition& partition) {
  validate_partition(partition, g.dim());
  double s = -entropy_full(g);
  for (const auto& group : partition) s += entropy_full(g, group);
  return s;
}

/// I(A; B) = H(A) + H(B) - H(A u B) for disjoint index sets.
inline double mutual_info_exact(const FullGaussian& g, const IndexGroup& a, const IndexGroup& b) {
  IndexGroup both = a;
  both.insert(both.end(), b.begin(), b.end());
  detail::check_subset(both, g.dim(), "mutual_info_exact");
  return entropy_full(g, a) + entropy_full(g, b) - entropy_full(g, both);
}

}  // namespace stcvae
