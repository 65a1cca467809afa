#pragma once

// Multilayer-perceptron VAE with the decomposed ELBO
//
//   E[log p(x|z)] - I(z; x) - TC_joint(z) - sum_j KL(q(z_j) || p(z_j))
//
// and the objective family built on it: the grouped-TC objective (beta on
// the between-group TC only), its factor-one special case with the full TC,
// the HFVAE variant that also penalizes TC inside each group, and beta-VAE.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stcvae/autodiff.hpp"
#include "stcvae/checkpoint.hpp"
#include "stcvae/gaussian.hpp"
#include "stcvae/tc_decomposition.hpp"

namespace stcvae {

enum class Activation { kTanh, kRelu };
enum class Likelihood { kBernoulli, kGaussianFixedVariance };

struct EncoderDecoderConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_widths;
  std::size_t latent_dim = 0;
  Activation activation = Activation::kTanh;
  Likelihood likelihood = Likelihood::kBernoulli;

  void validate() const {
    if (input_dim < 1) throw std::invalid_argument("EncoderDecoderConfig: input_dim must be >= 1");
    if (latent_dim < 2) throw std::invalid_argument("EncoderDecoderConfig: latent_dim must be >= 2");
    if (hidden_widths.empty()) throw std::invalid_argument("EncoderDecoderConfig: hidden_widths is empty");
    for (std::size_t w : hidden_widths) {
      if (w == 0) throw std::invalid_argument("EncoderDecoderConfig: zero-width hidden layer");
    }
  }

  /// Capacity knob: two hidden layers of width capacity / 4 in both encoder
  /// and decoder, so the total hidden-unit count is about `capacity`.
  static EncoderDecoderConfig from_capacity(std::size_t input_dim, std::size_t capacity, std::size_t latent_dim,
                                            Activation activation = Activation::kTanh,
                                            Likelihood likelihood = Likelihood::kBernoulli) {
    if (capacity < 4) throw std::invalid_argument("from_capacity: capacity must be at least 4");
    EncoderDecoderConfig c{input_dim, {capacity / 4, capacity / 4}, latent_dim, activation, likelihood};
    c.validate();
    return c;
  }
};

struct LossBreakdown {
  double recon = 0.0;     // E[log p(x|z)], nats per sample
  double mi = 0.0;        // I(z; x) estimate
  double tc_joint = 0.0;  // between-group TC estimate
  double dim_kl = 0.0;    // sum_j KL(q(z_j) || p(z_j)) estimate
  double beta = 1.0;
  double gamma = 0.0;
  double full_kl = 0.0;   // closed-form mean KL(q(z|x) || p(z))
  double loss = 0.0;

  bool finite() const {
    for (double v : {recon, mi, tc_joint, dim_kl, full_kl, loss})
      if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Non-finite activation or loss during training.
class TrainingFault : public std::runtime_error {
 public:
  TrainingFault(const std::string& what, std::optional<std::size_t> layer = {},
                std::optional<LossBreakdown> breakdown = {})
      : std::runtime_error(what), layer_(layer), breakdown_(breakdown) {}

  std::optional<std::size_t> layer() const { return layer_; }
  const std::optional<LossBreakdown>& breakdown() const { return breakdown_; }

 private:
  std::optional<std::size_t> layer_;
  std::optional<LossBreakdown> breakdown_;
};

struct DenseLayer {
  ad::Tensor weight;  // (in, out)
  ad::Tensor bias;    // (out)
};

class VaeParams {
 public:
  /// Glorot-uniform weights, zero biases.
  static VaeParams init(const EncoderDecoderConfig& config, std::uint64_t seed) {
    config.validate();
    VaeParams p;
    p.config_ = config;
    std::mt19937_64 rng(seed);
    auto layer = [&](std::size_t in, std::size_t out) {
      const double a = std::sqrt(6.0 / static_cast<double>(in + out));
      std::uniform_real_distribution<double> u(-a, a);
      std::vector<double> w(in * out);
      for (double& v : w) v = u(rng);
      return DenseLayer{ad::Tensor({in, out}, std::move(w), true), ad::Tensor::zeros({out}, true)};
    };
    std::size_t in = config.input_dim;
    for (std::size_t w : config.hidden_widths) {
      p.encoder_.push_back(layer(in, w));
      in = w;
    }
    p.encoder_.push_back(layer(in, 2 * config.latent_dim));
    in = config.latent_dim;
    for (std::size_t w : config.hidden_widths) {
      p.decoder_.push_back(layer(in, w));
      in = w;
    }
    p.decoder_.push_back(layer(in, config.input_dim));
    return p;
  }

  /// Wraps existing layer tensors; shapes must match `config`.
  static VaeParams from_layers(const EncoderDecoderConfig& config, std::vector<DenseLayer> encoder,
                               std::vector<DenseLayer> decoder) {
    const VaeParams reference = init(config, 0);
    auto same = [](const std::vector<DenseLayer>& a, const std::vector<DenseLayer>& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k].weight.shape() != b[k].weight.shape() || a[k].bias.shape() != b[k].bias.shape()) return false;
      }
      return true;
    };
    if (!same(encoder, reference.encoder_) || !same(decoder, reference.decoder_)) {
      throw ShapeError("VaeParams::from_layers: layer shapes do not match the configuration");
    }
    VaeParams p;
    p.config_ = config;
    p.encoder_ = std::move(encoder);
    p.decoder_ = std::move(decoder);
    return p;
  }

  const EncoderDecoderConfig& config() const { return config_; }
  const std::vector<DenseLayer>& encoder() const { return encoder_; }
  const std::vector<DenseLayer>& decoder() const { return decoder_; }
  std::vector<DenseLayer>& encoder() { return encoder_; }
  std::vector<DenseLayer>& decoder() { return decoder_; }

  /// Parameter handles in a fixed order (encoder then decoder, weight then bias).
  std::vector<ad::Tensor> tensors() const {
    std::vector<ad::Tensor> out;
    for (const auto* stack : {&encoder_, &decoder_}) {
      for (const DenseLayer& l : *stack) {
        out.push_back(l.weight);
        out.push_back(l.bias);
      }
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += t.size();
    return n;
  }

  /// Deep copy (tensors are shared handles).
  VaeParams clone() const {
    VaeParams p;
    p.config_ = config_;
    for (const auto& [src, dst] : {std::pair{&encoder_, &p.encoder_}, std::pair{&decoder_, &p.decoder_}}) {
      for (const DenseLayer& l : *src) {
        DenseLayer c{l.weight.detach(), l.bias.detach()};
        c.weight.set_requires_grad(true);
        c.bias.set_requires_grad(true);
        dst->push_back(std::move(c));
      }
    }
    return p;
  }

  std::vector<NamedTensor> to_named() const {
    std::vector<NamedTensor> out;
    auto add = [&](const std::string& name, const ad::Tensor& t) {
      out.push_back({name, t.shape(), {t.data().begin(), t.data().end()}});
    };
    for (std::size_t k = 0; k < encoder_.size(); ++k) {
      add("encoder." + std::to_string(k) + ".weight", encoder_[k].weight);
      add("encoder." + std::to_string(k) + ".bias", encoder_[k].bias);
    }
    for (std::size_t k = 0; k < decoder_.size(); ++k) {
      add("decoder." + std::to_string(k) + ".weight", decoder_[k].weight);
      add("decoder." + std::to_string(k) + ".bias", decoder_[k].bias);
    }
    out.push_back({"meta.activation", {1}, {config_.activation == Activation::kTanh ? 0.0 : 1.0}});
    out.push_back({"meta.likelihood", {1}, {config_.likelihood == Likelihood::kBernoulli ? 0.0 : 1.0}});
    return out;
  }

  /// Rebuilds parameters (and the architecture) from checkpoint tensors.
  static VaeParams from_named(std::span<const NamedTensor> named) {
    auto find = [&](const std::string& name) -> const NamedTensor* {
      for (const auto& t : named)
        if (t.name == name) return &t;
      return nullptr;
    };
    auto load_stack = [&](const std::string& prefix) {
      std::vector<DenseLayer> stack;
      for (std::size_t k = 0;; ++k) {
        const NamedTensor* w = find(prefix + "." + std::to_string(k) + ".weight");
        const NamedTensor* b = find(prefix + "." + std::to_string(k) + ".bias");
        if (w == nullptr || b == nullptr) break;
        if (w->shape.size() != 2 || b->shape.size() != 1 || b->shape[0] != w->shape[1]) {
          throw FormatError("checkpoint: malformed layer " + prefix + "." + std::to_string(k));
        }
        stack.push_back({ad::Tensor(w->shape, w->data, true), ad::Tensor(b->shape, b->data, true)});
      }
      return stack;
    };
    VaeParams p;
    p.encoder_ = load_stack("encoder");
    p.decoder_ = load_stack("decoder");
    if (p.encoder_.size() < 2 || p.encoder_.size() != p.decoder_.size()) {
      throw FormatError("checkpoint: encoder/decoder layer stacks missing or unbalanced");
    }
    EncoderDecoderConfig& c = p.config_;
    c.input_dim = p.encoder_.front().weight.dim(0);
    for (std::size_t k = 0; k + 1 < p.encoder_.size(); ++k) c.hidden_widths.push_back(p.encoder_[k].weight.dim(1));
    c.latent_dim = p.encoder_.back().weight.dim(1) / 2;
    if (const auto* a = find("meta.activation")) c.activation = a->data.at(0) == 0.0 ? Activation::kTanh : Activation::kRelu;
    if (const auto* l = find("meta.likelihood")) {
      c.likelihood = l->data.at(0) == 0.0 ? Likelihood::kBernoulli : Likelihood::kGaussianFixedVariance;
    }
    c.validate();
    const VaeParams reference = init(c, 0);
    for (std::size_t k = 0; k < p.decoder_.size(); ++k) {
      if (p.decoder_[k].weight.shape() != reference.decoder_[k].weight.shape() ||
          p.encoder_[k].weight.shape() != reference.encoder_[k].weight.shape()) {
        throw FormatError("checkpoint: layer shapes are inconsistent with one architecture");
      }
    }
    return p;
  }

 private:
  EncoderDecoderConfig config_;
  std::vector<DenseLayer> encoder_;
  std::vector<DenseLayer> decoder_;
};

struct Posterior {
  ad::Tensor mean;     // (M, n)
  ad::Tensor log_var;  // (M, n)
};

namespace detail {

inline void check_finite_layer(const ad::Tensor& t, const char* stack, std::size_t layer) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw TrainingFault(std::string("non-finite activation in ") + stack + " layer " + std::to_string(layer), layer);
    }
  }
}

inline ad::Tensor run_stack(const std::vector<DenseLayer>& stack, ad::Tensor h, Activation act, const char* name) {
  for (std::size_t k = 0; k < stack.size(); ++k) {
    h = ad::matmul(h, stack[k].weight) + stack[k].bias;
    if (k + 1 < stack.size()) h = act == Activation::kTanh ? ad::tanh(h) : ad::relu(h);
    check_finite_layer(h, name, k);
  }
  return h;
}

}  // namespace detail

/// q(z|x) parameters for a batch x of shape (M, input_dim).
inline Posterior encode(const VaeParams& params, const ad::Tensor& x) {
  const auto& c = params.config();
  if (x.rank() != 2 || x.dim(1) != c.input_dim) {
    throw ShapeError("encode: expected (M, " + std::to_string(c.input_dim) + ") input, got " +
                     ad::to_string(x.shape()));
  }
  const ad::Tensor out = detail::run_stack(params.encoder(), x, c.activation, "encoder");
  return {ad::slice(out, 1, 0, c.latent_dim), ad::slice(out, 1, c.latent_dim, c.latent_dim)};
}

/// Decoder output for z of shape (M, latent_dim): Bernoulli logits, or the
/// means of a unit-variance Gaussian.
inline ad::Tensor decode(const VaeParams& params, const ad::Tensor& z) {
  const auto& c = params.config();
  if (z.rank() != 2 || z.dim(1) != c.latent_dim) {
    throw ShapeError("decode: expected (M, " + std::to_string(c.latent_dim) + ") latents, got " +
                     ad::to_string(z.shape()));
  }
  return detail::run_stack(params.decoder(), z, c.activation, "decoder");
}

/// Per-sample log p(x|z), shape (M).
inline ad::Tensor reconstruction_log_likelihood(const ad::Tensor& decoded, const ad::Tensor& x, Likelihood likelihood) {
  if (decoded.shape() != x.shape()) {
    throw ShapeError("reconstruction: shape mismatch " + ad::to_string(decoded.shape()) + " vs " +
                     ad::to_string(x.shape()));
  }
  if (likelihood == Likelihood::kBernoulli) {
    return ad::sum(x * decoded - ad::softplus(decoded), 1);
  }
  return ad::sum((ad::square(x - decoded) + kLog2Pi) * -0.5, 1);
}

/// Differentiable ELBO decomposition for one batch and one sample per input.
struct ElboTerms {
  ad::Tensor recon;    // scalar
  ad::Tensor mi;       // scalar
  ad::Tensor tc_joint; // scalar, between groups of `scheme`
  ad::Tensor dim_kl;   // scalar
  ad::Tensor full_kl;  // scalar, closed form
  LogAggregates aggregates;
  Posterior posterior;
  ad::Tensor z;
  GroupingScheme scheme{2, 1};

  LossBreakdown breakdown(double beta, double gamma, double loss) const {
    return {recon.item(), mi.item(), tc_joint.item(), dim_kl.item(), beta, gamma, full_kl.item(), loss};
  }
};

/// `noise` is (M, latent_dim) standard-normal draws for the reparameterization.
inline ElboTerms elbo_terms(const VaeParams& params, const ad::Tensor& x, const GroupingScheme& scheme,
                            std::size_t dataset_size, const ad::Tensor& noise, const EstimatorOptions& options = {}) {
  const std::size_t n = params.config().latent_dim;
  if (scheme.dimension() != n) throw std::invalid_argument("elbo_terms: scheme dimension does not match latent_dim");
  ElboTerms t;
  t.scheme = scheme;
  t.posterior = encode(params, x);
  t.z = sample_reparam(t.posterior.mean, t.posterior.log_var, noise);
  const ad::Tensor decoded = decode(params, t.z);
  t.recon = ad::mean(reconstruction_log_likelihood(decoded, x, params.config().likelihood));

  t.aggregates = estimate_log_aggregates(t.posterior.mean, t.posterior.log_var, t.z, scheme, dataset_size, options);
  const ad::Tensor log_q_cond = ad::sum(log_density_elementwise(t.z, t.posterior.mean, t.posterior.log_var), 1);
  const ad::Tensor log_prior_dims = (ad::square(t.z) + kLog2Pi) * -0.5;
  t.mi = ad::mean(log_q_cond - t.aggregates.log_qz);
  t.tc_joint = estimate_tc_joint_minibatch(t.aggregates);
  t.dim_kl = ad::mean(ad::sum(t.aggregates.log_q_dims - log_prior_dims, 1));
  t.full_kl = ad::mean(ad::sum(kl_diag_to_standard(t.posterior.mean, t.posterior.log_var), 1));
  return t;
}

struct TermWeights {
  double alpha = 1.0;   // on I(z; x)
  double lambda = 1.0;  // on the dimension-wise KL
};

/// -recon + alpha * mi + beta * tc_joint + lambda * dim_kl.
inline ad::Tensor loss_stcvae(const ElboTerms& t, double beta, const TermWeights& w = {}) {
  return -t.recon + t.mi * w.alpha + t.tc_joint * beta + t.dim_kl * w.lambda;
}

/// Same objective with the TC taken over single dimensions, computed from the
/// per-dimension aggregates rather than the grouping.
inline ad::Tensor loss_tcvae(const ElboTerms& t, double beta, const TermWeights& w = {}) {
  return -t.recon + t.mi * w.alpha + estimate_tc_full_minibatch(t.aggregates) * beta + t.dim_kl * w.lambda;
}

/// Grouped objective plus gamma times the summed within-group TCs.
inline ad::Tensor loss_hfvae(const ElboTerms& t, const ad::Tensor& subgroup_tc, double beta, double gamma,
                             const TermWeights& w = {}) {
  return loss_stcvae(t, beta, w) + ad::sum(subgroup_tc) * gamma;
}

inline ad::Tensor loss_hfvae(const ElboTerms& t, double beta, double gamma, const TermWeights& w = {}) {
  return loss_hfvae(t, estimate_subgroup_tc_minibatch(t.aggregates), beta, gamma, w);
}

/// -recon + beta * full_kl, with full_kl the closed-form mean KL to the prior.
inline ad::Tensor loss_betavae(const ad::Tensor& recon, const ad::Tensor& full_kl, double beta) {
  return -recon + full_kl * beta;
}

enum class Objective { kStcvae, kTcvae, kBetaVae, kHfvae };

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::kStcvae: return "stcvae";
    case Objective::kTcvae: return "tcvae";
    case Objective::kBetaVae: return "betavae";
    case Objective::kHfvae: return "hfvae";
  }
  return "?";
}

inline Objective parse_objective(const std::string& s) {
  for (Objective o : {Objective::kStcvae, Objective::kTcvae, Objective::kBetaVae, Objective::kHfvae}) {
    if (s == objective_name(o)) return o;
  }
  throw std::invalid_argument("unknown objective '" + s + "'");
}

struct ObjectiveConfig {
  Objective objective = Objective::kStcvae;
  std::size_t grouping_factor = 1;
  double beta = 1.0;
  double gamma = 0.0;
  TermWeights weights;
};

inline ad::Tensor objective_loss(const ElboTerms& t, const ObjectiveConfig& o) {
  switch (o.objective) {
    case Objective::kStcvae: return loss_stcvae(t, o.beta, o.weights);
    case Objective::kTcvae: return loss_tcvae(t, o.beta, o.weights);
    case Objective::kBetaVae: return loss_betavae(t.recon, t.full_kl, o.beta);
    case Objective::kHfvae: return loss_hfvae(t, o.beta, o.gamma, o.weights);
  }
  throw std::logic_error("objective_loss: unknown objective");
}

// ---- optimization ----------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One update of every tensor in `params` from its current gradient.
  /// Tensors without a gradient are left unchanged.
  void step(std::span<ad::Tensor> params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw std::invalid_argument("Adam::step: parameter list changed");
    ++steps_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      ad::Tensor& p = params[k];
      if (!p.has_grad()) continue;
      const auto g = p.grad();
      auto x = p.mutable_data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        m_[k][i] = config_.beta1 * m_[k][i] + (1.0 - config_.beta1) * g[i];
        v_[k][i] = config_.beta2 * v_[k][i] + (1.0 - config_.beta2) * g[i] * g[i];
        x[i] -= config_.learning_rate * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + config_.epsilon);
      }
    }
  }

  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

inline ad::Tensor standard_normal(ad::Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = normal(rng);
  return ad::Tensor(std::move(shape), std::move(v));
}

/// One Adam step on `batch`; returns the pre-update breakdown.
inline LossBreakdown train_step(VaeParams& params, Adam& optimizer, const ad::Tensor& batch, std::size_t dataset_size,
                                const ObjectiveConfig& objective, std::mt19937_64& rng,
                                const EstimatorOptions& options = {}) {
  const std::size_t n = params.config().latent_dim;
  const GroupingScheme scheme(n, objective.objective == Objective::kTcvae ? 1 : objective.grouping_factor);
  const ad::Tensor noise = standard_normal({batch.dim(0), n}, rng);
  std::vector<ad::Tensor> tensors = params.tensors();
  ad::Tape tape;
  ad::TapeScope scope(tape);
  const ElboTerms terms = elbo_terms(params, batch, scheme, dataset_size, noise, options);
  const ad::Tensor loss = objective_loss(terms, objective);
  const LossBreakdown lb = terms.breakdown(objective.beta, objective.gamma, loss.item());
  if (!lb.finite()) throw TrainingFault("non-finite loss", std::nullopt, lb);
  ad::backward(loss);
  optimizer.step(tensors);
  return lb;
}

/// Mean ELBO (recon - closed-form KL) over `x` with one sample per row; no tape.
inline double evaluate_elbo(const VaeParams& params, const ad::Tensor& x, std::mt19937_64& rng) {
  const Posterior q = encode(params, x);
  const ad::Tensor z = sample_reparam(q.mean, q.log_var, standard_normal(q.mean.shape(), rng));
  const ad::Tensor recon = reconstruction_log_likelihood(decode(params, z), x, params.config().likelihood);
  const ad::Tensor kl = ad::sum(kl_diag_to_standard(q.mean, q.log_var), 1);
  return ad::mean(recon - kl).item();
}

}  // namespace stcvae
