#pragma once

// Define-by-run reverse-mode automatic differentiation over dense row-major
// tensors of doubles.
//
// A Tensor is a shared handle to a node holding shape, values and (after
// backward) gradients. While a Tape is active on the current thread (see
// TapeScope), every op whose inputs require gradients appends a record to it.
// backward() walks those records in reverse.
//
// Elementwise binary ops broadcast by trailing-dimension alignment: shapes are
// right-aligned, and each aligned dimension pair must be equal or contain a 1.
// A rank-0 tensor (shape {}) is a scalar and broadcasts against anything.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "stcvae/errors.hpp"

namespace stcvae::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

enum class OpKind {
  kAdd,
  kSub,
  kMul,
  kMatmul,
  kExp,
  kLog,
  kNegate,
  kSigmoid,
  kTanh,
  kRelu,
  kSoftplus,
  kSum,
  kMean,
  kReshape,
  kConcat,
  kSlice,
  kBroadcast,
};

inline const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kNegate: return "negate";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kReshape: return "reshape";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kBroadcast: return "broadcast";
  }
  return "?";
}

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t id = 0;
};

namespace detail {
inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("Tensor: zero-sized dimension in shape " + ad::to_string(shape));
    }
    if (data.size() != numel(shape)) {
      throw ShapeError("Tensor: data length " + std::to_string(data.size()) +
                       " does not match shape " + ad::to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    node_->id = detail::next_node_id();
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0, requires_grad);
  }
  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({}, {value}, requires_grad);
  }
  static Tensor vector(std::vector<double> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access, for optimizers and initializers. Never mutate a
  /// tensor that a live tape still references.
  std::span<double> mutable_data() { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }
  void clear_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  std::uint64_t id() const { return node_->id; }

  /// Value of a single-element tensor.
  double item() const {
    if (size() != 1) throw ShapeError("item: tensor of shape " + ad::to_string(shape()) + " is not a scalar");
    return node_->data[0];
  }

  /// Fresh leaf with copied values and no gradient history.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

struct TapeRecord {
  OpKind kind;
  std::vector<std::shared_ptr<Node>> inputs;
  std::shared_ptr<Node> output;
  // Saved intermediates live in the closure's captures.
  std::function<void(TapeRecord&)> backward;
};

class Tape {
 public:
  void append(TapeRecord record) { records_.push_back(std::move(record)); }
  std::span<const TapeRecord> records() const { return records_; }
  std::span<TapeRecord> records() { return records_; }
  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

 private:
  std::vector<TapeRecord> records_;
};

namespace detail {
inline Tape*& active_tape_slot() {
  thread_local Tape* tape = nullptr;
  return tape;
}
}  // namespace detail

inline Tape* active_tape() { return detail::active_tape_slot(); }

/// Makes `tape` the active tape of the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) {
    if (detail::active_tape_slot() != nullptr) {
      throw std::logic_error("TapeScope: a tape is already active on this thread");
    }
    detail::active_tape_slot() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot() = nullptr; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
};

namespace detail {

// Wraps a forward result and, when recording applies, appends a tape record.
template <class Backward>
Tensor finish(OpKind kind, Shape shape, std::vector<double> values,
              std::vector<const Tensor*> inputs, Backward&& backward) {
  Tape* tape = active_tape();
  const bool record = tape != nullptr &&
                      std::any_of(inputs.begin(), inputs.end(),
                                  [](const Tensor* t) { return t->requires_grad(); });
  Tensor out(std::move(shape), std::move(values), record);
  if (record) {
    TapeRecord r{kind, {}, out.node(), std::forward<Backward>(backward)};
    r.inputs.reserve(inputs.size());
    for (const Tensor* t : inputs) r.inputs.push_back(t->node());
    tape->append(std::move(r));
  }
  return out;
}

inline bool wants_grad(const std::shared_ptr<Node>& n) { return !n->grad.empty(); }

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
    const std::size_t db = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shape mismatch: " + ad::to_string(a) + " vs " + ad::to_string(b));
    }
    out[k] = std::max(da, db);
  }
  return out;
}

// For each element of `out`, the flat offset of the matching element of a
// tensor with shape `in` broadcast to `out`.
inline std::vector<std::size_t> broadcast_offsets(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t pad = rank - in.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    stride[k + pad] = in[k] == 1 ? 0 : s;
    s *= in[k];
  }
  const std::size_t n = numel(out);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    offsets[i] = off;
    for (std::size_t k = rank; k-- > 0;) {
      ++idx[k];
      off += stride[k];
      if (idx[k] < out[k]) break;
      off -= stride[k] * idx[k];
      idx[k] = 0;
    }
  }
  return offsets;
}

// Elementwise binary op with broadcasting. `da(x, y)` and `db(x, y)` are the
// partial derivatives of f with respect to each argument.
template <class F, class DA, class DB>
Tensor binary(OpKind kind, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = numel(out_shape);
  const bool same_a = a.shape() == out_shape;
  const bool same_b = b.shape() == out_shape;
  std::vector<std::size_t> oa = same_a ? std::vector<std::size_t>{} : broadcast_offsets(a.shape(), out_shape);
  std::vector<std::size_t> ob = same_b ? std::vector<std::size_t>{} : broadcast_offsets(b.shape(), out_shape);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(av[same_a ? i : oa[i]], bv[same_b ? i : ob[i]]);
  }
  return finish(kind, out_shape, std::move(out), {&a, &b},
                [same_a, same_b, oa = std::move(oa), ob = std::move(ob), da, db](TapeRecord& r) {
                  const auto& x = r.inputs[0];
                  const auto& y = r.inputs[1];
                  const auto& g = r.output->grad;
                  const bool gx = wants_grad(x);
                  const bool gy = wants_grad(y);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    const std::size_t ix = same_a ? i : oa[i];
                    const std::size_t iy = same_b ? i : ob[i];
                    if (gx) x->grad[ix] += g[i] * da(x->data[ix], y->data[iy]);
                    if (gy) y->grad[iy] += g[i] * db(x->data[ix], y->data[iy]);
                  }
                });
}

// Elementwise unary op; `df(x, y)` is dy/dx given input x and output y.
template <class F, class DF>
Tensor unary(OpKind kind, const Tensor& a, F f, DF df) {
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return finish(kind, a.shape(), std::move(out), {&a}, [df](TapeRecord& r) {
    const auto& x = r.inputs[0];
    if (!wants_grad(x)) return;
    const auto& g = r.output->grad;
    const auto& y = r.output->data;
    for (std::size_t i = 0; i < g.size(); ++i) x->grad[i] += g[i] * df(x->data[i], y[i]);
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// Splits `shape` around `axis` into (outer, extent, inner) element counts.
inline std::tuple<std::size_t, std::size_t, std::size_t> axis_split(const Shape& shape, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= shape[k];
  for (std::size_t k = axis + 1; k < shape.size(); ++k) inner *= shape[k];
  return {outer, shape[axis], inner};
}

inline void check_axis(const Tensor& t, std::size_t axis, const char* op) {
  if (axis >= t.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                     ad::to_string(t.shape()));
  }
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      OpKind::kAdd, a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      OpKind::kSub, a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      OpKind::kMul, a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      OpKind::kExp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) {
      throw DomainError("log: non-positive input value " + std::to_string(v));
    }
  }
  return detail::unary(
      OpKind::kLog, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor negate(const Tensor& a) {
  return detail::unary(
      OpKind::kNegate, a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      OpKind::kSigmoid, a, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      OpKind::kTanh, a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      OpKind::kRelu, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor softplus(const Tensor& a) {
  return detail::unary(
      OpKind::kSoftplus, a, detail::stable_softplus, [](double x, double) { return detail::stable_sigmoid(x); });
}

// ---- linear algebra --------------------------------------------------------

/// (m, k) x (k, n) -> (m, n).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: shape mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return detail::finish(OpKind::kMatmul, {m, n}, std::move(out), {&a, &b}, [m, k, n](TapeRecord& r) {
    const auto& x = r.inputs[0];
    const auto& y = r.inputs[1];
    const auto& g = r.output->grad;
    if (detail::wants_grad(x)) {
      // dA = G B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* grow = g.data() + i * n;
          const double* brow = y->data.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          x->grad[i * k + p] += s;
        }
      }
    }
    if (detail::wants_grad(y)) {
      // dB = A^T G
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = x->data[i * k + p];
          if (aip == 0.0) continue;
          double* yg = y->grad.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) yg[j] += aip * grow[j];
        }
      }
    }
  });
}

// ---- reductions ------------------------------------------------------------

/// Sum of all elements, as a scalar.
inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::finish(OpKind::kSum, {}, {s}, {&a}, [](TapeRecord& r) {
    const auto& x = r.inputs[0];
    if (!detail::wants_grad(x)) return;
    const double g = r.output->grad[0];
    for (double& v : x->grad) v += g;
  });
}

/// Sum along `axis`; the axis is removed from the result shape.
inline Tensor sum(const Tensor& a, std::size_t axis) {
  detail::check_axis(a, axis, "sum");
  const auto [outer, extent, inner] = detail::axis_split(a.shape(), axis);
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto av = a.data();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < extent; ++e)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += av[(o * extent + e) * inner + i];
  return detail::finish(OpKind::kSum, std::move(shape), std::move(out), {&a},
                        [outer = outer, extent = extent, inner = inner](TapeRecord& r) {
                          const auto& x = r.inputs[0];
                          if (!detail::wants_grad(x)) return;
                          const auto& g = r.output->grad;
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t e = 0; e < extent; ++e)
                              for (std::size_t i = 0; i < inner; ++i)
                                x->grad[(o * extent + e) * inner + i] += g[o * inner + i];
                        });
}

inline Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::finish(OpKind::kMean, {}, {s * (1.0 / n)}, {&a}, [n](TapeRecord& r) {
    const auto& x = r.inputs[0];
    if (!detail::wants_grad(x)) return;
    const double g = r.output->grad[0] / n;
    for (double& v : x->grad) v += g;
  });
}

inline Tensor mean(const Tensor& a, std::size_t axis) {
  detail::check_axis(a, axis, "mean");
  const auto [outer, extent, inner] = detail::axis_split(a.shape(), axis);
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto av = a.data();
  const double inv = 1.0 / static_cast<double>(extent);
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < extent; ++e)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += av[(o * extent + e) * inner + i];
  for (double& v : out) v *= inv;
  return detail::finish(OpKind::kMean, std::move(shape), std::move(out), {&a},
                        [outer = outer, extent = extent, inner = inner, inv](TapeRecord& r) {
                          const auto& x = r.inputs[0];
                          if (!detail::wants_grad(x)) return;
                          const auto& g = r.output->grad;
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t e = 0; e < extent; ++e)
                              for (std::size_t i = 0; i < inner; ++i)
                                x->grad[(o * extent + e) * inner + i] += g[o * inner + i] * inv;
                        });
}

// ---- structural ------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<double> values(a.data().begin(), a.data().end());
  return detail::finish(OpKind::kReshape, std::move(shape), std::move(values), {&a}, [](TapeRecord& r) {
    const auto& x = r.inputs[0];
    if (!detail::wants_grad(x)) return;
    const auto& g = r.output->grad;
    for (std::size_t i = 0; i < g.size(); ++i) x->grad[i] += g[i];
  });
}

/// Concatenates along `axis`; all other dimensions must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  detail::check_axis(parts.front(), axis, "concat");
  Shape shape = first;
  shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const Tensor& t : parts) {
    Shape probe = t.shape();
    if (probe.size() != first.size()) {
      throw ShapeError("concat: shape mismatch " + to_string(first) + " vs " + to_string(probe));
    }
    probe[axis] = first[axis];
    if (probe != first) throw ShapeError("concat: shape mismatch " + to_string(first) + " vs " + to_string(t.shape()));
    extents.push_back(t.dim(axis));
    shape[axis] += t.dim(axis);
  }
  const auto [outer, total, inner] = detail::axis_split(shape, axis);
  std::vector<double> out(numel(shape));
  std::size_t start = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto v = parts[p].data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t e = 0; e < extents[p]; ++e)
        for (std::size_t i = 0; i < inner; ++i)
          out[(o * total + start + e) * inner + i] = v[(o * extents[p] + e) * inner + i];
    start += extents[p];
  }
  std::vector<const Tensor*> inputs;
  for (const Tensor& t : parts) inputs.push_back(&t);
  return detail::finish(OpKind::kConcat, std::move(shape), std::move(out), inputs,
                        [outer = outer, total = total, inner = inner, extents](TapeRecord& r) {
                          const auto& g = r.output->grad;
                          std::size_t start = 0;
                          for (std::size_t p = 0; p < r.inputs.size(); ++p) {
                            const auto& x = r.inputs[p];
                            if (detail::wants_grad(x)) {
                              for (std::size_t o = 0; o < outer; ++o)
                                for (std::size_t e = 0; e < extents[p]; ++e)
                                  for (std::size_t i = 0; i < inner; ++i)
                                    x->grad[(o * extents[p] + e) * inner + i] +=
                                        g[(o * total + start + e) * inner + i];
                            }
                            start += extents[p];
                          }
                        });
}

/// Elements [start, start + length) along `axis`.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  detail::check_axis(a, axis, "slice");
  if (length == 0 || start + length > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of bounds for shape " + to_string(a.shape()));
  }
  const auto [outer, extent, inner] = detail::axis_split(a.shape(), axis);
  Shape shape = a.shape();
  shape[axis] = length;
  const auto av = a.data();
  std::vector<double> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < length; ++e)
      for (std::size_t i = 0; i < inner; ++i)
        out[(o * length + e) * inner + i] = av[(o * extent + start + e) * inner + i];
  return detail::finish(OpKind::kSlice, std::move(shape), std::move(out), {&a},
                        [outer = outer, extent = extent, inner = inner, start, length](TapeRecord& r) {
                          const auto& x = r.inputs[0];
                          if (!detail::wants_grad(x)) return;
                          const auto& g = r.output->grad;
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t e = 0; e < length; ++e)
                              for (std::size_t i = 0; i < inner; ++i)
                                x->grad[(o * extent + start + e) * inner + i] += g[(o * length + e) * inner + i];
                        });
}

/// Materializes `a` at a broadcast-compatible target shape.
inline Tensor broadcast_to(const Tensor& a, Shape shape) {
  if (detail::broadcast_shape(a.shape(), shape) != shape) {
    throw ShapeError("broadcast: shape mismatch " + to_string(a.shape()) + " vs " + to_string(shape));
  }
  auto offsets = detail::broadcast_offsets(a.shape(), shape);
  const auto av = a.data();
  std::vector<double> out(offsets.size());
  for (std::size_t i = 0; i < offsets.size(); ++i) out[i] = av[offsets[i]];
  return detail::finish(OpKind::kBroadcast, std::move(shape), std::move(out), {&a},
                        [offsets = std::move(offsets)](TapeRecord& r) {
                          const auto& x = r.inputs[0];
                          if (!detail::wants_grad(x)) return;
                          const auto& g = r.output->grad;
                          for (std::size_t i = 0; i < g.size(); ++i) x->grad[offsets[i]] += g[i];
                        });
}

// ---- composites ------------------------------------------------------------

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return negate(a); }
inline Tensor operator+(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
inline Tensor operator-(const Tensor& a, double c) { return sub(a, Tensor::scalar(c)); }
inline Tensor operator*(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }
inline Tensor operator*(double c, const Tensor& a) { return mul(Tensor::scalar(c), a); }

inline Tensor square(const Tensor& a) { return mul(a, a); }

/// log(sum(exp(a), axis)), shifted by the (constant) per-slice maximum.
inline Tensor logsumexp(const Tensor& a, std::size_t axis) {
  detail::check_axis(a, axis, "logsumexp");
  const auto [outer, extent, inner] = detail::axis_split(a.shape(), axis);
  const auto av = a.data();
  std::vector<double> peak(outer * inner, -std::numeric_limits<double>::infinity());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < extent; ++e)
      for (std::size_t i = 0; i < inner; ++i)
        peak[o * inner + i] = std::max(peak[o * inner + i], av[(o * extent + e) * inner + i]);
  Shape kept = a.shape();
  kept[axis] = 1;
  Shape reduced = a.shape();
  reduced.erase(reduced.begin() + static_cast<std::ptrdiff_t>(axis));
  const Tensor shift(kept, peak);
  return add(log(sum(exp(sub(a, shift)), axis)), Tensor(reduced, peak));
}

// ---- backward --------------------------------------------------------------

/// Fills grad of every tape node that `loss` depends on with d(loss)/d(node).
/// Gradients from earlier backward calls on the same tape are overwritten.
inline void backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (tape == nullptr) throw std::logic_error("backward: no active tape");
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  auto records = tape->records();
  const auto produced = std::find_if(records.rbegin(), records.rend(),
                                     [&](const TapeRecord& r) { return r.output == loss.node(); });
  if (produced == records.rend()) {
    throw std::logic_error("backward: loss was not produced under the active tape");
  }
  for (TapeRecord& r : records) {
    for (const auto& in : r.inputs) {
      if (in->requires_grad) in->grad.assign(in->data.size(), 0.0);
    }
    r.output->grad.assign(r.output->data.size(), 0.0);
  }
  loss.node()->grad[0] = 1.0;
  // Records after the loss's producer cannot be its ancestors.
  const auto last = static_cast<std::ptrdiff_t>(records.size()) - 1 - (produced - records.rbegin());
  for (std::ptrdiff_t k = last; k >= 0; --k) {
    TapeRecord& r = records[static_cast<std::size_t>(k)];
    const auto& g = r.output->grad;
    if (std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; })) continue;
    r.backward(r);
  }
}

/// Compares reverse-mode gradients of a scalar function with central
/// differences. Returns max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
///
/// Must be called with no tape active. Throws std::invalid_argument if two
/// evaluations at the same point disagree.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  const Tensor base = point.detach();
  const double v1 = f(base).item();
  const double v2 = f(base).item();
  if (!(v1 == v2) && !(std::isnan(v1) && std::isnan(v2))) {
    throw std::invalid_argument("grad_check: function is not deterministic");
  }

  std::vector<double> analytic(point.size(), 0.0);
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor x(point.shape(), std::vector<double>(point.data().begin(), point.data().end()), true);
    Tensor loss = f(x);
    if (loss.size() != 1) throw ShapeError("grad_check: function must return a scalar");
    if (loss.requires_grad()) {
      backward(loss);
      if (x.has_grad()) analytic.assign(x.grad().begin(), x.grad().end());
    }
  }

  double worst = 0.0;
  std::vector<double> probe(point.data().begin(), point.data().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = f(Tensor(point.shape(), probe)).item();
    probe[i] = orig - step;
    const double down = f(Tensor(point.shape(), probe)).item();
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace stcvae::ad
