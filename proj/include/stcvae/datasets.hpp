#pragma once

// Labelled datasets: the synthetic sprite generator, the IDX codec and a
// seeded minibatch iterator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stcvae/autodiff.hpp"
#include "stcvae/checkpoint.hpp"
#include "stcvae/errors.hpp"

namespace stcvae {

/// Inputs with discrete ground-truth factor labels. Samples are stored row
/// major, one row of `input_dim` values per sample.
struct FactorDataset {
  std::vector<double> samples;
  std::size_t input_dim = 0;
  std::vector<std::size_t> factors;  // count x factor_count, row major
  std::vector<std::size_t> cardinalities;
  std::vector<std::string> factor_names;
  std::size_t image_side = 0;  // 0 when samples are not square images

  std::size_t size() const { return input_dim == 0 ? 0 : samples.size() / input_dim; }
  std::size_t factor_count() const { return cardinalities.size(); }
  std::span<const double> sample(std::size_t i) const { return {samples.data() + i * input_dim, input_dim}; }
  std::size_t factor(std::size_t i, std::size_t f) const { return factors[i * factor_count() + f]; }

  void validate() const {
    if (input_dim == 0 || samples.size() % input_dim != 0) {
      throw std::invalid_argument("FactorDataset: samples are not a whole number of rows");
    }
    if (factors.size() != size() * factor_count()) {
      throw std::invalid_argument("FactorDataset: factor labels and samples differ in length");
    }
    if (!factor_names.empty() && factor_names.size() != factor_count()) {
      throw std::invalid_argument("FactorDataset: factor name count does not match cardinalities");
    }
    for (std::size_t i = 0; i < size(); ++i) {
      for (std::size_t f = 0; f < factor_count(); ++f) {
        if (factor(i, f) >= cardinalities[f]) {
          throw std::invalid_argument("FactorDataset: factor value out of range at sample " + std::to_string(i));
        }
      }
    }
  }

  /// Copy with every pixel mapped to {0, 1} at `threshold`.
  FactorDataset binarized(double threshold = 0.5) const {
    FactorDataset out = *this;
    for (double& v : out.samples) v = v >= threshold ? 1.0 : 0.0;
    return out;
  }

  /// Rows `indices` as an (indices.size(), input_dim) tensor.
  ad::Tensor gather(std::span<const std::size_t> indices) const {
    std::vector<double> v;
    v.reserve(indices.size() * input_dim);
    for (std::size_t i : indices) {
      if (i >= size()) throw std::out_of_range("FactorDataset::gather: index out of range");
      const auto row = sample(i);
      v.insert(v.end(), row.begin(), row.end());
    }
    return ad::Tensor({indices.size(), input_dim}, std::move(v));
  }

  FactorDataset subset(std::span<const std::size_t> indices) const {
    FactorDataset out;
    out.input_dim = input_dim;
    out.cardinalities = cardinalities;
    out.factor_names = factor_names;
    out.image_side = image_side;
    for (std::size_t i : indices) {
      const auto row = sample(i);
      out.samples.insert(out.samples.end(), row.begin(), row.end());
      for (std::size_t f = 0; f < factor_count(); ++f) out.factors.push_back(factor(i, f));
    }
    return out;
  }
};

// ---- synthetic sprites -----------------------------------------------------

enum class SpriteShape { kSquare, kDisc };

struct SyntheticFactorSpec {
  std::size_t image_side = 16;
  std::vector<SpriteShape> shapes{SpriteShape::kSquare, SpriteShape::kDisc};
  std::size_t positions_x = 6;
  std::size_t positions_y = 6;
  std::size_t scales = 3;
  double min_half_extent = 2.0;  // pixels, at scale 0
  double scale_step = 1.0;       // pixels added per scale level
  double noise_stddev = 0.0;     // additive Gaussian pixel noise, clamped to [0, 1]

  double max_half_extent() const { return min_half_extent + scale_step * static_cast<double>(scales - 1); }

  void validate() const {
    if (shapes.empty() || positions_x == 0 || positions_y == 0 || scales == 0) {
      throw std::invalid_argument("SyntheticFactorSpec: every factor needs at least one value");
    }
    if (image_side == 0 || min_half_extent <= 0.0 || scale_step < 0.0 || noise_stddev < 0.0) {
      throw std::invalid_argument("SyntheticFactorSpec: non-positive size parameter");
    }
    if (2.0 * max_half_extent() >= static_cast<double>(image_side)) {
      throw std::invalid_argument("SyntheticFactorSpec: shape of half-extent " + std::to_string(max_half_extent()) +
                                  " does not fit a " + std::to_string(image_side) + "-pixel image");
    }
  }
};

namespace detail {

// Centres spread evenly so the largest sprite stays inside the frame.
inline double sprite_centre(std::size_t index, std::size_t count, const SyntheticFactorSpec& spec) {
  const double lo = spec.max_half_extent();
  const double hi = static_cast<double>(spec.image_side) - spec.max_half_extent();
  if (count == 1) return 0.5 * (lo + hi);
  return lo + (hi - lo) * static_cast<double>(index) / static_cast<double>(count - 1);
}

inline void render_sprite(std::span<double> image, std::size_t side, SpriteShape shape, double cx, double cy,
                          double half) {
  constexpr int kSub = 4;  // 4x4 supersampling per pixel
  for (std::size_t py = 0; py < side; ++py) {
    for (std::size_t px = 0; px < side; ++px) {
      int hits = 0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double x = static_cast<double>(px) + (sx + 0.5) / kSub - cx;
          const double y = static_cast<double>(py) + (sy + 0.5) / kSub - cy;
          const bool inside = shape == SpriteShape::kSquare ? (std::abs(x) <= half && std::abs(y) <= half)
                                                            : (x * x + y * y <= half * half);
          hits += inside ? 1 : 0;
        }
      }
      image[py * side + px] = static_cast<double>(hits) / (kSub * kSub);
    }
  }
}

}  // namespace detail

/// Renders every (shape, pos_x, pos_y, scale) combination once, in
/// lexicographic factor order. The seed only matters when noise is enabled.
inline FactorDataset gen_dsprites_mini(const SyntheticFactorSpec& spec = {}, std::uint64_t seed = 0) {
  spec.validate();
  FactorDataset ds;
  ds.image_side = spec.image_side;
  ds.input_dim = spec.image_side * spec.image_side;
  ds.cardinalities = {spec.shapes.size(), spec.positions_x, spec.positions_y, spec.scales};
  ds.factor_names = {"shape", "pos_x", "pos_y", "scale"};
  const std::size_t count = spec.shapes.size() * spec.positions_x * spec.positions_y * spec.scales;
  ds.samples.assign(count * ds.input_dim, 0.0);
  ds.factors.reserve(count * 4);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, spec.noise_stddev > 0.0 ? spec.noise_stddev : 1.0);
  std::size_t row = 0;
  for (std::size_t s = 0; s < spec.shapes.size(); ++s) {
    for (std::size_t x = 0; x < spec.positions_x; ++x) {
      for (std::size_t y = 0; y < spec.positions_y; ++y) {
        for (std::size_t k = 0; k < spec.scales; ++k, ++row) {
          std::span<double> image(ds.samples.data() + row * ds.input_dim, ds.input_dim);
          detail::render_sprite(image, spec.image_side, spec.shapes[s], detail::sprite_centre(x, spec.positions_x, spec),
                                detail::sprite_centre(y, spec.positions_y, spec),
                                spec.min_half_extent + spec.scale_step * static_cast<double>(k));
          if (spec.noise_stddev > 0.0) {
            for (double& v : image) v = std::clamp(v + normal(rng), 0.0, 1.0);
          }
          ds.factors.insert(ds.factors.end(), {s, x, y, k});
        }
      }
    }
  }
  return ds;
}

/// Tensors for the checkpoint container: samples, factors, cardinalities.
inline std::vector<NamedTensor> dataset_to_named(const FactorDataset& ds) {
  std::vector<NamedTensor> out;
  out.push_back({"samples", {ds.size(), ds.input_dim}, ds.samples});
  out.push_back({"factors", {ds.size(), ds.factor_count()}, {ds.factors.begin(), ds.factors.end()}});
  out.push_back({"cardinalities", {ds.factor_count()}, {ds.cardinalities.begin(), ds.cardinalities.end()}});
  out.push_back({"image_side", {1}, {static_cast<double>(ds.image_side)}});
  return out;
}

inline FactorDataset dataset_from_named(std::span<const NamedTensor> named) {
  auto find = [&](const std::string& name) -> const NamedTensor& {
    for (const auto& t : named)
      if (t.name == name) return t;
    throw FormatError("dataset checkpoint: missing tensor '" + name + "'");
  };
  const auto& samples = find("samples");
  const auto& factors = find("factors");
  const auto& cards = find("cardinalities");
  if (samples.shape.size() != 2 || factors.shape.size() != 2 || cards.shape.size() != 1) {
    throw FormatError("dataset checkpoint: unexpected tensor ranks");
  }
  auto to_index = [](double v) { return static_cast<std::size_t>(v); };
  FactorDataset ds;
  ds.input_dim = samples.shape[1];
  ds.samples = samples.data;
  std::transform(factors.data.begin(), factors.data.end(), std::back_inserter(ds.factors), to_index);
  std::transform(cards.data.begin(), cards.data.end(), std::back_inserter(ds.cardinalities), to_index);
  ds.image_side = to_index(find("image_side").data.at(0));
  if (ds.factor_count() == 4) ds.factor_names = {"shape", "pos_x", "pos_y", "scale"};
  ds.validate();
  return ds;
}

// ---- IDX -------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImages = 0x00000803;
inline constexpr std::uint32_t kIdxLabels = 0x00000801;

struct IdxArray {
  std::uint32_t magic = kIdxImages;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  bool operator==(const IdxArray&) const = default;
};

namespace detail {

inline std::size_t idx_rank(std::uint32_t magic) {
  if (magic == kIdxImages) return 3;
  if (magic == kIdxLabels) return 1;
  throw FormatError("IDX: unsupported magic number " + std::to_string(magic));
}

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t at) {
  return (static_cast<std::uint32_t>(bytes[at]) << 24) | (static_cast<std::uint32_t>(bytes[at + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[at + 2]) << 8) | static_cast<std::uint32_t>(bytes[at + 3]);
}

}  // namespace detail

inline IdxArray read_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("IDX: stream too short for a magic number");
  IdxArray out;
  out.magic = detail::read_be32(bytes, 0);
  const std::size_t rank = detail::idx_rank(out.magic);
  const std::size_t header = 4 + 4 * rank;
  if (bytes.size() < header) throw FormatError("IDX: truncated header");
  std::size_t total = 1;
  for (std::size_t r = 0; r < rank; ++r) {
    out.dims.push_back(detail::read_be32(bytes, 4 + 4 * r));
    total *= out.dims.back();
  }
  if (bytes.size() - header < total) {
    throw LengthError("IDX: payload has " + std::to_string(bytes.size() - header) + " bytes, header promises " +
                      std::to_string(total));
  }
  if (bytes.size() - header > total) throw FormatError("IDX: trailing bytes after payload");
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return out;
}

inline std::vector<std::uint8_t> write_idx(const IdxArray& a) {
  const std::size_t rank = detail::idx_rank(a.magic);
  if (a.dims.size() != rank) throw ShapeError("write_idx: dimension count does not match the magic number");
  std::size_t total = 1;
  for (auto d : a.dims) total *= d;
  if (a.data.size() != total) throw ShapeError("write_idx: payload length does not match dimensions");
  std::vector<std::uint8_t> out;
  auto put = [&](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
  };
  put(a.magic);
  for (auto d : a.dims) put(d);
  out.insert(out.end(), a.data.begin(), a.data.end());
  return out;
}

inline IdxArray read_idx_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_idx_file: cannot open " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return read_idx(bytes);
}

/// Digit images (N, rows, cols) and labels (N) as a one-factor dataset with
/// pixels scaled to [0, 1].
inline FactorDataset dataset_from_idx(const IdxArray& images, const IdxArray& labels) {
  if (images.magic != kIdxImages || labels.magic != kIdxLabels) {
    throw FormatError("dataset_from_idx: expected an image file and a label file");
  }
  if (images.dims[0] != labels.dims[0]) throw ShapeError("dataset_from_idx: image and label counts differ");
  FactorDataset ds;
  ds.input_dim = static_cast<std::size_t>(images.dims[1]) * images.dims[2];
  ds.image_side = images.dims[1] == images.dims[2] ? images.dims[1] : 0;
  ds.samples.reserve(images.data.size());
  for (auto b : images.data) ds.samples.push_back(b / 255.0);
  std::size_t classes = 0;
  for (auto l : labels.data) {
    ds.factors.push_back(l);
    classes = std::max<std::size_t>(classes, l + 1u);
  }
  ds.cardinalities = {classes};
  ds.factor_names = {"label"};
  ds.validate();
  return ds;
}

// ---- minibatches -----------------------------------------------------------

/// Seeded minibatch index stream; each epoch is a fresh permutation.
class BatchIterator {
 public:
  BatchIterator(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed, bool drop_last = false)
      : size_(dataset_size), batch_(batch_size), drop_last_(drop_last), rng_(seed) {
    if (batch_size == 0) throw std::invalid_argument("BatchIterator: batch size must be positive");
    if (batch_size > dataset_size) throw std::invalid_argument("BatchIterator: batch size exceeds dataset size");
    order_.resize(size_);
    std::iota(order_.begin(), order_.end(), 0);
    shuffle();
  }

  std::vector<std::size_t> next() {
    const bool partial_left = cursor_ < size_ && size_ - cursor_ < batch_;
    if (cursor_ >= size_ || (drop_last_ && partial_left)) shuffle();
    const std::size_t end = std::min(size_, cursor_ + batch_);
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return out;
  }

  /// Batches for one complete epoch.
  std::vector<std::vector<std::size_t>> epoch() {
    if (cursor_ != 0) shuffle();
    std::vector<std::vector<std::size_t>> out;
    while (cursor_ < size_) {
      if (drop_last_ && size_ - cursor_ < batch_) break;
      out.push_back(next());
    }
    cursor_ = size_;
    return out;
  }

  std::size_t epochs_started() const { return epochs_; }

 private:
  void shuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
    ++epochs_;
  }

  std::size_t size_;
  std::size_t batch_;
  bool drop_last_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epochs_ = 0;
};

}  // namespace stcvae
