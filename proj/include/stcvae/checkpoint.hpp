#pragma once

// Parameter checkpoint container.
//
// Layout (all integers u32 little-endian, reals IEEE-754 binary64 little-endian):
//   "STCV" | version | tensor count | per tensor:
//     name length | name bytes | rank | dims... | data...

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "stcvae/autodiff.hpp"
#include "stcvae/errors.hpp"

namespace stcvae {

inline constexpr char kCheckpointMagic[4] = {'S', 'T', 'C', 'V'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  ad::Shape shape;
  std::vector<double> data;

  bool operator==(const NamedTensor&) const = default;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void read_exact(std::istream& is, void* dst, std::size_t n, const char* what) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw FormatError(std::string("checkpoint: truncated while reading ") + what);
  }
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  read_exact(is, b, 4, what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline double get_f64(std::istream& is) {
  unsigned char b[8];
  read_exact(is, b, 8, "tensor data");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, std::span<const NamedTensor> tensors) {
  os.write(kCheckpointMagic, 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) {
    if (t.data.size() != ad::numel(t.shape)) {
      throw ShapeError("write_checkpoint: tensor '" + t.name + "' data does not match its shape");
    }
    detail::put_u32(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.data) detail::put_f64(os, v);
  }
  if (!os) throw std::runtime_error("write_checkpoint: stream write failed");
}

inline std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  char magic[4];
  detail::read_exact(is, magic, 4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = detail::get_u32(is, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const std::uint32_t count = detail::get_u32(is, "tensor count");
  std::vector<NamedTensor> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    const std::uint32_t len = detail::get_u32(is, "name length");
    t.name.resize(len);
    if (len > 0) detail::read_exact(is, t.name.data(), len, "name");
    const std::uint32_t rank = detail::get_u32(is, "rank");
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(detail::get_u32(is, "dimension"));
    const std::size_t n = ad::numel(t.shape);
    t.data.reserve(n);
    for (std::size_t i = 0; i < n; ++i) t.data.push_back(detail::get_f64(is));
    out.push_back(std::move(t));
  }
  return out;
}

inline void save_checkpoint(const std::string& path, std::span<const NamedTensor> tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  write_checkpoint(os, tensors);
}

inline std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  return read_checkpoint(is);
}

}  // namespace stcvae
