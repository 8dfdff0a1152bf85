#pragma once

// Raw tensor and named-array binary formats.
//
// Raw tensor file (all integers little-endian):
//   bytes 0..3   magic "CAPT"
//   byte  4      format version (1)
//   byte  5      dtype code: 0 = f64, 1 = f32, 2 = u8, 3 = i64
//   bytes 6..7   u16 rank
//   rank x u64   dimensions, outermost first
//   payload      prod(dims) elements, row-major, little-endian
//
// Named-array file (checkpoints):
//   bytes 0..3   magic "CAPK"
//   u32          format version (1)
//   u64          entry count
//   per entry:   u32 name length, name bytes (UTF-8), u8 dtype, u8 reserved,
//                u16 rank, rank x u64 dims, payload as above

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cap/common.hpp"

namespace cap {

enum class DType : std::uint8_t { kF64 = 0, kF32 = 1, kU8 = 2, kI64 = 3 };

std::size_t dtype_size(DType d);

struct Tensor {
  DType dtype = DType::kF64;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> bytes;  // host-order element storage

  std::size_t numel() const;

  static Tensor from_f64(std::vector<std::uint64_t> shape, std::span<const double> values);
  static Tensor from_f32(std::vector<std::uint64_t> shape, std::span<const float> values);
  static Tensor from_u8(std::vector<std::uint64_t> shape, std::span<const std::uint8_t> values);
  static Tensor from_i64(std::vector<std::uint64_t> shape, std::span<const std::int64_t> values);
  // Row-major copy of an Eigen matrix, shape (rows, cols).
  static Tensor from_matrix(const Mat& m);

  std::vector<double> as_f64() const;  // converts f32/i64/u8 as needed
  std::vector<float> as_f32() const;
  std::vector<std::int64_t> as_i64() const;
  std::string as_string() const;  // u8 payload as text
  Mat as_matrix() const;          // requires rank 2 (or rank 1 -> row vector)
};

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

using NamedArrays = std::map<std::string, Tensor>;

void save_named_arrays(const std::filesystem::path& path, const NamedArrays& arrays);
NamedArrays load_named_arrays(const std::filesystem::path& path);

}  // namespace cap
