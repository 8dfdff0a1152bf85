#include "cap/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace cap {

namespace {

static_assert(std::endian::native == std::endian::little, "tensor I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("tensor stream truncated");
  return v;
}

template <typename T>
Tensor make(DType d, std::vector<std::uint64_t> shape, std::span<const T> values) {
  Tensor t;
  t.dtype = d;
  t.shape = std::move(shape);
  if (t.numel() != values.size()) throw std::invalid_argument("tensor shape does not match value count");
  t.bytes.resize(values.size() * sizeof(T));
  if (!values.empty()) std::memcpy(t.bytes.data(), values.data(), t.bytes.size());
  return t;
}

template <typename T>
std::vector<T> raw(const Tensor& t) {
  std::vector<T> out(t.numel());
  if (!out.empty()) std::memcpy(out.data(), t.bytes.data(), out.size() * sizeof(T));
  return out;
}

template <typename Out>
std::vector<Out> convert(const Tensor& t) {
  std::vector<Out> out;
  switch (t.dtype) {
    case DType::kF64: {
      auto v = raw<double>(t);
      out.assign(v.begin(), v.end());
      break;
    }
    case DType::kF32: {
      auto v = raw<float>(t);
      out.assign(v.begin(), v.end());
      break;
    }
    case DType::kU8: {
      auto v = raw<std::uint8_t>(t);
      out.assign(v.begin(), v.end());
      break;
    }
    case DType::kI64: {
      auto v = raw<std::int64_t>(t);
      out.assign(v.begin(), v.end());
      break;
    }
  }
  return out;
}

void write_body(std::ostream& os, const Tensor& t) {
  put<std::uint8_t>(os, static_cast<std::uint8_t>(t.dtype));
  put<std::uint8_t>(os, 0);
  put<std::uint16_t>(os, static_cast<std::uint16_t>(t.shape.size()));
  for (auto d : t.shape) put<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
}

Tensor read_body(std::istream& is) {
  Tensor t;
  auto code = get<std::uint8_t>(is);
  if (code > 3) throw std::runtime_error("unknown tensor dtype code " + std::to_string(code));
  t.dtype = static_cast<DType>(code);
  (void)get<std::uint8_t>(is);
  auto rank = get<std::uint16_t>(is);
  t.shape.resize(rank);
  for (auto& d : t.shape) d = get<std::uint64_t>(is);
  t.bytes.resize(t.numel() * dtype_size(t.dtype));
  is.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
  if (!is) throw std::runtime_error("tensor payload truncated");
  return t;
}

}  // namespace

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kF64: return 8;
    case DType::kF32: return 4;
    case DType::kU8: return 1;
    case DType::kI64: return 8;
  }
  return 0;
}

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor Tensor::from_f64(std::vector<std::uint64_t> shape, std::span<const double> values) {
  return make<double>(DType::kF64, std::move(shape), values);
}
Tensor Tensor::from_f32(std::vector<std::uint64_t> shape, std::span<const float> values) {
  return make<float>(DType::kF32, std::move(shape), values);
}
Tensor Tensor::from_u8(std::vector<std::uint64_t> shape, std::span<const std::uint8_t> values) {
  return make<std::uint8_t>(DType::kU8, std::move(shape), values);
}
Tensor Tensor::from_i64(std::vector<std::uint64_t> shape, std::span<const std::int64_t> values) {
  return make<std::int64_t>(DType::kI64, std::move(shape), values);
}

Tensor Tensor::from_matrix(const Mat& m) {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  return from_f64({static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
                  std::span<const double>(rm.data(), static_cast<std::size_t>(rm.size())));
}

std::vector<double> Tensor::as_f64() const { return convert<double>(*this); }
std::vector<float> Tensor::as_f32() const { return convert<float>(*this); }
std::vector<std::int64_t> Tensor::as_i64() const { return convert<std::int64_t>(*this); }

std::string Tensor::as_string() const {
  if (dtype != DType::kU8) throw std::runtime_error("tensor is not a byte array");
  return std::string(bytes.begin(), bytes.end());
}

Mat Tensor::as_matrix() const {
  Eigen::Index rows = 1, cols = 0;
  if (shape.size() == 2) {
    rows = static_cast<Eigen::Index>(shape[0]);
    cols = static_cast<Eigen::Index>(shape[1]);
  } else if (shape.size() == 1) {
    cols = static_cast<Eigen::Index>(shape[0]);
  } else {
    throw std::runtime_error("tensor rank " + std::to_string(shape.size()) + " is not a matrix");
  }
  auto v = as_f64();
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(v.data(), rows,
                                                                                                    cols);
}

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("CAPT", 4);
  put<std::uint8_t>(os, 1);
  write_body(os, t);
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CAPT", 4) != 0) throw std::runtime_error("not a raw tensor (bad magic)");
  auto version = get<std::uint8_t>(is);
  if (version != 1) throw std::runtime_error("unsupported tensor version " + std::to_string(version));
  return read_body(is);
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_tensor(is);
}

void save_named_arrays(const std::filesystem::path& path, const NamedArrays& arrays) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write("CAPK", 4);
  put<std::uint32_t>(os, 1);
  put<std::uint64_t>(os, arrays.size());
  for (const auto& [name, t] : arrays) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_body(os, t);
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

NamedArrays load_named_arrays(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CAPK", 4) != 0) throw std::runtime_error("not a named-array file (bad magic)");
  auto version = get<std::uint32_t>(is);
  if (version != 1) throw std::runtime_error("unsupported named-array version " + std::to_string(version));
  auto count = get<std::uint64_t>(is);
  NamedArrays out;
  for (std::uint64_t i = 0; i < count; ++i) {
    auto len = get<std::uint32_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) throw std::runtime_error("named-array entry name truncated");
    out.emplace(std::move(name), read_body(is));
  }
  return out;
}

}  // namespace cap
