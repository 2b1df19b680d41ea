#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nur/common.hpp"

namespace nur {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major tensor of doubles. Rank 1 tensors act as a single row.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    for (auto e : shape_) require(e > 0, "tensor extents must be positive");
  }
  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    require(shape_size(shape_) == data_.size(), "tensor shape/value size mismatch");
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t rows() const noexcept { return shape_.size() >= 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept {
    if (shape_.empty()) return 0;
    return shape_.size() >= 2 ? data_.size() / shape_[0] : shape_[0];
  }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols(), cols()};
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }
  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// A named trainable tensor with its gradient buffer.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape(), 0.0), trainable(train) {}

  void zero_grad() { grad.fill(0.0); }
};

// Owns parameters with stable addresses, in registration order.
class ParamSet {
 public:
  Parameter& add(std::string name, Tensor value, bool trainable = true) {
    require(!index_.contains(name), "duplicate parameter name: " + name);
    params_.emplace_back(name, std::move(value), trainable);
    index_.emplace(std::move(name), params_.size() - 1);
    return params_.back();
  }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("unknown parameter: " + name);
    return params_[it->second];
  }
  const Parameter& get(const std::string& name) const {
    return const_cast<ParamSet*>(this)->get(name);
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

  void zero_grads() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline void init_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = dist(rng);
}

// ---------------------------------------------------------------------------
// Little-endian binary helpers shared by the snapshot formats.

namespace io {

template <typename T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
  std::array<unsigned char, sizeof(T)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw TruncatedFileError(std::string("truncated file while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, const char* what) {
  auto n = read_le<std::uint32_t>(is, what);
  if (n > (1u << 24)) throw DataError(std::string("implausible string length in ") + what);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (is.gcount() != static_cast<std::streamsize>(n)) {
    throw TruncatedFileError(std::string("truncated file while reading ") + what);
  }
  return s;
}

// Reads a text header line and checks it against the expected magic.
inline void expect_magic(std::istream& is, std::string_view magic, std::string_view family) {
  std::string line;
  if (!std::getline(is, line)) throw BadMagicError("empty file, expected header " + std::string(magic));
  if (line == magic) return;
  if (line.starts_with(family)) {
    throw VersionMismatchError("unsupported version '" + line + "', expected '" + std::string(magic) + "'");
  }
  throw BadMagicError("bad magic '" + line.substr(0, 32) + "', expected '" + std::string(magic) + "'");
}

}  // namespace io

// ---------------------------------------------------------------------------
// Parameter snapshot: "NUR-PARAMS v1\n", u32 count, then per parameter
// name, rank, u64 extents and the little-endian f64 payload.

inline constexpr std::string_view kParamsMagic = "NUR-PARAMS v1";

inline void save_params(const ParamSet& params, std::ostream& os) {
  os << kParamsMagic << '\n';
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    io::write_string(os, p.name);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.shape().size()));
    for (auto e : p.value.shape()) io::write_le<std::uint64_t>(os, e);
    for (double v : p.value.values()) io::write_le<double>(os, v);
  }
}

inline void save_params(const ParamSet& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  save_params(params, os);
  if (!os) throw DataError("write failed: " + path);
}

// Loads values into an existing set; names and shapes must match exactly.
inline void load_params(ParamSet& params, std::istream& is) {
  io::expect_magic(is, kParamsMagic, "NUR-PARAMS");
  auto count = io::read_le<std::uint32_t>(is, "parameter count");
  if (count != params.size()) {
    throw DataError("snapshot has " + std::to_string(count) + " parameters, model expects " +
                    std::to_string(params.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = io::read_string(is, "parameter name");
    auto& p = params.get(name);
    auto rank = io::read_le<std::uint32_t>(is, "parameter rank");
    Shape shape(rank);
    for (auto& e : shape) e = io::read_le<std::uint64_t>(is, "parameter shape");
    if (shape != p.value.shape()) throw DataError("shape mismatch for parameter " + name);
    for (auto& v : p.value.values()) v = io::read_le<double>(is, "parameter payload");
  }
}

inline void load_params(ParamSet& params, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path);
  load_params(params, is);
}

}  // namespace nur
