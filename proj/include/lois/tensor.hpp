#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lois {

/// Thrown when array shapes disagree with an operation's contract.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Thrown for out-of-domain arguments (indices, thresholds, ...).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Thrown for inconsistent dataset contents (labels out of range, ...).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string format_dims(std::span<const std::size_t> dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major N-d array. Owns its storage.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> dims, T fill = T{})
      : dims_(std::move(dims)), data_(product(dims_), fill) {}

  Tensor(std::vector<std::size_t> dims, std::vector<T> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    if (data_.size() != product(dims_)) {
      throw ShapeError("tensor payload of " + std::to_string(data_.size()) +
                       " elements does not fill " + format_dims(dims_));
    }
  }

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  template <typename... I>
  T& operator()(I... idx) {
    return data_[offset(idx...)];
  }
  template <typename... I>
  const T& operator()(I... idx) const {
    return data_[offset(idx...)];
  }

  /// Contiguous view of the trailing axes at leading index `i`.
  std::span<T> slice(std::size_t i) {
    const std::size_t stride = data_.size() / dims_.at(0);
    return std::span<T>(data_).subspan(i * stride, stride);
  }
  std::span<const T> slice(std::size_t i) const {
    const std::size_t stride = data_.size() / dims_.at(0);
    return std::span<const T>(data_).subspan(i * stride, stride);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  static std::size_t product(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
  }

  template <typename... I>
  std::size_t offset(I... idx) const {
    static_assert(sizeof...(I) > 0);
    const std::size_t ix[] = {static_cast<std::size_t>(idx)...};
    std::size_t off = 0;
    for (std::size_t a = 0; a < sizeof...(I); ++a) off = off * dims_[a] + ix[a];
    return off;
  }

  std::vector<std::size_t> dims_;
  std::vector<T> data_;
};

/// Binary H×W mask, entries exactly 0 or 1.
using BinaryMask = Tensor<std::uint8_t>;

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace lois
