#ifndef TMRN_TENSOR_HPP
#define TMRN_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tmrn {

// Error taxonomy: shape/width problems, bad values or preconditions, file format problems.
class DimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValueError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ")";
  return os.str();
}

/// Dense n-dimensional array of doubles in row-major order. Plain value type;
/// safe to copy and to move across threads. `grad`, when present, always has
/// the same element count as the data buffer.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(element_count(shape_), 0.0);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw DimError("tensor data size " + std::to_string(data_.size()) +
                     " does not match shape " + shape_to_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  /// 1-D tensor of shape {n}.
  static Tensor vector(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }

  /// 1xN row matrix.
  static Tensor row(std::vector<double> v) {
    Shape s{1, v.size()};
    return Tensor(std::move(s), std::move(v));
  }

  /// Rank-2 tensor from nested initializer rows; all rows must be equally long.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    Tensor t({r, c});
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw DimError("ragged rows in matrix literal");
      for (double v : row) t.data_[i++] = v;
    }
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::size_t rows() const {
    require_rank2("rows()");
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank2("cols()");
    return shape_[1];
  }

  bool is_scalar() const { return size() == 1; }
  double scalar() const {
    if (!is_scalar()) throw DimError("scalar() on tensor of shape " + shape_to_string(shape_));
    return data_[0];
  }

  double& at(std::size_t i) { return data_[i]; }
  double at(std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& at3(std::size_t a, std::size_t b, std::size_t c) {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }
  double at3(std::size_t a, std::size_t b, std::size_t c) const {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void require_finite(const char* where) const {
    if (!all_finite()) throw ValueError(std::string("non-finite values in ") + where);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  /// Exact elementwise equality (used by determinism and round-trip tests).
  bool bit_equal(const Tensor& o) const {
    if (shape_ != o.shape_) return false;
    for (std::size_t i = 0; i < data_.size(); ++i)
      if (data_[i] != o.data_[i]) return false;
    return true;
  }

  // Gradient participation. `grad` mirrors the element layout when present.
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;

  void zero_grad() { grad.emplace(data_.size(), 0.0); }
  void ensure_grad() {
    if (!grad || grad->size() != data_.size()) zero_grad();
  }

  static std::size_t element_count(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) {
      if (e == 0) throw DimError("zero extent in shape " + shape_to_string(s));
      n *= e;
    }
    return n;
  }

 private:
  void require_rank2(const char* what) const {
    if (shape_.size() != 2)
      throw DimError(std::string(what) + " requires rank-2 tensor, got " + shape_to_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace tmrn

#endif  // TMRN_TENSOR_HPP
