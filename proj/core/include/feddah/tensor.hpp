#ifndef FEDDAH_TENSOR_HPP
#define FEDDAH_TENSOR_HPP

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace feddah {

using Shape = std::vector<std::size_t>;

[[nodiscard]] std::size_t shape_size(const Shape& shape);
[[nodiscard]] std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. A rank-0 tensor (empty shape) holds one
/// scalar.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor filled(Shape shape, double value);

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] std::span<double> data() noexcept { return data_; }
  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Element (r, c) of a rank-2 tensor.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  [[nodiscard]] double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  [[nodiscard]] double item() const;
  [[nodiscard]] bool all_finite() const noexcept;
  [[nodiscard]] Tensor reshaped(Shape shape) const;
  [[nodiscard]] Tensor transposed() const;

  void fill(double value);

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// y = W x + b. Throws ConfigError naming both shapes on mismatch.
[[nodiscard]] Tensor linear_forward(const Tensor& x, const Tensor& W, const Tensor& b);

[[nodiscard]] double sum_of_squares(std::span<const double> a);
[[nodiscard]] double squared_distance(std::span<const double> a, std::span<const double> b);

/// Throws InvariantError when any entry is NaN or infinite.
void require_finite(const Tensor& t, const char* where);

}  // namespace feddah

#endif  // FEDDAH_TENSOR_HPP
