#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace crl {

/// Shape-tagged dense array of doubles stored row-major.
///
/// Most of the toolkit works with rank-2 tensors (samples x features); rank-1
/// tensors hold bias vectors and single feature vectors.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor vector(std::vector<double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading dimension (1 for rank-1 tensors, treated as a single row).
  std::size_t rows() const;
  /// Product of the trailing dimensions.
  std::size_t cols() const;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  std::string shape_string() const;

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Throws NumericalError naming `what` if any entry is NaN or infinite.
void require_finite(const Tensor& t, std::string_view what);
bool all_finite(const Tensor& t);

/// Throws ShapeError naming both shapes.
[[noreturn]] void shape_mismatch(std::string_view op, const Tensor& a, const Tensor& b);

/// a [m x k] * b [k x n]. Each output row is accumulated in a fixed order that
/// depends only on that row, so results do not change with batch composition.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T [k x m]^T * b [k x n] -> [m x n].
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a [m x k] * b^T [n x k]^T -> [m x n].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// Columns [begin, end) of a rank-2 tensor.
Tensor slice_cols(const Tensor& t, std::size_t begin, std::size_t end);
/// Rows selected by index, in the given order.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices);

/// Pairwise Euclidean distances between rows of `a` [m x d] and `b` [k x d].
Tensor l2_distance_matrix(const Tensor& a, const Tensor& b);

}  // namespace crl
