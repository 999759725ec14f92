#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace amnet {

// Dense row-major matrix of doubles with an optional gradient accumulator of
// the same shape. Vectors are 1 x n row matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Matrix row(std::initializer_list<double> values);
  static Matrix row(std::span<const double> values);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  // Gradient accumulator. Absent until ensure_grad() or the first backward
  // pass that reaches this matrix as a parameter.
  bool has_grad() const { return !grad_.empty(); }
  std::span<double> ensure_grad();
  std::span<const double> grad() const { return grad_; }
  void zero_grad();
  void clear_grad() { grad_.clear(); }

  void fill(double value);
  bool all_finite() const;
  Matrix transposed() const;

  std::string shape_string() const;

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
  std::vector<double> grad_;
};

// Plain (non-recorded) products used by oracles and inference helpers.
Matrix matmul_plain(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& m);

}  // namespace amnet
