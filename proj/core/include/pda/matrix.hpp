#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace pda {

// Dense row-major matrix of doubles. Batches are stored one sample per row.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  void fill(double v);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a (n×k) · b (k×m)
Matrix matmul(const Matrix& a, const Matrix& b);
// aᵀ (k×n)ᵀ · b (k×m) -> n×m
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a (n×k) · bᵀ (m×k)ᵀ -> n×m
Matrix matmul_nt(const Matrix& a, const Matrix& b);

// dst += scale * src, shapes must match.
void axpy(double scale, const Matrix& src, Matrix& dst);

Matrix select_rows(const Matrix& m, std::span<const std::size_t> indices);

}  // namespace pda
