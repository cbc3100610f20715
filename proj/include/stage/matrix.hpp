#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace stage {

/// Dense row-major matrix of 64-bit reals. Vectors are 1xN or Nx1 matrices.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c);

  static Matrix filled(int r, int c, double value);
  static Matrix identity(int n);
  static Matrix row_vector(std::initializer_list<double> values);
  static Matrix column_vector(std::initializer_list<double> values);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rs);

  double& at(int r, int c) { return data[std::size_t(r) * std::size_t(cols) + std::size_t(c)]; }
  const double& at(int r, int c) const {
    return data[std::size_t(r) * std::size_t(cols) + std::size_t(c)];
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }
  std::string shape_str() const;
  bool all_finite() const;
};

Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix transpose(const Matrix& a);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);

/// acc += delta, shapes must match
void axpy(Matrix& acc, const Matrix& delta);

bool bitwise_equal(const Matrix& a, const Matrix& b);

}  // namespace stage
