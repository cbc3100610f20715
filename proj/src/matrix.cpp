#include "stage/matrix.hpp"

#include <cmath>

#include "stage/errors.hpp"

namespace stage {

Matrix::Matrix(int r, int c) : rows(r), cols(c) {
  if (r < 0 || c < 0) throw ShapeError("matrix: negative shape " + std::to_string(r) + "x" + std::to_string(c));
  data.assign(std::size_t(r) * std::size_t(c), 0.0);
}

Matrix Matrix::filled(int r, int c, double value) {
  Matrix m(r, c);
  for (double& v : m.data) v = value;
  return m;
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::initializer_list<double> values) {
  Matrix m(1, int(values.size()));
  int j = 0;
  for (double v : values) m.at(0, j++) = v;
  return m;
}

Matrix Matrix::column_vector(std::initializer_list<double> values) {
  Matrix m(int(values.size()), 1);
  int i = 0;
  for (double v : values) m.at(i++, 0) = v;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rs) {
  int r = int(rs.size());
  int c = r == 0 ? 0 : int(rs.begin()->size());
  Matrix m(r, c);
  int i = 0;
  for (const auto& row : rs) {
    if (int(row.size()) != c) throw ShapeError("from_rows: ragged row lengths");
    int j = 0;
    for (double v : row) m.at(i, j++) = v;
    ++i;
  }
  return m;
}

std::string Matrix::shape_str() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

bool Matrix::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw ShapeError("matmul: " + a.shape_str() + " vs " + b.shape_str());
  Matrix out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int k = 0; k < a.cols; ++k) {
      double aik = a.at(i, k);
      const double* brow = b.data.data() + std::size_t(k) * b.cols;
      double* orow = out.data.data() + std::size_t(i) * out.cols;
      for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw ShapeError("matmul_nt: " + a.shape_str() + " vs " + b.shape_str());
  Matrix out(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < b.rows; ++j) {
      double acc = 0.0;
      const double* ar = a.data.data() + std::size_t(i) * a.cols;
      const double* br = b.data.data() + std::size_t(j) * b.cols;
      for (int k = 0; k < a.cols; ++k) acc += ar[k] * br[k];
      out.at(i, j) = acc;
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw ShapeError("matmul_tn: " + a.shape_str() + " vs " + b.shape_str());
  Matrix out(a.cols, b.cols);
  for (int k = 0; k < a.rows; ++k) {
    const double* ar = a.data.data() + std::size_t(k) * a.cols;
    const double* br = b.data.data() + std::size_t(k) * b.cols;
    for (int i = 0; i < a.cols; ++i) {
      double aki = ar[i];
      double* orow = out.data.data() + std::size_t(i) * out.cols;
      for (int j = 0; j < b.cols; ++j) orow[j] += aki * br[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("hadamard: " + a.shape_str() + " vs " + b.shape_str());
  Matrix out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("add: " + a.shape_str() + " vs " + b.shape_str());
  Matrix out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

void axpy(Matrix& acc, const Matrix& delta) {
  if (!acc.same_shape(delta)) throw ShapeError("axpy: " + acc.shape_str() + " vs " + delta.shape_str());
  for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += delta.data[i];
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    // bit-level comparison: distinguishes -0.0 from 0.0 and fails on NaN
    if (a.data[i] != b.data[i]) return false;
    if (std::signbit(a.data[i]) != std::signbit(b.data[i])) return false;
  }
  return true;
}

}  // namespace stage
