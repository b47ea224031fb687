// Dense row-major matrix of doubles and the handful of BLAS-like kernels the
// library runs on. Everything is 64-bit; the bound checks in the diagnostics
// would drown in float32 noise.
#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace fuselab {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> r);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  double* row_ptr(std::size_t r) { return data.data() + r * cols; }
  const double* row_ptr(std::size_t r) const { return data.data() + r * cols; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool all_finite() const;
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// Products. Shapes are checked; mismatches raise a config error.
Matrix matmul(const Matrix& a, const Matrix& b);     // a · b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a · bᵀ
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // aᵀ · b

Matrix transpose(const Matrix& a);

// y += alpha * x (same shape).
void add_scaled(Matrix& y, const Matrix& x, double alpha);
void scale(Matrix& m, double alpha);

// Adds v to every row of m (v.size() == m.cols).
void add_row_vector(Matrix& m, const std::vector<double>& v);

std::vector<double> column_sums(const Matrix& m);
std::vector<double> column_means(const Matrix& m);

// Subtracts the column mean from every column.
Matrix center_columns(const Matrix& m);

double frobenius_norm(const Matrix& m);
double dot(const std::vector<double>& a, const std::vector<double>& b);
double norm2(const std::vector<double>& v);

// |cosine| guards against zero vectors (returns 0 for them).
double abs_cosine(const double* a, const double* b, std::size_t n);

// Horizontal concatenation; all blocks share the row count.
Matrix hstack(const std::vector<Matrix>& blocks);
// Columns [c0, c1) of m.
Matrix slice_cols(const Matrix& m, std::size_t c0, std::size_t c1);
// Rows by index.
Matrix take_rows(const Matrix& m, const std::vector<int>& idx);

// Throws an input error if any entry is NaN/Inf. `what` names the offender.
void require_finite(const Matrix& m, const char* what);

}  // namespace fuselab
