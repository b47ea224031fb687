#include "fuselab/matrix.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "fuselab/error.hpp"

namespace fuselab {

namespace {

using EMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ECMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                             Eigen::Dynamic, Eigen::RowMajor>>;

ECMap map(const Matrix& m) {
  return ECMap(m.data.data(), static_cast<Eigen::Index>(m.rows),
               static_cast<Eigen::Index>(m.cols));
}

EMap map(Matrix& m) {
  return EMap(m.data.data(), static_cast<Eigen::Index>(m.rows),
              static_cast<Eigen::Index>(m.cols));
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw Error::config(std::string(op) + ": incompatible shapes " +
                      std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                      " and " + std::to_string(b.rows) + "x" +
                      std::to_string(b.cols));
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(r.size(), r.size() ? r.begin()->size() : 0);
  std::size_t i = 0;
  for (const auto& row : r) {
    if (row.size() != m.cols) throw Error::config("from_rows: ragged rows");
    std::size_t j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) shape_error("matmul", a, b);
  Matrix out(a.rows, b.cols);
  map(out).noalias() = map(a) * map(b);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) shape_error("matmul_nt", a, b);
  Matrix out(a.rows, b.rows);
  map(out).noalias() = map(a) * map(b).transpose();
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) shape_error("matmul_tn", a, b);
  Matrix out(a.cols, b.cols);
  map(out).noalias() = map(a).transpose() * map(b);
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  map(out) = map(a).transpose();
  return out;
}

void add_scaled(Matrix& y, const Matrix& x, double alpha) {
  if (!y.same_shape(x)) shape_error("add_scaled", y, x);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += alpha * x.data[i];
}

void scale(Matrix& m, double alpha) {
  for (double& v : m.data) v *= alpha;
}

void add_row_vector(Matrix& m, const std::vector<double>& v) {
  if (v.size() != m.cols) throw Error::config("add_row_vector: length mismatch");
  for (std::size_t r = 0; r < m.rows; ++r) {
    double* p = m.row_ptr(r);
    for (std::size_t c = 0; c < m.cols; ++c) p[c] += v[c];
  }
}

std::vector<double> column_sums(const Matrix& m) {
  std::vector<double> s(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* p = m.row_ptr(r);
    for (std::size_t c = 0; c < m.cols; ++c) s[c] += p[c];
  }
  return s;
}

std::vector<double> column_means(const Matrix& m) {
  auto s = column_sums(m);
  if (m.rows > 0)
    for (double& v : s) v /= static_cast<double>(m.rows);
  return s;
}

Matrix center_columns(const Matrix& m) {
  Matrix out = m;
  const auto mu = column_means(m);
  for (std::size_t r = 0; r < out.rows; ++r) {
    double* p = out.row_ptr(r);
    for (std::size_t c = 0; c < out.cols; ++c) p[c] -= mu[c];
  }
  return out;
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data) s += v * v;
  return std::sqrt(s);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error::config("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double abs_cosine(const double* a, const double* b, std::size_t n) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa <= 0.0 || bb <= 0.0) return 0.0;
  return std::fabs(ab) / std::sqrt(aa * bb);
}

Matrix hstack(const std::vector<Matrix>& blocks) {
  if (blocks.empty()) return {};
  std::size_t cols = 0;
  for (const auto& b : blocks) {
    if (b.rows != blocks[0].rows) throw Error::config("hstack: row mismatch");
    cols += b.cols;
  }
  Matrix out(blocks[0].rows, cols);
  for (std::size_t r = 0; r < out.rows; ++r) {
    double* p = out.row_ptr(r);
    for (const auto& b : blocks) {
      const double* q = b.row_ptr(r);
      for (std::size_t c = 0; c < b.cols; ++c) *p++ = q[c];
    }
  }
  return out;
}

Matrix slice_cols(const Matrix& m, std::size_t c0, std::size_t c1) {
  if (c0 > c1 || c1 > m.cols) throw Error::config("slice_cols: bad range");
  Matrix out(m.rows, c1 - c0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* p = m.row_ptr(r);
    double* q = out.row_ptr(r);
    for (std::size_t c = c0; c < c1; ++c) *q++ = p[c];
  }
  return out;
}

Matrix take_rows(const Matrix& m, const std::vector<int>& idx) {
  Matrix out(idx.size(), m.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto r = static_cast<std::size_t>(idx[i]);
    if (r >= m.rows) throw Error::input("take_rows: index out of range");
    const double* p = m.row_ptr(r);
    double* q = out.row_ptr(i);
    for (std::size_t c = 0; c < m.cols; ++c) q[c] = p[c];
  }
  return out;
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.all_finite())
    throw Error::input(std::string(what) + ": non-finite entries");
}

}  // namespace fuselab
