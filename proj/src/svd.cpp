#include "fuselab/svd.hpp"

#include <algorithm>
#include <cmath>

#include "fuselab/error.hpp"

namespace fuselab {

namespace {

// One-sided Jacobi on the columns of a (rows >= cols assumed by caller):
// cyclic sweeps of plane rotations until all column pairs are orthogonal.
// Column norms are then the singular values.
std::vector<double> jacobi_column_svd(Matrix a) {
  const std::size_t n = a.cols;
  const std::size_t m = a.rows;
  const double eps = 1e-14;
  const int max_sweeps = 60;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
          const double* row = a.row_ptr(r);
          app += row[p] * row[p];
          aqq += row[q] * row[q];
          apq += row[p] * row[q];
        }
        if (std::fabs(apq) <= eps * std::sqrt(app * aqq)) continue;
        rotated = true;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < m; ++r) {
          double* row = a.row_ptr(r);
          const double vp = row[p];
          const double vq = row[q];
          row[p] = c * vp - s * vq;
          row[q] = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    double ss = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
      const double v = a(r, c);
      ss += v * v;
    }
    sigma[c] = std::sqrt(ss);
  }
  std::sort(sigma.begin(), sigma.end(), std::greater<double>());
  return sigma;
}

}  // namespace

std::vector<double> singular_values(const Matrix& m) {
  require_finite(m, "singular_values");
  if (m.rows == 0 || m.cols == 0) return {};
  if (m.rows >= m.cols) return jacobi_column_svd(m);
  return jacobi_column_svd(transpose(m));
}

std::size_t effective_rank(const std::vector<double>& sigmas, double rel_tol) {
  if (rel_tol <= 0.0 || rel_tol >= 1.0)
    throw Error::input("effective_rank: rel_tol must lie in (0,1)");
  if (sigmas.empty() || sigmas.front() <= 0.0) return 0;
  const double cut = rel_tol * sigmas.front();
  std::size_t k = 0;
  while (k < sigmas.size() && sigmas[k] >= cut) ++k;
  return k;
}

std::size_t effective_rank(const Matrix& m, double rel_tol) {
  if (m.rows == 0 || m.cols == 0) return 0;
  return effective_rank(singular_values(m), rel_tol);
}

}  // namespace fuselab
