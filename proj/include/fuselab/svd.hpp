// Singular values via one-sided Jacobi, and the effective-rank estimator used
// for every rank trace in the repo.
#pragma once

#include <cstddef>
#include <vector>

#include "fuselab/matrix.hpp"

namespace fuselab {

// Descending non-negative singular values. Deterministic (fixed sweep order),
// satisfies the Frobenius identity ||m||_F^2 = sum sigma_i^2 to ~1e-12.
std::vector<double> singular_values(const Matrix& m);

// Count of singular values >= rel_tol * sigma_max; 0 for the zero matrix.
inline constexpr double kDefaultRankRelTol = 1e-3;
std::size_t effective_rank(const Matrix& m, double rel_tol = kDefaultRankRelTol);
std::size_t effective_rank(const std::vector<double>& sigmas, double rel_tol);

}  // namespace fuselab
