#pragma once

// Helpers shared by the unit-test binaries: deterministic random matrices
// with prescribed spectral radius and simple PSD factories.

#include "iohpg/numerics.hpp"

namespace iohpg::testutil {

inline Matrix random_matrix(RandomStream& stream, Index rows, Index cols) {
  Matrix M(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) M(i, j) = stream.normal();
  return M;
}

// Random square matrix rescaled so its spectral radius equals `radius`.
inline Matrix random_schur(RandomStream& stream, Index n, double radius) {
  Matrix A = random_matrix(stream, n, n);
  const double rho = spectral_radius(A);
  if (rho > 0.0) A *= radius / rho;
  return A;
}

inline Matrix random_psd(RandomStream& stream, Index n) {
  const Matrix F = random_matrix(stream, n, n);
  return F * F.transpose();
}

}  // namespace iohpg::testutil
