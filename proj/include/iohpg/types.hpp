#pragma once

// Shared dense-matrix aliases and the error taxonomy used across the library.
// Every failure mode raised by a library routine derives from iohpg::Error so
// callers can distinguish numerical trouble from programming mistakes.

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace iohpg {

using Index = Eigen::Index;

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatX<double>;
using Vector = VecX<double>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inputs whose shapes do not conform.
struct DimensionMismatch : Error {
  using Error::Error;
};
// NaN or Inf where a finite value is required.
struct NonFinite : Error {
  using Error::Error;
};
// A matrix required to have spectral radius < 1 does not.
struct NotSchur : Error {
  using Error::Error;
};
// An iterative solver hit its iteration cap before reaching tolerance.
struct NoConvergence : Error {
  using Error::Error;
};
// orthonormal_range received a matrix that is numerically zero.
struct ZeroMatrix : Error {
  using Error::Error;
};
// A rank precondition (observability, reachability, minimality) failed.
struct RankDeficient : Error {
  using Error::Error;
};
// A computed subspace dimension differs from the one implied by theory.
struct RankMismatch : Error {
  using Error::Error;
};
// A supplied second moment does not share its range with the reachable set.
struct PhiMismatch : Error {
  using Error::Error;
};
// A history buffer was queried before enough samples were pushed.
struct Underfilled : Error {
  using Error::Error;
};
// A data-driven estimate found no decision within the candidate range.
struct Inconclusive : Error {
  using Error::Error;
};
// A gain lies outside the configured cost sublevel set.
struct NotInSublevel : Error {
  using Error::Error;
};
// The controller realization cannot reproduce the requested history window.
struct SingularObservability : Error {
  using Error::Error;
};
// A cost evaluation was requested for a destabilizing gain.
struct Unbounded : Error {
  using Error::Error;
};
// An optimization run left the stabilizing set and cannot continue.
struct Diverged : Error {
  using Error::Error;
};

}  // namespace iohpg
