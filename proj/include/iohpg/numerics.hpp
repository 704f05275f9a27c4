#pragma once

// Dense real-matrix kernel: discrete Lyapunov and Riccati solvers, a
// rank-revealing orthonormal range, spectral radius, and seeded Gaussian
// sampling. Everything here is deterministic given its inputs; the sampling
// routines are deterministic given the stream state.

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>

#include "iohpg/types.hpp"

namespace iohpg {

// ---------------------------------------------------------------------------
// Seeded sampling
// ---------------------------------------------------------------------------

// Deterministic normal generator: mt19937_64 + Box-Muller, so the exact draw
// sequence depends only on (seed, draw count) and not on the platform's
// std::normal_distribution implementation.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  double normal() {
    ++position_;
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_unit();
    const double u2 = uniform_unit();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t position() const { return position_; }

 private:
  // Uniform on (0, 1]; the +1 keeps log() finite.
  double uniform_unit() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1p-53;
  }

  std::uint64_t seed_ = 0;
  std::mt19937_64 engine_;
  std::uint64_t position_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Draws cov_factor * z with z standard normal, so the sample second moment is
// cov_factor * cov_factor' in expectation.
template <typename Derived>
VecX<typename Derived::Scalar> sample_gaussian(
    RandomStream& stream, const Eigen::MatrixBase<Derived>& cov_factor) {
  VecX<typename Derived::Scalar> z(cov_factor.cols());
  for (Index i = 0; i < z.size(); ++i) z(i) = stream.normal();
  return cov_factor * z;
}

// Uniform direction on the Frobenius-norm unit sphere of m x d matrices,
// realized as entrywise standard normals scaled to unit norm.
inline Matrix sample_unit_frobenius(RandomStream& stream, Index rows,
                                    Index cols) {
  Matrix direction(rows, cols);
  double norm = 0.0;
  do {
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) direction(i, j) = stream.normal();
    norm = direction.norm();
  } while (norm == 0.0);
  return direction / norm;
}

// ---------------------------------------------------------------------------
// Spectral radius
// ---------------------------------------------------------------------------

template <typename Derived>
typename Derived::Scalar spectral_radius(const Eigen::MatrixBase<Derived>& A) {
  using Scalar = typename Derived::Scalar;
  if (A.rows() != A.cols())
    throw DimensionMismatch("spectral_radius: matrix must be square");
  if (!A.allFinite())
    throw NonFinite("spectral_radius: input has NaN or Inf entries");
  if (A.rows() == 0) return Scalar(0);
  Eigen::EigenSolver<MatX<Scalar>> eig(A.derived(), false);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Discrete Lyapunov equations
// ---------------------------------------------------------------------------

namespace detail {

constexpr double kSchurMargin = 1e-12;
constexpr double kLyapunovTol = 1e-14;
constexpr int kLyapunovMaxDoublings = 200;

template <typename Scalar>
void check_lyapunov_inputs(const MatX<Scalar>& A, const MatX<Scalar>& Qs,
                           const char* who) {
  if (A.rows() != A.cols() || Qs.rows() != Qs.cols() || A.rows() != Qs.rows())
    throw DimensionMismatch(std::string(who) +
                            ": A and Qs must be square of equal size");
  if (!A.allFinite() || !Qs.allFinite())
    throw NonFinite(std::string(who) + ": input has NaN or Inf entries");
  if (spectral_radius(A) >= 1.0 - kSchurMargin)
    throw NotSchur(std::string(who) + ": spectral radius is not below 1");
}

// Doubling recursion for X = sum_t T^t Q T'^t (transposed variant sums
// T'^t Q T^t). Each pass doubles the number of accumulated terms, so
// spectral radii near 1 still converge in O(log) squarings.
template <typename Scalar>
MatX<Scalar> dlyap_doubling(MatX<Scalar> T, MatX<Scalar> X,
                            bool transpose_form, const char* who) {
  for (int pass = 0; pass < kLyapunovMaxDoublings; ++pass) {
    const MatX<Scalar> increment =
        transpose_form ? MatX<Scalar>(T.transpose() * X * T)
                       : MatX<Scalar>(T * X * T.transpose());
    X += increment;
    if (increment.norm() <=
        kLyapunovTol * std::max(Scalar(1), X.norm()))
      return ((X + X.transpose()) / Scalar(2)).eval();
    T = (T * T).eval();
  }
  throw NoConvergence(std::string(who) + ": doubling did not converge");
}

}  // namespace detail

// Unique X with A'XA - X + Qs = 0 (value-function form).
template <typename DerivedA, typename DerivedQ>
MatX<typename DerivedA::Scalar> solve_dlyap_transpose(
    const Eigen::MatrixBase<DerivedA>& A,
    const Eigen::MatrixBase<DerivedQ>& Qs) {
  using Scalar = typename DerivedA::Scalar;
  MatX<Scalar> Aw = A.derived();
  MatX<Scalar> Qw = Qs.derived();
  detail::check_lyapunov_inputs(Aw, Qw, "solve_dlyap_transpose");
  return detail::dlyap_doubling(std::move(Aw), std::move(Qw), true,
                                "solve_dlyap_transpose");
}

// Unique X with AXA' - X + Qs = 0 (Gramian form).
template <typename DerivedA, typename DerivedQ>
MatX<typename DerivedA::Scalar> solve_dlyap(
    const Eigen::MatrixBase<DerivedA>& A,
    const Eigen::MatrixBase<DerivedQ>& Qs) {
  using Scalar = typename DerivedA::Scalar;
  MatX<Scalar> Aw = A.derived();
  MatX<Scalar> Qw = Qs.derived();
  detail::check_lyapunov_inputs(Aw, Qw, "solve_dlyap");
  return detail::dlyap_doubling(std::move(Aw), std::move(Qw), false,
                                "solve_dlyap");
}

// Solves both Lyapunov forms for one transition matrix while sharing the
// squared powers of A: X solves A'XA - X = -Qx and Y solves AYA' - Y = -Qy.
// The pair is the per-iterate bottleneck of the exact policy gradient, where
// X is the value matrix and Y the state second-moment accumulator.
template <typename DerivedA, typename DerivedX, typename DerivedY>
std::pair<MatX<typename DerivedA::Scalar>, MatX<typename DerivedA::Scalar>>
solve_dlyap_pair(const Eigen::MatrixBase<DerivedA>& A,
                 const Eigen::MatrixBase<DerivedX>& Qx,
                 const Eigen::MatrixBase<DerivedY>& Qy) {
  using Scalar = typename DerivedA::Scalar;
  MatX<Scalar> T = A.derived();
  MatX<Scalar> X = Qx.derived();
  MatX<Scalar> Y = Qy.derived();
  detail::check_lyapunov_inputs(T, X, "solve_dlyap_pair");
  detail::check_lyapunov_inputs(T, Y, "solve_dlyap_pair");
  bool x_done = false;
  bool y_done = false;
  for (int pass = 0; pass < detail::kLyapunovMaxDoublings; ++pass) {
    if (!x_done) {
      const MatX<Scalar> inc = T.transpose() * X * T;
      X += inc;
      x_done = inc.norm() <=
               detail::kLyapunovTol * std::max(Scalar(1), X.norm());
    }
    if (!y_done) {
      const MatX<Scalar> inc = T * Y * T.transpose();
      Y += inc;
      y_done = inc.norm() <=
               detail::kLyapunovTol * std::max(Scalar(1), Y.norm());
    }
    if (x_done && y_done)
      return {((X + X.transpose()) / Scalar(2)).eval(),
              ((Y + Y.transpose()) / Scalar(2)).eval()};
    T = (T * T).eval();
  }
  throw NoConvergence("solve_dlyap_pair: doubling did not converge");
}

// ---------------------------------------------------------------------------
// Discrete algebraic Riccati equation
// ---------------------------------------------------------------------------

// Stabilizing solution of X = A'XA - A'XB (R + B'XB)^-1 B'XA + Qs by
// fixed-point iteration from X0 = Qs. Adequate for the desk-scale systems
// handled here; the stop test is relative because X can sit at 1e4 scale
// where an absolute increment of 1e-12 is below roundoff.
template <typename DerivedA, typename DerivedB, typename DerivedQ,
          typename DerivedR>
MatX<typename DerivedA::Scalar> solve_dare(
    const Eigen::MatrixBase<DerivedA>& A, const Eigen::MatrixBase<DerivedB>& B,
    const Eigen::MatrixBase<DerivedQ>& Qs,
    const Eigen::MatrixBase<DerivedR>& R) {
  using Scalar = typename DerivedA::Scalar;
  const Index n = A.rows();
  const Index m = B.cols();
  if (A.cols() != n || B.rows() != n || Qs.rows() != n || Qs.cols() != n ||
      R.rows() != m || R.cols() != m)
    throw DimensionMismatch("solve_dare: inconsistent shapes");
  if (!A.allFinite() || !B.allFinite() || !Qs.allFinite() || !R.allFinite())
    throw NonFinite("solve_dare: input has NaN or Inf entries");

  const MatX<Scalar> Aw = A.derived();
  const MatX<Scalar> Bw = B.derived();
  const MatX<Scalar> Rw = R.derived();
  MatX<Scalar> X = Qs.derived();
  constexpr Scalar kStepTol = 1e-12;
  constexpr long kMaxIters = 1000000;
  for (long it = 0; it < kMaxIters; ++it) {
    const MatX<Scalar> BtXA = Bw.transpose() * X * Aw;
    const MatX<Scalar> G = Rw + Bw.transpose() * X * Bw;
    MatX<Scalar> Xn = Aw.transpose() * X * Aw -
                      BtXA.transpose() * G.ldlt().solve(BtXA) + Qs.derived();
    Xn = ((Xn + Xn.transpose()) / Scalar(2)).eval();
    if (!Xn.allFinite())
      throw NonFinite("solve_dare: iteration produced NaN or Inf");
    const Scalar step = (Xn - X).norm();
    X = std::move(Xn);
    if (step <= kStepTol * std::max(Scalar(1), X.norm())) return X;
  }
  throw NoConvergence("solve_dare: fixed point not reached");
}

// ---------------------------------------------------------------------------
// Orthonormal range
// ---------------------------------------------------------------------------

template <typename Scalar>
struct RangeBasisT {
  MatX<Scalar> P;  // orthonormal columns spanning im M
  Index rank = 0;
};
using RangeBasis = RangeBasisT<double>;

// Orthonormal basis of im M, with rank decided by the singular values above
// tol * sigma_max. A matrix with no singular value above an absolute floor
// of 1e-14 has no meaningful range and is rejected.
template <typename Derived>
RangeBasisT<typename Derived::Scalar> orthonormal_range(
    const Eigen::MatrixBase<Derived>& M,
    typename Derived::Scalar tol = typename Derived::Scalar(1e-9)) {
  using Scalar = typename Derived::Scalar;
  if (!M.allFinite())
    throw NonFinite("orthonormal_range: input has NaN or Inf entries");
  Eigen::JacobiSVD<MatX<Scalar>> svd(M.derived(), Eigen::ComputeThinU);
  const auto& sigma = svd.singularValues();
  if (sigma.size() == 0 || sigma(0) < Scalar(1e-14))
    throw ZeroMatrix("orthonormal_range: matrix is numerically zero");
  Index rank = 0;
  while (rank < sigma.size() && sigma(rank) > tol * sigma(0)) ++rank;
  return {svd.matrixU().leftCols(rank).eval(), rank};
}

}  // namespace iohpg
