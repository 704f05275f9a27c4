#pragma once

// Ground-truth discrete-time linear plant x(t+1) = A x(t) + B u(t),
// y(t) = C x(t). Construction enforces a strictly stable A and a minimal
// (reachable and observable) realization, because every downstream guarantee
// assumes both. Also provides the structural matrices built from (A, B, C):
// stacked observability, reachability, the Markov-parameter Toeplitz block,
// and the combined history-to-state map used by the lifted dynamics.

#include <utility>
#include <vector>

#include "iohpg/numerics.hpp"

namespace iohpg {

// ---------------------------------------------------------------------------
// Raw structural matrices
// ---------------------------------------------------------------------------

// [C; CA; ...; CA^(L-1)], size Lr x n.
template <typename Scalar>
MatX<Scalar> observability_matrix(const MatX<Scalar>& A, const MatX<Scalar>& C,
                                  Index L) {
  if (L < 1) throw DimensionMismatch("observability_matrix: L must be >= 1");
  const Index n = A.rows();
  const Index r = C.rows();
  MatX<Scalar> O(L * r, n);
  MatX<Scalar> block = C;
  for (Index i = 0; i < L; ++i) {
    O.middleRows(i * r, r) = block;
    if (i + 1 < L) block = (block * A).eval();
  }
  return O;
}

// [A^(L-1)B, ..., AB, B], size n x Lm.
template <typename Scalar>
MatX<Scalar> reachability_matrix(const MatX<Scalar>& A, const MatX<Scalar>& B,
                                 Index L) {
  if (L < 1) throw DimensionMismatch("reachability_matrix: L must be >= 1");
  const Index n = A.rows();
  const Index m = B.cols();
  MatX<Scalar> R(n, L * m);
  MatX<Scalar> block = B;
  for (Index i = L; i-- > 0;) {
    R.middleCols(i * m, m) = block;
    if (i > 0) block = (A * block).eval();
  }
  return R;
}

// ---------------------------------------------------------------------------
// PlantModel
// ---------------------------------------------------------------------------

template <typename Scalar = double>
struct PlantModelT {
  MatX<Scalar> A;
  MatX<Scalar> B;
  MatX<Scalar> C;

  PlantModelT(MatX<Scalar> A_in, MatX<Scalar> B_in, MatX<Scalar> C_in,
              Scalar rank_tol = Scalar(1e-9))
      : A(std::move(A_in)), B(std::move(B_in)), C(std::move(C_in)) {
    const Index nn = A.rows();
    if (A.cols() != nn || B.rows() != nn || C.cols() != nn || B.cols() < 1 ||
        C.rows() < 1 || nn < 1)
      throw DimensionMismatch("PlantModel: inconsistent (A, B, C) shapes");
    if (!A.allFinite() || !B.allFinite() || !C.allFinite())
      throw NonFinite("PlantModel: matrices must be finite");
    if (spectral_radius(A) >= Scalar(1))
      throw NotSchur("PlantModel: A must have spectral radius below 1");
    try {
      if (orthonormal_range(reachability_matrix(A, B, nn), rank_tol).rank != nn)
        throw RankDeficient("PlantModel: (A, B) is not reachable");
      if (orthonormal_range(observability_matrix(A, C, nn), rank_tol).rank !=
          nn)
        throw RankDeficient("PlantModel: (A, C) is not observable");
    } catch (const ZeroMatrix&) {
      throw RankDeficient("PlantModel: realization is not minimal");
    }
  }

  Index n() const { return A.rows(); }
  Index m() const { return B.cols(); }
  Index r() const { return C.rows(); }
};

using PlantModel = PlantModelT<double>;

// ---------------------------------------------------------------------------
// Structural operators on a plant
// ---------------------------------------------------------------------------

template <typename Scalar>
MatX<Scalar> observability(const PlantModelT<Scalar>& plant, Index L) {
  return observability_matrix(plant.A, plant.C, L);
}

template <typename Scalar>
MatX<Scalar> reachability(const PlantModelT<Scalar>& plant, Index L) {
  return reachability_matrix(plant.A, plant.B, L);
}

// Strictly block-lower-triangular Toeplitz matrix of Markov parameters:
// block (i, j) equals C A^(i-j-1) B for i > j and zero otherwise; size
// Lr x Lm. Maps stacked inputs to their zero-state contribution to stacked
// outputs over an L-step window.
template <typename Scalar>
MatX<Scalar> markov_toeplitz(const PlantModelT<Scalar>& plant, Index L) {
  if (L < 1) throw DimensionMismatch("markov_toeplitz: L must be >= 1");
  const Index m = plant.m();
  const Index r = plant.r();
  MatX<Scalar> H = MatX<Scalar>::Zero(L * r, L * m);
  MatX<Scalar> CAk = plant.C;  // C A^k, starting at k = 0
  for (Index k = 0; k + 1 < L; ++k) {
    const MatX<Scalar> markov = CAk * plant.B;  // C A^k B
    for (Index i = k + 1; i < L; ++i)
      H.block(i * r, (i - k - 1) * m, r, m) = markov;
    if (k + 2 < L) CAk = (CAk * plant.A).eval();
  }
  return H;
}

// History-to-state structure [[I, 0], [H_L, O_L]]: maps stacked inputs and
// the window-start state to the stacked input-output history. Its range is
// the set of histories the plant can actually produce.
template <typename Scalar>
MatX<Scalar> script_p(const PlantModelT<Scalar>& plant, Index L) {
  const Index n = plant.n();
  const Index m = plant.m();
  const Index r = plant.r();
  MatX<Scalar> P = MatX<Scalar>::Zero(L * (m + r), L * m + n);
  P.topLeftCorner(L * m, L * m).setIdentity();
  P.bottomLeftCorner(L * r, L * m) = markov_toeplitz(plant, L);
  P.bottomRightCorner(L * r, n) = observability_matrix(plant.A, plant.C, L);
  return P;
}

// True iff an L-step output window determines the window-start state.
template <typename Scalar>
bool check_L(const PlantModelT<Scalar>& plant, Index L,
             Scalar rank_tol = Scalar(1e-9)) {
  if (L < 1) throw DimensionMismatch("check_L: L must be >= 1");
  try {
    return orthonormal_range(observability_matrix(plant.A, plant.C, L),
                             rank_tol)
               .rank == plant.n();
  } catch (const ZeroMatrix&) {
    return false;
  }
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

template <typename Scalar = double>
struct StateTraceT {
  std::vector<VecX<Scalar>> x;  // states x(t0) .. x(t0 + T)
  std::vector<VecX<Scalar>> u;  // inputs u(t0) .. u(t0 + T - 1)
  std::vector<VecX<Scalar>> y;  // outputs y(t) = C x(t), aligned with x
  Index t0 = 0;
};

using StateTrace = StateTraceT<double>;

// Exact linear recursion from x0 under the given input sequence.
template <typename Scalar>
StateTraceT<Scalar> rollout(const PlantModelT<Scalar>& plant,
                            const VecX<Scalar>& x0,
                            const std::vector<VecX<Scalar>>& u_seq,
                            Index t0 = 0) {
  if (x0.size() != plant.n())
    throw DimensionMismatch("rollout: x0 has wrong length");
  StateTraceT<Scalar> trace;
  trace.t0 = t0;
  trace.x.reserve(u_seq.size() + 1);
  trace.y.reserve(u_seq.size() + 1);
  trace.u = u_seq;
  VecX<Scalar> x = x0;
  trace.x.push_back(x);
  trace.y.push_back(plant.C * x);
  for (const VecX<Scalar>& u : u_seq) {
    if (u.size() != plant.m())
      throw DimensionMismatch("rollout: input has wrong length");
    x = (plant.A * x + plant.B * u).eval();
    trace.x.push_back(x);
    trace.y.push_back(plant.C * x);
  }
  return trace;
}

}  // namespace iohpg
