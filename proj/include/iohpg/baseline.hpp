#pragma once

// Riccati reference solution. The optimal history-feedback gain is obtained
// by solving the state-feedback problem for the plant and composing the
// resulting gain with the history-to-state map; any completion that vanishes
// on the reachable subspace yields the same closed loop, so the optimal cost
// is available in closed form. Gradient methods are validated against it.

#include <utility>

#include "ioh.hpp"
#include "numerics.hpp"
#include "plant.hpp"

namespace iohpg {

template <typename Scalar = double>
struct OptimalReferenceT {
  MatX<Scalar> X;     // stabilizing Riccati solution for (A, B, C'QC, R)
  MatX<Scalar> K_sf;  // optimal state-feedback gain, u = K_sf x
  MatX<Scalar> K;     // history-feedback gain with K v = K_sf x on data
  Scalar J_star = 0;  // optimal infinite-horizon cost
};

using OptimalReference = OptimalReferenceT<double>;

// Optimal state-feedback gain for the quadratic output/input cost; returns
// the Riccati solution X and K_sf = -(R + B'XB)^-1 B'XA.
template <typename Scalar>
std::pair<MatX<Scalar>, MatX<Scalar>> optimal_state_gain(
    const PlantModelT<Scalar>& plant, const MatX<Scalar>& Q,
    const MatX<Scalar>& R) {
  if (Q.rows() != plant.r() || Q.cols() != plant.r())
    throw DimensionMismatch("optimal_state_gain: Q must be r x r");
  if (R.rows() != plant.m() || R.cols() != plant.m())
    throw DimensionMismatch("optimal_state_gain: R must be m x m");
  const MatX<Scalar> Qs = plant.C.transpose() * Q * plant.C;
  MatX<Scalar> X = solve_dare(plant.A, plant.B, Qs, R);
  const MatX<Scalar> G = R + plant.B.transpose() * X * plant.B;
  MatX<Scalar> K_sf =
      (-G.ldlt().solve(plant.B.transpose() * X * plant.A)).eval();
  return {std::move(X), std::move(K_sf)};
}

// Orthonormal basis of the orthogonal complement of the column space of P.
// P must have orthonormal columns.
template <typename Scalar>
MatX<Scalar> complement_basis(const MatX<Scalar>& P) {
  if (P.rows() < P.cols())
    throw DimensionMismatch("complement_basis: more columns than rows");
  Eigen::HouseholderQR<MatX<Scalar>> qr(P);
  const MatX<Scalar> full = qr.householderQ();
  return full.rightCols(P.rows() - P.cols());
}

// Deterministic completion weight: identity columns cycled to fill n x cols.
// Has the largest rank any n x cols matrix can have, so the completion term
// below discards as little of the off-subspace component as possible.
template <typename Scalar>
MatX<Scalar> default_completion(Index n, Index cols) {
  MatX<Scalar> M = MatX<Scalar>::Zero(n, cols);
  for (Index j = 0; j < cols; ++j) M(j % n, j) = Scalar(1);
  return M;
}

// Lifts a state-feedback gain to a history-feedback gain acting identically
// on feasible histories: K = K_sf (Gamma + M Pbar') where Pbar spans the
// complement of the reachable subspace. The completion M Pbar' annihilates
// the subspace, so the closed loop and its cost do not depend on M.
template <typename Scalar>
MatX<Scalar> optimal_ioh_gain(const IOHDynamicsT<Scalar>& ioh,
                              const ProjectionT<Scalar>& proj,
                              const MatX<Scalar>& K_sf,
                              const MatX<Scalar>* M = nullptr) {
  if (K_sf.rows() != ioh.m || K_sf.cols() != ioh.n)
    throw DimensionMismatch("optimal_ioh_gain: state gain must be m x n");
  if (proj.P.rows() != ioh.d())
    throw DimensionMismatch("optimal_ioh_gain: projection does not match");
  const MatX<Scalar> Pbar = complement_basis(proj.P);
  const MatX<Scalar> Mw =
      M ? *M : default_completion<Scalar>(ioh.n, Pbar.cols());
  if (Mw.rows() != ioh.n || Mw.cols() != Pbar.cols())
    throw DimensionMismatch("optimal_ioh_gain: completion weight shape");
  return K_sf * (ioh.Gamma + Mw * Pbar.transpose());
}

// Optimal cost tr(X Gamma Phi Gamma'): the Riccati value of the window-start
// state, averaged over the history prior Phi.
template <typename Scalar>
Scalar optimal_cost(const IOHDynamicsT<Scalar>& ioh,
                    const ProjectionT<Scalar>& proj, const MatX<Scalar>& X) {
  if (X.rows() != ioh.n || X.cols() != ioh.n)
    throw DimensionMismatch("optimal_cost: X must be n x n");
  const MatX<Scalar> state_cov =
      ioh.Gamma * proj.Phi * ioh.Gamma.transpose();
  return (X * state_cov).trace();
}

// Convenience bundle of the three reference quantities.
template <typename Scalar>
OptimalReferenceT<Scalar> optimal_reference(const PlantModelT<Scalar>& plant,
                                            const IOHDynamicsT<Scalar>& ioh,
                                            const ProjectionT<Scalar>& proj,
                                            const MatX<Scalar>& Q,
                                            const MatX<Scalar>& R,
                                            const MatX<Scalar>* M = nullptr) {
  OptimalReferenceT<Scalar> ref;
  auto solved = optimal_state_gain(plant, Q, R);
  ref.X = std::move(solved.first);
  ref.K_sf = std::move(solved.second);
  ref.K = optimal_ioh_gain(ioh, proj, ref.K_sf, M);
  ref.J_star = optimal_cost(ioh, proj, ref.X);
  return ref;
}

}  // namespace iohpg
