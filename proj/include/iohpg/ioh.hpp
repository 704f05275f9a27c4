#pragma once

// Lifted input-output-history (IOH) dynamics. The history vector
//   v(t) = [u(t-L); ...; u(t-1); y(t-L); ...; y(t-1)]
// obeys the linear recursion v(t+1) = Theta v(t) + Pi u(t), and the plant
// state is recovered linearly from it: x(t) = Gamma v(t) once t >= L.
// Feasible histories live in the reachable subspace of (Theta, Pi); an
// orthonormal basis P of that subspace yields a lossless reduced model
// (dimension Lm+n instead of L(m+r)) on which costs and gradients are
// computed. Also provides the sliding history buffer used by online runs
// and a data-driven estimator for the window length L.

#include <deque>
#include <utility>
#include <vector>

#include "iohpg/plant.hpp"

namespace iohpg {

// ---------------------------------------------------------------------------
// IOH dynamics
// ---------------------------------------------------------------------------

template <typename Scalar = double>
struct IOHDynamicsT {
  MatX<Scalar> Theta;  // d x d history transition
  MatX<Scalar> Pi;     // d x m current-input injection
  MatX<Scalar> Gamma;  // n x d history-to-state map
  Index L = 0;
  Index m = 0;
  Index r = 0;
  Index n = 0;

  Index d() const { return L * (m + r); }  // history dimension
  Index p() const { return L * m + n; }    // reachable-subspace dimension

  // Map from history to current output, y(t) = C Gamma v(t). The builder
  // stores it as the newest-output rows of Theta.
  MatX<Scalar> output_map() const { return Theta.bottomRows(r); }
};

using IOHDynamics = IOHDynamicsT<double>;

// Assembles (Theta, Pi, Gamma) for a window length L whose output stack
// determines the window-start state. Theta shifts both history blocks by one
// step, injects u(t) via Pi, and appends y(t) = C Gamma v(t) as the newest
// output; the fixed 0/1 shift entries are exact.
template <typename Scalar>
IOHDynamicsT<Scalar> build_ioh(const PlantModelT<Scalar>& plant, Index L,
                               Scalar rank_tol = Scalar(1e-9)) {
  if (!check_L(plant, L, rank_tol))
    throw RankDeficient(
        "build_ioh: L-step observability matrix does not determine the state");
  const Index n = plant.n();
  const Index m = plant.m();
  const Index r = plant.r();
  const Index d = L * (m + r);

  const MatX<Scalar> O = observability_matrix(plant.A, plant.C, L);
  const MatX<Scalar> R = reachability_matrix(plant.A, plant.B, L);
  const MatX<Scalar> H = markov_toeplitz(plant, L);
  const MatX<Scalar> O_pinv =
      O.completeOrthogonalDecomposition().pseudoInverse();
  MatX<Scalar> AL = MatX<Scalar>::Identity(n, n);
  for (Index i = 0; i < L; ++i) AL = (plant.A * AL).eval();

  IOHDynamicsT<Scalar> ioh;
  ioh.L = L;
  ioh.m = m;
  ioh.r = r;
  ioh.n = n;
  ioh.Gamma = MatX<Scalar>(n, d);
  ioh.Gamma.leftCols(L * m) = R - AL * O_pinv * H;
  ioh.Gamma.rightCols(L * r) = AL * O_pinv;

  ioh.Theta = MatX<Scalar>::Zero(d, d);
  if (L > 1) {
    ioh.Theta.block(0, m, (L - 1) * m, (L - 1) * m).setIdentity();
    ioh.Theta.block(L * m, L * m + r, (L - 1) * r, (L - 1) * r).setIdentity();
  }
  ioh.Theta.bottomRows(r) = plant.C * ioh.Gamma;

  ioh.Pi = MatX<Scalar>::Zero(d, m);
  ioh.Pi.block((L - 1) * m, 0, m, m).setIdentity();
  return ioh;
}

// ---------------------------------------------------------------------------
// Reachable-subspace projection
// ---------------------------------------------------------------------------

template <typename Scalar = double>
struct ProjectionT {
  MatX<Scalar> P;       // d x p, orthonormal columns spanning the subspace
  MatX<Scalar> Phi;     // d x d second moment of v at the window start
  MatX<Scalar> PhiHat;  // p x p restricted second moment, positive definite
};

using Projection = ProjectionT<double>;

// Second-moment specification for reachable_projection: either a factor S
// with Phi = S S' (the factor produced by script_p when histories start from
// standard-normal state and inputs), or a full custom Phi validated against
// the reachable subspace.
template <typename Scalar = double>
struct PhiSpecT {
  static PhiSpecT history_factor(MatX<Scalar> factor) {
    return {std::move(factor), true};
  }
  static PhiSpecT custom(MatX<Scalar> phi) { return {std::move(phi), false}; }

  MatX<Scalar> M;
  bool is_factor = true;
};

using PhiSpec = PhiSpecT<double>;

// Orthonormal basis of the reachable set of (Theta, Pi) plus the second
// moment restricted to it. The subspace dimension must equal Lm+n; the
// second moment must be supported exactly on the subspace and be positive
// definite when restricted to it.
template <typename Scalar>
ProjectionT<Scalar> reachable_projection(const IOHDynamicsT<Scalar>& ioh,
                                         const PhiSpecT<Scalar>& phi,
                                         Scalar rank_tol = Scalar(1e-9)) {
  const Index d = ioh.d();
  const MatX<Scalar> ctrb = reachability_matrix(ioh.Theta, ioh.Pi, d);
  const auto basis = orthonormal_range(ctrb, rank_tol);
  if (basis.rank != ioh.p())
    throw RankMismatch(
        "reachable_projection: reachable subspace dimension is not Lm+n");

  ProjectionT<Scalar> proj;
  proj.P = basis.P;
  if (phi.is_factor) {
    if (phi.M.rows() != d)
      throw DimensionMismatch("reachable_projection: factor has wrong rows");
    proj.Phi = phi.M * phi.M.transpose();
  } else {
    if (phi.M.rows() != d || phi.M.cols() != d)
      throw DimensionMismatch("reachable_projection: Phi has wrong shape");
    proj.Phi = ((phi.M + phi.M.transpose()) / Scalar(2)).eval();
  }

  // Support check: Phi must vanish off the subspace and keep full rank on it.
  const MatX<Scalar> off =
      proj.Phi - proj.P * (proj.P.transpose() * proj.Phi * proj.P) *
                     proj.P.transpose();
  if (off.norm() > Scalar(1e-8) * std::max(Scalar(1), proj.Phi.norm()))
    throw PhiMismatch(
        "reachable_projection: second moment is not supported on the "
        "reachable subspace");
  proj.PhiHat = proj.P.transpose() * proj.Phi * proj.P;
  proj.PhiHat = ((proj.PhiHat + proj.PhiHat.transpose()) / Scalar(2)).eval();
  Eigen::SelfAdjointEigenSolver<MatX<Scalar>> eig(proj.PhiHat);
  if (eig.eigenvalues().minCoeff() <= Scalar(0))
    throw PhiMismatch(
        "reachable_projection: restricted second moment is not positive "
        "definite");
  return proj;
}

// Convenience path when the plant is known: second moment from the
// history-to-state structure (window-start state and inputs standard
// normal), with the subspace cross-checked against that structure's range.
template <typename Scalar>
ProjectionT<Scalar> default_projection(const PlantModelT<Scalar>& plant,
                                       const IOHDynamicsT<Scalar>& ioh,
                                       Scalar rank_tol = Scalar(1e-9)) {
  const MatX<Scalar> S = script_p(plant, ioh.L);
  ProjectionT<Scalar> proj =
      reachable_projection(ioh, PhiSpecT<Scalar>::history_factor(S), rank_tol);
  // The two subspace constructions (from (Theta, Pi) and from the plant
  // structure) must agree up to principal angles of 1e-8.
  const auto s_basis = orthonormal_range(S, rank_tol);
  if (s_basis.rank != proj.P.cols())
    throw RankMismatch(
        "default_projection: structure rank disagrees with reachable rank");
  const MatX<Scalar> overlap = proj.P.transpose() * s_basis.P;
  Eigen::JacobiSVD<MatX<Scalar>> svd(overlap);
  if ((Scalar(1) - svd.singularValues().minCoeff()) > Scalar(1e-8))
    throw PhiMismatch(
        "default_projection: subspace constructions disagree beyond 1e-8");
  return proj;
}

// ---------------------------------------------------------------------------
// Closed-loop projection
// ---------------------------------------------------------------------------

template <typename Scalar = double>
struct ProjectedLoopT {
  MatX<Scalar> ThetaHatK;  // p x p reduced closed-loop transition
  MatX<Scalar> KHat;       // m x p reduced gain
  MatX<Scalar> GammaHat;   // n x p reduced history-to-state map
};

using ProjectedLoop = ProjectedLoopT<double>;

// Restriction of the closed loop under u = K v to the reachable subspace:
// ThetaHatK = P'(Theta + Pi K)P, KHat = K P, GammaHat = Gamma P. Histories
// never leave the subspace, so this restriction is lossless.
template <typename Scalar, typename DerivedK>
ProjectedLoopT<Scalar> project_closed_loop(
    const IOHDynamicsT<Scalar>& ioh, const ProjectionT<Scalar>& proj,
    const Eigen::MatrixBase<DerivedK>& K) {
  if (K.rows() != ioh.m || K.cols() != ioh.d())
    throw DimensionMismatch("project_closed_loop: gain has wrong shape");
  ProjectedLoopT<Scalar> loop;
  loop.KHat = K * proj.P;
  loop.ThetaHatK =
      proj.P.transpose() * ioh.Theta * proj.P +
      (proj.P.transpose() * ioh.Pi) * loop.KHat;
  loop.GammaHat = ioh.Gamma * proj.P;
  return loop;
}

// ---------------------------------------------------------------------------
// Sliding history buffer
// ---------------------------------------------------------------------------

// Single-owner sliding window over the last L input-output pairs; its
// current_v() stacks them oldest first, inputs before outputs.
template <typename Scalar = double>
class IOHBufferT {
 public:
  IOHBufferT(Index L, Index m, Index r) : L_(L), m_(m), r_(r) {
    if (L < 1 || m < 1 || r < 1)
      throw DimensionMismatch("IOHBuffer: L, m, r must be >= 1");
  }

  void push(const VecX<Scalar>& u, const VecX<Scalar>& y) {
    if (u.size() != m_ || y.size() != r_)
      throw DimensionMismatch("IOHBuffer: sample has wrong dimensions");
    u_hist_.push_back(u);
    y_hist_.push_back(y);
    if (static_cast<Index>(u_hist_.size()) > L_) {
      u_hist_.pop_front();
      y_hist_.pop_front();
    }
    ++pushed_;
  }

  bool filled() const { return static_cast<Index>(u_hist_.size()) == L_; }
  Index pushed() const { return pushed_; }

  VecX<Scalar> current_v() const {
    if (!filled())
      throw Underfilled("IOHBuffer: fewer than L pairs pushed");
    VecX<Scalar> v(L_ * (m_ + r_));
    for (Index i = 0; i < L_; ++i) v.segment(i * m_, m_) = u_hist_[i];
    for (Index i = 0; i < L_; ++i)
      v.segment(L_ * m_ + i * r_, r_) = y_hist_[i];
    return v;
  }

 private:
  Index L_, m_, r_;
  Index pushed_ = 0;
  std::deque<VecX<Scalar>> u_hist_;
  std::deque<VecX<Scalar>> y_hist_;
};

using IOHBuffer = IOHBufferT<double>;

// ---------------------------------------------------------------------------
// Window-length estimation from data
// ---------------------------------------------------------------------------

// Given empirical second moments of v for candidate window lengths
// 1, 2, ..., moments.size(), returns the smallest L at which the moment rank
// stops growing faster than m per increment (rank L*m + const marks the
// window long enough to pin the hidden state). Rank is read from the largest
// relative singular-value drop of at least `gap`; this is a documented
// heuristic for sampled data.
template <typename Scalar>
Index estimate_L(const std::vector<MatX<Scalar>>& moments, Index m,
                 Scalar gap = Scalar(1e3)) {
  if (moments.empty())
    throw Inconclusive("estimate_L: no candidate moments supplied");
  auto numerical_rank = [&](const MatX<Scalar>& M) -> Index {
    Eigen::JacobiSVD<MatX<Scalar>> svd(M);
    const auto& sigma = svd.singularValues();
    if (sigma.size() == 0 || sigma(0) <= Scalar(0)) return 0;
    for (Index k = 0; k + 1 < sigma.size(); ++k) {
      if (sigma(k + 1) <= Scalar(0) || sigma(k) / sigma(k + 1) >= gap)
        return k + 1;
    }
    return sigma.size();
  };
  std::vector<Index> excess;
  excess.reserve(moments.size());
  for (std::size_t i = 0; i < moments.size(); ++i) {
    const Index L = static_cast<Index>(i) + 1;
    if (moments[i].rows() != moments[i].cols())
      throw DimensionMismatch("estimate_L: moments must be square");
    excess.push_back(numerical_rank(moments[i]) - L * m);
  }
  for (std::size_t i = 0; i + 1 < excess.size(); ++i) {
    if (excess[i] == excess[i + 1]) return static_cast<Index>(i) + 1;
  }
  throw Inconclusive("estimate_L: no rank plateau within the candidates");
}

}  // namespace iohpg
