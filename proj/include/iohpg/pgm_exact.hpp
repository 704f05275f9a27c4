#pragma once

// Exact (model-based) policy gradient on history-feedback gains. Cost and
// gradient are evaluated in reachable coordinates, where the closed loop is
// Schur exactly when the cost is bounded; gradients lift back to full gain
// space with rows confined to the reachable subspace, so iterates never
// acquire an off-subspace component that the cost cannot see.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ioh.hpp"
#include "numerics.hpp"

namespace iohpg {

// Quadratic stage cost plus the sublevel bound defining admissible gains.
template <typename Scalar = double>
struct CostModelT {
  MatX<Scalar> Q;  // output weight, positive definite
  MatX<Scalar> R;  // input weight, positive definite
  Scalar c = 0;    // admissible sublevel bound, at least the zero-gain cost
};

using CostModel = CostModelT<double>;

namespace detail {

template <typename Scalar>
void check_weights(const IOHDynamicsT<Scalar>& ioh, const MatX<Scalar>& Q,
                   const MatX<Scalar>& R, const char* who) {
  if (Q.rows() != ioh.r || Q.cols() != ioh.r)
    throw DimensionMismatch(std::string(who) + ": Q must be r x r");
  if (R.rows() != ioh.m || R.cols() != ioh.m)
    throw DimensionMismatch(std::string(who) + ": R must be m x m");
  Eigen::SelfAdjointEigenSolver<MatX<Scalar>> eq(Q);
  Eigen::SelfAdjointEigenSolver<MatX<Scalar>> er(R);
  if (eq.eigenvalues().minCoeff() <= Scalar(0) ||
      er.eigenvalues().minCoeff() <= Scalar(0))
    throw Error(std::string(who) + ": weights must be positive definite");
}

// Products fixed along a gradient run. The per-iterate work reduces to one
// fused Lyapunov pair solve plus a handful of p-sized multiplies.
template <typename Scalar>
struct ReducedCostT {
  MatX<Scalar> ThetaHat0;  // P' Theta P
  MatX<Scalar> PiHat;      // P' Pi
  MatX<Scalar> QHat;       // (C Gamma P)' Q (C Gamma P)
  MatX<Scalar> PhiHat;     // restricted history second moment
  MatX<Scalar> R;

  static ReducedCostT build(const IOHDynamicsT<Scalar>& ioh,
                            const ProjectionT<Scalar>& proj,
                            const CostModelT<Scalar>& cm) {
    check_weights(ioh, cm.Q, cm.R, "cost model");
    if (proj.P.rows() != ioh.d())
      throw DimensionMismatch("cost model: projection does not match");
    ReducedCostT rc;
    rc.ThetaHat0 = proj.P.transpose() * ioh.Theta * proj.P;
    rc.PiHat = proj.P.transpose() * ioh.Pi;
    const MatX<Scalar> out_hat = ioh.output_map() * proj.P;
    rc.QHat = out_hat.transpose() * cm.Q * out_hat;
    rc.PhiHat = proj.PhiHat;
    rc.R = cm.R;
    return rc;
  }

  struct Eval {
    MatX<Scalar> PsiHat;  // reduced value matrix
    MatX<Scalar> VHat;    // reduced second-moment accumulator
    MatX<Scalar> EHat;    // reduced stationarity factor, zero at optima
    Scalar J = 0;
  };

  // Throws NotSchur when the reduced closed loop under KHat is unstable.
  Eval eval(const MatX<Scalar>& KHat) const {
    const MatX<Scalar> Tk = ThetaHat0 + PiHat * KHat;
    const MatX<Scalar> S = QHat + KHat.transpose() * (R * KHat);
    auto pair = solve_dlyap_pair(Tk, S, PhiHat);
    Eval e;
    e.PsiHat = std::move(pair.first);
    e.VHat = std::move(pair.second);
    e.J = (PhiHat * e.PsiHat).trace();
    e.EHat = (R + PiHat.transpose() * e.PsiHat * PiHat) * KHat +
             PiHat.transpose() * e.PsiHat * ThetaHat0;
    return e;
  }

  // Reduced gradient; equals grad * P of the full-space gradient.
  MatX<Scalar> grad_hat(const Eval& e) const {
    return Scalar(2) * e.EHat * e.VHat;
  }
};

// Smoothness constant of the cost over the sublevel set {J <= c}. Together
// with the gradient-dominance bound it certifies linear convergence for any
// step size in (0, 2/q).
template <typename Scalar>
Scalar smoothness_constant(const ReducedCostT<Scalar>& rc,
                           const MatX<Scalar>& Q, Index L, Scalar c,
                           Scalar* rho_out = nullptr) {
  const Scalar p = Scalar(rc.ThetaHat0.rows());
  Eigen::SelfAdjointEigenSolver<MatX<Scalar>> ephi(rc.PhiHat);
  Eigen::SelfAdjointEigenSolver<MatX<Scalar>> eq(Q);
  Eigen::SelfAdjointEigenSolver<MatX<Scalar>> er(rc.R);
  const Scalar sig_phi = ephi.eigenvalues().minCoeff();
  const Scalar rho =
      std::min(eq.eigenvalues().minCoeff(), er.eigenvalues().minCoeff());
  if (rho_out) *rho_out = rho;
  const Scalar r_norm = er.eigenvalues().maxCoeff();
  const Scalar ratio = Scalar(L) * c / rho;
  return Scalar(2) * p * (c / sig_phi + r_norm) * ratio +
         Scalar(4) * p *
             (Scalar(2) * c / sig_phi + rc.R.trace() - rc.QHat.trace()) *
             std::pow(ratio, Scalar(1.5));
}

}  // namespace detail

// Cost model whose sublevel bound is a multiple of the zero-gain cost.
template <typename Scalar>
CostModelT<Scalar> make_cost_model(const IOHDynamicsT<Scalar>& ioh,
                                   const ProjectionT<Scalar>& proj,
                                   const MatX<Scalar>& Q, const MatX<Scalar>& R,
                                   Scalar c_factor = Scalar(2)) {
  CostModelT<Scalar> cm{Q, R, Scalar(0)};
  const auto rc = detail::ReducedCostT<Scalar>::build(ioh, proj, cm);
  const MatX<Scalar> K0 = MatX<Scalar>::Zero(ioh.m, ioh.p());
  cm.c = c_factor * rc.eval(K0).J;
  return cm;
}

// Value matrix of the closed loop under u = K v in reachable coordinates.
// Throws NotSchur when the loop is unstable.
template <typename Scalar>
MatX<Scalar> value_matrix(const IOHDynamicsT<Scalar>& ioh,
                          const ProjectionT<Scalar>& proj,
                          const CostModelT<Scalar>& cm,
                          const MatX<Scalar>& K) {
  const auto rc = detail::ReducedCostT<Scalar>::build(ioh, proj, cm);
  const MatX<Scalar> KHat = K * proj.P;
  const MatX<Scalar> Tk = rc.ThetaHat0 + rc.PiHat * KHat;
  const MatX<Scalar> S = rc.QHat + KHat.transpose() * (cm.R * KHat);
  return solve_dlyap_transpose(Tk, S);
}

// Infinite-horizon cost of u = K v. Throws Unbounded when the loop is
// unstable, in which case the series defining the cost diverges.
template <typename Scalar>
Scalar cost(const IOHDynamicsT<Scalar>& ioh, const ProjectionT<Scalar>& proj,
            const CostModelT<Scalar>& cm, const MatX<Scalar>& K) {
  try {
    return (proj.PhiHat * value_matrix(ioh, proj, cm, K)).trace();
  } catch (const NotSchur&) {
    throw Unbounded("cost: closed loop is not Schur");
  }
}

template <typename Scalar = double>
struct GradientPartsT {
  MatX<Scalar> PsiHat;  // reduced value matrix
  MatX<Scalar> VHat;    // reduced second-moment accumulator
  MatX<Scalar> EK;      // full-space stationarity factor
  MatX<Scalar> grad;    // full-space gradient, rows in the reachable subspace
  Scalar J = 0;         // cost at the evaluated gain
};

using GradientParts = GradientPartsT<double>;

// Exact cost gradient at K. Throws Unbounded when the loop is unstable.
template <typename Scalar>
GradientPartsT<Scalar> gradient(const IOHDynamicsT<Scalar>& ioh,
                                const ProjectionT<Scalar>& proj,
                                const CostModelT<Scalar>& cm,
                                const MatX<Scalar>& K) {
  const auto rc = detail::ReducedCostT<Scalar>::build(ioh, proj, cm);
  if (K.rows() != ioh.m || K.cols() != ioh.d())
    throw DimensionMismatch("gradient: gain has wrong shape");
  const MatX<Scalar> KHat = K * proj.P;
  typename detail::ReducedCostT<Scalar>::Eval e;
  try {
    e = rc.eval(KHat);
  } catch (const NotSchur&) {
    throw Unbounded("gradient: closed loop is not Schur");
  }
  GradientPartsT<Scalar> parts;
  parts.grad = rc.grad_hat(e) * proj.P.transpose();
  const MatX<Scalar> psi_pi = e.PsiHat * rc.PiHat;
  parts.EK = (cm.R + rc.PiHat.transpose() * psi_pi) * K +
             psi_pi.transpose() * (proj.P.transpose() * ioh.Theta);
  parts.PsiHat = std::move(e.PsiHat);
  parts.VHat = std::move(e.VHat);
  parts.J = e.J;
  return parts;
}

template <typename Scalar = double>
struct RunOptionsT {
  Scalar alpha = Scalar(2.5e-6);
  long long max_iters = 100000;
  Scalar grad_tol_rel = Scalar(1e-9);  // stop at ||grad|| <= rel * (1 + J0)
  long long log_stride = 1000;
  long long checkpoint_stride = 100000;
  MatX<Scalar> K0;  // initial gain; empty means zero
};

using RunOptions = RunOptionsT<double>;

template <typename Scalar = double>
struct PGMReportT {
  std::vector<long long> iter;    // logged iteration indices
  std::vector<Scalar> J;          // cost at the logged iterates
  std::vector<Scalar> grad_norm;  // gradient Frobenius norm at the iterates
  std::vector<std::pair<long long, MatX<Scalar>>> checkpoints;
  std::vector<std::string> warnings;
  MatX<Scalar> K;  // final gain
  Scalar J_final = 0;
  long long iterations = 0;  // gradient steps taken
  bool converged = false;    // gradient stop rule hit before the cap
  double seconds = 0;
};

using PGMReport = PGMReportT<double>;

// Gradient descent K <- K - alpha grad J(K) from the zero gain (or K0).
// Iterates in reachable coordinates; the off-subspace part of K0 is carried
// through unchanged because gradients cannot alter it. Throws Diverged when
// an iterate destabilizes the loop or leaves the sublevel set. A step size
// at or beyond the certified range only warns: the certificate is
// conservative and larger steps routinely converge.
template <typename Scalar>
PGMReportT<Scalar> run_model_based(const IOHDynamicsT<Scalar>& ioh,
                                   const ProjectionT<Scalar>& proj,
                                   const CostModelT<Scalar>& cm,
                                   const RunOptionsT<Scalar>& opts) {
  const auto start = std::chrono::steady_clock::now();
  const auto rc = detail::ReducedCostT<Scalar>::build(ioh, proj, cm);
  const Index m = ioh.m, d = ioh.d(), p = ioh.p();

  MatX<Scalar> KHat;
  MatX<Scalar> K_offsub = MatX<Scalar>::Zero(m, d);
  if (opts.K0.size() == 0) {
    KHat = MatX<Scalar>::Zero(m, p);
  } else {
    if (opts.K0.rows() != m || opts.K0.cols() != d)
      throw DimensionMismatch("run_model_based: K0 has wrong shape");
    KHat = opts.K0 * proj.P;
    K_offsub = opts.K0 - KHat * proj.P.transpose();
  }
  const auto lift = [&](const MatX<Scalar>& Kh) -> MatX<Scalar> {
    return Kh * proj.P.transpose() + K_offsub;
  };

  PGMReportT<Scalar> report;
  const Scalar q = detail::smoothness_constant(rc, cm.Q, ioh.L, cm.c);
  if (opts.alpha * q >= Scalar(2))
    report.warnings.push_back(
        "step size exceeds the certified range (0, 2/q); convergence is no "
        "longer guaranteed");

  Scalar grad_tol = Scalar(0);
  Scalar J_last = Scalar(0);
  Scalar gnorm_last = Scalar(0);
  long long i = 0;
  for (;; ++i) {
    typename detail::ReducedCostT<Scalar>::Eval e;
    try {
      e = rc.eval(KHat);
    } catch (const NotSchur&) {
      throw Diverged("run_model_based: iterate " + std::to_string(i) +
                     " destabilized the loop");
    }
    if (!std::isfinite(e.J) || e.J > cm.c * (Scalar(1) + Scalar(1e-12)))
      throw Diverged("run_model_based: iterate " + std::to_string(i) +
                     " left the sublevel set");
    const MatX<Scalar> gh = rc.grad_hat(e);
    J_last = e.J;
    gnorm_last = gh.norm();
    if (i == 0) grad_tol = opts.grad_tol_rel * (Scalar(1) + e.J);

    const bool log_now = opts.log_stride > 0 && i % opts.log_stride == 0;
    const bool stop = gnorm_last <= grad_tol || i >= opts.max_iters;
    if (log_now || stop) {
      report.iter.push_back(i);
      report.J.push_back(J_last);
      report.grad_norm.push_back(gnorm_last);
    }
    if (opts.checkpoint_stride > 0 && i > 0 &&
        i % opts.checkpoint_stride == 0)
      report.checkpoints.emplace_back(i, lift(KHat));
    if (stop) {
      report.converged = gnorm_last <= grad_tol;
      break;
    }
    KHat -= opts.alpha * gh;
  }

  report.K = lift(KHat);
  report.J_final = J_last;
  report.iterations = i;
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return report;
}

template <typename Scalar = double>
struct ExactDiagnosticsT {
  Scalar q = 0;           // smoothness constant over the sublevel set
  Scalar rho = 0;         // min eigenvalue among the cost weights
  MatX<Scalar> QHat;      // reduced output weight
  Scalar beta = 0;        // predicted contraction factor at (K, alpha)
  Scalar beta_gap = 0;    // 1 - beta, kept separately because the certified
                          // step sizes make it underflow inside beta itself
  bool in_sublevel = false;  // J(K) <= c
  Scalar pl_ratio = 0;    // gradient-dominance ratio, <= 1 when the bound holds
  Scalar J = 0;           // cost at K
  Scalar J_star = 0;      // cost at the reference gain
};

using ExactDiagnostics = ExactDiagnosticsT<double>;

// Certificate quantities at a gain K for step size alpha, referenced against
// an optimal gain K_star: the smoothness constant q, the contraction factor
// beta predicted for one step, and the gradient-dominance ratio (at most 1
// when the convergence analysis applies). Throws NotInSublevel when K has
// unbounded cost, where none of the quantities are defined.
template <typename Scalar>
ExactDiagnosticsT<Scalar> diagnostics(const IOHDynamicsT<Scalar>& ioh,
                                      const ProjectionT<Scalar>& proj,
                                      const CostModelT<Scalar>& cm,
                                      const MatX<Scalar>& K, Scalar alpha,
                                      const MatX<Scalar>& K_star) {
  const auto rc = detail::ReducedCostT<Scalar>::build(ioh, proj, cm);
  typename detail::ReducedCostT<Scalar>::Eval at_k, at_star;
  try {
    at_k = rc.eval((K * proj.P).eval());
  } catch (const NotSchur&) {
    throw NotInSublevel("diagnostics: cost is unbounded at this gain");
  }
  try {
    at_star = rc.eval((K_star * proj.P).eval());
  } catch (const NotSchur&) {
    throw NotInSublevel("diagnostics: reference gain is not stabilizing");
  }

  ExactDiagnosticsT<Scalar> diag;
  diag.QHat = rc.QHat;
  diag.q = detail::smoothness_constant(rc, cm.Q, ioh.L, cm.c, &diag.rho);
  diag.J = at_k.J;
  diag.J_star = at_star.J;
  diag.in_sublevel = at_k.J <= cm.c;

  Eigen::SelfAdjointEigenSolver<MatX<Scalar>> er(cm.R);
  Eigen::SelfAdjointEigenSolver<MatX<Scalar>> ev(at_k.VHat);
  Eigen::SelfAdjointEigenSolver<MatX<Scalar>> evs(at_star.VHat);
  const Scalar dominance = Scalar(4) * er.eigenvalues().minCoeff() *
                           std::pow(ev.eigenvalues().minCoeff(), Scalar(2)) /
                           evs.eigenvalues().maxCoeff();
  diag.beta_gap = dominance * (alpha - diag.q * alpha * alpha / 2);
  diag.beta = Scalar(1) - diag.beta_gap;
  const Scalar gsq = rc.grad_hat(at_k).squaredNorm();
  diag.pl_ratio = (at_k.J - at_star.J) * dominance /
                  std::max(gsq, std::numeric_limits<Scalar>::min());
  return diag;
}

}  // namespace iohpg
