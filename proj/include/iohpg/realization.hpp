#pragma once

// Converts a history-feedback gain u = K v into a strictly proper dynamic
// output-feedback controller of order L*m,
//
//   xi(t+1) = Xi xi(t) + Lambda y(t),   u(t) = Omega xi(t),
//
// whose first L outputs replay the stored input window and which applies
// u = K v from step L on. The initial state is recovered by inverting the
// controller's L-step observability map against the window, and a coupled
// simulator pairs the controller with a plant so the equivalence with the
// static history-feedback loop can be checked trace against trace.

#include <deque>
#include <utility>

#include "ioh.hpp"

namespace iohpg {

template <typename Scalar = double>
struct DynamicControllerT {
  MatX<Scalar> Xi;      // Lm x Lm block companion
  MatX<Scalar> Lambda;  // Lm x r stacked output-block gains
  MatX<Scalar> Omega;   // m x Lm selector of the newest input block
  VecX<Scalar> xi0;     // replay state; empty until initial_state fills it
  Index L = 0, m = 0, r = 0;
};

using DynamicController = DynamicControllerT<double>;

// In-order input/output trace of one closed-loop run; column t is step t.
template <typename Scalar = double>
struct ClosedLoopTraceT {
  MatX<Scalar> U;  // m x T
  MatX<Scalar> Y;  // r x T
  MatX<Scalar> X;  // n x T plant state, for reference overlays
};

using ClosedLoopTrace = ClosedLoopTraceT<double>;

// Assembles the controller matrices from the gain partition
// K = [A_L, ..., A_1, B_L, ..., B_1]: identity blocks on the subdiagonal,
// the input-block gains down the last block column, the output-block gains
// stacked into Lambda, and Omega selecting the bottom block. The returned
// controller carries no initial state yet.
template <typename Scalar>
DynamicControllerT<Scalar> realize(const MatX<Scalar>& K, Index L, Index m,
                                   Index r) {
  if (L < 1 || m < 1 || r < 1 || K.rows() != m || K.cols() != L * (m + r))
    throw DimensionMismatch("realize: gain is not m x L(m+r)");
  DynamicControllerT<Scalar> ctrl;
  ctrl.L = L;
  ctrl.m = m;
  ctrl.r = r;
  ctrl.Xi = MatX<Scalar>::Zero(L * m, L * m);
  ctrl.Lambda = MatX<Scalar>::Zero(L * m, r);
  ctrl.Omega = MatX<Scalar>::Zero(m, L * m);
  for (Index i = 1; i < L; ++i)
    ctrl.Xi.block(i * m, (i - 1) * m, m, m) = MatX<Scalar>::Identity(m, m);
  for (Index i = 0; i < L; ++i) {
    ctrl.Xi.block(i * m, (L - 1) * m, m, m) = K.block(0, i * m, m, m);
    ctrl.Lambda.block(i * m, 0, m, r) = K.block(0, L * m + i * r, m, r);
  }
  ctrl.Omega.block(0, (L - 1) * m, m, m) = MatX<Scalar>::Identity(m, m);
  return ctrl;
}

namespace detail {

// L-step observability map of (Omega, Xi): block row k is Omega Xi^k.
template <typename Scalar>
MatX<Scalar> controller_observability(const DynamicControllerT<Scalar>& ctrl) {
  const Index Lm = ctrl.L * ctrl.m;
  MatX<Scalar> obs(Lm, Lm);
  MatX<Scalar> row = ctrl.Omega;
  for (Index k = 0; k < ctrl.L; ++k) {
    obs.block(k * ctrl.m, 0, ctrl.m, Lm) = row;
    row = (row * ctrl.Xi).eval();
  }
  return obs;
}

// Strictly causal L-step response from measurements to controller outputs:
// block (i, j) with i > j is Omega Xi^(i-1-j) Lambda.
template <typename Scalar>
MatX<Scalar> controller_toeplitz(const DynamicControllerT<Scalar>& ctrl) {
  const Index L = ctrl.L;
  MatX<Scalar> toep = MatX<Scalar>::Zero(L * ctrl.m, L * ctrl.r);
  MatX<Scalar> row = ctrl.Omega;
  for (Index lag = 1; lag < L; ++lag) {
    const MatX<Scalar> markov = row * ctrl.Lambda;
    for (Index i = lag; i < L; ++i)
      toep.block(i * ctrl.m, (i - lag) * ctrl.r, ctrl.m, ctrl.r) = markov;
    row = (row * ctrl.Xi).eval();
  }
  return toep;
}

}  // namespace detail

// Initial controller state that replays the stored window: with v(L)
// stacking the first L inputs and outputs, xi(0) solves
// O_L xi(0) = [u-part] - H_L [y-part], so the controller's first L outputs
// reproduce the inputs that generated the window. Raises
// SingularObservability when the observability map's condition number
// exceeds 1e12 and the solve would return garbage.
template <typename Scalar>
VecX<Scalar> initial_state(const DynamicControllerT<Scalar>& ctrl,
                           const VecX<Scalar>& v_L) {
  const Index L = ctrl.L, m = ctrl.m, r = ctrl.r;
  if (v_L.size() != L * (m + r))
    throw DimensionMismatch("initial_state: window has wrong length");
  const MatX<Scalar> obs = detail::controller_observability(ctrl);
  const MatX<Scalar> toep = detail::controller_toeplitz(ctrl);
  const VecX<Scalar> rhs =
      v_L.head(L * m) - toep * v_L.tail(L * r);
  Eigen::JacobiSVD<MatX<Scalar>> svd(
      obs, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const Scalar smin = sv(sv.size() - 1);
  if (!(smin > Scalar(0)) || sv(0) > Scalar(1e12) * smin)
    throw SingularObservability(
        "initial_state: controller cannot reproduce the stored window");
  return svd.solve(rhs);
}

// Open-loop outputs over the window-filling phase, used to complete v(L)
// from a state and the first L inputs.
template <typename Scalar>
MatX<Scalar> window_outputs(const PlantModelT<Scalar>& plant,
                            const VecX<Scalar>& x0,
                            const MatX<Scalar>& u_init) {
  if (x0.size() != plant.n() || u_init.rows() != plant.m())
    throw DimensionMismatch("window_outputs: state or inputs have wrong size");
  MatX<Scalar> Y(plant.r(), u_init.cols());
  VecX<Scalar> x = x0;
  for (Index t = 0; t < u_init.cols(); ++t) {
    Y.col(t) = plant.C * x;
    x = (plant.A * x + plant.B * u_init.col(t)).eval();
  }
  return Y;
}

// Runs the plant coupled with the dynamic controller from step 0. The
// controller state is recovered from the window the given inputs would
// produce, so its first L outputs replay u_init and from step L on it is
// genuine output feedback; a nonempty ctrl.xi0 overrides that recovery.
template <typename Scalar>
ClosedLoopTraceT<Scalar> simulate_dynamic_closed_loop(
    const PlantModelT<Scalar>& plant, const DynamicControllerT<Scalar>& ctrl,
    const VecX<Scalar>& x0, const MatX<Scalar>& u_init, Index T) {
  if (ctrl.m != plant.m() || ctrl.r != plant.r())
    throw DimensionMismatch(
        "simulate_dynamic_closed_loop: controller does not fit the plant");
  if (u_init.rows() != plant.m() || u_init.cols() != ctrl.L)
    throw DimensionMismatch(
        "simulate_dynamic_closed_loop: need exactly L window inputs");
  if (T < 0) throw DimensionMismatch("simulate_dynamic_closed_loop: T < 0");

  VecX<Scalar> xi;
  if (ctrl.xi0.size() > 0) {
    if (ctrl.xi0.size() != ctrl.L * ctrl.m)
      throw DimensionMismatch(
          "simulate_dynamic_closed_loop: stored state has wrong length");
    xi = ctrl.xi0;
  } else {
    const MatX<Scalar> y_init = window_outputs(plant, x0, u_init);
    VecX<Scalar> v_L(ctrl.L * (ctrl.m + ctrl.r));
    for (Index t = 0; t < ctrl.L; ++t) {
      v_L.segment(t * ctrl.m, ctrl.m) = u_init.col(t);
      v_L.segment(ctrl.L * ctrl.m + t * ctrl.r, ctrl.r) = y_init.col(t);
    }
    xi = initial_state(ctrl, v_L);
  }

  ClosedLoopTraceT<Scalar> trace;
  trace.U.resize(plant.m(), T);
  trace.Y.resize(plant.r(), T);
  trace.X.resize(plant.n(), T);
  VecX<Scalar> x = x0;
  for (Index t = 0; t < T; ++t) {
    const VecX<Scalar> y = plant.C * x;
    const VecX<Scalar> u = ctrl.Omega * xi;
    trace.U.col(t) = u;
    trace.Y.col(t) = y;
    trace.X.col(t) = x;
    xi = (ctrl.Xi * xi + ctrl.Lambda * y).eval();
    x = (plant.A * x + plant.B * u).eval();
  }
  return trace;
}

// Reference loop for the equivalence check: the given inputs fill the
// window, then u = K v directly on the sliding history.
template <typename Scalar>
ClosedLoopTraceT<Scalar> simulate_ioh_closed_loop(const PlantModelT<Scalar>& plant,
                                             const MatX<Scalar>& K, Index L,
                                             const VecX<Scalar>& x0,
                                             const MatX<Scalar>& u_init,
                                             Index T) {
  if (K.rows() != plant.m() || K.cols() != L * (plant.m() + plant.r()))
    throw DimensionMismatch("simulate_ioh_closed_loop: gain has wrong shape");
  if (u_init.rows() != plant.m() || u_init.cols() != L)
    throw DimensionMismatch(
        "simulate_ioh_closed_loop: need exactly L window inputs");
  if (T < 0) throw DimensionMismatch("simulate_ioh_closed_loop: T < 0");

  ClosedLoopTraceT<Scalar> trace;
  trace.U.resize(plant.m(), T);
  trace.Y.resize(plant.r(), T);
  trace.X.resize(plant.n(), T);
  IOHBufferT<Scalar> buf(L, plant.m(), plant.r());
  VecX<Scalar> x = x0;
  for (Index t = 0; t < T; ++t) {
    const VecX<Scalar> y = plant.C * x;
    const VecX<Scalar> u =
        t < L ? VecX<Scalar>(u_init.col(t)) : VecX<Scalar>(K * buf.current_v());
    trace.U.col(t) = u;
    trace.Y.col(t) = y;
    trace.X.col(t) = x;
    buf.push(u, y);
    x = (plant.A * x + plant.B * u).eval();
  }
  return trace;
}

}  // namespace iohpg
