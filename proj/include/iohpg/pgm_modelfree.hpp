#pragma once

// Zeroth-order policy gradient on history-feedback gains. The plant is
// reachable only through an opaque simulation session (reset + step); costs
// of short exploration windows around the current gain feed a scaled
// random-direction estimate of the cost gradient. Two runners: a
// multi-episodic one that restarts the plant for every window, and a
// single-episodic one that learns along one continuing trajectory with
// optional excitation once the history becomes stationary. The tail-bound
// and admissible-radius constants of the convergence analysis are computed
// by the diagnostics helpers, which do read the model: they certify runs,
// they are not part of the learner.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pgm_exact.hpp"

namespace iohpg {

// ---------------------------------------------------------------------------
// Opaque plant session
// ---------------------------------------------------------------------------

// Simulation session exposing only dimensions, randomized restarts, and
// one-step sampling. The learner never reads A, B, C, or the state; the
// state dimension is advertised for window sizing only.
template <typename Scalar = double>
class BlackBoxPlantT {
 public:
  explicit BlackBoxPlantT(PlantModelT<Scalar> plant)
      : plant_(std::move(plant)), x_(VecX<Scalar>::Zero(plant_.n())) {}

  Index m() const { return plant_.m(); }
  Index r() const { return plant_.r(); }
  Index n() const { return plant_.n(); }

  // Restarts the trajectory from a standard-normal state.
  void reset_random(RandomStream& stream) {
    x_ = sample_gaussian(
        stream, MatX<Scalar>::Identity(plant_.n(), plant_.n()).eval());
  }

  // Applies u at the current step and returns the output observed at that
  // same step, y(t) = C x(t); the state then advances to x(t+1).
  VecX<Scalar> step(const VecX<Scalar>& u) {
    if (u.size() != plant_.m())
      throw DimensionMismatch("BlackBoxPlant: input has wrong size");
    VecX<Scalar> y = plant_.C * x_;
    x_ = (plant_.A * x_ + plant_.B * u).eval();
    ++steps_;
    return y;
  }

  // Total samples drawn from the session, across restarts.
  long long steps() const { return steps_; }

 private:
  PlantModelT<Scalar> plant_;
  VecX<Scalar> x_;
  long long steps_ = 0;
};

using BlackBoxPlant = BlackBoxPlantT<double>;

// Restarts the session from a standard-normal state and feeds L
// standard-normal inputs. The filled window then satisfies v(L) ~ N_Phi for
// the second moment built from standard-normal window-start state and
// inputs, i.e. the default projection's Phi. Draw order: n state normals,
// then L*m input normals.
template <typename Scalar>
IOHBufferT<Scalar> reset_to_random_history(BlackBoxPlantT<Scalar>& plant,
                                           RandomStream& stream, Index L) {
  plant.reset_random(stream);
  IOHBufferT<Scalar> buf(L, plant.m(), plant.r());
  const MatX<Scalar> eye =
      MatX<Scalar>::Identity(plant.m(), plant.m()).eval();
  for (Index t = 0; t < L; ++t) {
    const VecX<Scalar> u = sample_gaussian(stream, eye);
    const VecX<Scalar> y = plant.step(u);
    buf.push(u, y);
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Exploration and the gradient estimate
// ---------------------------------------------------------------------------

template <typename Scalar = double>
struct EpisodeRecordT {
  int j = 0;             // episode index within the iteration
  MatX<Scalar> U;        // unit-Frobenius exploration direction
  Scalar cost_sum = 0;   // accumulated stage cost over the window
  long long length = 0;  // window length N
};

using EpisodeRecord = EpisodeRecordT<double>;

// Exploration gain K + delta * U with U uniform on the unit Frobenius
// sphere; returns the gain together with the direction that produced it.
template <typename Scalar>
std::pair<MatX<Scalar>, MatX<Scalar>> explore_gain(const MatX<Scalar>& K,
                                                   Scalar delta,
                                                   RandomStream& stream) {
  if (delta < Scalar(0))
    throw Error("explore_gain: delta must be nonnegative");
  MatX<Scalar> U =
      sample_unit_frobenius(stream, K.rows(), K.cols()).template cast<Scalar>();
  return {K + delta * U, std::move(U)};
}

namespace detail {

template <typename Scalar>
void check_stage_weights(Index m, Index r, const CostModelT<Scalar>& cm,
                         const char* who) {
  if (cm.Q.rows() != r || cm.Q.cols() != r || cm.R.rows() != m ||
      cm.R.cols() != m)
    throw DimensionMismatch(std::string(who) +
                            ": cost weights do not match the plant");
  if (!(cm.c > Scalar(0)))
    throw Error(std::string(who) +
                ": cost model lacks a positive sublevel bound");
}

// Largest singular value; the operator norm used throughout the bounds.
template <typename Scalar>
Scalar op_norm(const MatX<Scalar>& M) {
  if (M.size() == 0) return Scalar(0);
  return Eigen::JacobiSVD<MatX<Scalar>>(M).singularValues()(0);
}

// Convergence test on the observed window costs: two adjacent trailing
// averages of `window` samples must agree to the relative tolerance. A
// nonpositive tolerance disables the test.
template <typename Scalar>
class TrailingAverageT {
 public:
  explicit TrailingAverageT(Scalar tol, std::size_t window = 50)
      : tol_(tol), window_(window) {}

  bool push(Scalar value) {
    if (tol_ <= Scalar(0)) return false;
    values_.push_back(value);
    if (values_.size() > 2 * window_) values_.pop_front();
    if (values_.size() < 2 * window_) return false;
    Scalar older = 0, newer = 0;
    for (std::size_t k = 0; k < window_; ++k) {
      older += values_[k];
      newer += values_[k + window_];
    }
    older /= Scalar(window_);
    newer /= Scalar(window_);
    return std::abs(newer - older) <=
           tol_ * std::max(Scalar(1), std::abs(older));
  }

 private:
  Scalar tol_;
  std::size_t window_;
  std::deque<Scalar> values_;
};

// Lower probability bound 1 - dim_term * exp(-(s o^2 / 2) / (zeta^2 +
// zeta o / 3)), clamped to [0, 1] because a negative floor is vacuous.
template <typename Scalar>
Scalar bernstein_bound(Scalar dim_term, Scalar s, Scalar o, Scalar zeta) {
  const Scalar den = zeta * zeta + zeta * o / Scalar(3);
  Scalar pr;
  if (den > Scalar(0))
    pr = Scalar(1) - dim_term * std::exp(-(s * o * o / Scalar(2)) / den);
  else
    pr = o > Scalar(0) ? Scalar(1) : Scalar(1) - dim_term;
  return std::min(Scalar(1), std::max(Scalar(0), pr));
}

}  // namespace detail

// Runs N closed-loop steps u = Kd v from the buffered history and returns
// the accumulated stage cost. The session advances one step per stage, also
// when the run is cut short: a stage cost that is non-finite or exceeds
// 1e6 * cm.c marks the window as destabilized and raises NonFinite, with the
// session and buffer left wherever the blowup happened so single-trajectory
// callers keep the elapsed time.
template <typename Scalar>
Scalar episode_cost(BlackBoxPlantT<Scalar>& plant, IOHBufferT<Scalar>& buf,
                    const MatX<Scalar>& Kd, long long N,
                    const CostModelT<Scalar>& cm) {
  detail::check_stage_weights(plant.m(), plant.r(), cm, "episode_cost");
  if (N < 0) throw DimensionMismatch("episode_cost: negative window length");
  if (!buf.filled())
    throw Underfilled("episode_cost: history window is not filled");
  if (Kd.rows() != plant.m() || Kd.cols() != buf.current_v().size())
    throw DimensionMismatch("episode_cost: gain has wrong shape");

  const Scalar cap = Scalar(1e6) * cm.c;
  Scalar total = 0;
  for (long long k = 0; k < N; ++k) {
    const VecX<Scalar> v = buf.current_v();
    const VecX<Scalar> u = Kd * v;
    const VecX<Scalar> y = plant.step(u);
    buf.push(u, y);
    const Scalar c = y.dot(cm.Q * y) + u.dot(cm.R * u);
    if (!std::isfinite(c) || c > cap)
      throw NonFinite("episode_cost: stage cost exceeded the blowup cap");
    total += c;
  }
  return total;
}

// Scaled random-direction estimate m*d/(s*delta) * sum_j cost_sum_j U_j of
// the cost gradient from s episode records.
template <typename Scalar>
MatX<Scalar> zeroth_order_gradient(
    const std::vector<EpisodeRecordT<Scalar>>& records, Scalar delta, Index m,
    Index d) {
  if (records.empty()) throw Error("zeroth_order_gradient: no episodes");
  if (!(delta > Scalar(0)))
    throw Error("zeroth_order_gradient: delta must be positive");
  MatX<Scalar> sum = MatX<Scalar>::Zero(m, d);
  for (const auto& rec : records) {
    if (rec.U.rows() != m || rec.U.cols() != d)
      throw DimensionMismatch(
          "zeroth_order_gradient: direction has wrong shape");
    sum += rec.cost_sum * rec.U;
  }
  return (Scalar(m) * Scalar(d) / (Scalar(records.size()) * delta)) * sum;
}

// Independent N(0, sigma^2 I_m) input samples as columns. An i.i.d. Gaussian
// signal is generically persistently exciting of any order its length can
// support; `order` documents the intent and bounds the length from below.
template <typename Scalar>
MatX<Scalar> pe_signal(Index m, Index order, Index length, Scalar sigma,
                       RandomStream& stream) {
  if (m < 1 || order < 0 || length < order)
    throw DimensionMismatch("pe_signal: need length >= order >= 0");
  if (sigma < Scalar(0)) throw Error("pe_signal: sigma must be nonnegative");
  MatX<Scalar> signal(m, length);
  for (Index t = 0; t < length; ++t)
    for (Index i = 0; i < m; ++i)
      signal(i, t) = Scalar(sigma * stream.normal());
  return signal;
}

// Block-Hankel excitation-order test: stacks `order` consecutive samples per
// column and checks full row rank at the given relative singular-value
// tolerance. Signals too short to carry the requested order fail.
template <typename Scalar>
bool is_persistently_exciting(const MatX<Scalar>& signal, Index order,
                              Scalar rel_tol = Scalar(1e-9)) {
  const Index m = signal.rows();
  const Index T = signal.cols();
  if (m < 1 || order < 1 || T < order)
    throw DimensionMismatch(
        "is_persistently_exciting: need at least `order` samples");
  const Index cols = T - order + 1;
  if (m * order > cols) return false;
  MatX<Scalar> H(m * order, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index b = 0; b < order; ++b)
      H.block(b * m, j, m, 1) = signal.col(j + b);
  Eigen::JacobiSVD<MatX<Scalar>> svd(H);
  const auto& sv = svd.singularValues();
  return sv(0) > Scalar(0) && sv(sv.size() - 1) > rel_tol * sv(0);
}

// ---------------------------------------------------------------------------
// Multi-episodic runner
// ---------------------------------------------------------------------------

// Counters reported by the runners alongside the gradient-descent report.
struct ModelFreeStats {
  long long plant_steps = 0;   // session samples consumed by this run
  long long episodes = 0;      // completed cost windows
  long long failures = 0;      // windows cut short by the blowup cap
  long long excitations = 0;   // single-episodic noise injections
  bool diverged = false;       // single-episodic terminal failure
};

template <typename Scalar = double>
struct MultiEpisodicParamsT {
  int s = 10;                   // episodes per iteration
  long long N = 500;            // steps per episode
  Scalar delta = Scalar(0.05);  // exploration radius
  Scalar alpha = Scalar(5e-10);
  Index L = 2;
  long long max_iters = 8000;
  std::uint64_t seed = 0;
  long long log_stride = 100;        // iterations between log rows
  long long checkpoint_stride = 2000;  // iterations between gain snapshots
  Scalar convergence_tol = Scalar(0);  // trailing-average exit; <= 0 off.
                                       // Off by default: on stochastic window
                                       // costs the 1e-4 agreement test fires
                                       // spuriously once checked thousands of
                                       // times, freezing long runs early
  int max_retries = 8;  // fresh-direction redraws allowed per episode slot
};

using MultiEpisodicParams = MultiEpisodicParamsT<double>;

// Gradient descent with the zeroth-order estimate, restarting the plant for
// every episode so each window starts from v(L) ~ N_Phi. Episodes whose
// window cost blows up are resampled with a fresh direction; a slot that
// keeps failing raises Diverged. The report's J column holds the observed
// mean window cost (a finite-horizon sample, not the infinite-horizon
// cost); checkpoints snapshot the gain before the update at that iteration.
// The run is a deterministic function of (seed, params).
template <typename Scalar>
PGMReportT<Scalar> run_multi_episodic(
    BlackBoxPlantT<Scalar>& plant, const CostModelT<Scalar>& cm,
    const MultiEpisodicParamsT<Scalar>& params,
    ModelFreeStats* stats = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  detail::check_stage_weights(plant.m(), plant.r(), cm, "run_multi_episodic");
  if (params.s < 1 || params.N < 1 || !(params.delta > Scalar(0)) ||
      params.L < 1 || params.max_iters < 0 || params.max_retries < 0)
    throw Error("run_multi_episodic: invalid parameters");

  const Index m = plant.m();
  const Index d = params.L * (m + plant.r());
  const long long steps_before = plant.steps();
  RandomStream stream(params.seed);
  MatX<Scalar> K = MatX<Scalar>::Zero(m, d);

  ModelFreeStats fallback;
  ModelFreeStats& st = stats ? *stats : fallback;
  st = ModelFreeStats{};
  detail::TrailingAverageT<Scalar> trail(params.convergence_tol);

  PGMReportT<Scalar> report;
  Scalar J_obs = 0;
  long long i = 0;
  for (;; ++i) {
    std::vector<EpisodeRecordT<Scalar>> records;
    records.reserve(static_cast<std::size_t>(params.s));
    for (int j = 0; j < params.s; ++j) {
      for (int tries = 0;; ++tries) {
        auto [G, U] = explore_gain(K, params.delta, stream);
        auto buf = reset_to_random_history(plant, stream, params.L);
        try {
          const Scalar S = episode_cost(plant, buf, G, params.N, cm);
          records.push_back({j, std::move(U), S, params.N});
          ++st.episodes;
          break;
        } catch (const NonFinite&) {
          ++st.failures;
          if (tries >= params.max_retries)
            throw Diverged("run_multi_episodic: episode " +
                           std::to_string(j) + " of iteration " +
                           std::to_string(i) +
                           " kept destabilizing under fresh directions");
        }
      }
    }
    const MatX<Scalar> grad_est =
        zeroth_order_gradient(records, params.delta, m, d);
    J_obs = 0;
    for (const auto& rec : records) J_obs += rec.cost_sum;
    J_obs /= Scalar(params.s);

    const bool settled = trail.push(J_obs);
    const bool stop = settled || i >= params.max_iters;
    if ((params.log_stride > 0 && i % params.log_stride == 0) || stop) {
      report.iter.push_back(i);
      report.J.push_back(J_obs);
      report.grad_norm.push_back(grad_est.norm());
    }
    if (params.checkpoint_stride > 0 && i > 0 &&
        i % params.checkpoint_stride == 0)
      report.checkpoints.emplace_back(i, K);
    if (stop) {
      report.converged = settled;
      break;
    }
    K -= params.alpha * grad_est;
  }
  // A run that exits early carries its final gain forward so every report
  // shares the same checkpoint grid.
  if (params.checkpoint_stride > 0)
    for (long long ck = (i / params.checkpoint_stride + 1) *
                        params.checkpoint_stride;
         ck <= params.max_iters; ck += params.checkpoint_stride)
      report.checkpoints.emplace_back(ck, K);

  st.plant_steps = plant.steps() - steps_before;
  report.K = K;
  report.J_final = J_obs;
  report.iterations = i;
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return report;
}

// ---------------------------------------------------------------------------
// Single-episodic runner
// ---------------------------------------------------------------------------

template <typename Scalar = double>
struct SingleEpisodicParamsT {
  long long N = 50;             // steps per update window
  Scalar delta = Scalar(0.05);  // exploration radius
  Scalar alpha = Scalar(3e-7);
  Index L = 2;
  Scalar stationary_threshold = Scalar(0.01);  // ||v|| marking stationarity
  Scalar excite_sigma = Scalar(0.1);   // covariance scale of injected noise
  Scalar alpha_excited = Scalar(5e-5);  // step size in the excitation regime
  long long excite_after = 8000;  // regime switch time; < 0 disables it
  Index excite_length = 0;        // injected steps; 0 resolves to L*m + n
  long long max_steps = 600000;
  std::uint64_t seed = 0;
  long long log_stride = 100;            // update windows between log rows
  long long checkpoint_stride = 100000;  // time steps between gain snapshots
  Scalar convergence_tol = Scalar(0);  // trailing-average exit; off by
                                       // default because stationarity is
                                       // handled by excitation, not exit
  int max_retries = 8;  // consecutive failed windows before giving up
};

using SingleEpisodicParams = SingleEpisodicParamsT<double>;

// One logged update window of the single-episodic runner, for trace export.
template <typename Scalar = double>
struct WindowSampleT {
  long long t = 0;   // trajectory time at the window boundary
  Scalar J_obs = 0;  // observed window cost of the exploration gain
  VecX<Scalar> y;    // newest plant output at the boundary
  MatX<Scalar> K;    // gain after the update at this boundary
};

using WindowSample = WindowSampleT<double>;

// Learns along one continuing trajectory: every N steps the window cost of
// an exploration gain updates the current gain. From time excite_after on,
// the step size switches to alpha_excited and, whenever the history norm at
// a window boundary falls to stationary_threshold, excite_length steps of
// u = K v + e with e ~ N(0, excite_sigma I) are injected between windows to
// re-excite the loop. A window whose cost blows up advances time but skips
// the update; max_retries consecutive failures end the run with the
// divergence recorded in the report (single-trajectory failures are a
// statistical outcome, so the partial history is returned, not thrown
// away). The report's iter column holds the time step at each logged window
// end; checkpoints snapshot the gain on a fixed time grid, carrying the
// final gain forward when the run ends early. When window_log is given it
// receives one sample per logged row (boundary time, window cost, newest
// output, post-update gain) for trace export. Deterministic in (seed,
// params).
template <typename Scalar>
PGMReportT<Scalar> run_single_episodic(
    BlackBoxPlantT<Scalar>& plant, const CostModelT<Scalar>& cm,
    const SingleEpisodicParamsT<Scalar>& params,
    ModelFreeStats* stats = nullptr,
    std::vector<WindowSampleT<Scalar>>* window_log = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  detail::check_stage_weights(plant.m(), plant.r(), cm, "run_single_episodic");
  if (params.N < 1 || !(params.delta > Scalar(0)) || params.L < 1 ||
      params.max_steps < params.L || params.max_retries < 0 ||
      params.excite_length < 0 || !(params.excite_sigma >= Scalar(0)))
    throw Error("run_single_episodic: invalid parameters");

  const Index m = plant.m();
  const Index d = params.L * (m + plant.r());
  const Index inject_len = params.excite_length > 0
                               ? params.excite_length
                               : params.L * m + plant.n();
  const long long steps_before = plant.steps();
  RandomStream stream(params.seed);
  MatX<Scalar> K = MatX<Scalar>::Zero(m, d);
  auto buf = reset_to_random_history(plant, stream, params.L);
  const auto now = [&] { return plant.steps() - steps_before; };

  ModelFreeStats fallback;
  ModelFreeStats& st = stats ? *stats : fallback;
  st = ModelFreeStats{};
  detail::TrailingAverageT<Scalar> trail(params.convergence_tol);

  PGMReportT<Scalar> report;
  Scalar J_obs = 0;
  long long updates = 0;
  long long next_ck = params.checkpoint_stride;
  int retries = 0;
  bool settled = false;
  while (now() < params.max_steps && !st.diverged && !settled) {
    auto [G, U] = explore_gain(K, params.delta, stream);
    Scalar S = 0;
    bool failed = false;
    try {
      S = episode_cost(plant, buf, G, params.N, cm);
    } catch (const NonFinite&) {
      failed = true;
      ++st.failures;
    }
    if (failed) {
      if (++retries > params.max_retries) {
        st.diverged = true;
        report.warnings.push_back(
            "trajectory destabilized: " + std::to_string(params.max_retries) +
            " consecutive windows exceeded the blowup cap by step " +
            std::to_string(now()));
      }
    } else {
      retries = 0;
      ++st.episodes;
      const bool late =
          params.excite_after >= 0 && now() >= params.excite_after;
      const std::vector<EpisodeRecordT<Scalar>> rec{{0, U, S, params.N}};
      const MatX<Scalar> grad_est =
          zeroth_order_gradient(rec, params.delta, m, d);
      K -= (late ? params.alpha_excited : params.alpha) * grad_est;
      J_obs = S;
      if (params.log_stride > 0 && updates % params.log_stride == 0) {
        report.iter.push_back(now());
        report.J.push_back(S);
        report.grad_norm.push_back(grad_est.norm());
        if (window_log)
          window_log->push_back(
              {now(), S, buf.current_v().tail(plant.r()), K});
      }
      ++updates;
      settled = trail.push(S);
      if (late && buf.current_v().norm() <= params.stationary_threshold) {
        ++st.excitations;
        const MatX<Scalar> noise =
            pe_signal(m, inject_len, inject_len,
                      Scalar(std::sqrt(params.excite_sigma)), stream);
        for (Index k = 0; k < inject_len; ++k) {
          const VecX<Scalar> v = buf.current_v();
          const VecX<Scalar> u = K * v + noise.col(k);
          const VecX<Scalar> y = plant.step(u);
          buf.push(u, y);
        }
      }
    }
    while (params.checkpoint_stride > 0 && next_ck <= now() &&
           next_ck <= params.max_steps) {
      report.checkpoints.emplace_back(next_ck, K);
      next_ck += params.checkpoint_stride;
    }
  }
  if (params.checkpoint_stride > 0)
    for (; next_ck <= params.max_steps; next_ck += params.checkpoint_stride)
      report.checkpoints.emplace_back(next_ck, K);

  st.plant_steps = now();
  report.K = K;
  report.J_final = J_obs;
  report.iterations = updates;
  report.converged = settled;
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return report;
}

// ---------------------------------------------------------------------------
// Sample-complexity diagnostics
// ---------------------------------------------------------------------------

template <typename Scalar = double>
struct DiagnosticsParamsT {
  Scalar delta = Scalar(0.05);  // exploration radius
  long long N = 500;            // window length
  long long s = 10;             // episodes per iteration
  Scalar o = Scalar(0);         // error-threshold knob of the tail bound
  Scalar v_max = Scalar(0);     // window-start norm bound, e.g. the
                                // empirical_v_max quantile
};

using DiagnosticsParams = DiagnosticsParamsT<double>;

template <typename Scalar = double>
struct ComplexityDiagnosticsT {
  Scalar delta_st = 0;    // exploration radii up to this keep the loop Schur
  Scalar epsilon_K = 0;   // cost-perturbation scale entering delta_st
  Scalar theta_o = 0;     // gradient-error bound o + q delta + chi
  Scalar chi = 0;         // finite-window truncation term
  Scalar zeta = 0;        // tail-width scale of the window costs
  Scalar prob_bound = 0;  // probability floor for the theta_o bound, in [0,1]
  Scalar q = 0;           // smoothness constant over the sublevel set
  Scalar v_max = 0;       // bound the caller supplied
  Scalar h_K = 0;         // transition-plus-gain norm at K
  Scalar J = 0;           // cost at K
};

using ComplexityDiagnostics = ComplexityDiagnosticsT<double>;

// Empirical high quantile of ||v(L)|| under v(L) ~ N_Phi. A Gaussian has no
// almost-sure bound, so the 99.99% quantile over 1e5 draws is the documented
// stand-in for one. Orthonormal columns preserve norms, so sampling in
// reduced coordinates suffices.
template <typename Scalar>
Scalar empirical_v_max(const ProjectionT<Scalar>& proj, RandomStream& stream,
                       long long draws = 100000,
                       Scalar quantile = Scalar(0.9999)) {
  if (draws < 1 || !(quantile > Scalar(0)) || !(quantile <= Scalar(1)))
    throw Error("empirical_v_max: invalid parameters");
  Eigen::LLT<MatX<Scalar>> llt(proj.PhiHat);
  if (llt.info() != Eigen::Success)
    throw PhiMismatch(
        "empirical_v_max: restricted second moment is not positive definite");
  const MatX<Scalar> factor = llt.matrixL();
  std::vector<Scalar> norms(static_cast<std::size_t>(draws));
  for (auto& value : norms) value = sample_gaussian(stream, factor).norm();
  const auto k = static_cast<std::size_t>(std::min<long long>(
      draws - 1,
      static_cast<long long>(std::floor(double(quantile) * double(draws - 1)))));
  std::nth_element(norms.begin(), norms.begin() + k, norms.end());
  return norms[k];
}

// Closed-form constants of the stability and tail analysis at a gain K:
// the admissible exploration radius delta_st with its scale epsilon_K, the
// gradient-error bound theta_o with its truncation term chi, and the
// probability floor prob_bound with its tail scale zeta. Norms without a
// subscript in the source formulas are operator norms. Requires the model;
// throws NotInSublevel when K has unbounded cost or sits above the bound c.
template <typename Scalar>
ComplexityDiagnosticsT<Scalar> complexity_diagnostics(
    const IOHDynamicsT<Scalar>& ioh, const ProjectionT<Scalar>& proj,
    const CostModelT<Scalar>& cm, const MatX<Scalar>& K,
    const DiagnosticsParamsT<Scalar>& params) {
  if (!(params.delta > Scalar(0)) || params.N < 1 || params.s < 1 ||
      !(params.v_max > Scalar(0)) || params.o < Scalar(0))
    throw Error("complexity_diagnostics: invalid parameters");
  if (K.rows() != ioh.m || K.cols() != ioh.d())
    throw DimensionMismatch("complexity_diagnostics: gain has wrong shape");
  const auto rc = detail::ReducedCostT<Scalar>::build(ioh, proj, cm);
  typename detail::ReducedCostT<Scalar>::Eval e;
  try {
    e = rc.eval((K * proj.P).eval());
  } catch (const NotSchur&) {
    throw NotInSublevel(
        "complexity_diagnostics: cost is unbounded at this gain");
  }
  if (!(e.J <= cm.c))
    throw NotInSublevel(
        "complexity_diagnostics: gain is outside the sublevel set");

  ComplexityDiagnosticsT<Scalar> diag;
  diag.v_max = params.v_max;
  diag.J = e.J;
  Scalar rho = 0;
  diag.q = detail::smoothness_constant(rc, cm.Q, ioh.L, cm.c, &rho);

  const Scalar Lw = Scalar(ioh.L);
  const Scalar c = cm.c;
  const Scalar p = Scalar(ioh.p());
  const Scalar width = Scalar(ioh.m + ioh.r);
  Eigen::SelfAdjointEigenSolver<MatX<Scalar>> ephi(rc.PhiHat);
  const Scalar sig_phi = ephi.eigenvalues().minCoeff();
  const Scalar tr_phi = rc.PhiHat.trace();
  const Scalar k_norm = detail::op_norm<Scalar>(K);
  const Scalar r_norm = detail::op_norm<Scalar>(rc.R);
  const Scalar qhat_norm = detail::op_norm<Scalar>(rc.QHat);
  const MatX<Scalar> theta_k =
      rc.ThetaHat0 + rc.PiHat * (K * proj.P).eval();
  diag.h_K = detail::op_norm<Scalar>(theta_k) + k_norm;

  const Scalar denom = rho * sig_phi;
  diag.epsilon_K =
      Scalar(4) * Lw * c * p * tr_phi * k_norm * r_norm / denom +
      Scalar(4) * (Lw * c * p) * (Lw * c * p) * tr_phi * diag.h_K *
          (qhat_norm + Scalar(9) * k_norm * k_norm * r_norm) /
          (denom * denom);
  diag.delta_st = std::min(
      std::min(e.J / diag.epsilon_K, (c - e.J) / diag.epsilon_K),
      std::min(denom / (Scalar(4) * Lw * c * p * diag.h_K),
               Scalar(2) * k_norm));
  diag.chi = Scalar(ioh.m) * width * width * std::pow(Lw, Scalar(4)) * c * c *
             (qhat_norm + Scalar(9) * k_norm * k_norm * r_norm) *
             params.v_max * params.v_max /
             (Scalar(params.N) * params.delta * sig_phi * sig_phi * rho * rho);
  diag.theta_o = params.o + diag.q * params.delta + diag.chi;
  diag.zeta = Scalar(2) * std::pow(Scalar(ioh.m), Scalar(1.5)) * Lw * width *
              params.v_max * params.v_max * e.J / (params.delta * sig_phi);
  diag.prob_bound = detail::bernstein_bound(
      Scalar(ioh.m) + Lw * width, Scalar(params.s), params.o, diag.zeta);
  return diag;
}

template <typename Scalar = double>
struct UpdateCertificateT {
  Scalar epsilon_star = 0;   // curvature scale at the exact-update point
  Scalar o_bar = 0;          // largest error threshold admitting this alpha
  Scalar theta_at_obar = 0;  // gradient-error bound evaluated at o_bar
  Scalar prob_bound = 0;     // probability floor at o_bar, in [0, 1]
  Scalar beta = 0;           // exact-step contraction factor at K
  Scalar beta_gap = 0;       // 1 - beta, kept separately against underflow
  Scalar beta_tilde = 0;     // (1 + beta) / 2, the stochastic-step factor
};

using UpdateCertificate = UpdateCertificateT<double>;

// One-step certificate for the stochastic update at (K, alpha): the largest
// error threshold o_bar whose admissibility curve still lies above alpha,
// found by doubling and bisection (the curve is nonincreasing in o and
// decays to zero), together with the probability floor at o_bar and the
// certified contraction factor (1 + beta) / 2. o_bar = 0 with a zero floor
// means no threshold admits this step size. params.o is ignored here; the
// threshold is computed, not supplied.
template <typename Scalar>
UpdateCertificateT<Scalar> update_certificate(
    const IOHDynamicsT<Scalar>& ioh, const ProjectionT<Scalar>& proj,
    const CostModelT<Scalar>& cm, const MatX<Scalar>& K,
    const MatX<Scalar>& K_star, Scalar alpha,
    const DiagnosticsParamsT<Scalar>& params) {
  if (!(alpha > Scalar(0)))
    throw Error("update_certificate: step size must be positive");
  const auto diag_k = complexity_diagnostics(ioh, proj, cm, K, params);
  const auto exact = diagnostics(ioh, proj, cm, K, alpha, K_star);
  const auto parts = gradient(ioh, proj, cm, K);
  const MatX<Scalar> K_check = K - alpha * parts.grad;

  const auto rc = detail::ReducedCostT<Scalar>::build(ioh, proj, cm);
  typename detail::ReducedCostT<Scalar>::Eval e_check;
  try {
    e_check = rc.eval((K_check * proj.P).eval());
  } catch (const NotSchur&) {
    throw NotInSublevel(
        "update_certificate: exact update leaves the stabilizing set");
  }
  Eigen::SelfAdjointEigenSolver<MatX<Scalar>> ephi(rc.PhiHat);
  const Scalar sig_phi = ephi.eigenvalues().minCoeff();
  const MatX<Scalar> curvature =
      rc.R + rc.PiHat.transpose() * e_check.PsiHat * rc.PiHat;

  UpdateCertificateT<Scalar> cert;
  cert.epsilon_star = sig_phi * e_check.EHat.squaredNorm() /
                      detail::op_norm<Scalar>(curvature);
  cert.beta = exact.beta;
  cert.beta_gap = exact.beta_gap;
  cert.beta_tilde = (Scalar(1) + exact.beta) / Scalar(2);

  const Scalar check_norm = detail::op_norm<Scalar>(K_check);
  const MatX<Scalar> theta_check =
      rc.ThetaHat0 + rc.PiHat * (K_check * proj.P).eval();
  const Scalar h_check = detail::op_norm<Scalar>(theta_check) + check_norm;
  const Scalar p = Scalar(ioh.p());
  const Scalar Lw = Scalar(ioh.L);
  const Scalar theta_base = diag_k.q * params.delta + diag_k.chi;
  const auto admissible = [&](Scalar o) -> Scalar {
    const Scalar theta = o + theta_base;
    const Scalar by_smoothness = Scalar(2) / diag_k.q;
    const Scalar by_contraction = exact.beta_gap * cert.epsilon_star /
                                  (Scalar(2) * diag_k.epsilon_K * theta);
    const Scalar by_gain = Scalar(2) * check_norm / theta;
    const Scalar by_stability =
        exact.rho * sig_phi / (Scalar(4) * Lw * cm.c * theta * p * h_check);
    return std::min(std::min(by_smoothness, by_contraction),
                    std::min(by_gain, by_stability));
  };

  if (!(alpha < admissible(Scalar(0)))) {
    cert.o_bar = 0;
    cert.theta_at_obar = theta_base;
    cert.prob_bound = 0;
    return cert;
  }
  Scalar lo = 0;
  Scalar hi = std::max(Scalar(1), theta_base);
  while (alpha < admissible(hi)) hi *= Scalar(2);
  for (int it = 0; it < 200; ++it) {
    const Scalar mid = lo + (hi - lo) / Scalar(2);
    if (alpha < admissible(mid))
      lo = mid;
    else
      hi = mid;
  }
  cert.o_bar = lo;
  cert.theta_at_obar = lo + theta_base;
  cert.prob_bound = detail::bernstein_bound(
      Scalar(ioh.m) + Lw * Scalar(ioh.m + ioh.r), Scalar(params.s), lo,
      diag_k.zeta);
  return cert;
}

}  // namespace iohpg
