// Experiment runner for history-feedback policy gradients. `run` learns a
// gain on a preset or file-loaded plant with the chosen algorithm, realizes
// it as a dynamic controller, and writes a CSV trace plus a JSON summary
// carrying the fully resolved configuration; `validate` reports configuration
// findings (window rank, step size and exploration radius against their
// certified ranges) without running anything. Exit codes: 0 success, 2
// configuration error, 3 numerical failure.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "iohpg/baseline.hpp"
#include "iohpg/pgm_exact.hpp"
#include "iohpg/pgm_modelfree.hpp"
#include "iohpg/presets.hpp"
#include "iohpg/realization.hpp"
#include "iohpg/serialize.hpp"

namespace {

using namespace iohpg;
namespace fs = std::filesystem;

// Raised for problems the user can fix by editing flags or input files;
// mapped to exit code 2 (library failures map to 3).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flag values as parsed; negative sentinels mean "resolve from the preset or
// the library default for the chosen algorithm". Iteration-like counts are
// parsed as doubles so scientific notation (5e6) works on the command line.
struct CliConfig {
  std::string preset;
  std::string plant_file;
  std::string algorithm = "model-based";
  std::string gain_file;
  std::string resume_from;
  std::string output;
  long long L = -1;
  double q_scale = -1.0, r_scale = -1.0;
  double alpha = -1.0, delta = -1.0, sigma = -1.0, threshold = -1.0;
  double alpha_excited = -1.0;
  double s = -1.0, N = -1.0, iters = -1.0, max_steps = -1.0;
  long long T = 200;
  long long excite_after = -2;  // -2 resolve, -1 excitation off
  double o_knob = -1.0;         // diagnostics tail threshold; -1 auto
  long long log_stride = -1;
  std::uint64_t seed = 1;
  long long seeds = 1;
};

// Model-side quantities shared by every algorithm, plus the parameter echo
// embedded in each summary so artifacts are auditable on their own.
struct Resolved {
  PlantModel plant;
  IOHDynamics ioh;
  Projection proj;
  CostModel cm;
  OptimalReference ref;
  Matrix Q, R;
  Index L = 0;
  const ExperimentPreset* preset = nullptr;
  std::string output_root;
  Json echo;
};

long long to_count(double v, const char* what) {
  if (!(v >= 0) || v > 9e18 || std::floor(v) != v)
    throw ConfigError(std::string(what) + " must be a nonnegative integer");
  return static_cast<long long>(v);
}

std::pair<PlantModel, const ExperimentPreset*> load_plant(
    const CliConfig& cfg) {
  if (cfg.preset.empty() == cfg.plant_file.empty())
    throw ConfigError("choose exactly one of --preset and --plant");
  if (!cfg.preset.empty()) {
    try {
      const ExperimentPreset& p = find_preset(cfg.preset);
      return {p.plant, &p};
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  try {
    return {plant_from_json(load_json(cfg.plant_file)), nullptr};
  } catch (const Error& e) {
    throw ConfigError(std::string("--plant: ") + e.what());
  }
}

// Weight matrices: presets carry them whole; plant files get scaled
// identities so the whole cost is expressible from the command line.
std::pair<Matrix, Matrix> resolve_weights(const CliConfig& cfg,
                                          const PlantModel& plant,
                                          const ExperimentPreset* preset) {
  if (preset) {
    if (cfg.q_scale > 0 || cfg.r_scale > 0)
      throw ConfigError("--q-scale/--r-scale only apply to --plant files");
    return {preset->Q, preset->R};
  }
  const double qs = cfg.q_scale > 0 ? cfg.q_scale : 1.0;
  const double rs = cfg.r_scale > 0 ? cfg.r_scale : 1.0;
  return {qs * Matrix::Identity(plant.r(), plant.r()),
          rs * Matrix::Identity(plant.m(), plant.m())};
}

Index resolve_L(const CliConfig& cfg, const ExperimentPreset* preset) {
  if (cfg.L > 0) return static_cast<Index>(cfg.L);
  if (preset) return preset->L;
  throw ConfigError("--L is required with --plant files");
}

Resolved resolve(const CliConfig& cfg) {
  auto [plant, preset] = load_plant(cfg);
  const Index L = resolve_L(cfg, preset);
  auto [Q, R] = resolve_weights(cfg, plant, preset);
  try {
    IOHDynamics ioh = build_ioh(plant, L);
    Projection proj = default_projection(plant, ioh);
    CostModel cm = make_cost_model(ioh, proj, Q, R);
    OptimalReference ref = optimal_reference(plant, ioh, proj, Q, R);
    Resolved r{std::move(plant), std::move(ioh), std::move(proj),
               std::move(cm),    std::move(ref), std::move(Q),
               std::move(R),     L,              preset};
    r.output_root = cfg.output.empty() ? "runs" : cfg.output;
    r.echo = Json{{"algorithm", cfg.algorithm},
                  {"plant", preset ? cfg.preset : cfg.plant_file},
                  {"L", L},
                  {"Q", matrix_to_json(r.Q)},
                  {"R", matrix_to_json(r.R)},
                  {"seed", cfg.seed},
                  {"output", r.output_root}};
    return r;
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    // The bench refused the combination (window too short, weights not
    // positive definite, ...): a configuration problem, not a numerical one.
    throw ConfigError(e.what());
  }
}

double exact_cost_or_inf(const Resolved& R, const Matrix& K) {
  try {
    return cost(R.ioh, R.proj, R.cm, K);
  } catch (const Unbounded&) {
    return std::numeric_limits<double>::infinity();
  }
}

Matrix load_gain_matrix(const std::string& path) {
  Json j;
  try {
    j = load_json(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (j.contains("K")) return matrix_from_json(j.at("K"), "K");
  if (j.contains("final_gain"))
    return matrix_from_json(j.at("final_gain"), "final_gain");
  throw ConfigError("--gain-file: " + path +
                    " contains neither \"K\" nor \"final_gain\"");
}

Json controller_summary(const Matrix& K, const Resolved& R) {
  return controller_to_json(
      realize(K, R.L, R.plant.m(), R.plant.r()));
}

double gap_to_optimal(const Resolved& R, double J) {
  return (J - R.ref.J_star) / R.ref.J_star;
}

// --------------------------------------------------------------------------
// Algorithm drivers; each writes its trace files and fills the summary.
// --------------------------------------------------------------------------

void drive_baseline(const CliConfig&, const Resolved& R, const fs::path&,
                    Json& summary) {
  summary["K_sf"] = matrix_to_json(R.ref.K_sf);
  summary["K_star"] = matrix_to_json(R.ref.K);
  summary["X"] = matrix_to_json(R.ref.X);
  summary["final_gain"] = matrix_to_json(R.ref.K);
  summary["final_cost"] = R.ref.J_star;
  summary["gap"] = 0.0;
  summary["realized_controller"] = controller_summary(R.ref.K, R);
  std::cout << "baseline: J* = " << R.ref.J_star << '\n';
}

void drive_model_based(const CliConfig& cfg, const Resolved& R,
                       const fs::path& dir, Json& summary) {
  RunOptions opts;
  opts.alpha = cfg.alpha > 0 ? cfg.alpha
               : R.preset    ? R.preset->alpha_model_based
                             : opts.alpha;
  opts.max_iters = cfg.iters >= 0 ? to_count(cfg.iters, "--iters")
                   : R.preset     ? R.preset->iterations_model_based
                                  : opts.max_iters;
  opts.log_stride = cfg.log_stride > 0 ? cfg.log_stride : 10000;
  opts.checkpoint_stride = 100000;
  if (!cfg.resume_from.empty()) {
    Json cks;
    try {
      cks = load_json(cfg.resume_from);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    if (!cks.is_array() || cks.empty())
      throw ConfigError("--resume-from: no checkpoints in " + cfg.resume_from);
    opts.K0 = matrix_from_json(cks.back().at("gain"), "gain");
  }
  summary["config"]["alpha"] = opts.alpha;
  summary["config"]["iters"] = opts.max_iters;
  summary["config"]["log_stride"] = opts.log_stride;
  if (!cfg.resume_from.empty())
    summary["config"]["resume_from"] = cfg.resume_from;

  const PGMReport rep = run_model_based(R.ioh, R.proj, R.cm, opts);

  CsvWriter csv((dir / "trace.csv").string(), {"iter", "J", "grad_norm"});
  for (std::size_t i = 0; i < rep.iter.size(); ++i)
    csv.row(rep.iter[i], rep.J[i], rep.grad_norm[i]);
  csv.close();
  Json cks = Json::array();
  for (const auto& [it, gain] : rep.checkpoints)
    cks.push_back(Json{{"iter", it}, {"gain", matrix_to_json(gain)}});
  save_json((dir / "checkpoints.json").string(), cks);

  summary["final_gain"] = matrix_to_json(rep.K);
  summary["final_cost"] = rep.J_final;
  summary["gap"] = gap_to_optimal(R, rep.J_final);
  summary["realized_controller"] = controller_summary(rep.K, R);
  summary["diagnostics"] = Json{{"iterations", rep.iterations},
                                {"converged", rep.converged},
                                {"grad_norm_final", rep.grad_norm.back()},
                                {"warnings", rep.warnings},
                                {"solver_seconds", rep.seconds}};
  std::cout << "model-based: J = " << rep.J_final
            << ", gap = " << summary["gap"].get<double>()
            << ", iterations = " << rep.iterations << '\n';
}

void drive_multi_episodic(const CliConfig& cfg, const Resolved& R,
                          const fs::path& dir, Json& summary) {
  MultiEpisodicParams base;
  base.s = cfg.s >= 0 ? static_cast<int>(to_count(cfg.s, "--s")) : base.s;
  base.N = cfg.N >= 0 ? to_count(cfg.N, "--N") : base.N;
  base.delta = cfg.delta > 0 ? cfg.delta
               : R.preset    ? R.preset->delta
                             : base.delta;
  base.alpha = cfg.alpha > 0 ? cfg.alpha
               : R.preset    ? R.preset->alpha_multi_episodic
                             : base.alpha;
  base.L = R.L;
  base.max_iters = cfg.iters >= 0 ? to_count(cfg.iters, "--iters") : 2000;
  base.log_stride = 0;  // rows come from the checkpoint grid below
  base.checkpoint_stride = cfg.log_stride > 0 ? cfg.log_stride : 100;
  const long long seeds = cfg.seeds;
  summary["config"]["s"] = base.s;
  summary["config"]["N"] = base.N;
  summary["config"]["delta"] = base.delta;
  summary["config"]["alpha"] = base.alpha;
  summary["config"]["iters"] = base.max_iters;
  summary["config"]["log_stride"] = base.checkpoint_stride;
  summary["config"]["seeds"] = seeds;

  // One worker per seed; workers only touch their own slot, artifacts are
  // merged afterwards in seed order so output is deterministic.
  std::vector<PGMReport> reports(static_cast<std::size_t>(seeds));
  std::vector<ModelFreeStats> stats(static_cast<std::size_t>(seeds));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(seeds));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(seeds));
  for (long long k = 0; k < seeds; ++k)
    pool.emplace_back([&, k] {
      try {
        MultiEpisodicParams params = base;
        params.seed = cfg.seed + static_cast<std::uint64_t>(k);
        BlackBoxPlant session(R.plant);
        reports[k] = run_multi_episodic(session, R.cm, params, &stats[k]);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  for (auto& worker : pool) worker.join();
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);

  const Matrix K0 = Matrix::Zero(R.ioh.m, R.ioh.d());
  const double J0 = exact_cost_or_inf(R, K0);
  CsvWriter csv((dir / "trace.csv").string(), {"iter", "J", "seed"});
  Json per_seed = Json::array();
  double best_cost = std::numeric_limits<double>::infinity();
  const Matrix* best_gain = nullptr;
  for (long long k = 0; k < seeds; ++k) {
    const PGMReport& rep = reports[k];
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(k);
    csv.row(0LL, J0, seed);
    for (const auto& [it, gain] : rep.checkpoints)
      csv.row(it, exact_cost_or_inf(R, gain), seed);
    if (rep.checkpoints.empty() ||
        rep.checkpoints.back().first != rep.iterations)
      csv.row(rep.iterations, exact_cost_or_inf(R, rep.K), seed);
    const double J_exact = exact_cost_or_inf(R, rep.K);
    per_seed.push_back(Json{{"seed", seed},
                            {"final_cost", J_exact},
                            {"gap", gap_to_optimal(R, J_exact)},
                            {"episodes", stats[k].episodes},
                            {"failures", stats[k].failures},
                            {"plant_steps", stats[k].plant_steps}});
    if (J_exact < best_cost) {
      best_cost = J_exact;
      best_gain = &rep.K;
    }
  }
  csv.close();

  summary["per_seed"] = per_seed;
  summary["final_gain"] = matrix_to_json(*best_gain);
  summary["final_cost"] = best_cost;
  summary["gap"] = gap_to_optimal(R, best_cost);
  summary["realized_controller"] = controller_summary(*best_gain, R);
  std::cout << "multi-episodic: best gap = " << summary["gap"].get<double>()
            << " over " << seeds << " seed(s)" << '\n';
}

// Returns false when the trajectory destabilized (artifacts are still
// written; the caller turns it into the numerical-failure exit code).
bool drive_single_episodic(const CliConfig& cfg, const Resolved& R,
                           const fs::path& dir, Json& summary) {
  SingleEpisodicParams params;
  params.N = cfg.N >= 0 ? to_count(cfg.N, "--N")
             : R.preset ? R.preset->window_single_episodic
                        : params.N;
  params.delta = cfg.delta > 0 ? cfg.delta
                 : R.preset    ? R.preset->delta_single_episodic
                               : params.delta;
  params.alpha = cfg.alpha > 0 ? cfg.alpha
                 : R.preset    ? R.preset->alpha_single_episodic
                               : params.alpha;
  params.L = R.L;
  params.stationary_threshold = cfg.threshold >= 0 ? cfg.threshold
                                : R.preset ? R.preset->stationary_threshold
                                           : params.stationary_threshold;
  params.excite_sigma = cfg.sigma >= 0 ? cfg.sigma
                        : R.preset     ? R.preset->excite_sigma
                                       : params.excite_sigma;
  params.alpha_excited = cfg.alpha_excited > 0 ? cfg.alpha_excited
                         : R.preset            ? R.preset->alpha_excited
                                               : params.alpha_excited;
  params.excite_after = cfg.excite_after != -2 ? cfg.excite_after
                        : R.preset             ? R.preset->excite_after
                                               : params.excite_after;
  params.max_steps = cfg.max_steps >= 0
                         ? to_count(cfg.max_steps, "--max-steps")
                     : R.preset ? R.preset->max_steps_single_episodic
                                : params.max_steps;
  params.log_stride = cfg.log_stride > 0 ? cfg.log_stride : 1;
  params.seed = cfg.seed;
  summary["config"]["N"] = params.N;
  summary["config"]["delta"] = params.delta;
  summary["config"]["alpha"] = params.alpha;
  summary["config"]["stationary_threshold"] = params.stationary_threshold;
  summary["config"]["excite_sigma"] = params.excite_sigma;
  summary["config"]["alpha_excited"] = params.alpha_excited;
  summary["config"]["excite_after"] = params.excite_after;
  summary["config"]["max_steps"] = params.max_steps;
  summary["config"]["log_stride"] = params.log_stride;

  ModelFreeStats stats;
  std::vector<WindowSample> windows;
  BlackBoxPlant session(R.plant);
  const PGMReport rep = run_single_episodic(session, R.cm, params, &stats,
                                            &windows);

  CsvWriter csv((dir / "trace.csv").string(), {"t", "J", "y1"});
  for (const WindowSample& w : windows)
    csv.row(w.t, exact_cost_or_inf(R, w.K), w.y(0));
  csv.close();

  const double J_exact = exact_cost_or_inf(R, rep.K);
  summary["final_gain"] = matrix_to_json(rep.K);
  summary["final_cost"] = J_exact;
  summary["gap"] = gap_to_optimal(R, J_exact);
  summary["realized_controller"] = controller_summary(rep.K, R);
  summary["diagnostics"] = Json{{"plant_steps", stats.plant_steps},
                                {"updates", rep.iterations},
                                {"episodes", stats.episodes},
                                {"failures", stats.failures},
                                {"excitations", stats.excitations},
                                {"diverged", stats.diverged},
                                {"warnings", rep.warnings},
                                {"solver_seconds", rep.seconds}};
  std::cout << "single-episodic: J = " << J_exact
            << ", gap = " << summary["gap"].get<double>()
            << ", excitations = " << stats.excitations
            << (stats.diverged ? ", DIVERGED" : "") << '\n';
  return !stats.diverged;
}

void drive_realize(const CliConfig& cfg, const Resolved& R,
                   const fs::path& dir, Json& summary) {
  Matrix K = R.ref.K;
  if (!cfg.gain_file.empty()) K = load_gain_matrix(cfg.gain_file);
  const Index m = R.plant.m(), r = R.plant.r(), n = R.plant.n();
  DynamicController ctrl;
  try {
    ctrl = realize(K, R.L, m, r);
  } catch (const DimensionMismatch& e) {
    throw ConfigError(e.what());
  }
  const long long T = cfg.T;
  if (T < R.L) throw ConfigError("--T must cover the initial window");
  summary["config"]["T"] = T;
  summary["config"]["gain_file"] = cfg.gain_file;

  // Both variants start from the same random state and replay the same
  // input window, so they coincide exactly when K is the optimal gain.
  RandomStream stream(cfg.seed);
  Vector x0(n);
  for (Index i = 0; i < n; ++i) x0(i) = stream.normal();
  Matrix u_init(m, R.L);
  for (Index t = 0; t < R.L; ++t)
    for (Index i = 0; i < m; ++i) u_init(i, t) = stream.normal();

  const Matrix y_init = window_outputs(R.plant, x0, u_init);
  Vector v_L(R.L * (m + r));
  for (Index t = 0; t < R.L; ++t) {
    v_L.segment(t * m, m) = u_init.col(t);
    v_L.segment(R.L * m + t * r, r) = y_init.col(t);
  }
  ctrl.xi0 = initial_state(ctrl, v_L);
  save_json((dir / "controller.json").string(), controller_to_json(ctrl));

  const ClosedLoopTrace dyn =
      simulate_dynamic_closed_loop(R.plant, ctrl, x0, u_init, T);
  Matrix y_sf(r, T);
  Vector x = x0;
  for (Index t = 0; t < T; ++t) {
    y_sf.col(t) = R.plant.C * x;
    const Vector u =
        t < R.L ? Vector(u_init.col(t)) : Vector(R.ref.K_sf * x);
    x = (R.plant.A * x + R.plant.B * u).eval();
  }

  CsvWriter csv((dir / "trace.csv").string(), {"t", "y1", "y2", "variant"});
  for (Index t = 0; t < T; ++t)
    csv.row(t, dyn.Y(0, t), r > 1 ? dyn.Y(1, t) : 0.0,
            std::string("dynamic"));
  for (Index t = 0; t < T; ++t)
    csv.row(t, y_sf(0, t), r > 1 ? y_sf(1, t) : 0.0,
            std::string("state-feedback"));
  csv.close();

  double worst = 0.0;
  for (Index t = R.L; t < T; ++t)
    worst = std::max(worst, (dyn.Y.col(t) - y_sf.col(t)).norm());
  const double J_exact = exact_cost_or_inf(R, K);
  summary["final_gain"] = matrix_to_json(K);
  summary["final_cost"] = J_exact;
  summary["gap"] = gap_to_optimal(R, J_exact);
  summary["realized_controller"] = controller_to_json(ctrl);
  summary["diagnostics"] = Json{{"controller_order", ctrl.L * ctrl.m},
                                {"output_gap_after_window", worst}};
  std::cout << "realize: controller order " << ctrl.L * ctrl.m
            << ", output gap vs state feedback = " << worst << '\n';
}

void drive_diagnostics(const CliConfig& cfg, const Resolved& R,
                       const fs::path& dir, Json& summary) {
  Matrix K = R.ref.K;
  if (!cfg.gain_file.empty()) K = load_gain_matrix(cfg.gain_file);
  DiagnosticsParams params;
  params.delta = cfg.delta > 0 ? cfg.delta
                 : R.preset    ? R.preset->delta
                               : params.delta;
  params.N = cfg.N >= 0 ? to_count(cfg.N, "--N") : params.N;
  params.s = cfg.s >= 0 ? to_count(cfg.s, "--s") : params.s;
  const double alpha = cfg.alpha > 0 ? cfg.alpha
                       : R.preset    ? R.preset->alpha_multi_episodic
                                     : 5e-10;
  RandomStream stream(cfg.seed);
  params.v_max = empirical_v_max(R.proj, stream);
  summary["config"]["delta"] = params.delta;
  summary["config"]["N"] = params.N;
  summary["config"]["s"] = params.s;
  summary["config"]["alpha"] = alpha;
  summary["config"]["gain_file"] = cfg.gain_file;

  ComplexityDiagnostics diag;
  try {
    diag = complexity_diagnostics(R.ioh, R.proj, R.cm, K, params);
    // The tail bound is reported at o = zeta unless the caller pinned o;
    // at the default o = 0 the probability floor is always zero.
    params.o = cfg.o_knob >= 0 ? cfg.o_knob : diag.zeta;
    diag = complexity_diagnostics(R.ioh, R.proj, R.cm, K, params);
  } catch (const DimensionMismatch& e) {
    throw ConfigError(e.what());
  }
  const UpdateCertificate cert =
      update_certificate(R.ioh, R.proj, R.cm, K, R.ref.K, alpha, params);

  summary["config"]["o"] = params.o;
  summary["final_gain"] = matrix_to_json(K);
  summary["final_cost"] = diag.J;
  summary["gap"] = gap_to_optimal(R, diag.J);
  summary["diagnostics"] =
      Json{{"delta_st", diag.delta_st},
           {"epsilon_K", diag.epsilon_K},
           {"theta_o", diag.theta_o},
           {"chi", diag.chi},
           {"zeta", diag.zeta},
           {"prob_bound", diag.prob_bound},
           {"q", diag.q},
           {"v_max", diag.v_max},
           {"certificate", Json{{"epsilon_star", cert.epsilon_star},
                                {"o_bar", cert.o_bar},
                                {"theta_at_obar", cert.theta_at_obar},
                                {"prob_bound", cert.prob_bound},
                                {"beta", cert.beta},
                                {"beta_gap", cert.beta_gap},
                                {"beta_tilde", cert.beta_tilde}}}};
  std::cout << "diagnostics: delta_st = " << diag.delta_st
            << ", q = " << diag.q << ", o_bar = " << cert.o_bar << '\n';
  save_json((dir / "diagnostics.json").string(), summary["diagnostics"]);
}

int do_run(const CliConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<std::string> algorithms{
      "model-based", "multi-episodic", "single-episodic",
      "baseline",    "realize",        "diagnostics"};
  if (std::find(algorithms.begin(), algorithms.end(), cfg.algorithm) ==
      algorithms.end())
    throw ConfigError("unknown algorithm: " + cfg.algorithm);
  if (cfg.seeds < 1) throw ConfigError("--seeds must be at least 1");
  if (cfg.seeds > 1 && cfg.algorithm != "multi-episodic")
    throw ConfigError("--seeds > 1 is only meaningful for multi-episodic");

  const Resolved R = resolve(cfg);
  const fs::path dir = fs::path(R.output_root) / cfg.algorithm;
  fs::create_directories(dir);

  Json summary;
  summary["config"] = R.echo;
  summary["seed"] = cfg.seed;
  summary["J_star"] = R.ref.J_star;

  bool healthy = true;
  if (cfg.algorithm == "baseline")
    drive_baseline(cfg, R, dir, summary);
  else if (cfg.algorithm == "model-based")
    drive_model_based(cfg, R, dir, summary);
  else if (cfg.algorithm == "multi-episodic")
    drive_multi_episodic(cfg, R, dir, summary);
  else if (cfg.algorithm == "single-episodic")
    healthy = drive_single_episodic(cfg, R, dir, summary);
  else if (cfg.algorithm == "realize")
    drive_realize(cfg, R, dir, summary);
  else
    drive_diagnostics(cfg, R, dir, summary);

  summary["wall_clock_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  save_json((dir / "summary.json").string(), summary);
  std::cout << "artifacts in " << dir.string() << '\n';
  if (!healthy) {
    std::cerr << "numerical failure: trajectory destabilized; see "
              << (dir / "summary.json").string() << '\n';
    return 3;
  }
  return 0;
}

int do_validate(const CliConfig& cfg) {
  auto [plant, preset] = load_plant(cfg);
  const Index L = resolve_L(cfg, preset);
  auto [Q, R] = resolve_weights(cfg, plant, preset);
  std::vector<std::string> findings;

  const Matrix OL = observability_matrix(plant.A, plant.C, L);
  const Index rank = orthonormal_range(OL, 1e-9).rank;
  if (rank < plant.n()) {
    findings.push_back("rank O_" + std::to_string(L) + " < n: a window of " +
                       std::to_string(L) +
                       " steps cannot determine the state (rank " +
                       std::to_string(rank) + " of " +
                       std::to_string(plant.n()) + ")");
  } else if (cfg.alpha > 0 || cfg.delta > 0) {
    // Certified ranges are checked only for explicitly supplied values:
    // they are orders of magnitude more conservative than the step sizes
    // and radii that work in practice, so checking defaults would flag
    // every working configuration.
    IOHDynamics ioh = build_ioh(plant, L);
    Projection proj = default_projection(plant, ioh);
    CostModel cm = make_cost_model(ioh, proj, Q, R);
    OptimalReference ref = optimal_reference(plant, ioh, proj, Q, R);
    if (cfg.alpha > 0) {
      const double q =
          diagnostics(ioh, proj, cm, ref.K, cfg.alpha, ref.K).q;
      if (cfg.alpha >= 2.0 / q)
        findings.push_back("alpha >= 2/q: step size " +
                           format_sig(cfg.alpha) +
                           " is outside the certified range (0, " +
                           format_sig(2.0 / q) + ")");
    }
    if (cfg.delta > 0) {
      DiagnosticsParams params;
      params.delta = cfg.delta;
      if (cfg.N >= 0) params.N = to_count(cfg.N, "--N");
      if (cfg.s >= 0) params.s = to_count(cfg.s, "--s");
      RandomStream stream(cfg.seed);
      params.v_max = empirical_v_max(proj, stream);
      const double delta_st =
          complexity_diagnostics(ioh, proj, cm, ref.K, params).delta_st;
      if (cfg.delta > delta_st)
        findings.push_back("delta > delta_st: exploration radius " +
                           format_sig(cfg.delta) +
                           " exceeds the certified radius " +
                           format_sig(delta_st) + " at the optimal gain");
    }
  }

  for (const std::string& f : findings) std::cout << "finding: " << f << '\n';
  std::cout << "findings: " << findings.size() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"History-feedback policy-gradient experiment runner"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "Config file with [run] / [validate] sections; command-line "
                 "flags override file values");
  app.allow_config_extras(CLI::config_extras_mode::error);
  CliConfig cfg;

  const auto add_common = [&cfg](CLI::App* cmd) {
    cmd->add_option("--preset", cfg.preset, "Named benchmark configuration");
    cmd->add_option("--plant", cfg.plant_file, "Plant definition JSON file");
    cmd->add_option("--L", cfg.L, "History window length");
    cmd->add_option("--q-scale", cfg.q_scale,
                    "Output weight Q = q I (plant files only)");
    cmd->add_option("--r-scale", cfg.r_scale,
                    "Input weight R = r I (plant files only)");
    cmd->add_option("--alpha", cfg.alpha, "Gradient step size");
    cmd->add_option("--delta", cfg.delta, "Exploration radius");
    cmd->add_option("--s", cfg.s, "Episodes per update");
    cmd->add_option("--N", cfg.N, "Steps per episode window");
    cmd->add_option("--seed", cfg.seed, "Random stream seed");
  };

  CLI::App* run = app.add_subcommand("run", "Run one experiment");
  add_common(run);
  run->add_option("--algorithm", cfg.algorithm,
                  "model-based | multi-episodic | single-episodic | baseline "
                  "| realize | diagnostics");
  run->add_option("--iters", cfg.iters, "Gradient iterations");
  run->add_option("--max-steps", cfg.max_steps,
                  "Trajectory length (single-episodic)");
  run->add_option("--sigma", cfg.sigma, "Excitation noise covariance scale");
  run->add_option("--threshold", cfg.threshold,
                  "History norm that counts as stationary");
  run->add_option("--alpha-excited", cfg.alpha_excited,
                  "Step size in the excitation regime");
  run->add_option("--excite-after", cfg.excite_after,
                  "Step enabling excitation; -1 disables it");
  run->add_option("--T", cfg.T, "Closed-loop trace length (realize)");
  run->add_option("--o", cfg.o_knob,
                  "Tail-bound error threshold (diagnostics); default zeta");
  run->add_option("--gain-file", cfg.gain_file,
                  "JSON with the gain to realize or diagnose");
  run->add_option("--resume-from", cfg.resume_from,
                  "checkpoints.json to restart model-based descent from");
  run->add_option("--seeds", cfg.seeds,
                  "Seed fan-out count (multi-episodic)");
  run->add_option("--log-stride", cfg.log_stride, "Rows between trace lines");
  run->add_option("--output", cfg.output, "Artifact root directory")
      ->envname("IOHPG_OUTPUT_ROOT");

  CLI::App* validate =
      app.add_subcommand("validate", "Check a configuration without running");
  add_common(validate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) return do_run(cfg);
    return do_validate(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  }
}
