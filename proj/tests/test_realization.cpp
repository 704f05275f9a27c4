#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <iohpg/baseline.hpp>
#include <iohpg/realization.hpp>
#include <iohpg/presets.hpp>

#include "test_util.hpp"

using namespace iohpg;

namespace {

// Random minimal Schur plant; redraws until the constructor accepts.
PlantModel random_minimal_plant(RandomStream& rs, Index n, Index m, Index r) {
  for (;;) {
    try {
      return PlantModel(testutil::random_schur(rs, n, 0.7),
                        testutil::random_matrix(rs, n, m),
                        testutil::random_matrix(rs, r, n));
    } catch (const Error&) {
    }
  }
}

// Smallest window length whose observability map pins the hidden state.
Index valid_window(const PlantModel& plant) {
  for (Index L = 1; L <= plant.n(); ++L) {
    if (orthonormal_range(observability_matrix(plant.A, plant.C, L), 1e-9)
            .rank == plant.n())
      return L;
  }
  throw RankDeficient("valid_window: no window length pins the state");
}

// Random gain whose reduced closed loop is Schur.
Matrix random_stabilizing_gain(RandomStream& rs, const PlantModel& plant,
                               const IOHDynamics& ioh,
                               const Projection& proj) {
  for (double scale = 0.05;; scale /= 2) {
    const Matrix K = scale * testutil::random_matrix(rs, ioh.m, ioh.d());
    if (spectral_radius(project_closed_loop(ioh, proj, K).ThetaHatK) < 1.0)
      return K;
  }
}

double trace_gap(const ClosedLoopTrace& a, const ClosedLoopTrace& b) {
  double worst = 0;
  for (Index t = 0; t < a.U.cols(); ++t)
    worst = std::max(worst, (a.U.col(t) - b.U.col(t)).norm() +
                                (a.Y.col(t) - b.Y.col(t)).norm());
  return worst;
}

double trace_energy(const ClosedLoopTrace& tr) { return tr.U.norm() + tr.Y.norm(); }

}  // namespace

TEST_CASE("companion assembly places every block where the partition says") {
  // One input, two outputs, window two: gain [A2, A1, B2, B1].
  Matrix K(1, 6);
  K << 0.3, -0.7, 1.5, 2.5, -3.5, 4.5;
  const auto ctrl = realize(K, 2, 1, 2);
  Matrix Xi(2, 2), Lambda(2, 2), Omega(1, 2);
  Xi << 0.0, 0.3, 1.0, -0.7;
  Lambda << 1.5, 2.5, -3.5, 4.5;
  Omega << 0.0, 1.0;
  CHECK(ctrl.Xi == Xi);
  CHECK(ctrl.Lambda == Lambda);
  CHECK(ctrl.Omega == Omega);
  CHECK(ctrl.xi0.size() == 0);

  // Two inputs: the subdiagonal identity is blockwise.
  RandomStream rs(13);
  const Matrix K2 = testutil::random_matrix(rs, 2, 2 * (2 + 1));
  const auto wide = realize(K2, 2, 2, 1);
  CHECK(wide.Xi.block(2, 0, 2, 2) == Matrix::Identity(2, 2));
  CHECK(wide.Xi.block(0, 0, 2, 2) == Matrix::Zero(2, 2));
  CHECK(wide.Xi.block(0, 2, 2, 2) == K2.block(0, 0, 2, 2));
  CHECK(wide.Xi.block(2, 2, 2, 2) == K2.block(0, 2, 2, 2));
  CHECK(wide.Lambda.block(0, 0, 2, 1) == K2.block(0, 4, 2, 1));
  CHECK(wide.Lambda.block(2, 0, 2, 1) == K2.block(0, 5, 2, 1));
  CHECK(wide.Omega.block(0, 2, 2, 2) == Matrix::Identity(2, 2));

  CHECK_THROWS_AS(realize(K, 2, 1, 1), DimensionMismatch);
  CHECK_THROWS_AS(realize(K, 0, 1, 2), DimensionMismatch);
}

TEST_CASE("single-lag realization is the gain itself") {
  Matrix K(1, 2);
  K << 0.4, -0.9;
  const auto ctrl = realize(K, 1, 1, 1);
  CHECK(ctrl.Xi == K.block(0, 0, 1, 1));
  CHECK(ctrl.Lambda == K.block(0, 1, 1, 1));
  CHECK(ctrl.Omega == Matrix::Identity(1, 1));

  // The window is one pair, so the replay state is exactly the stored input.
  Vector v(2);
  v << 1.7, -0.2;
  const Vector xi0 = initial_state(ctrl, v);
  REQUIRE(xi0.size() == 1);
  CHECK(xi0(0) == doctest::Approx(1.7).epsilon(1e-12));
}

TEST_CASE("initial state replays the stored window") {
  RandomStream rs(17);
  for (Index L : {2, 3}) {
    const Index m = 1, r = 2;
    const Matrix K = testutil::random_matrix(rs, m, L * (m + r));
    const auto ctrl = realize(K, L, m, r);
    const Vector v_L = testutil::random_matrix(rs, L * (m + r), 1);
    Vector xi = initial_state(ctrl, v_L);
    for (Index t = 0; t < L; ++t) {
      const Vector u = ctrl.Omega * xi;
      CHECK((u - v_L.segment(t * m, m)).norm() < 1e-9);
      xi = ctrl.Xi * xi + ctrl.Lambda * v_L.segment(L * m + t * r, r);
    }
  }

  const auto ctrl = realize(Matrix::Zero(1, 6).eval(), 2, 1, 2);
  CHECK_THROWS_AS(initial_state(ctrl, Vector::Zero(5).eval()),
                  DimensionMismatch);
}

TEST_CASE("hand-built controllers without observability are rejected") {
  // Controllers assembled by realize always have an invertible map (block
  // anti-triangular with unit blocks); only a corrupted one can fail.
  auto ctrl = realize(Matrix::Zero(1, 6).eval(), 2, 1, 2);
  ctrl.Omega.setZero();
  CHECK_THROWS_AS(initial_state(ctrl, Vector::Zero(6).eval()),
                  SingularObservability);
}

TEST_CASE("dynamic loop matches the static history loop on random plants") {
  RandomStream rs(23);
  const Index T = 200;
  for (int inst = 0; inst < 20; ++inst) {
    const Index n = 2 + Index(inst % 3);
    const Index m = 1 + Index(inst % 2);
    const Index r = 1 + Index((inst / 2) % 2);
    const PlantModel plant = random_minimal_plant(rs, n, m, r);
    const Index L = valid_window(plant);
    const auto ioh = build_ioh(plant, L);
    const auto proj = default_projection(plant, ioh);
    const Matrix K = random_stabilizing_gain(rs, plant, ioh, proj);

    const Vector x0 = testutil::random_matrix(rs, n, 1);
    const Matrix u_init = testutil::random_matrix(rs, m, L);
    const auto ctrl = realize(K, L, m, r);
    const auto dyn = simulate_dynamic_closed_loop(plant, ctrl, x0, u_init, T);
    const auto ref = simulate_ioh_closed_loop(plant, K, L, x0, u_init, T);
    CHECK(trace_gap(dyn, ref) <= 1e-8 * (1.0 + trace_energy(ref)));
    // The replayed opening inputs equal the window that seeded the state.
    for (Index t = 0; t < L; ++t)
      CHECK((dyn.U.col(t) - u_init.col(t)).norm() < 1e-9);
  }
}

TEST_CASE("zero gain controller goes quiet after the window") {
  const ExperimentPreset& preset = reference_preset();
  const auto ioh = build_ioh(preset.plant, 2);
  RandomStream rs(29);
  const Vector x0 = testutil::random_matrix(rs, 3, 1);
  const Matrix u_init = testutil::random_matrix(rs, 1, 2);
  const auto ctrl = realize(Matrix::Zero(1, ioh.d()).eval(), 2, 1, 2);
  const auto dyn = simulate_dynamic_closed_loop(preset.plant, ctrl, x0, u_init, 50);
  for (Index t = 2; t < 50; ++t) CHECK(std::abs(dyn.U(0, t)) < 1e-12);
}

TEST_CASE("realized optimal gain matches the state-feedback trajectory") {
  const ExperimentPreset& preset = reference_preset();
  const auto ioh = build_ioh(preset.plant, preset.L);
  const auto proj = default_projection(preset.plant, ioh);
  const auto ref =
      optimal_reference(preset.plant, ioh, proj, preset.Q, preset.R);
  const auto ctrl = realize(ref.K, preset.L, Index(1), Index(2));

  RandomStream rs(37);
  const Vector x0 = testutil::random_matrix(rs, 3, 1);
  const Matrix u_init = testutil::random_matrix(rs, 1, preset.L);
  const Index T = 200;
  const auto dyn =
      simulate_dynamic_closed_loop(preset.plant, ctrl, x0, u_init, T);

  // State feedback u = K_sf x from the window's end onward.
  ClosedLoopTrace sf;
  sf.U.resize(1, T);
  sf.Y.resize(2, T);
  sf.X.resize(3, T);
  Vector x = x0;
  for (Index t = 0; t < T; ++t) {
    const Vector u =
        t < preset.L ? Vector(u_init.col(t)) : Vector(ref.K_sf * x);
    sf.U.col(t) = u;
    sf.Y.col(t) = preset.plant.C * x;
    sf.X.col(t) = x;
    x = preset.plant.A * x + preset.plant.B * u;
  }
  CHECK(trace_gap(dyn, sf) <= 1e-8 * (1.0 + trace_energy(sf)));
}

TEST_CASE("simulators validate their inputs") {
  const ExperimentPreset& preset = reference_preset();
  const auto ioh = build_ioh(preset.plant, 2);
  const auto ctrl = realize(Matrix::Zero(1, ioh.d()).eval(), 2, 1, 2);
  const Vector x0 = Vector::Zero(3);

  CHECK_THROWS_AS(simulate_dynamic_closed_loop(preset.plant, ctrl, x0,
                                               Matrix::Zero(1, 3).eval(), 10),
                  DimensionMismatch);
  CHECK_THROWS_AS(simulate_ioh_closed_loop(preset.plant,
                                           Matrix::Zero(1, 5).eval(), 2, x0,
                                           Matrix::Zero(1, 2).eval(), 10),
                  DimensionMismatch);
  auto stale = ctrl;
  stale.xi0 = Vector::Zero(3);
  CHECK_THROWS_AS(simulate_dynamic_closed_loop(preset.plant, stale, x0,
                                               Matrix::Zero(1, 2).eval(), 10),
                  DimensionMismatch);

  const auto empty = simulate_dynamic_closed_loop(preset.plant, ctrl, x0,
                                                  Matrix::Zero(1, 2).eval(), 0);
  CHECK(empty.U.cols() == 0);

  const auto one = simulate_ioh_closed_loop(preset.plant,
                                            Matrix::Zero(1, 6).eval(), 2, x0,
                                            Matrix::Ones(1, 2).eval(), 3);
  CHECK(one.X.col(0) == x0);
  CHECK(one.U(0, 0) == 1.0);
}
