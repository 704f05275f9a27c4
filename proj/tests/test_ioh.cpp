#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "iohpg/ioh.hpp"
#include "iohpg/presets.hpp"
#include "test_util.hpp"

using namespace iohpg;

namespace {

PlantModel random_plant(RandomStream& stream, Index n, Index m, Index r,
                        double radius = 0.9) {
  for (;;) {
    try {
      return PlantModel(testutil::random_schur(stream, n, radius),
                        testutil::random_matrix(stream, n, m),
                        testutil::random_matrix(stream, r, n));
    } catch (const RankDeficient&) {
    }
  }
}

// Smallest L for which the output window pins the state.
Index minimal_L(const PlantModel& plant) {
  for (Index L = 1; L <= plant.n(); ++L)
    if (check_L(plant, L)) return L;
  throw RankDeficient("minimal_L: plant not observable");
}

// Rollout long enough to fill the history, returning the trace and the
// buffer-built v(t) sequence for t = L .. steps.
struct VTrace {
  StateTrace trace;
  std::vector<Vector> v;  // v[k] is the history vector at time L + k
};

VTrace simulate_history(RandomStream& stream, const PlantModel& plant,
                        Index L, int steps) {
  VTrace out;
  const Vector x0 = sample_gaussian(stream, Matrix::Identity(plant.n(), plant.n()));
  std::vector<Vector> u;
  for (int t = 0; t < steps; ++t)
    u.push_back(testutil::random_matrix(stream, plant.m(), 1));
  out.trace = rollout(plant, x0, u);
  IOHBuffer buffer(L, plant.m(), plant.r());
  for (int t = 0; t < steps; ++t) {
    buffer.push(out.trace.u[t], out.trace.y[t]);
    if (buffer.filled()) out.v.push_back(buffer.current_v());
  }
  return out;
}

}  // namespace

TEST_CASE("build_ioh: shift structure is exact") {
  RandomStream stream(21);
  const PlantModel plant = random_plant(stream, 3, 2, 2);
  const Index L = minimal_L(plant);
  const auto ioh = build_ioh(plant, L);
  const Index m = plant.m();
  const Index r = plant.r();
  const Index d = ioh.d();
  REQUIRE(d == L * (m + r));

  // Input-history shift rows.
  CHECK((ioh.Theta.block(0, m, (L - 1) * m, (L - 1) * m) -
         Matrix::Identity((L - 1) * m, (L - 1) * m))
            .norm() == 0.0);
  // The row block overwritten by the current input is exactly zero.
  CHECK(ioh.Theta.middleRows((L - 1) * m, m).norm() == 0.0);
  // Output-history shift rows.
  CHECK((ioh.Theta.block(L * m, L * m + r, (L - 1) * r, (L - 1) * r) -
         Matrix::Identity((L - 1) * r, (L - 1) * r))
            .norm() == 0.0);
  // Newest output row block equals C Gamma.
  CHECK((ioh.Theta.bottomRows(r) - plant.C * ioh.Gamma).norm() == 0.0);
  // Pi holds a single identity block at the newest input slot.
  Matrix Pi_expected = Matrix::Zero(d, m);
  Pi_expected.block((L - 1) * m, 0, m, m).setIdentity();
  CHECK((ioh.Pi - Pi_expected).norm() == 0.0);
}

TEST_CASE("build_ioh rejects windows that cannot pin the state") {
  const auto& preset = reference_preset();
  CHECK_THROWS_AS(build_ioh(preset.plant, 1), RankDeficient);
}

TEST_CASE("history recursion and state recovery on random plants") {
  RandomStream stream(22);
  for (int rep = 0; rep < 8; ++rep) {
    const PlantModel plant =
        random_plant(stream, 2 + rep % 4, 1 + rep % 2, 1 + rep % 3);
    const Index L = minimal_L(plant);
    const auto ioh = build_ioh(plant, L);
    const auto sim = simulate_history(stream, plant, L, 40);
    for (std::size_t k = 0; k + 1 < sim.v.size(); ++k) {
      const Index t = L + static_cast<Index>(k);
      // x(t) = Gamma v(t)
      CHECK((ioh.Gamma * sim.v[k] - sim.trace.x[t]).norm() <=
            1e-9 * (1.0 + sim.trace.x[t].norm()));
      // v(t+1) = Theta v(t) + Pi u(t)
      const Vector v_next = ioh.Theta * sim.v[k] + ioh.Pi * sim.trace.u[t];
      CHECK((v_next - sim.v[k + 1]).norm() <= 1e-9 * (1.0 + sim.v[k + 1].norm()));
      // y(t) = C Gamma v(t)
      CHECK((plant.C * ioh.Gamma * sim.v[k] - sim.trace.y[t]).norm() <=
            1e-9 * (1.0 + sim.trace.y[t].norm()));
    }
  }
}

TEST_CASE("reachable_projection on the reference preset") {
  const auto& preset = reference_preset();
  const auto ioh = build_ioh(preset.plant, preset.L);
  const auto proj = default_projection(preset.plant, ioh);
  CHECK(proj.P.cols() == 5);
  CHECK((proj.P.transpose() * proj.P - Matrix::Identity(5, 5)).norm() <= 1e-12);

  // Default second moment is the history-structure outer product.
  const Matrix S = script_p(preset.plant, preset.L);
  CHECK((proj.Phi - S * S.transpose()).norm() <= 1e-12 * (1.0 + proj.Phi.norm()));

  Eigen::SelfAdjointEigenSolver<Matrix> eig(proj.PhiHat);
  CHECK(eig.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("reachable_projection rejects moments off the subspace") {
  const auto& preset = reference_preset();
  const auto ioh = build_ioh(preset.plant, preset.L);
  const Matrix bad = Matrix::Identity(ioh.d(), ioh.d());
  CHECK_THROWS_AS(reachable_projection(ioh, PhiSpec::custom(bad)), PhiMismatch);

  // A custom moment supported on the subspace passes.
  const auto proj = default_projection(preset.plant, ioh);
  const Matrix good = proj.P * proj.P.transpose();
  const auto custom = reachable_projection(ioh, PhiSpec::custom(good));
  CHECK((custom.PhiHat - Matrix::Identity(5, 5)).norm() <= 1e-10);
}

TEST_CASE("simulated histories stay in the reachable subspace") {
  RandomStream stream(23);
  for (int rep = 0; rep < 6; ++rep) {
    const PlantModel plant =
        random_plant(stream, 2 + rep % 3, 1 + rep % 2, 1 + rep % 2);
    const Index L = minimal_L(plant) + rep % 2;
    const auto ioh = build_ioh(plant, L);
    const auto proj = default_projection(plant, ioh);
    CHECK(proj.P.cols() == ioh.p());
    const auto sim = simulate_history(stream, plant, L, 30);
    for (const Vector& v : sim.v) {
      CHECK((v - proj.P * (proj.P.transpose() * v)).norm() <=
            1e-8 * (1.0 + v.norm()));
    }
  }
}

TEST_CASE("project_closed_loop: open loop and lossless reduction") {
  const auto& preset = reference_preset();
  const auto ioh = build_ioh(preset.plant, preset.L);
  const auto proj = default_projection(preset.plant, ioh);
  const Matrix K0 = Matrix::Zero(ioh.m, ioh.d());
  const auto loop = project_closed_loop(ioh, proj, K0);
  CHECK((loop.ThetaHatK - proj.P.transpose() * ioh.Theta * proj.P).norm() <=
        1e-13);
  CHECK(spectral_radius(loop.ThetaHatK) < 1.0);
  CHECK((loop.GammaHat - ioh.Gamma * proj.P).norm() == 0.0);

  // Reduced trajectories reproduce full histories: v(t) = P vhat(t).
  RandomStream stream(24);
  Vector z = sample_gaussian(stream, Matrix::Identity(ioh.p(), ioh.p()));
  const Matrix S = script_p(preset.plant, preset.L);
  Vector v = S * z;
  Vector vhat = proj.P.transpose() * v;
  const Matrix PiHat = proj.P.transpose() * ioh.Pi;
  for (int t = 0; t < 50; ++t) {
    CHECK((proj.P * vhat - v).norm() <= 1e-9 * (1.0 + v.norm()));
    const Vector u = testutil::random_matrix(stream, ioh.m, 1);
    v = ioh.Theta * v + ioh.Pi * u;
    vhat = loop.ThetaHatK * vhat + PiHat * u;
  }
}

TEST_CASE("IOHBuffer: ordering, underfill, and recursion consistency") {
  IOHBuffer buf1(1, 1, 1);
  buf1.push(Vector::Constant(1, 2.0), Vector::Constant(1, 3.0));
  const Vector v1 = buf1.current_v();
  CHECK(v1(0) == 2.0);
  CHECK(v1(1) == 3.0);

  IOHBuffer buf2(2, 1, 1);
  buf2.push(Vector::Constant(1, 1.0), Vector::Constant(1, 10.0));
  CHECK_THROWS_AS(buf2.current_v(), Underfilled);
  buf2.push(Vector::Constant(1, 2.0), Vector::Constant(1, 20.0));
  const Vector v2 = buf2.current_v();
  CHECK(v2(0) == 1.0);  // oldest input first
  CHECK(v2(1) == 2.0);
  CHECK(v2(2) == 10.0);  // outputs after inputs, oldest first
  CHECK(v2(3) == 20.0);

  // Buffer-built histories match the lifted recursion exactly.
  RandomStream stream(25);
  const auto& preset = reference_preset();
  const auto ioh = build_ioh(preset.plant, preset.L);
  const auto sim = simulate_history(stream, preset.plant, preset.L, 30);
  for (std::size_t k = 0; k + 1 < sim.v.size(); ++k) {
    const Vector v_next =
        ioh.Theta * sim.v[k] + ioh.Pi * sim.trace.u[preset.L + k];
    CHECK((v_next - sim.v[k + 1]).norm() <= 1e-12 * (1.0 + sim.v[k + 1].norm()));
  }
}

TEST_CASE("estimate_L finds the minimal window on sampled data") {
  const auto& preset = reference_preset();
  RandomStream stream(26);
  std::vector<Matrix> moments;
  const int samples = 10000;
  for (Index L = 1; L <= 4; ++L) {
    const Index d = L * (preset.plant.m() + preset.plant.r());
    Matrix moment = Matrix::Zero(d, d);
    for (int i = 0; i < samples; ++i) {
      // Fresh window: random start state and persistently exciting inputs.
      const Vector x0 =
          sample_gaussian(stream, Matrix::Identity(3, 3));
      std::vector<Vector> u;
      for (Index t = 0; t < L; ++t)
        u.push_back(testutil::random_matrix(stream, 1, 1));
      const auto trace = rollout(preset.plant, x0, u);
      IOHBuffer buffer(L, 1, 2);
      for (Index t = 0; t < L; ++t) buffer.push(trace.u[t], trace.y[t]);
      const Vector v = buffer.current_v();
      moment += v * v.transpose();
    }
    moment /= static_cast<double>(samples);
    moments.push_back(moment);
  }
  CHECK(estimate_L(moments, preset.plant.m()) == 2);

  // Noiseless counterpart: rank of the exact moment at the true L is Lm+n,
  // and it grows strictly below the observability index.
  const Matrix S2 = script_p(preset.plant, 2);
  CHECK(orthonormal_range(Matrix(S2 * S2.transpose())).rank == 5);
  const Matrix S1 = script_p(preset.plant, 1);
  CHECK(orthonormal_range(Matrix(S1 * S1.transpose())).rank == 3);

  CHECK_THROWS_AS(estimate_L(std::vector<Matrix>{moments[0]}, 1),
                  Inconclusive);
}
