#include "obc/coupling.hpp"
#include "common.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <Eigen/QR>

using namespace obc;
using testing_support::small_problem;

namespace {

double rel(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

/// Full-order models of both subdomains for a problem kept alive by the caller.
struct FullPair {
  SubdomainSolver f1, f2;
  FullStateModel s1, s2;
  FullAdjointModel a1, a2;
  explicit FullPair(const ProblemSpec& p) : f1(p, 1), f2(p, 2), s1(f1), s2(f2), a1(f1), a2(f2) {}
  CoupledModels models() const { return {s1, s2, a1, a2, f1.interface_mass().mass}; }
};

DenseMatrix full_orthonormal(int n, unsigned seed) {
  std::srand(seed);
  Eigen::HouseholderQR<DenseMatrix> qr(DenseMatrix::Random(n, n));
  return qr.householderQ() * DenseMatrix::Identity(n, n);
}

}  // namespace

TEST(Objective, Examples) {
  const ProblemSpec p = small_problem(8, 1, true);
  const SubdomainSolver s(p, 1);
  const SparseMatrix& mg = s.interface_mass().mass;
  const Vector z = Vector::Zero(7), one = Vector::Ones(7);
  EXPECT_EQ(objective(z, z, 1.0, mg), 0.0);
  // 1D oracle: 1^T M 1 over the interior hats of a unit interface with h = 1/8.
  const double hats = oracle::interface_mass(7, 0.125).sum();
  EXPECT_NEAR(objective(one, z, 0.0, mg), 0.5 * hats, 1e-15);
  // Sum of hats is 1 except on the two end elements, where it ramps: 1 - 2h + 2h/3.
  EXPECT_NEAR(hats, 1.0 - 4.0 * 0.125 / 3.0, 1e-15);
  const Vector g = one / std::sqrt(hats);
  EXPECT_NEAR(objective(z, g, 2.0, mg), 1.0, 1e-14);
}

TEST(ControlGradient, Examples) {
  const Vector t = Vector::Random(5), g = Vector::Random(5);
  EXPECT_EQ(control_gradient(t, t, g, 0.0).norm(), 0.0);
  EXPECT_EQ(control_gradient(Vector::Zero(5), Vector::Zero(5), g, 0.25), 0.25 * g);
  const ProblemSpec p = small_problem(6, 1, false);
  const SubdomainSolver s1(p, 1), s2(p, 2);
  const Vector mu1 = Vector::Random(s1.free_count()), mu2 = Vector::Random(s2.free_count());
  const Vector g5 = Vector::Random(5);
  EXPECT_EQ(control_gradient(mu1, mu2, g5, 0.1, p.decomposition.interface),
            control_gradient(s1.trace(mu1), s2.trace(mu2), g5, 0.1));
}

TEST(GradientCheck, MatchesCentralDifferencesWithoutStabilization) {
  const ProblemSpec p = small_problem(8, 1, false);
  const FullPair fp(p);
  const Vector prev1 = fp.f1.initial_state(), prev2 = fp.f2.initial_state();
  for (unsigned seed : {1u, 2u, 3u}) {
    std::srand(seed);
    const Vector g = Vector::Random(7);
    for (double delta : {0.0, 1e-3}) {
      EXPECT_LE(fd_gradient_check(fp.models(), prev1, prev2, 1, g, delta, 1e-6, 7, seed), 1e-5);
    }
  }
}

TEST(GradientCheck, QuadraticFunctionalIsInsensitiveToStep) {
  const ProblemSpec p = small_problem(8, 1, false);
  const FullPair fp(p);
  const Vector g = Vector::Random(7);
  for (double eps : {1e-2, 1e-4, 1e-1})
    EXPECT_LE(fd_gradient_check(fp.models(), fp.f1.initial_state(), fp.f2.initial_state(), 1, g, 0.0, eps, 7, 5),
              1e-7);
  EXPECT_THROW(fd_gradient_check(fp.models(), fp.f1.initial_state(), fp.f2.initial_state(), 1, g, 0.0, 0.0, 1, 1),
               std::invalid_argument);
}

TEST(Descent, FixedPointExitsWithoutIterations) {
  const ProblemSpec p = small_problem(8, 2, false, 1e-2, 0.05);
  const FullPair fp(p);
  const Trajectory t = monolithic_solve(p);
  const Decomposition& d = p.decomposition;
  const Vector a1 = restrict_to_subdomain(d, 1, t.states[0]), b1 = restrict_to_subdomain(d, 1, t.states[1]);
  const Vector a2 = restrict_to_subdomain(d, 2, t.states[0]);
  const Vector g = fp.f1.flux_from_residual(a1, b1, fp.f1.forcing(1));
  CouplingConfig cfg;
  cfg.delta = 0.0;
  cfg.tol = 1e-20;
  const TimestepResult r = descent_timestep(fp.models(), a1, a2, 1, g, cfg);
  EXPECT_EQ(r.stats.iterations, 0);
  EXPECT_LE(r.stats.final_objective, 1e-20);
  EXPECT_TRUE(r.stats.converged);
  EXPECT_LE(rel(r.u1, b1), 1e-10);
}

TEST(Descent, ZeroDeltaUpdateIsPlainGradientStep) {
  const ProblemSpec p = small_problem(6, 1, false);
  const FullPair fp(p);
  const Vector u1 = fp.f1.initial_state(), u2 = fp.f2.initial_state();
  CouplingConfig cfg;
  cfg.delta = 0.0;
  cfg.max_iters = 1;
  cfg.tol = 1e-300;
  const Vector g0 = Vector::Zero(5);
  const TimestepResult r = descent_timestep(fp.models(), u1, u2, 1, g0, cfg);
  ASSERT_EQ(r.stats.iterations, 1);
  const Vector jump = fp.f1.trace(fp.f1.state_step(u1, g0, fp.f1.forcing(1))) -
                      fp.f2.trace(fp.f2.state_step(u2, g0, fp.f2.forcing(1)));
  const Vector dir = fp.f1.trace(fp.f1.adjoint_solve(jump)) - fp.f2.trace(fp.f2.adjoint_solve(jump));
  const double alpha = cfg.alpha * std::pow(0.5, r.stats.halvings);
  const Vector expect = g0 - alpha * dir;
  EXPECT_LE((r.g - expect).norm(), 1e-14 * expect.norm());
}

TEST(Descent, NonConvergenceIsFlaggedNotFatal) {
  const ProblemSpec p = small_problem(8, 2, true);
  const FullPair fp(p);
  CouplingConfig cfg;
  cfg.max_iters = 2;
  const TransientResult r = run_transient(fp.models(), 2, cfg);
  ASSERT_EQ(r.stats.size(), 2u);
  EXPECT_FALSE(r.all_converged());
  EXPECT_EQ(r.stats[0].iterations, 2);
}

TEST(Descent, AcceptedObjectivesStrictlyDecrease) {
  for (bool supg : {false, true}) {
    const ProblemSpec p = small_problem(8, 5, supg, 1e-3, 0.02);
    const FullPair fp(p);
    CouplingConfig cfg;
    cfg.tol = 1e-12;
    cfg.record_objectives = true;
    const TransientResult r = run_transient(fp.models(), 5, cfg);
    for (const auto& s : r.stats) {
      ASSERT_EQ(static_cast<int>(s.objectives.size()), s.iterations + 1);
      for (std::size_t k = 1; k < s.objectives.size(); ++k) EXPECT_LT(s.objectives[k], s.objectives[k - 1]);
    }
  }
}

TEST(Descent, ConfigValidation) {
  CouplingConfig cfg;
  cfg.alpha = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.tol = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.delta = -1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Transient, ZeroDataStaysZero) {
  ProblemSpec p = small_problem(6, 4, true);
  p.initial = [](double, double, double) { return 0.0; };
  const FullPair fp(p);
  const TransientResult r = run_transient(fp.models(), 4, CouplingConfig{});
  for (const auto& g : r.controls) EXPECT_EQ(g.norm(), 0.0);
  for (const auto& s : r.stats) EXPECT_LE(s.iterations, 1);
  EXPECT_EQ(r.u1_final.norm(), 0.0);
  EXPECT_EQ(r.u2_final.norm(), 0.0);
}

TEST(Transient, FullOrderCouplingMatchesMonolithicOn8x8) {
  for (bool supg : {false, true}) {
    const ProblemSpec p = small_problem(8, 5, supg, 1e-2, 0.02);
    const FullPair fp(p);
    CouplingConfig cfg;
    cfg.tol = 1e-12;
    const TransientResult r = run_transient(fp.models(), 5, cfg);
    EXPECT_TRUE(r.all_converged());
    const Trajectory t = monolithic_solve(p);
    const Decomposition& d = p.decomposition;
    EXPECT_LE(rel(r.u1_final, restrict_to_subdomain(d, 1, t.states[5])), 1e-5);
    EXPECT_LE(rel(r.u2_final, restrict_to_subdomain(d, 2, t.states[5])), 1e-5);
  }
}

TEST(Transient, FullRankReducedBackendsReproduceFullOrderIterates) {
  const ProblemSpec p = small_problem(8, 4, true, 1e-3, 0.02);
  const FullPair fp(p);
  auto r1 = std::make_shared<const ReducedOperatorSet>(
      reduce_operators(fp.f1, full_orthonormal(fp.f1.free_count(), 1), full_orthonormal(fp.f1.free_count(), 2)));
  auto r2 = std::make_shared<const ReducedOperatorSet>(
      reduce_operators(fp.f2, full_orthonormal(fp.f2.free_count(), 3), full_orthonormal(fp.f2.free_count(), 4)));
  const ReducedStateModel rs1(fp.f1, r1), rs2(fp.f2, r2);
  const ReducedAdjointModel ra1(r1), ra2(r2);
  CouplingConfig cfg;
  cfg.tol = 1e-14;
  cfg.record_objectives = true;
  const TransientResult full = run_transient(fp.models(), 4, cfg);
  const CoupledModels rom{rs1, rs2, ra1, ra2, fp.f1.interface_mass().mass};
  const TransientResult red = run_transient(rom, 4, cfg);
  const CoupledModels mixed{rs1, fp.s2, fp.a1, ra2, fp.f1.interface_mass().mass};
  const TransientResult mix = run_transient(mixed, 4, cfg);
  for (const TransientResult* other : {&red, &mix}) {
    ASSERT_EQ(other->stats.size(), full.stats.size());
    for (std::size_t n = 0; n < full.stats.size(); ++n) {
      ASSERT_EQ(other->stats[n].iterations, full.stats[n].iterations) << "step " << n + 1;
      for (std::size_t k = 0; k < full.stats[n].objectives.size(); ++k) {
        const double a = full.stats[n].objectives[k], b = other->stats[n].objectives[k];
        EXPECT_LE(std::abs(a - b), 1e-10 * full.stats[n].objectives.front());
      }
      EXPECT_LE(rel(other->controls[n], full.controls[n]), 1e-10);
    }
    EXPECT_LE(rel(other->u1_final, full.u1_final), 1e-10);
    EXPECT_LE(rel(other->u2_final, full.u2_final), 1e-10);
  }
}

TEST(Transient, AdjointObserverSeesEveryGradientEvaluation) {
  const ProblemSpec p = small_problem(6, 3, true);
  const FullPair fp(p);
  int calls = 0;
  std::vector<int> steps;
  CouplingConfig cfg;
  cfg.tol = 1e-12;
  const TransientResult r = run_transient(fp.models(), 3, cfg, [&](int n, const Vector& mu1, const Vector& mu2) {
    ++calls;
    steps.push_back(n);
    EXPECT_EQ(mu1.size(), fp.f1.free_count());
    EXPECT_EQ(mu2.size(), fp.f2.free_count());
  });
  EXPECT_EQ(calls, r.total_iterations());
  EXPECT_TRUE(std::is_sorted(steps.begin(), steps.end()));
}

TEST(Transient, ObserverDoesNotChangeIterates) {
  const ProblemSpec p = small_problem(8, 3, true);
  const FullPair fp(p);
  CouplingConfig cfg;
  cfg.tol = 1e-13;
  const TransientResult a = run_transient(fp.models(), 3, cfg);
  const TransientResult b = run_transient(fp.models(), 3, cfg, [](int, const Vector&, const Vector&) {});
  for (std::size_t n = 0; n < a.stats.size(); ++n) {
    EXPECT_EQ(a.stats[n].iterations, b.stats[n].iterations);
    EXPECT_LE(rel(a.controls[n], b.controls[n]), 1e-12);
  }
}
