#pragma once

// Optimization-based coupling driver. At every time step the interface flux g
// is found by gradient descent on
//   J(g) = 1/2 |u1 - u2|^2_{Gamma0} + delta/2 |g|^2_{Gamma0}
// with the gradient supplied by the two subdomain adjoints. Each subdomain's
// state and adjoint may independently be full order or reduced.

#include "obc/fom.hpp"
#include "obc/rom.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace obc {

/// Primal model of one subdomain; states are carried in backend coordinates.
class StateModel {
 public:
  virtual ~StateModel() = default;
  virtual int side() const = 0;
  virtual Vector initial() const = 0;
  /// Control-independent right-hand side of step n in backend coordinates.
  virtual Vector forcing(int n) const = 0;
  virtual Vector step(const Vector& prev, const Vector& g, const Vector& forcing_n) const = 0;
  /// Control-ordered interface trace of the lifted state.
  virtual Vector trace(const Vector& coords) const = 0;
  /// Free-DOF vector.
  virtual Vector lift(const Vector& coords) const = 0;
};

class AdjointModel {
 public:
  virtual ~AdjointModel() = default;
  virtual int side() const = 0;
  virtual Vector solve(const Vector& jump) const = 0;
  virtual Vector trace(const Vector& coords) const = 0;
  virtual Vector lift(const Vector& coords) const = 0;
  /// trace(solve(jump)); backends may shortcut it.
  virtual Vector solve_trace(const Vector& jump) const { return trace(solve(jump)); }
};

class FullStateModel final : public StateModel {
 public:
  explicit FullStateModel(const SubdomainSolver& fom) : fom_(&fom) {}
  int side() const override { return fom_->side(); }
  Vector initial() const override { return fom_->initial_state(); }
  Vector forcing(int n) const override {
    return fom_->has_forcing() ? fom_->forcing(n) : Vector::Zero(fom_->free_count());
  }
  Vector step(const Vector& prev, const Vector& g, const Vector& forcing_n) const override {
    return fom_->state_step(prev, g, forcing_n);
  }
  Vector trace(const Vector& coords) const override { return fom_->trace(coords); }
  Vector lift(const Vector& coords) const override { return coords; }

 private:
  const SubdomainSolver* fom_;
};

class FullAdjointModel final : public AdjointModel {
 public:
  explicit FullAdjointModel(const SubdomainSolver& fom) : fom_(&fom) {
    // The interface trace is linear in the jump: tabulate it column by column.
    const int n = fom.control_count();
    response_.resize(n, n);
    for (int c = 0; c < n; ++c) response_.col(c) = fom.trace(fom.adjoint_solve(Vector::Unit(n, c)));
  }
  int side() const override { return fom_->side(); }
  Vector solve(const Vector& jump) const override { return fom_->adjoint_solve(jump); }
  Vector trace(const Vector& coords) const override { return fom_->trace(coords); }
  Vector lift(const Vector& coords) const override { return coords; }
  Vector solve_trace(const Vector& jump) const override { return response_ * jump; }

 private:
  const SubdomainSolver* fom_;
  DenseMatrix response_;
};

class ReducedStateModel final : public StateModel {
 public:
  ReducedStateModel(const SubdomainSolver& fom, std::shared_ptr<const ReducedOperatorSet> rops)
      : fom_(&fom), r_(std::move(rops)) {
    if (!r_ || r_->state_modes() == 0) throw std::invalid_argument("ReducedStateModel: empty state basis");
  }
  int side() const override { return r_->side; }
  Vector initial() const override { return r_->psi_u.transpose() * fom_->initial_state(); }
  Vector forcing(int n) const override { return reduced_load(*r_, n); }
  Vector step(const Vector& prev, const Vector& g, const Vector& forcing_n) const override {
    return rom_state_step(*r_, prev, g, forcing_n);
  }
  Vector trace(const Vector& coords) const override { return r_->state_trace * coords; }
  Vector lift(const Vector& coords) const override { return r_->psi_u * coords; }
  const ReducedOperatorSet& operators() const { return *r_; }

 private:
  const SubdomainSolver* fom_;
  std::shared_ptr<const ReducedOperatorSet> r_;
};

class ReducedAdjointModel final : public AdjointModel {
 public:
  explicit ReducedAdjointModel(std::shared_ptr<const ReducedOperatorSet> rops) : r_(std::move(rops)) {
    if (!r_ || r_->adjoint_modes() == 0) throw std::invalid_argument("ReducedAdjointModel: empty adjoint basis");
  }
  int side() const override { return r_->side; }
  Vector solve(const Vector& jump) const override { return rom_adjoint_solve(*r_, jump); }
  Vector trace(const Vector& coords) const override { return r_->adjoint_trace * coords; }
  Vector lift(const Vector& coords) const override { return r_->psi_mu * coords; }

 private:
  std::shared_ptr<const ReducedOperatorSet> r_;
};

struct CouplingConfig {
  double delta = 1e-16;
  double alpha = 2.0;  // initial step size, reset every time step
  double tol = 1e-14;
  int max_iters = 10000;
  /// Start each step from the previous converged control (first step: zero).
  bool warm_start = true;
  /// Consecutive step-size halvings tolerated before a step is declared stagnated.
  int max_halvings = 60;
  bool record_objectives = false;

  void validate() const {
    if (!(delta >= 0.0)) throw std::invalid_argument("coupling: delta must be >= 0");
    if (!(alpha > 0.0)) throw std::invalid_argument("coupling: alpha must be > 0");
    if (!(tol > 0.0)) throw std::invalid_argument("coupling: tol must be > 0");
    if (max_iters < 0) throw std::invalid_argument("coupling: max_iters must be >= 0");
  }
};

struct IterationStats {
  int step = 0;
  int iterations = 0;  // gradient evaluations (adjoint pairs)
  int halvings = 0;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  double wall_seconds = 0.0;
  bool converged = false;
  bool stagnated = false;
  std::vector<double> objectives;  // accepted objective values, when recorded
};

struct CoupledModels {
  const StateModel& state1;
  const StateModel& state2;
  const AdjointModel& adjoint1;
  const AdjointModel& adjoint2;
  const SparseMatrix& interface_mass;  // M_Gamma on the control DOFs
};

/// 1/2 j^T M_Gamma j + delta/2 g^T M_Gamma g.
inline double objective(const Vector& jump, const Vector& g, double delta, const SparseMatrix& interface_mass) {
  const double jj = jump.dot(interface_mass * jump);
  const double gg = delta == 0.0 ? 0.0 : g.dot(interface_mass * g);
  return 0.5 * jj + 0.5 * delta * gg;
}

/// delta g + (I_{1->0} mu_1 - I_{2->0} mu_2)|Gamma0 from control-ordered adjoint traces.
inline Vector control_gradient(const Vector& mu1_trace, const Vector& mu2_trace, const Vector& g, double delta) {
  return delta * g + (mu1_trace - mu2_trace);
}

/// Same, from free-DOF adjoint vectors.
inline Vector control_gradient(const Vector& mu1, const Vector& mu2, const Vector& g, double delta,
                               const InterfaceMap& imap) {
  return control_gradient(interface_trace(imap, 1, mu1), interface_trace(imap, 2, mu2), g, delta);
}

/// Called with the lifted (free-DOF) adjoint pair of every gradient evaluation.
using AdjointObserver = std::function<void(int step, const Vector& mu1, const Vector& mu2)>;

struct TimestepResult {
  Vector g;
  Vector u1, u2;  // backend coordinates
  IterationStats stats;
};

/// Gradient descent for the control of step n with halve-on-increase step sizes.
inline TimestepResult descent_timestep(const CoupledModels& m, const Vector& prev1, const Vector& prev2, int n,
                                       const Vector& g0, const CouplingConfig& cfg,
                                       const AdjointObserver& observer = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const Vector f1 = m.state1.forcing(n);
  const Vector f2 = m.state2.forcing(n);

  TimestepResult res;
  res.stats.step = n;
  res.g = g0;
  res.u1 = m.state1.step(prev1, res.g, f1);
  res.u2 = m.state2.step(prev2, res.g, f2);
  Vector jump = m.state1.trace(res.u1) - m.state2.trace(res.u2);
  double j_val = objective(jump, res.g, cfg.delta, m.interface_mass);
  res.stats.initial_objective = j_val;
  if (cfg.record_objectives) res.stats.objectives.push_back(j_val);

  double alpha = cfg.alpha;
  while (!(j_val < cfg.tol)) {
    if (res.stats.iterations >= cfg.max_iters) break;
    Vector direction;
    if (observer) {
      const Vector mu1 = m.adjoint1.solve(jump);
      const Vector mu2 = m.adjoint2.solve(jump);
      observer(n, m.adjoint1.lift(mu1), m.adjoint2.lift(mu2));
      direction = m.adjoint1.trace(mu1) - m.adjoint2.trace(mu2);
    } else {
      direction = m.adjoint1.solve_trace(jump) - m.adjoint2.solve_trace(jump);
    }
    ++res.stats.iterations;

    int halvings = 0;
    bool accepted = false;
    while (halvings <= cfg.max_halvings) {
      Vector g_new = (1.0 - alpha * cfg.delta) * res.g - alpha * direction;
      Vector u1 = m.state1.step(prev1, g_new, f1);
      Vector u2 = m.state2.step(prev2, g_new, f2);
      Vector jump_new = m.state1.trace(u1) - m.state2.trace(u2);
      const double j_new = objective(jump_new, g_new, cfg.delta, m.interface_mass);
      if (j_new < j_val) {
        res.g = std::move(g_new);
        res.u1 = std::move(u1);
        res.u2 = std::move(u2);
        jump = std::move(jump_new);
        j_val = j_new;
        accepted = true;
        break;
      }
      alpha *= 0.5;
      ++halvings;
      ++res.stats.halvings;
    }
    if (!accepted) {
      res.stats.stagnated = true;
      break;
    }
    if (cfg.record_objectives) res.stats.objectives.push_back(j_val);
  }
  res.stats.final_objective = j_val;
  res.stats.converged = j_val < cfg.tol;
  res.stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

struct TransientResult {
  Vector u1_final, u2_final;  // lifted free-DOF states at the final time
  std::vector<Vector> controls;  // converged control of steps 1..N
  std::vector<IterationStats> stats;
  double wall_seconds = 0.0;

  double average_iterations() const {
    if (stats.empty()) return 0.0;
    double total = 0.0;
    for (const auto& s : stats) total += s.iterations;
    return total / static_cast<double>(stats.size());
  }
  bool all_converged() const {
    for (const auto& s : stats)
      if (!s.converged) return false;
    return true;
  }
  int total_iterations() const {
    int total = 0;
    for (const auto& s : stats) total += s.iterations;
    return total;
  }
};

/// Called after every converged step with backend coordinates of both states.
using StepObserver = std::function<void(int step, const StateModel&, const Vector& u1, const StateModel&,
                                        const Vector& u2)>;

/// Advances n = 1..n_steps. Non-convergence is recorded per step and never aborts the run.
inline TransientResult run_transient(const CoupledModels& m, int n_steps, const CouplingConfig& cfg,
                                     const AdjointObserver& adjoint_observer = {},
                                     const StepObserver& step_observer = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const int n_ctrl = static_cast<int>(m.interface_mass.rows());
  Vector u1 = m.state1.initial();
  Vector u2 = m.state2.initial();
  Vector g = Vector::Zero(n_ctrl);
  TransientResult out;
  out.controls.reserve(static_cast<std::size_t>(n_steps));
  out.stats.reserve(static_cast<std::size_t>(n_steps));
  for (int n = 1; n <= n_steps; ++n) {
    const Vector g0 = cfg.warm_start ? g : Vector::Zero(n_ctrl);
    TimestepResult r = descent_timestep(m, u1, u2, n, g0, cfg, adjoint_observer);
    u1 = std::move(r.u1);
    u2 = std::move(r.u2);
    g = r.g;
    if (step_observer) step_observer(n, m.state1, u1, m.state2, u2);
    out.controls.push_back(std::move(r.g));
    out.stats.push_back(std::move(r.stats));
  }
  out.u1_final = m.state1.lift(u1);
  out.u2_final = m.state2.lift(u2);
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

/// M_delta(g) for step n from the given histories.
inline double reduced_objective(const CoupledModels& m, const Vector& prev1, const Vector& prev2, int n,
                                const Vector& g, double delta) {
  const Vector u1 = m.state1.step(prev1, g, m.state1.forcing(n));
  const Vector u2 = m.state2.step(prev2, g, m.state2.forcing(n));
  return objective(m.state1.trace(u1) - m.state2.trace(u2), g, delta, m.interface_mass);
}

/// Compares the adjoint gradient, paired with M_Gamma, against central differences of
/// M_delta along `n_directions` randomly chosen control unit vectors. Returns
/// max_c |fd_c - (M_Gamma grad)_c| / max(||M_Gamma grad||_inf, tiny).
inline double fd_gradient_check(const CoupledModels& m, const Vector& prev1, const Vector& prev2, int n,
                                const Vector& g, double delta, double eps, int n_directions, unsigned seed) {
  if (!(eps > 0.0)) throw std::invalid_argument("fd_gradient_check: eps must be positive");
  const Vector u1 = m.state1.step(prev1, g, m.state1.forcing(n));
  const Vector u2 = m.state2.step(prev2, g, m.state2.forcing(n));
  const Vector jump = m.state1.trace(u1) - m.state2.trace(u2);
  const Vector mu1 = m.adjoint1.solve(jump);
  const Vector mu2 = m.adjoint2.solve(jump);
  const Vector grad = control_gradient(m.adjoint1.trace(mu1), m.adjoint2.trace(mu2), g, delta);
  const Vector paired = m.interface_mass * grad;
  const double scale = std::max(paired.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());

  const int n_ctrl = static_cast<int>(g.size());
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> pick(0, n_ctrl - 1);
  double worst = 0.0;
  for (int d = 0; d < n_directions; ++d) {
    const int c = n_directions >= n_ctrl ? d % n_ctrl : pick(rng);
    Vector gp = g, gm = g;
    gp[c] += eps;
    gm[c] -= eps;
    const double fd =
        (reduced_objective(m, prev1, prev2, n, gp, delta) - reduced_objective(m, prev1, prev2, n, gm, delta)) /
        (2.0 * eps);
    worst = std::max(worst, std::abs(fd - paired[c]) / scale);
  }
  return worst;
}

}  // namespace obc
