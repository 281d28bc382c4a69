#pragma once

// Full-order solvers: monolithic reference stepping, per-subdomain backward
// Euler state steps with interface flux control, and the adjoint solve.

#include "obc/assembly.hpp"
#include "obc/geometry.hpp"
#include "obc/linalg.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace obc {

struct ProblemSpec {
  Decomposition decomposition;
  double nu = 1e-5;
  VelocityField velocity;
  ScalarField source;     // empty means f = 0
  ScalarField initial;    // u at t = 0
  ScalarField dirichlet;  // empty means beta = 0
  double dt = 1e-3;
  double final_time = 1e-3;
  bool supg = true;

  int steps() const { return static_cast<int>(std::llround(final_time / dt)); }
  double time(int n) const { return n * dt; }

  void validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("problem: dt must be positive");
    if (!(final_time >= dt * (1.0 - 1e-12))) throw std::invalid_argument("problem: final time must be >= dt");
    if (!(nu > 0.0)) throw std::invalid_argument("problem: nu must be positive");
    if (!velocity) throw std::invalid_argument("problem: velocity field missing");
  }
};

struct Trajectory {
  std::vector<Vector> states;  // free-DOF vectors, states[0] is the initial condition
  std::vector<double> times;
};

inline Vector nodal_values(const Mesh& mesh, const ScalarField& f, double t) {
  Vector v = Vector::Zero(mesh.node_count());
  if (!f) return v;
  for (int n = 0; n < mesh.node_count(); ++n) v[n] = f(mesh.nodes[n].x, mesh.nodes[n].y, t);
  return v;
}

inline Vector free_values(const Mesh& mesh, const DofMap& dofs, const ScalarField& f, double t) {
  Vector v = Vector::Zero(dofs.free_count());
  if (!f) return v;
  for (int k = 0; k < dofs.free_count(); ++k) {
    const Point p = mesh.nodes[dofs.free_to_node[k]];
    v[k] = f(p.x, p.y, t);
  }
  return v;
}

inline Vector dirichlet_values(const Mesh& mesh, const DofMap& dofs, const ScalarField& beta, double t) {
  Vector v = Vector::Zero(dofs.dirichlet_count());
  if (!beta) return v;
  for (int k = 0; k < dofs.dirichlet_count(); ++k) {
    const Point p = mesh.nodes[dofs.dirichlet_nodes[k]];
    v[k] = beta(p.x, p.y, t);
  }
  return v;
}

/// Scatters free values and Dirichlet values back to a node-indexed vector.
inline Vector expand_to_nodes(const DofMap& dofs, const Vector& free, const Vector& dirichlet) {
  Vector out = Vector::Zero(dofs.node_count());
  for (int k = 0; k < dofs.free_count(); ++k) out[dofs.free_to_node[k]] = free[k];
  for (int k = 0; k < dofs.dirichlet_count(); ++k) out[dofs.dirichlet_nodes[k]] = dirichlet[k];
  return out;
}

/// Restricts a free-DOF vector of the undecomposed mesh to the free DOFs of one subdomain.
inline Vector restrict_to_subdomain(const Decomposition& dec, int side, const Vector& global_free) {
  const Subdomain& sd = dec.side(side);
  if (global_free.size() != dec.global_dofs.free_count())
    throw std::invalid_argument("restrict_to_subdomain: vector does not match the global mesh");
  Vector out(sd.dofs.free_count());
  for (int k = 0; k < sd.dofs.free_count(); ++k) {
    const int g = dec.global_dofs.node_to_free[sd.global_node[sd.dofs.free_to_node[k]]];
    if (g < 0) throw std::logic_error("restrict_to_subdomain: subdomain free node is Dirichlet globally");
    out[k] = global_free[g];
  }
  return out;
}

/// Control-ordered interface values of a subdomain free-DOF vector (I_{i->0} u|Gamma0).
inline Vector interface_trace(const InterfaceMap& imap, int side, const Vector& free) {
  const auto& idx = imap.trace_free.at(static_cast<std::size_t>(side - 1));
  Vector out(idx.size());
  for (std::size_t c = 0; c < idx.size(); ++c) out[static_cast<Eigen::Index>(c)] = free[idx[c]];
  return out;
}

/// Backward Euler solver for one subdomain. Factorizations of the state and adjoint
/// matrices are computed once and reused for every step.
class SubdomainSolver {
 public:
  SubdomainSolver(const ProblemSpec& problem, int side) : problem_(&problem), side_(side) {
    if (side != 1 && side != 2) throw std::invalid_argument("SubdomainSolver: side must be 1 or 2");
    problem.validate();
    const Subdomain& sd = sub();
    ops_ = assemble_operators(sd.mesh, sd.dofs, problem.nu, problem.velocity, problem.supg, problem.dt);
    iface_ = assemble_interface_mass(sd, problem.decomposition.interface);
    state_ = Factorization(ops_.state_lhs);
    adjoint_ = Factorization(ops_.adjoint_lhs);
  }

  int side() const { return side_; }
  /// (-1)^side
  double sign() const { return side_ == 1 ? -1.0 : 1.0; }
  const OperatorSet& operators() const { return ops_; }
  const InterfaceMass& interface_mass() const { return iface_; }
  const Subdomain& sub() const { return problem_->decomposition.side(side_); }
  const ProblemSpec& problem() const { return *problem_; }
  const InterfaceMap& interface_map() const { return problem_->decomposition.interface; }
  int free_count() const { return ops_.free_count(); }
  int control_count() const { return interface_map().size(); }

  bool has_forcing() const { return static_cast<bool>(problem_->source) || static_cast<bool>(problem_->dirichlet); }

  /// Right-hand side contributions independent of the control and of the free history:
  /// load at t^n plus the eliminated Dirichlet columns for beta^n and beta^{n-1}.
  Vector forcing(int n) const {
    const ProblemSpec& p = *problem_;
    const Subdomain& sd = sub();
    Vector f = Vector::Zero(free_count());
    if (p.source) {
      f += assemble_load(sd.mesh, sd.dofs, p.source, p.time(n));
      if (p.supg) f += assemble_supg_load(sd.mesh, sd.dofs, p.source, p.velocity, p.nu, p.dt, p.time(n));
    }
    if (p.dirichlet) {
      const Vector b_now = dirichlet_values(sd.mesh, sd.dofs, p.dirichlet, p.time(n));
      const Vector b_prev = dirichlet_values(sd.mesh, sd.dofs, p.dirichlet, p.time(n - 1));
      f -= ops_.state_lhs_dirichlet * b_now;
      f += (1.0 / p.dt) * (ops_.state_history_dirichlet * b_prev);
    }
    return f;
  }

  Vector initial_state() const { return free_values(sub().mesh, sub().dofs, problem_->initial, 0.0); }

  /// Solves (1/dt M + nu K - A + S) u = F + (-1)^side M_Gamma0 g + 1/dt (M + S_m) u_prev.
  Vector state_step(const Vector& u_prev, const Vector& g, const Vector& forcing_n) const {
    check(u_prev.size() == free_count() && g.size() == control_count() && forcing_n.size() == free_count(),
          "state_step: dimension mismatch");
    Vector rhs = forcing_n;
    rhs.noalias() += (1.0 / problem_->dt) * (ops_.state_history * u_prev);
    rhs.noalias() += sign() * (iface_.coupling * g);
    return state_.solve(rhs);
  }

  /// Same system as state_step with the history taken from a stored state snapshot.
  /// The result never feeds back into later steps.
  Vector modified_state_step(const Vector& u_snapshot_prev, const Vector& g, const Vector& forcing_n) const {
    return state_step(u_snapshot_prev, g, forcing_n);
  }

  /// Solves adjoint_lhs mu = (-1)^side M_Gamma0 jump. No time history enters the adjoint.
  Vector adjoint_solve(const Vector& jump) const {
    check(jump.size() == control_count(), "adjoint_solve: dimension mismatch");
    Vector rhs = sign() * (iface_.coupling * jump);
    return adjoint_.solve(rhs);
  }

  /// Adjoint solve including the jump of lifted Dirichlet values at the interface endpoints.
  Vector adjoint_solve(const Vector& jump, const Vector& endpoint_jump) const {
    check(jump.size() == control_count() && endpoint_jump.size() == 2, "adjoint_solve: dimension mismatch");
    Vector rhs = sign() * (iface_.coupling * jump + iface_.endpoint_coupling * endpoint_jump);
    return adjoint_.solve(rhs);
  }

  Vector trace(const Vector& free) const { return interface_trace(interface_map(), side_, free); }

  /// Interface flux g that reproduces `u_now` exactly from `u_prev` (both free-DOF vectors
  /// of this subdomain), obtained from the interface rows of the state residual.
  Vector flux_from_residual(const Vector& u_prev, const Vector& u_now, const Vector& forcing_n) const {
    const Vector residual =
        ops_.state_lhs * u_now - forcing_n - (1.0 / problem_->dt) * (ops_.state_history * u_prev);
    const Vector r_iface = trace(residual);
    const Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> mg(Eigen::SparseMatrix<double>(iface_.mass));
    return (sign() * mg.solve(r_iface)).eval();
  }

 private:
  static void check(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  }

  const ProblemSpec* problem_;
  int side_;
  OperatorSet ops_;
  InterfaceMass iface_;
  Factorization state_, adjoint_;
};

/// Single-domain reference discretization on the undecomposed mesh.
class MonolithicSolver {
 public:
  explicit MonolithicSolver(const ProblemSpec& problem) : problem_(&problem) {
    problem.validate();
    const Decomposition& dec = problem.decomposition;
    ops_ = assemble_operators(dec.global, dec.global_dofs, problem.nu, problem.velocity, problem.supg, problem.dt);
    lu_ = Factorization(ops_.state_lhs);
  }

  const OperatorSet& operators() const { return ops_; }

  Vector initial_state() const {
    const Decomposition& dec = problem_->decomposition;
    return free_values(dec.global, dec.global_dofs, problem_->initial, 0.0);
  }

  Vector forcing(int n) const {
    const ProblemSpec& p = *problem_;
    const Decomposition& dec = p.decomposition;
    Vector f = Vector::Zero(ops_.free_count());
    if (p.source) {
      f += assemble_load(dec.global, dec.global_dofs, p.source, p.time(n));
      if (p.supg) f += assemble_supg_load(dec.global, dec.global_dofs, p.source, p.velocity, p.nu, p.dt, p.time(n));
    }
    if (p.dirichlet) {
      f -= ops_.state_lhs_dirichlet * dirichlet_values(dec.global, dec.global_dofs, p.dirichlet, p.time(n));
      f += (1.0 / p.dt) *
           (ops_.state_history_dirichlet * dirichlet_values(dec.global, dec.global_dofs, p.dirichlet, p.time(n - 1)));
    }
    return f;
  }

  Vector step(const Vector& u_prev, int n) const {
    Vector rhs = forcing(n);
    rhs.noalias() += (1.0 / problem_->dt) * (ops_.state_history * u_prev);
    return lu_.solve(rhs);
  }

 private:
  const ProblemSpec* problem_;
  OperatorSet ops_;
  Factorization lu_;
};

/// Backward Euler on the undecomposed domain; the trajectory includes u^0.
inline Trajectory monolithic_solve(const ProblemSpec& problem) {
  const MonolithicSolver solver(problem);
  Trajectory traj;
  const int n_steps = problem.steps();
  traj.states.reserve(static_cast<std::size_t>(n_steps) + 1);
  traj.states.push_back(solver.initial_state());
  traj.times.push_back(0.0);
  for (int n = 1; n <= n_steps; ++n) {
    traj.states.push_back(solver.step(traj.states.back(), n));
    traj.times.push_back(problem.time(n));
  }
  return traj;
}

}  // namespace obc
