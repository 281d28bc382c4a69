#pragma once

// Q1 finite element operators on axis-aligned rectangular elements.
//
// Matrix rows index test functions and columns index trial functions:
//   mass       M[k][j] = (phi_j, phi_k)
//   stiffness  K[k][j] = (grad phi_j, grad phi_k)
//   advection  A[k][j] = (a phi_j, grad phi_k)
// so the conservative flux form (nu grad u - a u, grad v) becomes nu K - A.

#include "obc/geometry.hpp"
#include "obc/linalg.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace obc {

using ScalarField = std::function<double(double x, double y, double t)>;
using VelocityField = std::function<std::array<double, 2>(double x, double y, double t)>;

struct QuadratureRule {
  std::vector<std::array<double, 2>> points;
  std::vector<double> weights;
};

/// Tensor Gauss-Legendre rule on the reference square [-1, 1]^2. Two points per
/// direction integrate bicubic polynomials exactly.
inline QuadratureRule gauss_square(int points_per_dir = 2) {
  QuadratureRule rule;
  std::vector<double> x, w;
  if (points_per_dir == 1) {
    x = {0.0};
    w = {2.0};
  } else if (points_per_dir == 2) {
    const double g = 1.0 / std::sqrt(3.0);
    x = {-g, g};
    w = {1.0, 1.0};
  } else if (points_per_dir == 3) {
    const double g = std::sqrt(3.0 / 5.0);
    x = {-g, 0.0, g};
    w = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
  } else {
    throw std::invalid_argument("gauss_square: supported orders are 1, 2, 3");
  }
  for (std::size_t j = 0; j < x.size(); ++j) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      rule.points.push_back({x[i], x[j]});
      rule.weights.push_back(w[i] * w[j]);
    }
  }
  return rule;
}

/// Two-point Gauss rule on [-1, 1].
inline QuadratureRule gauss_line() {
  const double g = 1.0 / std::sqrt(3.0);
  return {{{-g, 0.0}, {g, 0.0}}, {1.0, 1.0}};
}

namespace q1 {

inline constexpr std::array<std::array<double, 2>, 4> corners{{{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}};

inline double shape(int a, double xi, double eta) {
  return 0.25 * (1.0 + corners[a][0] * xi) * (1.0 + corners[a][1] * eta);
}

/// Reference gradient (d/dxi, d/deta).
inline std::array<double, 2> shape_grad(int a, double xi, double eta) {
  return {0.25 * corners[a][0] * (1.0 + corners[a][1] * eta), 0.25 * corners[a][1] * (1.0 + corners[a][0] * xi)};
}

}  // namespace q1

/// Per-element SUPG parameter for transient advection-diffusion.
inline double supg_tau(double speed, double h, double nu, double dt) {
  const double a = 2.0 / dt;
  const double b = 2.0 * speed / h;
  const double c = 4.0 * nu / (h * h);
  return 1.0 / std::sqrt(a * a + b * b + 9.0 * c * c);
}

struct OperatorSet {
  double nu = 0.0;
  double dt = 0.0;
  bool supg = false;

  // Node-indexed matrices before Dirichlet elimination.
  SparseMatrix mass_full, stiffness_full, advection_full;

  // Free x free blocks.
  SparseMatrix mass, stiffness, advection;
  /// tau (a.grad phi_j, a.grad phi_k)
  SparseMatrix supg_streamline;
  /// tau (phi_j, a.grad phi_k)
  SparseMatrix supg_mass;
  /// SUPG additions to the state and adjoint left-hand sides.
  SparseMatrix supg_state, supg_adjoint;

  /// 1/dt M + nu K - A (+ SUPG), and the matrix applied to the previous state (M + SUPG mass).
  SparseMatrix state_lhs, state_history;
  /// Exact transpose of state_lhs without SUPG; with SUPG the adjoint-consistent stabilization.
  SparseMatrix adjoint_lhs;

  // Free x Dirichlet blocks used to move known boundary values to the right-hand side.
  SparseMatrix state_lhs_dirichlet, state_history_dirichlet;

  int free_count() const { return static_cast<int>(mass.rows()); }
};

namespace detail {

struct ElementGeometry {
  double x0, y0, hx, hy;
  double det() const { return 0.25 * hx * hy; }
  double x(double xi) const { return x0 + 0.5 * (xi + 1.0) * hx; }
  double y(double eta) const { return y0 + 0.5 * (eta + 1.0) * hy; }
};

inline ElementGeometry element_geometry(const Mesh& mesh, const std::array<int, 4>& e) {
  const Point p0 = mesh.nodes[e[0]];
  return {p0.x, p0.y, mesh.nodes[e[1]].x - p0.x, mesh.nodes[e[3]].y - p0.y};
}

/// Collects element contributions into node-indexed and eliminated triplet lists.
struct TripletSink {
  const DofMap& dofs;
  std::vector<Triplet> full, ff, fd;

  void add(int test_node, int trial_node, double v) {
    full.push_back({test_node, trial_node, v});
    const int k = dofs.node_to_free[test_node];
    if (k < 0) return;
    const int j = dofs.node_to_free[trial_node];
    if (j >= 0) {
      ff.push_back({k, j, v});
    } else {
      fd.push_back({k, dofs.node_to_dirichlet[trial_node], v});
    }
  }
};

}  // namespace detail

/// Assembles all volume operators of one (sub)domain and eliminates Dirichlet nodes.
/// The velocity is evaluated at time t (the benchmark field is steady).
inline OperatorSet assemble_operators(const Mesh& mesh, const DofMap& dofs, double nu, const VelocityField& velocity,
                                      bool supg_on, double dt, double t = 0.0) {
  if (!(nu > 0.0)) throw std::invalid_argument("assemble_operators: nu must be positive");
  if (!(dt > 0.0)) throw std::invalid_argument("assemble_operators: dt must be positive");
  if (dofs.node_count() != mesh.node_count()) throw std::invalid_argument("assemble_operators: DOF map mismatch");

  const QuadratureRule rule = gauss_square(2);
  detail::TripletSink m{dofs, {}, {}, {}}, k{dofs, {}, {}, {}}, a{dofs, {}, {}, {}}, s_aa{dofs, {}, {}, {}},
      s_m{dofs, {}, {}, {}};

  for (const auto& e : mesh.elements) {
    const auto g = detail::element_geometry(mesh, e);
    const double det = g.det();
    double tau = 0.0;
    if (supg_on) {
      const auto ac = velocity(g.x(0.0), g.y(0.0), t);
      tau = supg_tau(std::hypot(ac[0], ac[1]), std::min(g.hx, g.hy), nu, dt);
    }
    std::array<std::array<double, 4>, 4> me{}, ke{}, ae{}, saae{}, sme{};
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const double xi = rule.points[q][0], eta = rule.points[q][1];
      const double w = rule.weights[q] * det;
      const auto vel = velocity(g.x(xi), g.y(eta), t);
      std::array<double, 4> phi{}, dx{}, dy{}, adv{};
      for (int i = 0; i < 4; ++i) {
        phi[i] = q1::shape(i, xi, eta);
        const auto gr = q1::shape_grad(i, xi, eta);
        dx[i] = gr[0] * 2.0 / g.hx;
        dy[i] = gr[1] * 2.0 / g.hy;
        adv[i] = vel[0] * dx[i] + vel[1] * dy[i];
      }
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
          me[r][c] += w * phi[r] * phi[c];
          ke[r][c] += w * (dx[r] * dx[c] + dy[r] * dy[c]);
          ae[r][c] += w * adv[r] * phi[c];
          if (supg_on) {
            saae[r][c] += w * tau * adv[r] * adv[c];
            sme[r][c] += w * tau * adv[r] * phi[c];
          }
        }
      }
    }
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        m.add(e[r], e[c], me[r][c]);
        k.add(e[r], e[c], ke[r][c]);
        a.add(e[r], e[c], ae[r][c]);
        if (supg_on) {
          s_aa.add(e[r], e[c], saae[r][c]);
          s_m.add(e[r], e[c], sme[r][c]);
        }
      }
    }
  }

  const int nn = mesh.node_count(), nf = dofs.free_count(), nd = dofs.dirichlet_count();
  OperatorSet ops;
  ops.nu = nu;
  ops.dt = dt;
  ops.supg = supg_on;
  ops.mass_full = from_triplets(nn, nn, m.full);
  ops.stiffness_full = from_triplets(nn, nn, k.full);
  ops.advection_full = from_triplets(nn, nn, a.full);
  ops.mass = from_triplets(nf, nf, m.ff);
  ops.stiffness = from_triplets(nf, nf, k.ff);
  ops.advection = from_triplets(nf, nf, a.ff);
  ops.supg_streamline = from_triplets(nf, nf, s_aa.ff);
  ops.supg_mass = from_triplets(nf, nf, s_m.ff);

  ops.supg_state = ops.supg_streamline + (1.0 / dt) * ops.supg_mass;
  ops.supg_adjoint = ops.supg_streamline - (1.0 / dt) * ops.supg_mass;

  const SparseMatrix galerkin = (1.0 / dt) * ops.mass + nu * ops.stiffness - ops.advection;
  ops.state_lhs = galerkin + ops.supg_state;
  ops.state_history = ops.mass + ops.supg_mass;
  const SparseMatrix galerkin_t = galerkin.transpose();
  ops.adjoint_lhs = galerkin_t + ops.supg_adjoint;

  const SparseMatrix m_fd = from_triplets(nf, nd, m.fd);
  const SparseMatrix k_fd = from_triplets(nf, nd, k.fd);
  const SparseMatrix a_fd = from_triplets(nf, nd, a.fd);
  const SparseMatrix saa_fd = from_triplets(nf, nd, s_aa.fd);
  const SparseMatrix sm_fd = from_triplets(nf, nd, s_m.fd);
  ops.state_lhs_dirichlet = (1.0 / dt) * m_fd + nu * k_fd - a_fd + saa_fd + (1.0 / dt) * sm_fd;
  ops.state_history_dirichlet = m_fd + sm_fd;
  return ops;
}

struct InterfaceMass {
  /// M_Gamma0 for one side: rows are subdomain free DOFs, columns control DOFs.
  SparseMatrix coupling;
  /// 1D Q1 mass matrix on the control DOFs (L2(Gamma0) inner product).
  SparseMatrix mass;
  /// Coupling of subdomain free DOFs with the two interface endpoint hats (bottom, top).
  SparseMatrix endpoint_coupling;
};

/// Line integrals of trace basis products along the interface of one subdomain (2-point Gauss per edge).
inline InterfaceMass assemble_interface_mass(const Subdomain& sub, const InterfaceMap& imap) {
  const auto& nodes = sub.interface_nodes;
  const int n_ctrl = imap.size();
  if (static_cast<int>(nodes.size()) != n_ctrl + 2) throw std::invalid_argument("assemble_interface_mass: mismatch");
  const QuadratureRule rule = gauss_line();
  std::vector<Triplet> coupling, mass, endpoint;
  // Interface position p in [0, n_ctrl + 1]; positions 1..n_ctrl are control DOFs.
  for (int p = 0; p + 1 < static_cast<int>(nodes.size()); ++p) {
    const double ya = sub.mesh.nodes[nodes[p]].y, yb = sub.mesh.nodes[nodes[p + 1]].y;
    const double half = 0.5 * (yb - ya);
    double e[2][2] = {{0, 0}, {0, 0}};
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const double s = rule.points[q][0];
      const double h[2] = {0.5 * (1.0 - s), 0.5 * (1.0 + s)};
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) e[r][c] += rule.weights[q] * half * h[r] * h[c];
    }
    const int pos[2] = {p, p + 1};
    for (int r = 0; r < 2; ++r) {
      const int free_r = sub.dofs.node_to_free[nodes[pos[r]]];
      for (int c = 0; c < 2; ++c) {
        const int pc = pos[c];
        const bool c_is_control = pc >= 1 && pc <= n_ctrl;
        if (c_is_control) {
          if (pos[r] >= 1 && pos[r] <= n_ctrl) mass.push_back({pos[r] - 1, pc - 1, e[r][c]});
          if (free_r >= 0) coupling.push_back({free_r, pc - 1, e[r][c]});
        } else if (free_r >= 0) {
          endpoint.push_back({free_r, pc == 0 ? 0 : 1, e[r][c]});
        }
      }
    }
  }
  const int nf = sub.dofs.free_count();
  return {from_triplets(nf, n_ctrl, coupling), from_triplets(n_ctrl, n_ctrl, mass), from_triplets(nf, 2, endpoint)};
}

/// Galerkin load (f(t), phi_k) on the free DOFs.
inline Vector assemble_load(const Mesh& mesh, const DofMap& dofs, const ScalarField& f, double t) {
  Vector load = Vector::Zero(dofs.free_count());
  if (!f) return load;
  const QuadratureRule rule = gauss_square(2);
  for (const auto& e : mesh.elements) {
    const auto g = detail::element_geometry(mesh, e);
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const double xi = rule.points[q][0], eta = rule.points[q][1];
      const double fw = f(g.x(xi), g.y(eta), t) * rule.weights[q] * g.det();
      for (int r = 0; r < 4; ++r) {
        const int k = dofs.node_to_free[e[r]];
        if (k >= 0) load[k] += fw * q1::shape(r, xi, eta);
      }
    }
  }
  return load;
}

/// SUPG load tau (f(t), a.grad phi_k), consistent with OperatorSet::supg_state.
inline Vector assemble_supg_load(const Mesh& mesh, const DofMap& dofs, const ScalarField& f,
                                 const VelocityField& velocity, double nu, double dt, double t) {
  Vector load = Vector::Zero(dofs.free_count());
  if (!f) return load;
  const QuadratureRule rule = gauss_square(2);
  for (const auto& e : mesh.elements) {
    const auto g = detail::element_geometry(mesh, e);
    const auto ac = velocity(g.x(0.0), g.y(0.0), 0.0);
    const double tau = supg_tau(std::hypot(ac[0], ac[1]), std::min(g.hx, g.hy), nu, dt);
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const double xi = rule.points[q][0], eta = rule.points[q][1];
      const auto vel = velocity(g.x(xi), g.y(eta), 0.0);
      const double fw = tau * f(g.x(xi), g.y(eta), t) * rule.weights[q] * g.det();
      for (int r = 0; r < 4; ++r) {
        const int k = dofs.node_to_free[e[r]];
        if (k < 0) continue;
        const auto gr = q1::shape_grad(r, xi, eta);
        load[k] += fw * (vel[0] * gr[0] * 2.0 / g.hx + vel[1] * gr[1] * 2.0 / g.hy);
      }
    }
  }
  return load;
}

}  // namespace obc
