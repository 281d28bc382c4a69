#pragma once

// POD bases, Galerkin projection of the subdomain operators, and the reduced
// state and adjoint solves.
//
// Reduced states live in the free-DOF space: u = Psi_u * u_hat. Dirichlet values
// sit on eliminated nodes, so the lifting enters only through the projected
// forcing Psi_u^T F^n (see SubdomainSolver::forcing).

#include "obc/fom.hpp"
#include "obc/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace obc {

enum class SnapshotKind { state, adjoint_gdra, adjoint_mgd };

inline std::string to_string(SnapshotKind k) {
  switch (k) {
    case SnapshotKind::state: return "state";
    case SnapshotKind::adjoint_gdra: return "adjoint-gdra";
    case SnapshotKind::adjoint_mgd: return "adjoint-mgd";
  }
  return "unknown";
}

inline SnapshotKind snapshot_kind_from_string(const std::string& s) {
  if (s == "state") return SnapshotKind::state;
  if (s == "adjoint-gdra") return SnapshotKind::adjoint_gdra;
  if (s == "adjoint-mgd") return SnapshotKind::adjoint_mgd;
  throw std::invalid_argument("unknown snapshot kind '" + s + "'");
}

struct SnapshotMatrix {
  DenseMatrix data;  // free DOFs x snapshots
  SnapshotKind kind = SnapshotKind::state;
  int side = 1;

  int rows() const { return static_cast<int>(data.rows()); }
  int cols() const { return static_cast<int>(data.cols()); }
};

struct ReducedBasis {
  DenseMatrix psi;  // orthonormal columns
  Vector sigma;     // singular values of the retained modes

  int modes() const { return static_cast<int>(psi.cols()); }
  int dim() const { return static_cast<int>(psi.rows()); }

  /// Leading n modes; nested truncations of one SVD.
  ReducedBasis truncated(int n) const {
    if (n < 1 || n > modes())
      throw std::invalid_argument("ReducedBasis::truncated: mode count " + std::to_string(n) + " outside [1, " +
                                  std::to_string(modes()) + "]");
    return {psi.leftCols(n), sigma.head(n)};
  }
};

/// All left singular vectors of the snapshot matrix (up to min(rows, cols)).
inline ReducedBasis pod_all(const DenseMatrix& snapshots) {
  SvdResult svd = thin_svd(snapshots, false);
  return {std::move(svd.u), std::move(svd.sigma)};
}

inline ReducedBasis pod(const DenseMatrix& snapshots, int n_modes) {
  const int bound = static_cast<int>(std::min(snapshots.rows(), snapshots.cols()));
  if (n_modes < 1 || n_modes > bound)
    throw std::invalid_argument("pod: n_modes = " + std::to_string(n_modes) + " outside [1, " + std::to_string(bound) +
                                "]");
  return pod_all(snapshots).truncated(n_modes);
}

inline ReducedBasis pod(const SnapshotMatrix& s, int n_modes) { return pod(s.data, n_modes); }

/// Cumulative normalized energy e_k = sum_{j<=k} sigma_j^2 / sum_j sigma_j^2.
inline Vector snapshot_energy(const Vector& sigma) {
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (!(sigma[i] >= 0.0)) throw std::invalid_argument("snapshot_energy: negative or non-finite singular value");
    if (i > 0 && sigma[i] > sigma[i - 1]) throw std::invalid_argument("snapshot_energy: sigma not nonincreasing");
  }
  const double total = sigma.squaredNorm();
  if (!(total > 0.0)) throw std::invalid_argument("snapshot_energy: all singular values are zero");
  Vector e(sigma.size());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    acc += sigma[i] * sigma[i];
    e[i] = acc / total;
  }
  if (e.size() > 0) e[e.size() - 1] = 1.0;
  return e;
}

/// ||v - Psi Psi^T v||_2 / ||v||_2, and 0 for v = 0.
inline double projection_error(const DenseMatrix& psi, const Vector& v) {
  if (v.size() != psi.rows()) throw std::invalid_argument("projection_error: dimension mismatch");
  const double nv = v.norm();
  if (nv == 0.0) return 0.0;
  const Vector coeff = psi.transpose() * v;
  return (v - psi * coeff).norm() / nv;
}

inline double projection_error(const ReducedBasis& basis, const Vector& v) { return projection_error(basis.psi, v); }

/// Reduced operators of one subdomain. Either basis may be empty when the
/// corresponding equation stays full order.
struct ReducedOperatorSet {
  int side = 1;
  double sign = -1.0;
  double dt = 0.0;
  DenseMatrix psi_u, psi_mu;

  // State-basis projections Psi_u^T X Psi_u.
  DenseMatrix mass, stiffness, advection;
  DenseMatrix state_lhs, state_history;
  DenseMatrix state_coupling;  // Psi_u^T M_Gamma0
  DenseMatrix state_trace;     // I_{i->0} Psi_u restricted to Gamma0
  std::vector<Vector> loads;   // Psi_u^T F^n, n = 0..N (empty when the forcing vanishes)

  // Adjoint-basis projections Psi_mu^T X Psi_mu.
  DenseMatrix adjoint_mass;
  DenseMatrix adjoint_lhs;
  DenseMatrix adjoint_coupling;           // Psi_mu^T M_Gamma0
  DenseMatrix adjoint_endpoint_coupling;  // Psi_mu^T (endpoint trace coupling)
  DenseMatrix adjoint_trace;              // I_{i->0} Psi_mu

  DenseFactorization state_lu, adjoint_lu;

  int state_modes() const { return static_cast<int>(psi_u.cols()); }
  int adjoint_modes() const { return static_cast<int>(psi_mu.cols()); }
};

namespace detail {

inline DenseMatrix project(const DenseMatrix& left, const SparseMatrix& a, const DenseMatrix& right) {
  const DenseMatrix ar = a * right;
  return left.transpose() * ar;
}

inline DenseMatrix trace_rows(const InterfaceMap& imap, int side, const DenseMatrix& psi) {
  const auto& idx = imap.trace_free.at(static_cast<std::size_t>(side - 1));
  DenseMatrix out(static_cast<Eigen::Index>(idx.size()), psi.cols());
  for (std::size_t c = 0; c < idx.size(); ++c) out.row(static_cast<Eigen::Index>(c)) = psi.row(idx[c]);
  return out;
}

inline void check_orthonormal(const DenseMatrix& psi, const char* what) {
  if (psi.cols() == 0) return;
  const DenseMatrix gram = psi.transpose() * psi;
  const double err = (gram - DenseMatrix::Identity(psi.cols(), psi.cols())).cwiseAbs().maxCoeff();
  if (err > 1e-10) throw std::invalid_argument(std::string(what) + ": basis is not orthonormal");
}

}  // namespace detail

/// Galerkin projection of the subdomain operators onto the state basis psi_u and the
/// adjoint basis psi_mu (either may have zero columns). When `with_loads` is set and the
/// problem has forcing, the reduced loads for n = 0..N are precomputed.
inline ReducedOperatorSet reduce_operators(const SubdomainSolver& fom, const DenseMatrix& psi_u,
                                           const DenseMatrix& psi_mu, bool with_loads = true) {
  const int nf = fom.free_count();
  if ((psi_u.cols() > 0 && psi_u.rows() != nf) || (psi_mu.cols() > 0 && psi_mu.rows() != nf))
    throw std::invalid_argument("reduce_operators: basis rows do not match the subdomain free DOFs");
  detail::check_orthonormal(psi_u, "reduce_operators(psi_u)");
  detail::check_orthonormal(psi_mu, "reduce_operators(psi_mu)");

  const OperatorSet& ops = fom.operators();
  const InterfaceMass& im = fom.interface_mass();
  ReducedOperatorSet r;
  r.side = fom.side();
  r.sign = fom.sign();
  r.dt = ops.dt;
  r.psi_u = psi_u;
  r.psi_mu = psi_mu;
  if (psi_u.cols() > 0) {
    r.mass = detail::project(psi_u, ops.mass, psi_u);
    r.stiffness = detail::project(psi_u, ops.stiffness, psi_u);
    r.advection = detail::project(psi_u, ops.advection, psi_u);
    r.state_lhs = detail::project(psi_u, ops.state_lhs, psi_u);
    r.state_history = detail::project(psi_u, ops.state_history, psi_u);
    r.state_coupling = psi_u.transpose() * im.coupling;
    r.state_trace = detail::trace_rows(fom.interface_map(), fom.side(), psi_u);
    r.state_lu = DenseFactorization(r.state_lhs);
    if (with_loads && fom.has_forcing()) {
      const int n_steps = fom.problem().steps();
      r.loads.reserve(static_cast<std::size_t>(n_steps) + 1);
      r.loads.push_back(Vector::Zero(psi_u.cols()));
      for (int n = 1; n <= n_steps; ++n) r.loads.push_back(psi_u.transpose() * fom.forcing(n));
    }
  }
  if (psi_mu.cols() > 0) {
    r.adjoint_mass = detail::project(psi_mu, ops.mass, psi_mu);
    r.adjoint_lhs = detail::project(psi_mu, ops.adjoint_lhs, psi_mu);
    r.adjoint_coupling = psi_mu.transpose() * im.coupling;
    r.adjoint_endpoint_coupling = psi_mu.transpose() * im.endpoint_coupling;
    r.adjoint_trace = detail::trace_rows(fom.interface_map(), fom.side(), psi_mu);
    r.adjoint_lu = DenseFactorization(r.adjoint_lhs);
  }
  return r;
}

inline Vector reduced_load(const ReducedOperatorSet& r, int n) {
  if (r.loads.empty()) return Vector::Zero(r.state_modes());
  if (n < 0 || n >= static_cast<int>(r.loads.size())) throw std::out_of_range("reduced_load: step out of range");
  return r.loads[static_cast<std::size_t>(n)];
}

/// Solves (1/dt M^ + nu K^ - A^ + S^) u^ = f^n + (-1)^side Psi^T M_Gamma0 g + 1/dt M^_hist u^_prev.
inline Vector rom_state_step(const ReducedOperatorSet& r, const Vector& u_prev, const Vector& g,
                             const Vector& load_n) {
  if (u_prev.size() != r.state_modes() || g.size() != r.state_coupling.cols() || load_n.size() != r.state_modes())
    throw std::invalid_argument("rom_state_step: dimension mismatch");
  Vector rhs = load_n;
  rhs.noalias() += (1.0 / r.dt) * (r.state_history * u_prev);
  rhs.noalias() += r.sign * (r.state_coupling * g);
  return r.state_lu.solve(rhs);
}

inline Vector rom_state_step(const ReducedOperatorSet& r, const Vector& u_prev, const Vector& g, int n) {
  return rom_state_step(r, u_prev, g, reduced_load(r, n));
}

/// Interface jump of two lifted reduced states in control ordering.
inline Vector lifted_jump(const ReducedOperatorSet& r1, const Vector& u1_hat, const ReducedOperatorSet& r2,
                          const Vector& u2_hat) {
  return r1.state_trace * u1_hat - r2.state_trace * u2_hat;
}

/// Reduced adjoint: (Psi_mu^T adjoint_lhs Psi_mu) mu^ = (-1)^side Psi_mu^T (M_Gamma0 jump + E endpoint_jump).
/// `endpoint_jump` carries beta_1 - beta_2 at the two interface endpoints (zero for a single global beta).
inline Vector rom_adjoint_solve(const ReducedOperatorSet& r, const Vector& jump, const Vector& endpoint_jump) {
  if (jump.size() != r.adjoint_coupling.cols() || endpoint_jump.size() != 2)
    throw std::invalid_argument("rom_adjoint_solve: dimension mismatch");
  Vector rhs = r.sign * (r.adjoint_coupling * jump + r.adjoint_endpoint_coupling * endpoint_jump);
  return r.adjoint_lu.solve(rhs);
}

inline Vector rom_adjoint_solve(const ReducedOperatorSet& r, const Vector& jump) {
  return rom_adjoint_solve(r, jump, Vector::Zero(2));
}

/// Adjoint of side r_side.side from the reduced states of both subdomains.
inline Vector rom_adjoint_solve(const ReducedOperatorSet& r_side, const ReducedOperatorSet& r1, const Vector& u1_hat,
                                const ReducedOperatorSet& r2, const Vector& u2_hat,
                                const Vector& endpoint_jump = Vector::Zero(2)) {
  return rom_adjoint_solve(r_side, lifted_jump(r1, u1_hat, r2, u2_hat), endpoint_jump);
}

}  // namespace obc
