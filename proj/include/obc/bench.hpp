#pragma once

// Solid body rotation benchmark, error norms against the monolithic reference,
// and the experiment pipeline that produces the CSV tables.

#include "obc/coupling.hpp"
#include "obc/fom.hpp"
#include "obc/rom.hpp"
#include "obc/snapshots.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace obc {

// ---- benchmark problem ----

struct RotationBodies {
  double cylinder_x = 0.5, cylinder_y = 0.75, cylinder_r = 0.15;
  double slot_width = 0.05, slot_top = 0.85;
  double cone_x = 0.5, cone_y = 0.25, cone_r = 0.15;
  double hill_x = 0.25, hill_y = 0.5, hill_width = 0.05;

  double operator()(double x, double y) const {
    double v = 0.0;
    const double rc = std::hypot(x - cylinder_x, y - cylinder_y);
    const bool in_slot = std::abs(x - cylinder_x) < 0.5 * slot_width && y < slot_top;
    if (rc <= cylinder_r && !in_slot) v += 1.0;
    const double rk = std::hypot(x - cone_x, y - cone_y);
    if (rk <= cone_r) v += 1.0 - rk / cone_r;
    const double r2 = (x - hill_x) * (x - hill_x) + (y - hill_y) * (y - hill_y);
    v += std::exp(-r2 / (2.0 * hill_width * hill_width));
    return v;
  }

  Json to_json() const {
    return {{"cylinder", {cylinder_x, cylinder_y, cylinder_r}}, {"slot_width", slot_width}, {"slot_top", slot_top},
            {"cone", {cone_x, cone_y, cone_r}},                 {"hill", {hill_x, hill_y, hill_width}}};
  }
};

/// Default time step for a mesh level: the level-64 value scales with h.
inline double default_dt(int level) {
  if (level == 64) return 1.122398e-3;
  if (level == 32) return 4.489592e-3;
  return 1.122398e-3 * 64.0 / level;
}

struct RotationOptions {
  int level = 32;
  double nu = 1e-5;
  double dt = 0.0;  // 0 selects default_dt(level)
  double final_time = 2.0 * std::numbers::pi;
  bool supg = true;
  RotationBodies bodies{};
};

inline ProblemSpec solid_body_rotation_problem(const RotationOptions& o) {
  if (o.level < 8) throw std::invalid_argument("solid body rotation: level must be >= 8");
  if (o.level % 2 != 0) throw std::invalid_argument("solid body rotation: level must be even");
  ProblemSpec p;
  p.decomposition = decompose(build_mesh(o.level, o.level), 0.5);
  p.nu = o.nu;
  p.velocity = [](double x, double y, double) -> std::array<double, 2> { return {0.5 - y, x - 0.5}; };
  p.initial = [b = o.bodies](double x, double y, double) { return b(x, y); };
  p.dt = o.dt > 0.0 ? o.dt : default_dt(o.level);
  p.final_time = o.final_time;
  p.supg = o.supg;
  p.validate();
  return p;
}

inline ProblemSpec solid_body_rotation_problem(int level, double nu = 1e-5) {
  RotationOptions o;
  o.level = level;
  o.nu = nu;
  return solid_body_rotation_problem(o);
}

// ---- error norms ----

struct ErrorReport {
  double rel_l2 = 0.0;
  double rel_h1 = 0.0;       // full norm (mass + stiffness)
  double rel_h1_semi = 0.0;  // stiffness only
};

/// Norms over both subdomains with element-wise assembled matrices, so every
/// element contributes exactly once.
class ErrorNorms {
 public:
  explicit ErrorNorms(const ProblemSpec& problem) : problem_(&problem) {
    for (int side = 1; side <= 2; ++side) {
      const Subdomain& sd = problem.decomposition.side(side);
      const OperatorSet ops =
          assemble_operators(sd.mesh, sd.dofs, problem.nu, problem.velocity, false, problem.dt);
      mass_[side - 1] = ops.mass_full;
      stiffness_[side - 1] = ops.stiffness_full;
    }
  }

  /// Subdomain free-DOF vectors at time t against the global free-DOF monolithic vector.
  ErrorReport compare(const Vector& u1, const Vector& u2, const Vector& mono, double t) const {
    const Decomposition& dec = problem_->decomposition;
    double d_m = 0.0, d_k = 0.0, r_m = 0.0, r_k = 0.0;
    for (int side = 1; side <= 2; ++side) {
      const Subdomain& sd = dec.side(side);
      const Vector& u = side == 1 ? u1 : u2;
      if (u.size() != sd.dofs.free_count()) throw std::invalid_argument("error_report: dimension mismatch");
      const Vector beta = dirichlet_values(sd.mesh, sd.dofs, problem_->dirichlet, t);
      const Vector uc = expand_to_nodes(sd.dofs, u, beta);
      const Vector um = expand_to_nodes(sd.dofs, restrict_to_subdomain(dec, side, mono), beta);
      const Vector d = uc - um;
      const SparseMatrix& m = mass_[side - 1];
      const SparseMatrix& k = stiffness_[side - 1];
      d_m += d.dot(m * d);
      d_k += d.dot(k * d);
      r_m += um.dot(m * um);
      r_k += um.dot(k * um);
    }
    ErrorReport e;
    auto ratio = [](double num, double den) { return den > 0.0 ? std::sqrt(std::max(num, 0.0) / den) : 0.0; };
    e.rel_l2 = ratio(d_m, r_m);
    e.rel_h1 = ratio(d_m + d_k, r_m + r_k);
    e.rel_h1_semi = ratio(d_k, r_k);
    return e;
  }

 private:
  const ProblemSpec* problem_;
  SparseMatrix mass_[2], stiffness_[2];
};

inline ErrorReport error_report(const ProblemSpec& problem, const Vector& u1, const Vector& u2, const Vector& mono) {
  return ErrorNorms(problem).compare(u1, u2, mono, problem.time(problem.steps()));
}

// ---- backend selection ----

enum class AdjointSource { full, state, mgd, gdra };

struct BackendSpec {
  int state_modes = 0;  // 0: full order state
  AdjointSource adjoint = AdjointSource::full;
  int adjoint_modes = 0;
  int mgd_m = 1;

  bool reduced_state() const { return state_modes > 0; }

  std::string label() const {
    std::string s = reduced_state() ? "RS" : "FS";
    switch (adjoint) {
      case AdjointSource::full:
        return reduced_state() ? "RS-FA" : "FOM-FOM";
      case AdjointSource::state:
        return s + "-SRA";
      case AdjointSource::mgd:
        return s + "-MGD" + std::to_string(mgd_m) + "RA";
      case AdjointSource::gdra:
        return s + "-GDRA";
    }
    return s;
  }
};

/// Parses "fom" or "rom:N".
inline int parse_state_backend(const std::string& s) {
  if (s == "fom") return 0;
  if (s.rfind("rom:", 0) == 0) {
    std::size_t pos = 0;
    const std::string num = s.substr(4);
    int n = 0;
    try {
      n = std::stoi(num, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == num.size() && !num.empty() && n >= 1) return n;
  }
  throw std::invalid_argument("state backend must be 'fom' or 'rom:N' with N >= 1, got '" + s + "'");
}

/// Parses "full", "sra:N", "mgd:N" or "gdra:N".
inline std::pair<AdjointSource, int> parse_adjoint_backend(const std::string& s) {
  if (s == "full") return {AdjointSource::full, 0};
  const auto colon = s.find(':');
  if (colon != std::string::npos) {
    const std::string kind = s.substr(0, colon), num = s.substr(colon + 1);
    std::size_t pos = 0;
    int n = 0;
    try {
      n = std::stoi(num, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == num.size() && !num.empty() && n >= 1) {
      if (kind == "sra") return {AdjointSource::state, n};
      if (kind == "mgd") return {AdjointSource::mgd, n};
      if (kind == "gdra") return {AdjointSource::gdra, n};
    }
  }
  throw std::invalid_argument("adjoint backend must be 'full', 'sra:N', 'mgd:N' or 'gdra:N', got '" + s + "'");
}

// ---- experiment pipeline ----

struct BenchmarkSpec {
  RotationOptions problem{};
  CouplingConfig coupling{};
  std::vector<BackendSpec> backends;
  /// Options for the adjoint snapshot collection runs.
  double gdra_delta = 1e-16;
  double gdra_tol = 1e-14;
  int workers = 1;
  std::filesystem::path output_dir;

  void validate() const {
    coupling.validate();
    if (problem.level < 8 || !(problem.nu > 0.0) || problem.dt < 0.0 || !(problem.final_time > 0.0))
      throw std::invalid_argument("benchmark: invalid problem parameters");
    if (workers < 1) throw std::invalid_argument("benchmark: workers must be >= 1");
  }
};

struct ReportRow {
  std::string label;
  int state_modes = 0;    // 0 means full order
  int adjoint_modes = 0;  // 0 means full order
  ErrorReport error;
  double average_iterations = 0.0;
  int max_iterations = 0;
  bool converged = true;
  double wall_seconds = 0.0;  // online coupled run only
  std::string failure;        // non-empty when the run threw
};

/// Caches every offline product (reference solve, snapshots, SVDs, adjoint stores)
/// so sweeps over mode counts reuse them.
class Experiment {
 public:
  explicit Experiment(const BenchmarkSpec& spec)
      : spec_(spec), problem_(solid_body_rotation_problem(spec.problem)), f1_(problem_, 1), f2_(problem_, 2),
        norms_(problem_) {
    spec_.validate();
  }

  const ProblemSpec& problem() const { return problem_; }
  const SubdomainSolver& solver(int side) const { return side == 1 ? f1_ : f2_; }
  const BenchmarkSpec& spec() const { return spec_; }

  const Trajectory& monolithic() {
    if (!mono_) mono_ = monolithic_solve(problem_);
    return *mono_;
  }

  const std::array<SnapshotMatrix, 2>& state_snapshots() {
    if (!states_) states_ = split_monolithic_snapshots(monolithic(), problem_.decomposition);
    return *states_;
  }

  const SnapshotStore& gdra_store() {
    if (!gdra_) {
      CouplingConfig cfg = spec_.coupling;
      cfg.delta = spec_.gdra_delta;
      cfg.tol = spec_.gdra_tol;
      gdra_ = collect_gdra(problem_, cfg);
    }
    return *gdra_;
  }

  const SnapshotStore& mgd_store(int m) {
    auto it = mgd_.find(m);
    if (it == mgd_.end()) {
      MgdOptions opt;
      opt.m = m;
      opt.delta = spec_.coupling.delta;
      opt.alpha = spec_.coupling.alpha;
      opt.workers = spec_.workers;
      it = mgd_.emplace(m, collect_mgd(problem_, state_snapshots(), opt)).first;
    }
    return it->second;
  }

  /// Full left singular basis of a snapshot source, computed once.
  const ReducedBasis& basis(const std::string& key, int side) {
    const std::string k = key + "/" + std::to_string(side);
    auto it = bases_.find(k);
    if (it != bases_.end()) return it->second;
    const DenseMatrix* s = nullptr;
    if (key == "state") {
      s = &state_snapshots()[static_cast<std::size_t>(side - 1)].data;
    } else if (key == "gdra") {
      s = &gdra_store().adjoint_of(side).data;
    } else if (key.rfind("mgd", 0) == 0) {
      s = &mgd_store(std::stoi(key.substr(3))).adjoint_of(side).data;
    } else {
      throw std::invalid_argument("unknown basis source '" + key + "'");
    }
    return bases_.emplace(k, pod_all(*s)).first->second;
  }

  static std::string adjoint_key(const BackendSpec& b) {
    switch (b.adjoint) {
      case AdjointSource::state:
        return "state";
      case AdjointSource::mgd:
        return "mgd" + std::to_string(b.mgd_m);
      case AdjointSource::gdra:
        return "gdra";
      case AdjointSource::full:
        break;
    }
    return "";
  }

  DenseMatrix basis_columns(const std::string& key, int side, int modes) {
    const ReducedBasis& b = basis(key, side);
    if (modes > b.modes())
      throw std::invalid_argument(key + " basis has only " + std::to_string(b.modes()) + " modes, " +
                                  std::to_string(modes) + " requested");
    return b.psi.leftCols(modes);
  }

  /// One online coupled run. Offline work (snapshots, SVD, projection) is done
  /// before the clock starts. `coupling` overrides the benchmark settings for this run.
  ReportRow run(const BackendSpec& b, TransientResult* run_out = nullptr,
                const std::optional<CouplingConfig>& coupling = std::nullopt) {
    ReportRow row;
    row.label = b.label();
    row.state_modes = b.state_modes;
    row.adjoint_modes = b.adjoint == AdjointSource::full ? 0 : b.adjoint_modes;
    try {
      std::array<std::shared_ptr<const ReducedOperatorSet>, 2> rops;
      std::array<std::unique_ptr<StateModel>, 2> states;
      std::array<std::unique_ptr<AdjointModel>, 2> adjoints;
      for (int side = 1; side <= 2; ++side) {
        const SubdomainSolver& f = solver(side);
        const auto i = static_cast<std::size_t>(side - 1);
        DenseMatrix psi_u, psi_mu;
        if (b.reduced_state()) psi_u = basis_columns("state", side, b.state_modes);
        if (b.adjoint != AdjointSource::full) psi_mu = basis_columns(adjoint_key(b), side, b.adjoint_modes);
        if (psi_u.cols() > 0 || psi_mu.cols() > 0) {
          if (psi_u.cols() == 0) psi_u.resize(f.free_count(), 0);
          if (psi_mu.cols() == 0) psi_mu.resize(f.free_count(), 0);
          rops[i] = std::make_shared<const ReducedOperatorSet>(reduce_operators(f, psi_u, psi_mu));
        }
        if (b.reduced_state())
          states[i] = std::make_unique<ReducedStateModel>(f, rops[i]);
        else
          states[i] = std::make_unique<FullStateModel>(f);
        if (b.adjoint != AdjointSource::full)
          adjoints[i] = std::make_unique<ReducedAdjointModel>(rops[i]);
        else
          adjoints[i] = std::make_unique<FullAdjointModel>(f);
      }
      const CoupledModels models{*states[0], *states[1], *adjoints[0], *adjoints[1], f1_.interface_mass().mass};
      const Trajectory& mono = monolithic();
      TransientResult res = run_transient(models, problem_.steps(), coupling.value_or(spec_.coupling));
      row.wall_seconds = res.wall_seconds;
      row.average_iterations = res.average_iterations();
      for (const auto& s : res.stats) row.max_iterations = std::max(row.max_iterations, s.iterations);
      row.converged = res.all_converged();
      row.error = norms_.compare(res.u1_final, res.u2_final, mono.states.back(), problem_.time(problem_.steps()));
      if (run_out) *run_out = std::move(res);
    } catch (const std::exception& e) {
      row.failure = e.what();
      row.converged = false;
    }
    return row;
  }

  std::vector<ReportRow> run_all() {
    std::vector<ReportRow> rows;
    rows.reserve(spec_.backends.size());
    for (const auto& b : spec_.backends) rows.push_back(run(b));
    return rows;
  }

  ErrorReport compare(const Vector& u1, const Vector& u2, const Vector& mono, double t) const {
    return norms_.compare(u1, u2, mono, t);
  }

 private:
  BenchmarkSpec spec_;
  ProblemSpec problem_;
  SubdomainSolver f1_, f2_;
  ErrorNorms norms_;
  std::optional<Trajectory> mono_;
  std::optional<std::array<SnapshotMatrix, 2>> states_;
  std::optional<SnapshotStore> gdra_;
  std::map<int, SnapshotStore> mgd_;
  std::map<std::string, ReducedBasis> bases_;
};

// ---- CSV output ----

inline std::string format_sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(6) << v;
  return os.str();
}

inline std::string format_fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline const char* report_header() {
  return "method,state_modes,adjoint_modes,rel_l2,rel_h1,rel_h1_semi,avg_iterations,max_iterations,converged,"
         "wall_seconds,failure";
}

/// Modes are written as "full" for full-order components. The convergence column
/// holds "*" when some timestep hit the iteration limit.
inline std::string report_line(const ReportRow& r, bool include_timing = true) {
  std::ostringstream os;
  os << r.label << ',' << (r.state_modes ? std::to_string(r.state_modes) : "full") << ','
     << (r.adjoint_modes ? std::to_string(r.adjoint_modes) : "full") << ',' << format_sci(r.error.rel_l2) << ','
     << format_sci(r.error.rel_h1) << ',' << format_sci(r.error.rel_h1_semi) << ','
     << format_fixed(r.average_iterations, 1) << ',' << r.max_iterations << ',' << (r.converged ? "yes" : "*") << ','
     << (include_timing ? format_fixed(r.wall_seconds, 3) : std::string("-")) << ',';
  std::string f = r.failure;
  for (char& c : f)
    if (c == ',' || c == '\n') c = ' ';
  os << f;
  return os.str();
}

/// Timing columns are omitted unless requested so repeated runs give identical bytes.
inline void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows,
                             bool include_timing = false) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << report_header() << '\n';
  for (const auto& r : rows) f << report_line(r, include_timing) << '\n';
}

inline void write_singular_values_csv(const std::filesystem::path& path,
                                      const std::vector<std::pair<std::string, const ReducedBasis*>>& sources) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << "source,index,sigma,energy\n";
  for (const auto& [name, basis] : sources) {
    Vector energy = Vector::Zero(basis->sigma.size());
    if (basis->sigma.size() > 0 && basis->sigma.squaredNorm() > 0.0) energy = snapshot_energy(basis->sigma);
    for (Eigen::Index i = 0; i < basis->sigma.size(); ++i)
      f << name << ',' << (i + 1) << ',' << format_sci(basis->sigma[i]) << ',' << format_sci(energy[i]) << '\n';
  }
}

struct ProjectionRange {
  double min = 0.0, max = 0.0;
};

/// Min and max projection error of the columns of `v` onto the first `modes` columns of `basis`.
inline ProjectionRange projection_range(const ReducedBasis& basis, int modes, const DenseMatrix& v) {
  ProjectionRange r{std::numeric_limits<double>::infinity(), 0.0};
  const DenseMatrix psi = basis.psi.leftCols(std::min(modes, basis.modes()));
  bool any = false;
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    if (v.col(c).norm() == 0.0) continue;
    const double e = projection_error(psi, v.col(c));
    r.min = std::min(r.min, e);
    r.max = std::max(r.max, e);
    any = true;
  }
  if (!any) r.min = 0.0;
  return r;
}

/// Leading modes of one basis per subdomain, used as a projection target.
struct ProjectionTarget {
  std::string name;
  std::array<DenseMatrix, 2> psi;
};

struct StreamedProjections {
  std::vector<ProjectionRange> adjoint;  // per adjoint target, over every adjoint pair of the run
  std::vector<ProjectionRange> state;    // per state target, over every accepted timestep state
  TransientResult run;
  long long adjoint_vectors = 0;
};

/// FOM-FOM coupled run that projects each adjoint as it is computed and each
/// converged state, so the full adjoint history never has to be stored.
inline StreamedProjections streamed_projections(const ProblemSpec& problem, const CouplingConfig& cfg,
                                                const std::vector<ProjectionTarget>& adjoint_targets,
                                                const std::vector<ProjectionTarget>& state_targets) {
  const SubdomainSolver f1(problem, 1), f2(problem, 2);
  const FullStateModel s1(f1), s2(f2);
  const FullAdjointModel a1(f1), a2(f2);
  const CoupledModels models{s1, s2, a1, a2, f1.interface_mass().mass};
  StreamedProjections out;
  const auto fresh = [] { return ProjectionRange{std::numeric_limits<double>::infinity(), 0.0}; };
  out.adjoint.assign(adjoint_targets.size(), fresh());
  out.state.assign(state_targets.size(), fresh());
  const auto add = [](ProjectionRange& r, const DenseMatrix& psi, const Vector& v) {
    if (v.norm() == 0.0) return;
    const double e = projection_error(psi, v);
    r.min = std::min(r.min, e);
    r.max = std::max(r.max, e);
  };
  const AdjointObserver on_adjoint = [&](int, const Vector& mu1, const Vector& mu2) {
    out.adjoint_vectors += 2;
    for (std::size_t t = 0; t < adjoint_targets.size(); ++t) {
      add(out.adjoint[t], adjoint_targets[t].psi[0], mu1);
      add(out.adjoint[t], adjoint_targets[t].psi[1], mu2);
    }
  };
  const StepObserver on_step = [&](int, const StateModel& m1, const Vector& u1, const StateModel& m2,
                                   const Vector& u2) {
    for (std::size_t t = 0; t < state_targets.size(); ++t) {
      add(out.state[t], state_targets[t].psi[0], m1.lift(u1));
      add(out.state[t], state_targets[t].psi[1], m2.lift(u2));
    }
  };
  out.run = run_transient(models, problem.steps(), cfg, adjoint_targets.empty() ? AdjointObserver{} : on_adjoint,
                          state_targets.empty() ? StepObserver{} : on_step);
  for (auto* v : {&out.adjoint, &out.state})
    for (auto& r : *v)
      if (!std::isfinite(r.min)) r.min = 0.0;
  return out;
}

/// Worker count from OBC_THREADS, or `fallback` when unset or invalid.
inline int threads_from_env(int fallback = 1) {
  if (const char* s = std::getenv("OBC_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(s, &end, 10);
    if (end != s && *end == '\0' && v >= 1 && v <= 1024) return static_cast<int>(v);
  }
  return fallback;
}

}  // namespace obc
