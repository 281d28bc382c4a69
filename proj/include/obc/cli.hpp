#pragma once

// Command line front end. Every subcommand shares the problem options; a JSON
// config file supplies defaults that explicit flags override.

#include "obc/bench.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace obc::cli {

enum ExitCode : int { ok = 0, failure = 1, usage = 2 };

struct CommonOptions {
  int level = 32;
  double nu = 1e-5;
  double dt = 0.0;
  double final_time = 2.0 * std::numbers::pi;
  int steps = 0;
  bool supg = true;
  std::string out = "out";
  unsigned seed = 0;
  int threads = 0;
  std::string config;

  RotationOptions rotation() const {
    RotationOptions o;
    o.level = level;
    o.nu = nu;
    o.dt = dt > 0.0 ? dt : default_dt(level);
    o.final_time = steps > 0 ? steps * o.dt : final_time;
    o.supg = supg;
    return o;
  }
  int workers() const { return threads > 0 ? threads : threads_from_env(1); }
};

struct CouplingOptions {
  double delta = 1e-16;
  double tol = 1e-14;
  double alpha = 2.0;
  int max_iters = 10000;

  CouplingConfig config() const {
    CouplingConfig c;
    c.delta = delta;
    c.tol = tol;
    c.alpha = alpha;
    c.max_iters = max_iters;
    return c;
  }
};

namespace detail {

inline void add_common(CLI::App* sub, CommonOptions& c) {
  sub->add_option("--config", c.config, "JSON file with option defaults");
  sub->add_option("--level", c.level, "elements per direction")->check(CLI::Range(8, 4096));
  sub->add_option("--nu", c.nu, "diffusion coefficient")->check(CLI::PositiveNumber);
  sub->add_option("--dt", c.dt, "time step (default depends on level)")->check(CLI::NonNegativeNumber);
  sub->add_option("--final-time", c.final_time, "final time")->check(CLI::PositiveNumber);
  sub->add_option("--steps", c.steps, "number of time steps (overrides --final-time)")->check(CLI::NonNegativeNumber);
  sub->add_option("--supg", c.supg, "SUPG stabilization (true/false)");
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--seed", c.seed, "seed for randomized test vectors");
  sub->add_option("--threads", c.threads, "worker threads (default: OBC_THREADS or 1)")
      ->check(CLI::NonNegativeNumber);
}

inline void add_coupling(CLI::App* sub, CouplingOptions& c) {
  sub->add_option("--delta", c.delta, "control penalty")->check(CLI::NonNegativeNumber);
  sub->add_option("--tol", c.tol, "objective tolerance")->check(CLI::PositiveNumber);
  sub->add_option("--alpha", c.alpha, "initial step size")->check(CLI::PositiveNumber);
  sub->add_option("--max-iters", c.max_iters, "iteration limit per time step")->check(CLI::NonNegativeNumber);
}

inline std::string config_value(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_array()) {
    std::string s;
    for (const auto& e : v) s += (s.empty() ? "" : ",") + config_value(e);
    return s;
  }
  if (v.is_number()) return v.dump();
  throw std::invalid_argument("config: unsupported value " + v.dump());
}

/// Finds --config in the raw arguments.
inline std::string find_config(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  return path;
}

/// Config entries become flags placed right after the subcommand name, so any
/// flag given on the command line comes later and wins.
inline std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args) {
  const std::string path = find_config(args);
  if (path.empty() || args.size() < 2) return args;
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config '" + path + "'");
  Json cfg;
  try {
    cfg = Json::parse(f);
  } catch (const Json::exception& e) {
    throw std::invalid_argument("config '" + path + "': " + e.what());
  }
  if (!cfg.is_object()) throw std::invalid_argument("config must be a JSON object");
  const CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(args[1]);
  } catch (const CLI::Error&) {
    return args;
  }
  std::vector<std::string> inserted;
  for (const auto& [key, value] : cfg.items()) {
    const std::string flag = "--" + key;
    if (key == "config") throw std::invalid_argument("config: nested 'config' key");
    if (sub->get_option_no_throw(flag) != nullptr) {
      inserted.push_back(flag + "=" + config_value(value));
      continue;
    }
    bool known = false;
    for (const CLI::App* other : app.get_subcommands([](const CLI::App*) { return true; }))
      known = known || other->get_option_no_throw(flag) != nullptr;
    if (!known) throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  args.insert(args.begin() + 2, inserted.begin(), inserted.end());
  return args;
}

inline void check_state_snapshots(const std::array<SnapshotMatrix, 2>& s, const ProblemSpec& p) {
  for (int side = 1; side <= 2; ++side) {
    const SubdomainSolver f(p, side);
    const auto& m = s[static_cast<std::size_t>(side - 1)].data;
    if (m.rows() != f.free_count() || m.cols() != p.steps() + 1)
      throw std::invalid_argument("state snapshots do not match the problem options; rerun 'monolithic'");
  }
}

inline std::string projection_header() { return "table,source,basis,modes,min_error,max_error"; }

inline std::string projection_line(int table, const std::string& source, const std::string& basis, int modes,
                                   const ProjectionRange& r) {
  return std::to_string(table) + "," + source + "," + basis + "," + std::to_string(modes) + "," + format_sci(r.min) +
         "," + format_sci(r.max);
}

inline void write_lines(const std::filesystem::path& path, const std::string& header,
                        const std::vector<std::string>& lines) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << header << '\n';
  for (const auto& l : lines) f << l << '\n';
}

}  // namespace detail

// ---- subcommands ----

inline int cmd_monolithic(const CommonOptions& c, std::ostream& out) {
  const ProblemSpec p = solid_body_rotation_problem(c.rotation());
  const Trajectory traj = monolithic_solve(p);
  SnapshotStore store;
  store.state = split_monolithic_snapshots(traj, p.decomposition);
  store.metadata = obc::detail::problem_metadata(p);
  const std::filesystem::path dir = c.out;
  write_store(store, dir);
  Json meta = store.metadata;
  meta["kind"] = "monolithic_final";
  write_snap(dir / "reference_final.snap", traj.states.back(), meta);
  out << "monolithic: " << p.steps() << " steps, state snapshots " << store.state[0].data.rows() << "x"
      << store.state[0].data.cols() << " and " << store.state[1].data.rows() << "x" << store.state[1].data.cols()
      << " written to " << dir.string() << "\n";
  return ok;
}

inline int cmd_collect(const CommonOptions& c, const CouplingOptions& k, const std::string& method, int m,
                       std::ostream& out) {
  const ProblemSpec p = solid_body_rotation_problem(c.rotation());
  const std::filesystem::path dir = c.out;
  SnapshotStore store;
  std::filesystem::path target;
  if (method == "mgd") {
    std::array<SnapshotMatrix, 2> states;
    if (std::filesystem::exists(dir / store_file("state", 1)) && std::filesystem::exists(dir / store_file("state", 2))) {
      SnapshotStore s = read_store(dir);
      states = s.state;
      detail::check_state_snapshots(states, p);
    } else {
      states = split_monolithic_snapshots(monolithic_solve(p), p.decomposition);
    }
    MgdOptions opt;
    opt.m = m;
    opt.delta = k.delta;
    opt.alpha = k.alpha;
    opt.workers = c.workers();
    store = collect_mgd(p, states, opt);
    target = dir / ("mgd" + std::to_string(m));
  } else {
    store = collect_gdra(p, k.config());
    target = dir / "gdra";
  }
  write_store(store, target);
  long long pairs = 0;
  for (int v : store.pairs_per_step) pairs += v;
  out << "collect-adjoint " << method << ": " << store.pairs_per_step.size() << " steps, " << pairs
      << " adjoint pairs, " << store.adjoint[0].data.cols() << " columns per side written to " << target.string()
      << "\n";
  return ok;
}

inline int cmd_pod(const std::string& input, int modes, std::string output, std::ostream& out) {
  Json meta;
  const SnapshotMatrix s = read_matrix(input, &meta);
  const int rank_cap = static_cast<int>(std::min(s.data.rows(), s.data.cols()));
  if (modes > rank_cap)
    throw std::invalid_argument("--modes " + std::to_string(modes) + " exceeds snapshot dimension " +
                                std::to_string(rank_cap));
  const ReducedBasis all = pod_all(s.data);
  const Vector energy = snapshot_energy(all.sigma);
  if (output.empty()) {
    std::filesystem::path o(input);
    o.replace_extension(".pod" + std::to_string(modes) + ".snap");
    output = o.string();
  }
  meta["kind"] = "basis";
  meta["source"] = input;
  meta["modes"] = modes;
  std::vector<double> sigma(all.sigma.data(), all.sigma.data() + modes);
  meta["sigma"] = sigma;
  write_snap(output, all.psi.leftCols(modes), meta);
  out << "pod: " << modes << " of " << all.sigma.size() << " modes, energy " << format_sci(energy[modes - 1])
      << ", sigma_last/sigma_0 " << format_sci(all.sigma[0] > 0.0 ? all.sigma[modes - 1] / all.sigma[0] : 0.0)
      << ", basis written to " << output << "\n";
  return ok;
}

inline int cmd_couple(const CommonOptions& c, const CouplingOptions& k, const std::string& state,
                      const std::string& adjoint, int m, bool strict, bool timing, std::ostream& out,
                      std::ostream& err) {
  BackendSpec b;
  b.state_modes = parse_state_backend(state);
  const auto [source, modes] = parse_adjoint_backend(adjoint);
  b.adjoint = source;
  b.adjoint_modes = modes;
  b.mgd_m = m;
  BenchmarkSpec spec;
  spec.problem = c.rotation();
  spec.coupling = k.config();
  spec.workers = c.workers();
  spec.output_dir = c.out;
  Experiment ex(spec);
  const ReportRow row = ex.run(b);
  std::filesystem::create_directories(spec.output_dir);
  write_report_csv(spec.output_dir / "couple.csv", {row}, timing);
  out << report_header() << "\n" << report_line(row, timing) << "\n";
  if (!row.failure.empty()) {
    err << "couple failed: " << row.failure << "\n";
    return failure;
  }
  if (strict && !row.converged) {
    err << "couple: some time steps did not converge\n";
    return failure;
  }
  return ok;
}

struct ReportOptions {
  std::vector<int> tables{1, 3, 5, 9};
  std::vector<int> modes{50, 100};
  int rom_state = 100;
  int rom_adjoint = 50;
  double timing_delta = 1e-8;
  double timing_tol = 1e-6;
  bool timing = false;
};

inline int cmd_report(const CommonOptions& c, const CouplingOptions& k, const ReportOptions& r, std::ostream& out) {
  BenchmarkSpec spec;
  spec.problem = c.rotation();
  spec.coupling = k.config();
  spec.workers = c.workers();
  spec.output_dir = c.out;
  Experiment ex(spec);
  std::filesystem::create_directories(spec.output_dir);
  const std::set<int> tables(r.tables.begin(), r.tables.end());
  const auto emit = [&](int t, const std::vector<ReportRow>& rows, bool timing) {
    const auto path = spec.output_dir / ("table" + std::to_string(t) + ".csv");
    write_report_csv(path, rows, timing);
    out << "table " << t << ": " << rows.size() << " rows -> " << path.string() << "\n";
  };
  const auto sweep = [&](AdjointSource a, bool same_modes) {
    std::vector<ReportRow> rows;
    for (int n : r.modes) {
      BackendSpec b;
      b.state_modes = n;
      b.adjoint = a;
      b.adjoint_modes = same_modes ? n : 0;
      rows.push_back(ex.run(b));
    }
    return rows;
  };
  if (tables.count(1)) emit(1, sweep(AdjointSource::full, false), r.timing);
  if (tables.count(2)) {
    std::vector<std::string> lines;
    for (int n : r.modes) {
      ProjectionRange all{std::numeric_limits<double>::infinity(), 0.0};
      for (int side = 1; side <= 2; ++side) {
        const auto pr = projection_range(ex.basis("state", side), n,
                                         ex.state_snapshots()[static_cast<std::size_t>(side - 1)].data);
        all.min = std::min(all.min, pr.min);
        all.max = std::max(all.max, pr.max);
      }
      lines.push_back(detail::projection_line(2, "state", "state", n, all));
    }
    detail::write_lines(spec.output_dir / "table2.csv", detail::projection_header(), lines);
    out << "table 2: " << lines.size() << " rows\n";
  }
  if (tables.count(3)) emit(3, sweep(AdjointSource::state, true), r.timing);
  if (tables.count(4) || tables.count(6)) {
    std::vector<ProjectionTarget> targets;
    std::vector<std::pair<int, std::string>> labels;
    for (const auto& [t, key] : {std::pair<int, std::string>{4, "state"}, {6, "mgd1"}, {6, "mgd2"}}) {
      if (!tables.count(t)) continue;
      for (int n : r.modes) {
        targets.push_back({key, {ex.basis_columns(key, 1, n), ex.basis_columns(key, 2, n)}});
        labels.emplace_back(t, key);
      }
    }
    CouplingConfig cfg = k.config();
    cfg.delta = spec.gdra_delta;
    cfg.tol = spec.gdra_tol;
    const StreamedProjections sp = streamed_projections(ex.problem(), cfg, targets, {});
    std::map<int, std::vector<std::string>> lines;
    for (std::size_t i = 0; i < targets.size(); ++i)
      lines[labels[i].first].push_back(detail::projection_line(
          labels[i].first, "gdra_adjoint", labels[i].second, static_cast<int>(targets[i].psi[0].cols()),
          sp.adjoint[i]));
    for (const auto& [t, l] : lines) {
      detail::write_lines(spec.output_dir / ("table" + std::to_string(t) + ".csv"), detail::projection_header(), l);
      out << "table " << t << ": " << l.size() << " rows from " << sp.adjoint_vectors << " adjoint vectors\n";
    }
  }
  if (tables.count(5)) {
    std::vector<ReportRow> rows;
    for (int n : r.modes) {
      BackendSpec b;
      b.state_modes = n;
      b.adjoint = AdjointSource::mgd;
      b.adjoint_modes = n;
      rows.push_back(ex.run(b));
    }
    emit(5, rows, r.timing);
  }
  if (tables.count(9)) {
    CouplingConfig cfg = k.config();
    cfg.delta = r.timing_delta;
    cfg.tol = r.timing_tol;
    BackendSpec fom, rom;
    rom.state_modes = r.rom_state;
    rom.adjoint = AdjointSource::mgd;
    rom.adjoint_modes = r.rom_adjoint;
    emit(9, {ex.run(fom, nullptr, cfg), ex.run(rom, nullptr, cfg)}, r.timing);
  }
  std::vector<std::pair<std::string, const ReducedBasis*>> sv;
  for (int side = 1; side <= 2; ++side) sv.emplace_back("state_" + std::to_string(side), &ex.basis("state", side));
  if (tables.count(5) || tables.count(6) || tables.count(9))
    for (int side = 1; side <= 2; ++side) sv.emplace_back("mgd1_" + std::to_string(side), &ex.basis("mgd1", side));
  write_singular_values_csv(spec.output_dir / "singular_values.csv", sv);
  return ok;
}

inline int cmd_gradcheck(const CommonOptions& c, double delta, double eps, int directions, bool strict,
                         double threshold, std::ostream& out, std::ostream& err) {
  const ProblemSpec p = solid_body_rotation_problem(c.rotation());
  const SubdomainSolver f1(p, 1), f2(p, 2);
  const FullStateModel s1(f1), s2(f2);
  const FullAdjointModel a1(f1), a2(f2);
  const CoupledModels models{s1, s2, a1, a2, f1.interface_mass().mass};
  std::mt19937 rng(c.seed);
  std::normal_distribution<double> nd;
  Vector g(f1.control_count());
  for (auto& v : g) v = nd(rng);
  const double e = fd_gradient_check(models, s1.initial(), s2.initial(), 1, g, delta, eps, directions, c.seed);
  out << "level,supg,delta,eps,directions,rel_error\n"
      << c.level << ',' << (c.supg ? "true" : "false") << ',' << format_sci(delta) << ',' << format_sci(eps) << ','
      << directions << ',' << format_sci(e) << "\n";
  if (strict && !(e <= threshold)) {
    err << "gradcheck: relative error " << format_sci(e) << " above " << format_sci(threshold) << "\n";
    return failure;
  }
  return ok;
}

/// Returns 0 on success, 1 on fatal numerical failure, 2 on invalid arguments.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Optimization-based FOM/ROM coupling for transient advection-diffusion", "obc_cli"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  CommonOptions common;
  CouplingOptions coupling;

  auto* mono = app.add_subcommand("monolithic", "monolithic reference solve and state snapshots");
  detail::add_common(mono, common);

  std::string method;
  int m = 1;
  auto* collect = app.add_subcommand("collect-adjoint", "collect adjoint snapshots");
  detail::add_common(collect, common);
  detail::add_coupling(collect, coupling);
  collect->add_option("--method", method, "gdra or mgd")->required()->check(CLI::IsMember({"gdra", "mgd"}));
  collect->add_option("--m", m, "adjoint pairs per time step (mgd)")->check(CLI::Range(1, 100000));

  std::string input, output;
  int modes = 0;
  auto* pod_cmd = app.add_subcommand("pod", "POD basis of a SNAP1 snapshot matrix");
  pod_cmd->add_option("--config", common.config, "JSON file with option defaults");
  pod_cmd->add_option("--input", input, "SNAP1 snapshot file")->required()->check(CLI::ExistingFile);
  pod_cmd->add_option("--modes", modes, "number of modes")->required()->check(CLI::Range(1, 1 << 30));
  pod_cmd->add_option("--output", output, "basis file (default: next to the input)");

  std::string state = "fom", adjoint = "full";
  bool strict = false, timing = false;
  auto* couple = app.add_subcommand("couple", "one coupled transient run");
  detail::add_common(couple, common);
  detail::add_coupling(couple, coupling);
  couple->add_option("--state", state, "fom or rom:N");
  couple->add_option("--adjoint", adjoint, "full, sra:N, mgd:N or gdra:N");
  couple->add_option("--m", m, "adjoint pairs per step of the MGD basis")->check(CLI::Range(1, 100000));
  couple->add_flag("--strict", strict, "exit 1 when a time step does not converge");
  couple->add_flag("--timing", timing, "write wall times to the CSV");

  ReportOptions rep;
  auto* report = app.add_subcommand("report", "tables of errors, iterations and projection errors");
  detail::add_common(report, common);
  detail::add_coupling(report, coupling);
  report->add_option("--tables", rep.tables, "comma separated table numbers")
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
      ->check(CLI::IsMember({1, 2, 3, 4, 5, 6, 9}));
  report->add_option("--modes", rep.modes, "comma separated mode counts")
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
      ->check(CLI::Range(1, 1 << 30));
  report->add_option("--rom-state", rep.rom_state, "state modes of the timing run")->check(CLI::Range(1, 1 << 30));
  report->add_option("--rom-adjoint", rep.rom_adjoint, "adjoint modes of the timing run")
      ->check(CLI::Range(1, 1 << 30));
  report->add_option("--timing-delta", rep.timing_delta, "delta of the timing runs")->check(CLI::NonNegativeNumber);
  report->add_option("--timing-tol", rep.timing_tol, "tolerance of the timing runs")->check(CLI::PositiveNumber);
  report->add_flag("--timing", rep.timing, "write wall times to the CSVs");

  double gc_delta = 0.0, eps = 1e-6, threshold = 1e-5;
  int directions = 20;
  auto* grad = app.add_subcommand("gradcheck", "finite difference check of the adjoint gradient");
  detail::add_common(grad, common);
  grad->add_option("--delta", gc_delta, "control penalty")->check(CLI::NonNegativeNumber);
  grad->add_option("--eps", eps, "difference step")->check(CLI::PositiveNumber);
  grad->add_option("--directions", directions, "control directions")->check(CLI::Range(1, 1 << 20));
  grad->add_option("--threshold", threshold, "bound used with --strict")->check(CLI::PositiveNumber);
  grad->add_flag("--strict", strict, "exit 1 above the threshold");

  std::vector<std::string> args(argv, argv + argc);
  try {
    args = detail::expand_config(app, args);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return usage;
  }
  std::vector<const char*> raw;
  for (const auto& a : args) raw.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(raw.size()), raw.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : usage;
  }

  try {
    if (*mono) return cmd_monolithic(common, out);
    if (*collect) return cmd_collect(common, coupling, method, m, out);
    if (*pod_cmd) return cmd_pod(input, modes, output, out);
    if (*couple) return cmd_couple(common, coupling, state, adjoint, m, strict, timing, out, err);
    if (*report) return cmd_report(common, coupling, rep, out);
    if (*grad) return cmd_gradcheck(common, gc_delta, eps, directions, strict, threshold, out, err);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return usage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return failure;
  }
  return usage;
}

}  // namespace obc::cli
