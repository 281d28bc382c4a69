#pragma once

// Snapshot extraction and adjoint snapshot collection, plus the SNAP1 binary
// format used to persist snapshot matrices.
//
// SNAP1 layout (all integers little-endian):
//   bytes 0..4   "SNAP1"
//   byte  5      version (1)
//   u32          rows
//   u32          cols
//   u32          metadata length L, then L bytes of UTF-8 JSON
//   rows*cols    f64, column-major

#include "obc/coupling.hpp"
#include "obc/fom.hpp"
#include "obc/rom.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cstdint>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace obc {

using Json = nlohmann::json;

class SnapshotFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SnapshotStore {
  std::array<SnapshotMatrix, 2> state;    // per subdomain; empty when not collected
  std::array<SnapshotMatrix, 2> adjoint;  // per subdomain; empty when not collected
  std::vector<int> pairs_per_step;        // adjoint pairs contributed by each timestep
  Json metadata = Json::object();

  SnapshotMatrix& state_of(int side) { return state.at(static_cast<std::size_t>(side - 1)); }
  const SnapshotMatrix& state_of(int side) const { return state.at(static_cast<std::size_t>(side - 1)); }
  SnapshotMatrix& adjoint_of(int side) { return adjoint.at(static_cast<std::size_t>(side - 1)); }
  const SnapshotMatrix& adjoint_of(int side) const { return adjoint.at(static_cast<std::size_t>(side - 1)); }
};

/// Splits every monolithic state into the free DOFs of each subdomain. Interface
/// values appear in both matrices. Columns follow the trajectory, u^0 first.
inline std::array<SnapshotMatrix, 2> split_monolithic_snapshots(const Trajectory& traj, const Decomposition& dec) {
  std::array<SnapshotMatrix, 2> out;
  const int n_cols = static_cast<int>(traj.states.size());
  for (int side = 1; side <= 2; ++side) {
    SnapshotMatrix& s = out[static_cast<std::size_t>(side - 1)];
    s.kind = SnapshotKind::state;
    s.side = side;
    s.data.resize(dec.side(side).dofs.free_count(), n_cols);
  }
  for (int c = 0; c < n_cols; ++c) {
    if (traj.states[static_cast<std::size_t>(c)].size() != dec.global_dofs.free_count())
      throw std::invalid_argument("split_monolithic_snapshots: trajectory does not match the decomposition");
    for (int side = 1; side <= 2; ++side)
      out[static_cast<std::size_t>(side - 1)].data.col(c) =
          restrict_to_subdomain(dec, side, traj.states[static_cast<std::size_t>(c)]);
  }
  return out;
}

namespace detail {

inline DenseMatrix stack_columns(const std::vector<Vector>& cols, int rows) {
  DenseMatrix m(rows, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) m.col(static_cast<Eigen::Index>(c)) = cols[c];
  return m;
}

inline Json problem_metadata(const ProblemSpec& p) {
  return Json{{"nx", p.decomposition.global.nx},
              {"ny", p.decomposition.global.ny},
              {"nu", p.nu},
              {"dt", p.dt},
              {"final_time", p.final_time},
              {"steps", p.steps()},
              {"supg", p.supg}};
}

}  // namespace detail

/// Adjoint snapshots from a FOM-FOM coupled run: every adjoint pair computed by
/// gradient descent at every timestep, in the order they were computed.
inline SnapshotStore collect_gdra(const ProblemSpec& problem, const CouplingConfig& cfg,
                                  TransientResult* run_out = nullptr) {
  const SubdomainSolver f1(problem, 1), f2(problem, 2);
  const FullStateModel s1(f1), s2(f2);
  const FullAdjointModel a1(f1), a2(f2);
  const CoupledModels models{s1, s2, a1, a2, f1.interface_mass().mass};

  std::vector<Vector> mu1, mu2;
  const int n_steps = problem.steps();
  std::vector<int> per_step(static_cast<std::size_t>(n_steps), 0);
  TransientResult run = run_transient(models, n_steps, cfg, [&](int n, const Vector& m1, const Vector& m2) {
    mu1.push_back(m1);
    mu2.push_back(m2);
    ++per_step[static_cast<std::size_t>(n - 1)];
  });

  SnapshotStore store;
  store.adjoint[0] = {detail::stack_columns(mu1, f1.free_count()), SnapshotKind::adjoint_gdra, 1};
  store.adjoint[1] = {detail::stack_columns(mu2, f2.free_count()), SnapshotKind::adjoint_gdra, 2};
  store.pairs_per_step = std::move(per_step);
  store.metadata = {{"method", "gdra"},
                    {"delta", cfg.delta},
                    {"tol", cfg.tol},
                    {"alpha", cfg.alpha},
                    {"warm_start", cfg.warm_start},
                    {"iterations", run.total_iterations()},
                    {"all_converged", run.all_converged()},
                    {"problem", detail::problem_metadata(problem)}};
  if (run_out) *run_out = std::move(run);
  return store;
}

struct MgdOptions {
  int m = 1;
  double delta = 1e-16;
  double alpha = 2.0;
  int workers = 1;
  bool reverse_order = false;
};

/// Adjoint pairs of one timestep of the modified descent. Depends only on the
/// state snapshots at n-1 and the zero initial control.
inline void mgd_timestep(const SubdomainSolver& f1, const SubdomainSolver& f2, const Vector& snap1_prev,
                         const Vector& snap2_prev, int n, const MgdOptions& opt, Vector* mu1_out, Vector* mu2_out) {
  const Vector forcing1 = f1.has_forcing() ? f1.forcing(n) : Vector::Zero(f1.free_count());
  const Vector forcing2 = f2.has_forcing() ? f2.forcing(n) : Vector::Zero(f2.free_count());
  Vector g = Vector::Zero(f1.control_count());
  for (int k = 0; k < opt.m; ++k) {
    const Vector u1 = f1.modified_state_step(snap1_prev, g, forcing1);
    const Vector u2 = f2.modified_state_step(snap2_prev, g, forcing2);
    const Vector jump = f1.trace(u1) - f2.trace(u2);
    mu1_out[k] = f1.adjoint_solve(jump);
    mu2_out[k] = f2.adjoint_solve(jump);
    g = (1.0 - opt.alpha * opt.delta) * g - opt.alpha * (f1.trace(mu1_out[k]) - f2.trace(mu2_out[k]));
  }
}

/// Adjoint snapshots by the modified descent: exactly m pairs per timestep, columns
/// ordered by timestep then iteration regardless of processing order or worker count.
inline SnapshotStore collect_mgd(const ProblemSpec& problem, const std::array<SnapshotMatrix, 2>& state_snaps,
                                 const MgdOptions& opt) {
  if (opt.m < 1) throw std::invalid_argument("collect_mgd: m must be >= 1");
  if (opt.workers < 1) throw std::invalid_argument("collect_mgd: workers must be >= 1");
  const int n_steps = problem.steps();
  const SubdomainSolver f1(problem, 1), f2(problem, 2);
  for (int side = 1; side <= 2; ++side) {
    const SnapshotMatrix& s = state_snaps[static_cast<std::size_t>(side - 1)];
    const int rows = side == 1 ? f1.free_count() : f2.free_count();
    if (s.rows() != rows) throw std::invalid_argument("collect_mgd: state snapshots do not match the subdomain");
    if (s.cols() < n_steps) throw std::invalid_argument("collect_mgd: missing state snapshot column");
  }

  const auto total = static_cast<std::size_t>(n_steps) * static_cast<std::size_t>(opt.m);
  std::vector<Vector> mu1(total), mu2(total);
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n_steps) return;
      const int n = opt.reverse_order ? n_steps - i : i + 1;
      const std::size_t base = static_cast<std::size_t>(n - 1) * static_cast<std::size_t>(opt.m);
      try {
        mgd_timestep(f1, f2, state_snaps[0].data.col(n - 1), state_snaps[1].data.col(n - 1), n, opt, &mu1[base],
                     &mu2[base]);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (opt.workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < opt.workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  SnapshotStore store;
  store.adjoint[0] = {detail::stack_columns(mu1, f1.free_count()), SnapshotKind::adjoint_mgd, 1};
  store.adjoint[1] = {detail::stack_columns(mu2, f2.free_count()), SnapshotKind::adjoint_mgd, 2};
  store.pairs_per_step.assign(static_cast<std::size_t>(n_steps), opt.m);
  store.metadata = {{"method", "mgd"},
                    {"m", opt.m},
                    {"delta", opt.delta},
                    {"alpha", opt.alpha},
                    {"initial_control", "zero"},
                    {"problem", detail::problem_metadata(problem)}};
  return store;
}

// ---- SNAP1 files ----

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline constexpr char snap_magic[5] = {'S', 'N', 'A', 'P', '1'};
inline constexpr std::uint8_t snap_version = 1;

}  // namespace detail

inline std::string encode_snap(const DenseMatrix& data, const Json& metadata) {
  constexpr auto max_u32 = std::numeric_limits<std::uint32_t>::max();
  if (static_cast<std::uint64_t>(data.rows()) > max_u32 || static_cast<std::uint64_t>(data.cols()) > max_u32)
    throw SnapshotFormatError("SNAP1: matrix dimensions exceed 32 bits");
  const std::string meta = metadata.dump();
  if (meta.size() > max_u32) throw SnapshotFormatError("SNAP1: metadata too large");
  std::string out;
  out.reserve(18 + meta.size() + static_cast<std::size_t>(data.size()) * 8);
  out.append(detail::snap_magic, 5);
  out.push_back(static_cast<char>(detail::snap_version));
  detail::put_u32(out, static_cast<std::uint32_t>(data.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(data.cols()));
  detail::put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(data.data()[i]);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
  }
  return out;
}

struct DecodedSnap {
  DenseMatrix data;
  Json metadata;
};

inline DecodedSnap decode_snap(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t size = bytes.size();
  if (size < 6 || std::memcmp(p, detail::snap_magic, 5) != 0) throw SnapshotFormatError("SNAP1: bad magic");
  if (p[5] != detail::snap_version)
    throw SnapshotFormatError("SNAP1: unsupported version " + std::to_string(static_cast<int>(p[5])));
  if (size < 18) throw SnapshotFormatError("SNAP1: truncated header");
  const std::uint64_t rows = detail::get_u32(p + 6);
  const std::uint64_t cols = detail::get_u32(p + 10);
  const std::uint64_t meta_len = detail::get_u32(p + 14);
  if (size < 18 + meta_len) throw SnapshotFormatError("SNAP1: truncated metadata");
  const std::uint64_t count = rows * cols;
  if (cols != 0 && count / cols != rows) throw SnapshotFormatError("SNAP1: dimension overflow");
  if (count > (std::numeric_limits<std::uint64_t>::max() - 18 - meta_len) / 8)
    throw SnapshotFormatError("SNAP1: dimension overflow");
  if (size != 18 + meta_len + count * 8)
    throw SnapshotFormatError("SNAP1: payload size does not match the header");
  DecodedSnap out;
  try {
    out.metadata = meta_len == 0 ? Json::object() : Json::parse(bytes.substr(18, meta_len));
  } catch (const Json::parse_error& e) {
    throw SnapshotFormatError(std::string("SNAP1: invalid metadata: ") + e.what());
  }
  out.data.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const unsigned char* q = p + 18 + meta_len;
  for (std::uint64_t i = 0; i < count; ++i, q += 8) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(q[b]) << (8 * b);
    out.data.data()[i] = std::bit_cast<double>(bits);
  }
  return out;
}

inline void write_snap(const std::filesystem::path& path, const DenseMatrix& data, const Json& metadata) {
  const std::string bytes = encode_snap(data, metadata);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write to '" + path.string() + "' failed");
}

inline DecodedSnap read_snap(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_snap(bytes);
}

inline void write_matrix(const std::filesystem::path& path, const SnapshotMatrix& s, Json metadata = Json::object()) {
  metadata["kind"] = to_string(s.kind);
  metadata["side"] = s.side;
  write_snap(path, s.data, metadata);
}

inline SnapshotMatrix read_matrix(const std::filesystem::path& path, Json* metadata = nullptr) {
  DecodedSnap d = read_snap(path);
  SnapshotMatrix s;
  s.data = std::move(d.data);
  s.kind = snapshot_kind_from_string(d.metadata.value("kind", std::string("state")));
  s.side = d.metadata.value("side", 1);
  if (metadata) *metadata = std::move(d.metadata);
  return s;
}

/// File names inside a store directory.
inline std::string store_file(const std::string& role, int side) { return role + "_" + std::to_string(side) + ".snap"; }

/// Writes the non-empty matrices of a store as SNAP1 files in `dir`; the store
/// metadata and pairs-per-step vector travel in every file's metadata block.
inline void write_store(const SnapshotStore& store, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Json meta = store.metadata;
  meta["pairs_per_step"] = store.pairs_per_step;
  for (int side = 1; side <= 2; ++side) {
    const SnapshotMatrix& s = store.state_of(side);
    if (s.data.size() > 0) write_matrix(dir / store_file("state", side), s, meta);
    const SnapshotMatrix& a = store.adjoint_of(side);
    if (a.data.size() > 0 || a.kind != SnapshotKind::state) write_matrix(dir / store_file("adjoint", side), a, meta);
  }
}

inline SnapshotStore read_store(const std::filesystem::path& dir) {
  SnapshotStore store;
  bool any = false;
  for (int side = 1; side <= 2; ++side) {
    for (const char* role : {"state", "adjoint"}) {
      const auto path = dir / store_file(role, side);
      if (!std::filesystem::exists(path)) continue;
      Json meta;
      SnapshotMatrix s = read_matrix(path, &meta);
      if (s.side != side) throw SnapshotFormatError("SNAP1: side mismatch in '" + path.string() + "'");
      if (meta.contains("pairs_per_step")) store.pairs_per_step = meta["pairs_per_step"].get<std::vector<int>>();
      meta.erase("pairs_per_step");
      meta.erase("kind");
      meta.erase("side");
      store.metadata = meta;
      (std::string(role) == "state" ? store.state_of(side) : store.adjoint_of(side)) = std::move(s);
      any = true;
    }
  }
  if (!any) throw std::runtime_error("no snapshot files in '" + dir.string() + "'");
  return store;
}

}  // namespace obc
