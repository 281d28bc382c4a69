#pragma once

// Matrix kernels: triplet assembly into compressed-row storage, reusable sparse
// and dense LU factorizations, and thin SVD for POD.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SVD>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace obc {

using Vector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;  // column-major
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

class FactorizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Triplet {
  int row = 0;
  int col = 0;
  double value = 0.0;
};

/// Duplicate (row, col) entries are summed.
inline SparseMatrix from_triplets(int n_rows, int n_cols, std::span<const Triplet> entries) {
  if (n_rows < 0 || n_cols < 0) throw std::invalid_argument("from_triplets: negative dimension");
  std::vector<Eigen::Triplet<double, int>> eigen_entries;
  eigen_entries.reserve(entries.size());
  for (const Triplet& t : entries) {
    if (t.row < 0 || t.row >= n_rows || t.col < 0 || t.col >= n_cols)
      throw std::invalid_argument("from_triplets: index (" + std::to_string(t.row) + ", " + std::to_string(t.col) +
                                  ") out of range");
    eigen_entries.emplace_back(t.row, t.col, t.value);
  }
  SparseMatrix m(n_rows, n_cols);
  m.setFromTriplets(eigen_entries.begin(), eigen_entries.end());
  m.makeCompressed();
  return m;
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

/// Sparse LU of a square matrix, computed once and reused for any number of solves.
/// Solves are const and may run concurrently.
class Factorization {
 public:
  Factorization() = default;

  explicit Factorization(const SparseMatrix& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("factorize: matrix is not square");
    auto lu = std::make_shared<Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>>>();
    Eigen::SparseMatrix<double> col_major = a;
    col_major.makeCompressed();
    lu->analyzePattern(col_major);
    lu->factorize(col_major);
    if (lu->info() != Eigen::Success)
      throw FactorizationError("sparse LU failed: " + (lu->lastErrorMessage().empty() ? std::string("singular matrix")
                                                                                         : lu->lastErrorMessage()));
    lu_ = std::move(lu);
    n_ = static_cast<int>(a.rows());
  }

  int size() const { return n_; }
  bool valid() const { return static_cast<bool>(lu_); }

  Vector solve(const Vector& b) const {
    if (!lu_) throw std::logic_error("Factorization::solve on empty factorization");
    if (b.size() != n_) throw std::invalid_argument("Factorization::solve: dimension mismatch");
    return lu_->solve(b);
  }

 private:
  std::shared_ptr<const Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>>> lu_;
  int n_ = 0;
};

inline Factorization factorize(const SparseMatrix& a) { return Factorization(a); }

/// Dense LU with partial pivoting for the reduced systems.
class DenseFactorization {
 public:
  DenseFactorization() = default;

  explicit DenseFactorization(const DenseMatrix& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("dense factorize: matrix is not square");
    if (!a.allFinite()) throw FactorizationError("dense LU: non-finite matrix");
    lu_ = std::make_shared<Eigen::PartialPivLU<DenseMatrix>>(a);
    const auto& lu = lu_->matrixLU();
    const double scale = a.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < lu.rows(); ++i) {
      if (!(std::abs(lu(i, i)) > 1e-300) || std::abs(lu(i, i)) < 1e-15 * scale)
        throw FactorizationError("dense LU: singular matrix");
    }
  }

  int size() const { return lu_ ? static_cast<int>(lu_->rows()) : 0; }

  Vector solve(const Vector& b) const {
    if (!lu_) throw std::logic_error("DenseFactorization::solve on empty factorization");
    return lu_->solve(b);
  }

 private:
  std::shared_ptr<const Eigen::PartialPivLU<DenseMatrix>> lu_;
};

struct SvdResult {
  DenseMatrix u;      // n_rows x k, orthonormal columns
  Vector sigma;       // k values, nonincreasing
  DenseMatrix vt;     // k x n_cols (empty when only left vectors were requested)
};

/// Economy-size SVD, k = min(rows, cols), by bidiagonal divide and conquer.
inline SvdResult thin_svd(const DenseMatrix& s, bool want_vt = true) {
  if (!s.allFinite()) throw std::invalid_argument("thin_svd: non-finite input");
  SvdResult out;
  if (s.size() == 0) {
    out.u.resize(s.rows(), 0);
    out.vt.resize(0, s.cols());
    return out;
  }
  const unsigned opts = want_vt ? (Eigen::ComputeThinU | Eigen::ComputeThinV) : Eigen::ComputeThinU;
  Eigen::BDCSVD<DenseMatrix> svd(s, opts);
  if (svd.info() != Eigen::Success) throw std::runtime_error("thin_svd: decomposition did not converge");
  out.u = svd.matrixU();
  out.sigma = svd.singularValues();
  if (want_vt) out.vt = svd.matrixV().transpose();
  return out;
}

}  // namespace obc
