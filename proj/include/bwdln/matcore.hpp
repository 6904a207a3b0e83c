#pragma once

// Dense symmetric and rectangular kernels shared by every other module.
// Everything is backed by Eigen; matrices are column-major Eigen::MatrixXd.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>

#include "bwdln/errors.hpp"

namespace bwdln {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Relative tolerance used to accept a matrix as symmetric.
inline constexpr double kSymmetryTol = 1e-10;
/// Eigenvalues in [-kClampRel * lambda_max, 0) are treated as round-off and set to 0.
inline constexpr double kClampRel = 1e-12;
/// Eigenvalues within 64 n eps lambda_max of zero are below the eigensolver's
/// backward error and are stored as exact zeros.
inline constexpr double kSnapFactor = 64.0;
/// Default numerical-rank threshold, relative to the largest singular value.
inline constexpr double kRankTol = 1e-10;

inline void require_finite(const Matrix& a, const char* what) {
  if (!a.allFinite()) {
    throw InputError(std::string(what) + ": non-finite entries");
  }
}

/// Symmetric eigendecomposition, eigenvalues sorted descending.
struct SymEig {
  Matrix eigvecs;
  Vector eigvals;

  Eigen::Index size() const { return eigvals.size(); }
  Matrix reconstruct() const {
    return eigvecs * eigvals.asDiagonal() * eigvecs.transpose();
  }
  /// V f(Lambda) V^T for an elementwise spectral function f.
  template <typename F>
  Matrix apply(F&& f) const {
    Vector mapped = eigvals.unaryExpr(std::forward<F>(f));
    return eigvecs * mapped.asDiagonal() * eigvecs.transpose();
  }
};

/// Thin SVD truncated to the numerical rank: A ~ left * diag(singvals) * right^T.
struct ThinSvd {
  Matrix left;
  Vector singvals;
  Matrix right;

  Eigen::Index rank() const { return singvals.size(); }
  Matrix reconstruct() const {
    return left * singvals.asDiagonal() * right.transpose();
  }
};

namespace detail {

inline Matrix symmetrized(const Matrix& s) { return 0.5 * (s + s.transpose()); }

// Flip each column so that its first component above `eps` in magnitude is positive.
inline void fix_first_nonzero_sign(Matrix& v) {
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      if (std::abs(v(i, j)) > 1e-10) {
        if (v(i, j) < 0) v.col(j) *= -1.0;
        break;
      }
    }
  }
}

}  // namespace detail

/// Eigendecomposition of a symmetric matrix. The input is symmetrized first;
/// asymmetry beyond kSymmetryTol (relative Frobenius) is rejected.
inline SymEig spectral_decompose(const Matrix& s) {
  require_finite(s, "spectral_decompose");
  if (s.rows() != s.cols()) throw InputError("spectral_decompose: matrix not square");
  const double norm = s.norm();
  if ((s - s.transpose()).norm() > kSymmetryTol * std::max(norm, 1e-300)) {
    throw InputError("spectral_decompose: matrix not symmetric");
  }
  const Eigen::Index n = s.rows();
  SymEig out;
  if (n == 0) return out;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(detail::symmetrized(s));
  if (solver.info() != Eigen::Success) throw InternalError("spectral_decompose: no convergence");
  // Eigen sorts ascending.
  out.eigvals = solver.eigenvalues().reverse();
  out.eigvecs = solver.eigenvectors().rowwise().reverse();
  detail::fix_first_nonzero_sign(out.eigvecs);
  return out;
}

/// Symmetric positive semidefinite matrix with its spectral decomposition
/// computed once at construction. Slightly negative eigenvalues (round-off)
/// are clamped to zero in the cached spectrum, as are positive ones at the
/// round-off level.
class PsdMatrix {
 public:
  explicit PsdMatrix(const Matrix& s) : mat_(detail::symmetrized(s)), eig_(spectral_decompose(s)) {
    const double lmax = eig_.size() ? std::max(eig_.eigvals(0), 0.0) : 0.0;
    const double clamp = kClampRel * lmax;
    const double snap = kSnapFactor * static_cast<double>(eig_.size()) * std::numeric_limits<double>::epsilon() * lmax;
    for (Eigen::Index i = 0; i < eig_.size(); ++i) {
      double& l = eig_.eigvals(i);
      if (std::abs(l) <= snap) {
        l = 0.0;
      } else if (l < 0) {
        if (l < -clamp) {
          throw NotPsdError("PsdMatrix: eigenvalue " + std::to_string(l) + " below -" +
                            std::to_string(clamp));
        }
        l = 0.0;
      }
    }
  }

  /// Builds from an eigendecomposition whose eigenvalues are already nonnegative.
  static PsdMatrix from_spectral(SymEig eig) {
    PsdMatrix p;
    p.mat_ = detail::symmetrized(eig.reconstruct());
    p.eig_ = std::move(eig);
    return p;
  }

  const Matrix& mat() const { return mat_; }
  const SymEig& eig() const { return eig_; }
  Eigen::Index dim() const { return mat_.rows(); }
  double lambda_max() const { return eig_.size() ? eig_.eigvals(0) : 0.0; }
  double lambda_min() const { return eig_.size() ? eig_.eigvals(eig_.size() - 1) : 0.0; }
  double trace() const { return mat_.trace(); }

 private:
  PsdMatrix() = default;
  Matrix mat_;
  SymEig eig_;
};

/// Principal square root via the cached eigendecomposition.
inline PsdMatrix sqrtm_psd(const PsdMatrix& s) {
  SymEig e = s.eig();
  e.eigvals = e.eigvals.cwiseSqrt();
  return PsdMatrix::from_spectral(std::move(e));
}

/// S^p for a PSD matrix; p may be fractional. Zero eigenvalues stay zero for p > 0.
inline Matrix psd_power(const PsdMatrix& s, double p) {
  if (p == 0.0) return Matrix::Identity(s.dim(), s.dim());
  return s.eig().apply([p](double l) { return l > 0 ? std::pow(l, p) : 0.0; });
}

/// S^{-1/2}; throws SingularityError when lambda_min(S) < floor.
inline Matrix invsqrtm_pd(const PsdMatrix& s, double floor) {
  if (!(floor > 0)) throw InputError("invsqrtm_pd: floor must be positive");
  if (s.lambda_min() < floor) {
    throw SingularityError("invsqrtm_pd: lambda_min " + std::to_string(s.lambda_min()) +
                           " below floor " + std::to_string(floor));
  }
  return s.eig().apply([](double l) { return 1.0 / std::sqrt(l); });
}

/// Thin SVD truncated at numerical rank #{sigma_i > rank_tol * sigma_1}.
/// Sign convention: the largest-magnitude entry of every left vector is positive.
inline ThinSvd thin_svd(const Matrix& a, double rank_tol = kRankTol) {
  require_finite(a, "thin_svd");
  ThinSvd out;
  if (a.size() == 0) return out;
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  Eigen::Index k = 0;
  const double cutoff = rank_tol * s(0);
  while (k < s.size() && s(k) > cutoff && s(k) > 0) ++k;
  out.left = svd.matrixU().leftCols(k);
  out.right = svd.matrixV().leftCols(k);
  out.singvals = s.head(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    Eigen::Index imax = 0;
    out.left.col(j).cwiseAbs().maxCoeff(&imax);
    if (out.left(imax, j) < 0) {
      out.left.col(j) *= -1.0;
      out.right.col(j) *= -1.0;
    }
  }
  return out;
}

/// Orthogonal factor U V^T of the full SVD A = U S V^T, so that A = P * result
/// with P = U S U^T positive semidefinite.
inline Matrix polar_orthogonal(const Matrix& a) {
  require_finite(a, "polar_orthogonal");
  if (a.rows() != a.cols()) throw InputError("polar_orthogonal: matrix not square");
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

/// Haar-distributed orthogonal matrix: QR of a standard Gaussian matrix with
/// the signs of diag(R) absorbed into Q. Deterministic per seed.
inline Matrix random_orthogonal(Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw InputError("random_orthogonal: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix g(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) g(i, j) = gauss(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(n, n);
  const Matrix& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return q;
}

/// Matrix with i.i.d. standard Gaussian entries.
inline Matrix random_gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix g(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) g(i, j) = gauss(rng);
  return g;
}

// ---- vec / Kronecker / commutation -------------------------------------

/// Column-stacking vectorization.
inline Vector vec(const Matrix& a) {
  return Eigen::Map<const Vector>(a.data(), a.size());
}

inline Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) throw InputError("unvec: size mismatch");
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// K_{pq}: commutation(p, q) * vec(X) = vec(X^T) for every p x q matrix X.
inline Matrix commutation(Eigen::Index p, Eigen::Index q) {
  if (p < 1 || q < 1) throw InputError("commutation: dimensions must be positive");
  Matrix k = Matrix::Zero(p * q, p * q);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < q; ++j) k(j + i * q, i + j * p) = 1.0;
  return k;
}

/// m * commutation(p, q) computed as a column permutation.
inline Matrix times_commutation(const Matrix& m, Eigen::Index p, Eigen::Index q) {
  if (m.cols() != p * q) throw InputError("times_commutation: shape mismatch");
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < q; ++j) out.col(i + j * p) = m.col(j + i * q);
  return out;
}

/// commutation(p, q) * m computed as a row permutation.
inline Matrix commutation_times(Eigen::Index p, Eigen::Index q, const Matrix& m) {
  if (m.rows() != p * q) throw InputError("commutation_times: shape mismatch");
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < q; ++j) out.row(j + i * q) = m.row(i + j * p);
  return out;
}

}  // namespace bwdln
