#pragma once

// Dense Hessians of the Frobenius loss 1/2 ||Sigma - Sigma_0||_F^2 and of the
// (tau-smoothed) Bures-Wasserstein loss, in covariance space (vec Sigma),
// function space (vec W, Sigma = W W^T) and parameter space (vec W_1, ..., vec W_N).

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "bwdln/bwloss.hpp"
#include "bwdln/network.hpp"

namespace bwdln {

enum class LossKind { frobenius, bw_tau };
enum class HessianSpace { covariance, function, parameter };

inline const char* to_string(LossKind k) { return k == LossKind::frobenius ? "frobenius" : "bw_tau"; }

struct HessianMatrix {
  Matrix mat;
  HessianSpace space = HessianSpace::covariance;
  LossKind kind = LossKind::frobenius;

  HessianMatrix() = default;
  HessianMatrix(const Matrix& m, HessianSpace s, LossKind k)
      : mat(0.5 * (m + m.transpose())), space(s), kind(k) {}

  Eigen::Index dim() const { return mat.rows(); }
  double quadratic(const Vector& v) const { return v.dot(mat * v); }
};

inline constexpr Eigen::Index kMaxParamHessianDim = 5000;

// ---- covariance space ---------------------------------------------------

inline HessianMatrix hess_cov_frobenius(const PsdMatrix& sigma, const Target& target) {
  detail::require_square_match(sigma.mat(), target, "hess_cov_frobenius");
  const Eigen::Index n2 = target.dim() * target.dim();
  return HessianMatrix(Matrix::Identity(n2, n2), HessianSpace::covariance, LossKind::frobenius);
}

inline Matrix grad_cov_frobenius(const PsdMatrix& sigma, const Target& target) {
  detail::require_square_match(sigma.mat(), target, "grad_cov_frobenius");
  return sigma.mat() - target.sigma0.mat();
}

/// Spectral data of A = S0^{1/2} Sigma S0^{1/2} = Gamma Q Gamma^T used by the
/// second differential of the BW loss.
struct BwCurvature {
  Matrix left;   // S0^{1/2} Gamma Q^{-1/2}
  Matrix right;  // Gamma^T S0^{1/2}
  Matrix p;      // P_ij = 1 / (sqrt(q_i) + sqrt(q_j))
};

inline BwCurvature bw_curvature(const PsdMatrix& sigma, const Target& target) {
  detail::require_square_match(sigma.mat(), target, "hess_cov_bw");
  const PsdMatrix a = detail::inner_argument(sigma.mat(), target);
  if (a.lambda_min() < kGradFloor) {
    throw SingularityError("hess_cov_bw: lambda_min(S0^1/2 Sigma S0^1/2) = " +
                           std::to_string(a.lambda_min()));
  }
  const Matrix& gamma = a.eig().eigvecs;
  const Vector rq = a.eig().eigvals.cwiseSqrt();
  const Eigen::Index n = rq.size();
  BwCurvature c;
  c.left = target.sqrt_sigma0 * gamma * rq.cwiseInverse().asDiagonal();
  c.right = gamma.transpose() * target.sqrt_sigma0;
  c.p.resize(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) c.p(i, j) = 1.0 / (rq(i) + rq(j));
  return c;
}

/// Operator form of the Hessian of Sigma -> B^2(Sigma, Sigma_0):
/// G(Y) = S0^{1/2} Gamma Q^{-1/2} (P o (Gamma^T S0^{1/2} Y S0^{1/2} Gamma)) Q^{-1/2} Gamma^T S0^{1/2}.
inline Matrix g_tau_apply(const PsdMatrix& sigma, const Target& target, const Matrix& y) {
  const BwCurvature c = bw_curvature(sigma, target);
  const Matrix inner = c.right * y * c.right.transpose();
  return c.left * c.p.cwiseProduct(inner) * c.left.transpose();
}

/// Matrix form of the same Hessian over vec(Sigma), assembled as
/// sum_k sigma_k B_k (x) B_k from the eigendecomposition P = sum_k sigma_k u_k u_k^T
/// and B_k = S0^{1/2} Gamma Q^{-1/2} Diag(u_k) Gamma^T S0^{1/2}. P is symmetric but
/// not necessarily PSD, so the sigma_k keep their signs.
inline HessianMatrix hess_cov_bw(const PsdMatrix& sigma, const Target& target) {
  const BwCurvature c = bw_curvature(sigma, target);
  const Eigen::Index n = c.p.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> es(c.p);
  if (es.info() != Eigen::Success) throw InternalError("hess_cov_bw: eigensolver failed");
  Matrix h = Matrix::Zero(n * n, n * n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Matrix b = c.left * es.eigenvectors().col(k).asDiagonal() * c.right;
    h.noalias() += es.eigenvalues()(k) * kron(b, b);
  }
  return HessianMatrix(h, HessianSpace::covariance, LossKind::bw_tau);
}

/// Orthonormal basis (n^2 x n(n+1)/2) of vec of symmetric n x n matrices.
inline Matrix symmetric_basis(Eigen::Index n) {
  Matrix e = Matrix::Zero(n * n, n * (n + 1) / 2);
  Eigen::Index col = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j; i < n; ++i) {
      if (i == j) {
        e(i + j * n, col) = 1.0;
      } else {
        e(i + j * n, col) = std::sqrt(0.5);
        e(j + i * n, col) = std::sqrt(0.5);
      }
      ++col;
    }
  }
  return e;
}

// ---- function space -----------------------------------------------------

namespace detail {

inline Matrix fn_sigma(const Matrix& w, const Target& target, LossKind kind) {
  Matrix s = w * w.transpose();
  if (kind == LossKind::bw_tau && target.tau > 0) s.diagonal().array() += target.tau;
  return s;
}

}  // namespace detail

/// W -> f(W W^T) for the Frobenius loss, or the BW loss at W W^T + tau I.
inline double fn_loss(const Matrix& w, const Target& target, LossKind kind) {
  if (kind == LossKind::frobenius) {
    return 0.5 * (w * w.transpose() - target.sigma0.mat()).squaredNorm();
  }
  return loss_auto(w, target).value;
}

/// Gradient 2 grad f(Sigma) W of fn_loss.
inline Matrix fn_gradient(const Matrix& w, const Target& target, LossKind kind) {
  const PsdMatrix sigma(detail::fn_sigma(w, target, kind));
  const Matrix g = kind == LossKind::frobenius ? grad_cov_frobenius(sigma, target) : grad_cov(sigma, target);
  return 2.0 * g * w;
}

/// Hessian over vec(W) of W -> f(W W^T):
/// J^T Hess f J + 2 I_m (x) grad f, with J = (K_n + I)(W (x) I_n).
inline HessianMatrix hess_fn(const Matrix& w, const Target& target, LossKind kind) {
  require_finite(w, "hess_fn");
  if (w.rows() != target.dim()) throw InputError("hess_fn: W must have n rows");
  const Eigen::Index n = w.rows();
  const Eigen::Index m = w.cols();
  const PsdMatrix sigma(detail::fn_sigma(w, target, kind));
  Matrix hf, gf;
  if (kind == LossKind::frobenius) {
    gf = grad_cov_frobenius(sigma, target);
  } else {
    gf = grad_cov(sigma, target);
    hf = hess_cov_bw(sigma, target).mat;
  }
  const Matrix a = kron(w, Matrix::Identity(n, n));
  const Matrix j = a + commutation_times(n, n, a);
  Matrix h = kind == LossKind::frobenius ? Matrix(j.transpose() * j) : Matrix(j.transpose() * hf * j);
  h += 2.0 * kron(Matrix::Identity(m, m), gf);
  return HessianMatrix(h, HessianSpace::function, kind);
}

// ---- parameter space ----------------------------------------------------

inline double param_loss(const NetParams& p, const Target& target, LossKind kind) {
  return fn_loss(compose(p), target, kind);
}

/// Hessian over (vec W_1, ..., vec W_N). Block (i,i) is
/// (W_{i-1:1} (x) W_{N:i+1}^T) H (W_{i-1:1}^T (x) W_{N:i+1}); block (i,j), i < j, adds
/// (C G^T A (x) B^T) K_{d_j d_{j-1}} with A = W_{N:j+1}, B = W_{j-1:i+1}, C = W_{i-1:1}
/// and G the function-space gradient.
inline HessianMatrix hess_param(const NetParams& params, const Target& target, LossKind kind) {
  const Eigen::Index total = params.num_params();
  if (total > kMaxParamHessianDim) {
    throw DimensionLimitError("hess_param: " + std::to_string(total) + " parameters exceed " +
                              std::to_string(kMaxParamHessianDim));
  }
  const Matrix w = compose(params);
  const Matrix hfn = hess_fn(w, target, kind).mat;
  const Matrix g = fn_gradient(w, target, kind);
  const std::size_t depth = params.depth();
  const auto pre = detail::prefix_products(params);
  const auto suf = detail::suffix_products(params);
  const auto& dims = params.dims();

  std::vector<Matrix> jac(depth + 1);
  std::vector<Eigen::Index> offset(depth + 2, 0);
  for (std::size_t i = 1; i <= depth; ++i) {
    jac[i] = kron(pre[i - 1].transpose(), suf[i + 1]);
    offset[i + 1] = offset[i] + params.layer(i).size();
  }
  Matrix h(total, total);
  for (std::size_t i = 1; i <= depth; ++i) {
    const Matrix hj = hfn * jac[i];
    for (std::size_t j = i; j <= depth; ++j) {
      Matrix block = jac[j].transpose() * hj;  // = (J_i^T H J_j)^T
      block.transposeInPlace();
      if (j > i) {
        Matrix b = Matrix::Identity(dims[i], dims[i]);
        for (std::size_t l = i + 1; l <= j - 1; ++l) b = params.layer(l) * b;
        const Matrix cga = pre[i - 1] * g.transpose() * suf[j + 1];
        block += times_commutation(kron(cga, b.transpose()), dims[j], dims[j - 1]);
      }
      h.block(offset[i], offset[j], block.rows(), block.cols()) = block;
      if (j > i) h.block(offset[j], offset[i], block.cols(), block.rows()) = block.transpose();
    }
  }
  return HessianMatrix(h, HessianSpace::parameter, kind);
}

// ---- spectra --------------------------------------------------------------

struct ConditionReport {
  double lambda_max = 0.0;
  double lambda_min = 0.0;
  double lambda_min_abs_nonzero = 0.0;
  double kappa_rel = 0.0;
  double kappa_abs = 0.0;
  double zero_tol = 0.0;
};

inline Vector hessian_eigenvalues(const HessianMatrix& h) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(h.mat, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw InternalError("hessian_eigenvalues: eigensolver failed");
  return es.eigenvalues();
}

/// kappa_rel = lambda_max / lambda_min and kappa_abs = lambda_max / min{|lambda| > zero_tol};
/// zero_tol defaults to 1e-8 |lambda_max|.
inline ConditionReport condition_report(const Vector& eigenvalues, std::optional<double> zero_tol = std::nullopt) {
  if (eigenvalues.size() == 0) throw InputError("condition_report: empty spectrum");
  ConditionReport r;
  r.lambda_max = eigenvalues.maxCoeff();
  r.lambda_min = eigenvalues.minCoeff();
  r.zero_tol = zero_tol.value_or(1e-8 * std::abs(r.lambda_max));
  double lo = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
    const double a = std::abs(eigenvalues(i));
    if (a > r.zero_tol) lo = std::min(lo, a);
  }
  if (!std::isfinite(lo)) throw InputError("condition_report: every eigenvalue is below zero_tol");
  r.lambda_min_abs_nonzero = lo;
  r.kappa_rel = r.lambda_max / r.lambda_min;
  r.kappa_abs = r.lambda_max / lo;
  return r;
}

inline ConditionReport condition_report(const HessianMatrix& h, std::optional<double> zero_tol = std::nullopt) {
  return condition_report(hessian_eigenvalues(h), zero_tol);
}

// ---- finite-difference validation -------------------------------------

using ScalarFn = std::function<double(const Vector&)>;
using DirectionFn = std::function<Vector(std::mt19937_64&)>;

/// Largest normwise relative error |d - v^T H v| / ||H||_2 over random unit v, where
/// d = (f(x + h v) - 2 f(x) + f(x - h v)) / h^2 with h = 1e-4 (1 + ||x||).
inline double fd_quadratic_check(const ScalarFn& f, const Vector& x, const Matrix& h, int trials,
                                 std::uint64_t seed = 0, DirectionFn direction = nullptr) {
  if (h.rows() != x.size() || h.cols() != x.size()) throw InputError("fd_quadratic_check: shape mismatch");
  std::mt19937_64 rng(seed);
  const double step = 1e-4 * (1.0 + x.norm());
  const double scale = h.size() ? Matrix(detail::symmetrized(h)).selfadjointView<Eigen::Lower>().operatorNorm() : 0.0;
  const double f0 = f(x);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    Vector v = direction ? direction(rng) : Vector(random_gaussian(x.size(), 1, rng));
    v /= v.norm();
    const double fd = (f(x + step * v) - 2.0 * f0 + f(x - step * v)) / (step * step);
    const double q = v.dot(h * v);
    worst = std::max(worst, std::abs(fd - q) / std::max(scale, std::numeric_limits<double>::min()));
  }
  return worst;
}

/// Random symmetric direction over vec of n x n matrices.
inline DirectionFn symmetric_direction(Eigen::Index n) {
  return [n](std::mt19937_64& rng) {
    const Matrix g = random_gaussian(n, n, rng);
    return Vector(vec(0.5 * (g + g.transpose())));
  };
}

}  // namespace bwdln
