#pragma once

// Bures-Wasserstein loss between centered Gaussians, in covariance space and
// pulled back to end-to-end matrices (Sigma = W W^T), with the tau-smoothed
// variant evaluated at W W^T + tau I.

#include <cmath>
#include <optional>
#include <utility>

#include "bwdln/matcore.hpp"

namespace bwdln {

/// Below this value of lambda_min(S0^{1/2} Sigma S0^{1/2}) the unsmoothed
/// gradient is reported as unavailable.
inline constexpr double kGradFloor = 1e-12;
/// bw_squared values in (-kNegativeClamp, 0) are round-off and clamped to 0.
inline constexpr double kNegativeClamp = 1e-10;
/// Relative eigenvalue gap below which the target spectrum is not distinct.
inline constexpr double kDistinctTol = 1e-10;

/// Target covariance Sigma_0 together with tau and the constants derived from it.
struct Target {
  PsdMatrix sigma0;
  double tau = 0.0;
  Matrix sqrt_sigma0;
  Matrix inv_sqrt_sigma0;  // empty unless full_rank
  double sigma_min_sqrt = 0.0;  // sigma_min(Sigma_0^{1/2})
  double sigma_max_sqrt = 0.0;
  double trace = 0.0;
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  bool full_rank = false;
  bool distinct = false;

  static Target from_covariance(const Matrix& sigma0, double tau = 0.0) {
    return Target(PsdMatrix(sigma0), tau);
  }

  Target(PsdMatrix s0, double tau_) : sigma0(std::move(s0)), tau(tau_) {
    if (!(tau >= 0) || !std::isfinite(tau)) throw InputError("Target: tau must be finite and >= 0");
    const SymEig& e = sigma0.eig();
    sqrt_sigma0 = sqrtm_psd(sigma0).mat();
    lambda_max = sigma0.lambda_max();
    lambda_min = sigma0.lambda_min();
    sigma_min_sqrt = std::sqrt(lambda_min);
    sigma_max_sqrt = std::sqrt(lambda_max);
    trace = sigma0.trace();
    full_rank = dim() > 0 && lambda_min > kClampRel * lambda_max;
    if (full_rank) inv_sqrt_sigma0 = e.apply([](double l) { return 1.0 / std::sqrt(l); });
    distinct = true;
    for (Eigen::Index i = 0; i + 1 < e.size(); ++i) {
      if (e.eigvals(i) - e.eigvals(i + 1) < kDistinctTol * lambda_max) distinct = false;
    }
  }

  Target with_tau(double t) const {
    Target copy = *this;
    if (!(t >= 0) || !std::isfinite(t)) throw InputError("Target: tau must be finite and >= 0");
    copy.tau = t;
    return copy;
  }

  Eigen::Index dim() const { return sigma0.dim(); }
  const SymEig& eig() const { return sigma0.eig(); }
};

/// Loss value, optional gradient, and lambda_min of S0^{1/2} Sigma S0^{1/2}.
struct LossEval {
  double value = 0.0;
  std::optional<Matrix> gradient;
  double min_eig_arg = 0.0;

  bool has_gradient() const { return gradient.has_value(); }
  const Matrix& grad() const {
    if (!gradient) {
      throw SingularityError("gradient unavailable: lambda_min(S0^1/2 Sigma S0^1/2) = " +
                             std::to_string(min_eig_arg));
    }
    return *gradient;
  }
};

namespace detail {

inline void require_square_match(const Matrix& sigma, const Target& target, const char* what) {
  if (sigma.rows() != target.dim() || sigma.cols() != target.dim()) {
    throw InputError(std::string(what) + ": shape mismatch with target");
  }
}

/// Spectral decomposition of A = S0^{1/2} Sigma S0^{1/2}, clamped to PSD.
inline PsdMatrix inner_argument(const Matrix& sigma, const Target& target) {
  const Matrix& s = target.sqrt_sigma0;
  return PsdMatrix(s * sigma * s);
}

inline double clamp_value(double v) {
  if (v < 0) {
    if (v < -kNegativeClamp) {
      throw InternalError("bw_squared: negative value " + std::to_string(v));
    }
    return 0.0;
  }
  return v;
}

// 1/2 tr(Sigma) - tr(Sigma_0) lower bound on the loss; checked in debug builds
// or when BWDLN_DEBUG_GUARDS is defined.
inline void check_trace_floor(double value, double trace_sigma, const Target& target) {
#if !defined(NDEBUG) || defined(BWDLN_DEBUG_GUARDS)
  const double floor = 0.5 * trace_sigma - target.trace;
  if (value < floor - 1e-9 * (1.0 + std::abs(floor))) {
    throw InternalError("loss below the trace floor");
  }
#else
  (void)value;
  (void)trace_sigma;
  (void)target;
#endif
}

inline double bw_from_inner(const PsdMatrix& inner, double trace_sigma, const Target& target) {
  const double tr_sqrt = inner.eig().eigvals.cwiseSqrt().sum();
  const double v = clamp_value(trace_sigma + target.trace - 2.0 * tr_sqrt);
  check_trace_floor(v, trace_sigma, target);
  return v;
}

/// Loss and gradient at Sigma = W W^T + shift * I.
inline LossEval evaluate_fn(const Matrix& w, const Target& target, double shift) {
  require_finite(w, "loss");
  if (w.rows() != target.dim()) throw InputError("loss: W must have n rows");
  const Eigen::Index n = w.rows();
  Matrix sigma = w * w.transpose();
  if (shift != 0.0) sigma.diagonal().array() += shift;
  const PsdMatrix inner = inner_argument(sigma, target);
  LossEval out;
  out.value = bw_from_inner(inner, sigma.trace(), target);
  out.min_eig_arg = inner.lambda_min();
  if (n > 0 && inner.lambda_min() >= kGradFloor) {
    const Matrix inv_sqrt = inner.eig().apply([](double q) { return 1.0 / std::sqrt(q); });
    const Matrix& s = target.sqrt_sigma0;
    out.gradient = 2.0 * (w - s * inv_sqrt * (s * w));
  }
  return out;
}

}  // namespace detail

/// Squared Bures-Wasserstein distance tr(Sigma + Sigma_0 - 2 (S0^{1/2} Sigma S0^{1/2})^{1/2}).
inline double bw_squared(const PsdMatrix& sigma, const Target& target) {
  detail::require_square_match(sigma.mat(), target, "bw_squared");
  return detail::bw_from_inner(detail::inner_argument(sigma.mat(), target), sigma.trace(), target);
}

inline double bw_squared(const Matrix& sigma, const Target& target) {
  return bw_squared(PsdMatrix(sigma), target);
}

struct VariationalResult {
  double value = 0.0;
  Matrix u_bar;  // orthogonal minimizer of ||Sigma^{1/2} - Sigma_0^{1/2} U||_F
};

/// Procrustes form min_{U in O(n)} ||Sigma^{1/2} - Sigma_0^{1/2} U||_F^2. The
/// minimizer is the polar factor of Sigma_0^{1/2} Sigma^{1/2}, i.e. the
/// transpose of the polar factor of Sigma^{1/2} Sigma_0^{1/2}.
inline VariationalResult bw_variational(const PsdMatrix& sigma, const Target& target) {
  detail::require_square_match(sigma.mat(), target, "bw_variational");
  const Matrix root = sqrtm_psd(sigma).mat();
  VariationalResult out;
  out.u_bar = polar_orthogonal(target.sqrt_sigma0 * root);
  out.value = (root - target.sqrt_sigma0 * out.u_bar).squaredNorm();
  return out;
}

/// Unsmoothed loss L^1(W) = B^2(W W^T, Sigma_0). The gradient is present when
/// lambda_min(S0^{1/2} W W^T S0^{1/2}) >= kGradFloor.
inline LossEval loss_fn(const Matrix& w, const Target& target) {
  return detail::evaluate_fn(w, target, 0.0);
}

/// Smoothed loss L^1_tau(W) = B^2(W W^T + tau I, Sigma_0) with tau = target.tau > 0.
inline LossEval loss_fn_tau(const Matrix& w, const Target& target) {
  if (!(target.tau > 0)) throw InputError("loss_fn_tau: target.tau must be positive");
  return detail::evaluate_fn(w, target, target.tau);
}

/// Dispatches on target.tau: smoothed loss when tau > 0, L^1 otherwise.
inline LossEval loss_auto(const Matrix& w, const Target& target) {
  return target.tau > 0 ? loss_fn_tau(w, target) : loss_fn(w, target);
}

/// Covariance-space gradient I - S0^{1/2} (S0^{1/2} Sigma S0^{1/2})^{-1/2} S0^{1/2}.
inline Matrix grad_cov(const PsdMatrix& sigma, const Target& target) {
  detail::require_square_match(sigma.mat(), target, "grad_cov");
  const PsdMatrix inner = detail::inner_argument(sigma.mat(), target);
  const Matrix inv_sqrt = invsqrtm_pd(inner, kGradFloor);
  const Matrix& s = target.sqrt_sigma0;
  Matrix g = Matrix::Identity(target.dim(), target.dim()) - s * inv_sqrt * s;
  return detail::symmetrized(g);
}

/// Upper bound on |L^1_tau(W) - L^1(W)| valid for every W, for a full-rank target.
inline double gap_bound(const Target& target, double tau, Eigen::Index n) {
  if (!target.full_rank) throw RankError("gap_bound: target must be full rank");
  if (!(tau >= 0)) throw InputError("gap_bound: tau must be >= 0");
  const double st = std::sqrt(tau);
  return static_cast<double>(n) * st * (st + 2.0 * target.sigma_max_sqrt / target.sigma_min_sqrt);
}

/// Modified deficiency margin c = sigma_min(S0^{1/2}) - min_U ||(W W^T)^{1/2} - S0^{1/2} U||_F.
/// Positive means the margin condition holds with constant c.
inline double mdm_margin(const Matrix& w, const Target& target) {
  const VariationalResult v = bw_variational(PsdMatrix(w * w.transpose()), target);
  return target.sigma_min_sqrt - std::sqrt(std::max(v.value, 0.0));
}

/// Checks B^2(Sigma, Sigma_0) >= tr(Sigma)/2 - tr(Sigma_0).
inline bool trace_floor(const PsdMatrix& sigma, const Target& target) {
  const double floor = 0.5 * sigma.trace() - target.trace;
  return bw_squared(sigma, target) >= floor - 1e-12 * (1.0 + std::abs(floor));
}

}  // namespace bwdln
