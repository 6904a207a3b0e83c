#pragma once

// Closed-form critical points of W -> B^2(W W^T, Sigma_0) and of its tau-smoothed
// version on the manifold of rank-k n x m matrices.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "bwdln/bwloss.hpp"
#include "bwdln/io_format.hpp"

namespace bwdln {

/// Index sets are 0-based in the API and 1-based in exported tables.
using IndexSet = std::vector<int>;

struct CriticalPoint {
  IndexSet index_set;
  Eigen::Index rank = 0;
  Matrix right_factor;  // m x k, orthonormal columns
  Matrix w;             // n x m
  double loss_value = 0.0;
  bool perturbed = false;
};

namespace detail {

inline void require_distinct_positive(const Target& target) {
  if (!target.full_rank) throw RankError("critical points need a positive definite target");
  if (!target.distinct) throw NonDistinctSpectrumError("target eigenvalues are not distinct");
}

inline void validate_index_set(const IndexSet& set, Eigen::Index n) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set[i] < 0 || set[i] >= n) throw InputError("index set entry out of range");
    if (i > 0 && set[i] <= set[i - 1]) throw InputError("index set must be strictly increasing");
  }
}

inline double unperturbed_value(const Vector& lambda, const IndexSet& set) {
  double v = 0.0;
  std::size_t p = 0;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (p < set.size() && set[p] == i) {
      ++p;
      continue;
    }
    v += lambda(i);
  }
  return v;
}

inline double perturbed_value(const Vector& lambda, const IndexSet& set, double tau) {
  const double st = std::sqrt(tau);
  double v = 0.0;
  std::size_t p = 0;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (p < set.size() && set[p] == i) {
      ++p;
      continue;
    }
    const double d = std::sqrt(lambda(i)) - st;
    v += d * d;
  }
  return v;
}

inline double min_selected(const Vector& lambda, const IndexSet& set) {
  double lo = std::numeric_limits<double>::infinity();
  for (int i : set) lo = std::min(lo, lambda(i));
  return lo;
}

}  // namespace detail

/// W* = Omega_J (Lambda_J - t I)^{1/2} V^T with t = tau when perturbed, else 0.
inline CriticalPoint make_critical(const Target& target, const IndexSet& index_set, const Matrix& v,
                                   bool perturbed) {
  detail::require_distinct_positive(target);
  const Eigen::Index n = target.dim();
  detail::validate_index_set(index_set, n);
  const Eigen::Index k = static_cast<Eigen::Index>(index_set.size());
  if (v.cols() != k) throw InputError("make_critical: V must have |J| columns");
  if (v.rows() < k) throw InputError("make_critical: V must have at least |J| rows");
  if (k > 0 && (v.transpose() * v - Matrix::Identity(k, k)).norm() > 1e-12 * std::max<double>(1, k)) {
    throw InputError("make_critical: V is not semi-orthogonal");
  }
  const Vector& lambda = target.eig().eigvals;
  const double shift = perturbed ? target.tau : 0.0;
  if (perturbed && k > 0 && target.tau > detail::min_selected(lambda, index_set)) {
    throw TauTooLargeError("make_critical: tau exceeds an eigenvalue indexed by J");
  }
  Matrix omega_j(n, k);
  Vector root(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    omega_j.col(c) = target.eig().eigvecs.col(index_set[c]);
    root(c) = std::sqrt(std::max(lambda(index_set[c]) - shift, 0.0));
  }
  CriticalPoint cp;
  cp.index_set = index_set;
  cp.rank = k;
  cp.right_factor = v;
  cp.w = omega_j * root.asDiagonal() * v.transpose();
  cp.perturbed = perturbed;
  cp.loss_value = perturbed ? detail::perturbed_value(lambda, index_set, target.tau)
                            : detail::unperturbed_value(lambda, index_set);
  return cp;
}

/// Default right factor: first k columns of random_orthogonal(m, seed).
inline Matrix default_right_factor(Eigen::Index m, Eigen::Index k, std::uint64_t seed) {
  if (k > m) throw RankError("right factor: k exceeds m");
  return random_orthogonal(m, seed).leftCols(k);
}

inline CriticalPoint make_critical(const Target& target, const IndexSet& index_set, Eigen::Index m,
                                   bool perturbed, std::uint64_t seed) {
  return make_critical(target, index_set,
                       default_right_factor(m, static_cast<Eigen::Index>(index_set.size()), seed),
                       perturbed);
}

/// Gradient of L^1 restricted to the rank-k manifold: 2W - 2 S0^{1/2} U V^T for
/// the thin SVD U S V^T of S0^{1/2} W. declared_rank < 0 uses the numerical rank.
inline Matrix restricted_gradient(const Matrix& w, const Target& target,
                                  Eigen::Index declared_rank = -1) {
  require_finite(w, "restricted_gradient");
  if (w.rows() != target.dim()) throw InputError("restricted_gradient: W must have n rows");
  const ThinSvd sw = thin_svd(target.sqrt_sigma0 * w);
  if (declared_rank >= 0) {
    const Eigen::Index actual = thin_svd(w).rank();
    if (actual != declared_rank || sw.rank() != declared_rank) {
      throw RankError("restricted_gradient: numerical rank " + std::to_string(actual) +
                      " differs from declared rank " + std::to_string(declared_rank));
    }
  }
  return 2.0 * (w - target.sqrt_sigma0 * sw.left * sw.right.transpose());
}

struct CriticalValue {
  IndexSet index_set;
  double value = 0.0;                // unperturbed family
  std::optional<double> value_tau;   // perturbed family, when tau <= min lambda_J
};

inline constexpr Eigen::Index kMaxEnumerationDim = 20;

/// Closed-form values at every rank-k critical point, ascending by the
/// unperturbed value; ties broken lexicographically by index set.
inline std::vector<CriticalValue> enumerate_critical_values(const Target& target, int k) {
  detail::require_distinct_positive(target);
  const Eigen::Index n = target.dim();
  if (n > kMaxEnumerationDim) {
    throw CombinatorialLimitError("enumerate_critical_values: n = " + std::to_string(n) +
                                  " exceeds " + std::to_string(kMaxEnumerationDim));
  }
  if (k < 0 || k > n) throw InputError("enumerate_critical_values: k out of range");
  const Vector& lambda = target.eig().eigvals;
  std::vector<CriticalValue> out;
  std::vector<bool> mask(static_cast<std::size_t>(n), false);
  std::fill(mask.begin(), mask.begin() + k, true);
  do {
    CriticalValue cv;
    for (Eigen::Index i = 0; i < n; ++i)
      if (mask[static_cast<std::size_t>(i)]) cv.index_set.push_back(static_cast<int>(i));
    cv.value = detail::unperturbed_value(lambda, cv.index_set);
    if (target.tau > 0 && (k == 0 || target.tau <= detail::min_selected(lambda, cv.index_set))) {
      cv.value_tau = detail::perturbed_value(lambda, cv.index_set, target.tau);
    }
    out.push_back(std::move(cv));
  } while (std::prev_permutation(mask.begin(), mask.end()));
  std::stable_sort(out.begin(), out.end(), [](const CriticalValue& a, const CriticalValue& b) {
    if (a.value != b.value) return a.value < b.value;
    return a.index_set < b.index_set;
  });
  return out;
}

struct BestRankK {
  CriticalPoint point;
  PsdMatrix covariance;
};

/// Rank-k minimizer J = {0..k-1}; covariance w w^T, plus tau I when perturbed.
inline BestRankK best_rank_k(const Target& target, int k, bool perturbed, Eigen::Index m = -1,
                             std::uint64_t seed = 0) {
  if (m < 0) m = target.dim();
  if (k < 0 || k > target.dim()) throw InputError("best_rank_k: k out of range");
  IndexSet set(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) set[static_cast<std::size_t>(i)] = i;
  CriticalPoint cp = make_critical(target, set, m, perturbed, seed);
  Matrix cov = cp.w * cp.w.transpose();
  if (perturbed) cov.diagonal().array() += target.tau;
  return BestRankK{std::move(cp), PsdMatrix(cov)};
}

inline std::string format_index_set(const IndexSet& set) {
  std::string s;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(set[i] + 1);
  }
  return s;
}

/// CSV with header `subset,k,value,value_tau`; subset is 1-based and
/// space-separated, value_tau is empty when the perturbed point does not exist.
inline void write_critical_values_csv(std::ostream& os, const std::vector<CriticalValue>& rows) {
  os << "subset,k,value,value_tau\n";
  for (const CriticalValue& r : rows) {
    os << format_index_set(r.index_set) << ',' << r.index_set.size() << ',' << fmt17(r.value) << ',';
    if (r.value_tau) os << fmt17(*r.value_tau);
    os << '\n';
  }
}

}  // namespace bwdln
