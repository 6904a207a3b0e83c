#pragma once

// Deep linear network W = W_N ... W_1 with layer W_j of shape d_j x d_{j-1}.

#include <cstdint>
#include <utility>
#include <vector>

#include "bwdln/matcore.hpp"

namespace bwdln {

class NetParams {
 public:
  NetParams() = default;

  explicit NetParams(std::vector<Matrix> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw InputError("NetParams: need at least one layer");
    dims_.push_back(layers_.front().cols());
    for (std::size_t j = 0; j < layers_.size(); ++j) {
      if (layers_[j].cols() != dims_.back()) {
        throw InputError("NetParams: layer " + std::to_string(j + 1) + " has incompatible shape");
      }
      require_finite(layers_[j], "NetParams");
      dims_.push_back(layers_[j].rows());
    }
  }

  /// Zero layers with the given widths d_0..d_N.
  static NetParams zeros(const std::vector<Eigen::Index>& dims) {
    if (dims.size() < 2) throw InputError("NetParams: dims must list d_0..d_N with N >= 1");
    std::vector<Matrix> layers;
    for (std::size_t j = 1; j < dims.size(); ++j) {
      if (dims[j] < 1 || dims[j - 1] < 1) throw InputError("NetParams: widths must be positive");
      layers.push_back(Matrix::Zero(dims[j], dims[j - 1]));
    }
    return NetParams(std::move(layers));
  }

  std::size_t depth() const { return layers_.size(); }
  const std::vector<Eigen::Index>& dims() const { return dims_; }
  const std::vector<Matrix>& layers() const { return layers_; }
  /// 1-based, W_1..W_N.
  const Matrix& layer(std::size_t j) const { return layers_.at(j - 1); }
  Eigen::Index out_dim() const { return dims_.back(); }
  Eigen::Index in_dim() const { return dims_.front(); }

  Eigen::Index num_params() const {
    Eigen::Index total = 0;
    for (const Matrix& w : layers_) total += w.size();
    return total;
  }

  /// Concatenation of vec(W_1), ..., vec(W_N) (column-major within a layer).
  Vector flatten() const {
    Vector out(num_params());
    Eigen::Index off = 0;
    for (const Matrix& w : layers_) {
      out.segment(off, w.size()) = vec(w);
      off += w.size();
    }
    return out;
  }

  NetParams unflatten(const Vector& x) const {
    if (x.size() != num_params()) throw InputError("NetParams::unflatten: size mismatch");
    std::vector<Matrix> layers;
    layers.reserve(layers_.size());
    Eigen::Index off = 0;
    for (const Matrix& w : layers_) {
      layers.push_back(unvec(x.segment(off, w.size()), w.rows(), w.cols()));
      off += w.size();
    }
    return NetParams(std::move(layers));
  }

 private:
  std::vector<Matrix> layers_;
  std::vector<Eigen::Index> dims_;
};

namespace detail {

// prefix[j] = W_{j:1} for j = 0..N (prefix[0] = I_{d_0}).
inline std::vector<Matrix> prefix_products(const NetParams& p) {
  std::vector<Matrix> out;
  out.reserve(p.depth() + 1);
  out.push_back(Matrix::Identity(p.in_dim(), p.in_dim()));
  for (const Matrix& w : p.layers()) out.push_back(w * out.back());
  return out;
}

// suffix[j] = W_{N:j} for j = 1..N+1 (suffix[N+1] = I_{d_N}); suffix[0] unused.
inline std::vector<Matrix> suffix_products(const NetParams& p) {
  const std::size_t n = p.depth();
  std::vector<Matrix> out(n + 2);
  out[n + 1] = Matrix::Identity(p.out_dim(), p.out_dim());
  for (std::size_t j = n; j >= 1; --j) out[j] = out[j + 1] * p.layer(j);
  return out;
}

inline void require_end_shape(const NetParams& p, const Matrix& g, const char* what) {
  if (g.rows() != p.out_dim() || g.cols() != p.in_dim()) {
    throw InputError(std::string(what) + ": end-to-end gradient has wrong shape");
  }
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// End-to-end matrix W_{N:1}.
inline Matrix compose(const NetParams& p) {
  if (p.depth() == 0) throw InputError("compose: empty network");
  Matrix w = p.layer(1);
  for (std::size_t j = 2; j <= p.depth(); ++j) w = p.layer(j) * w;
  return w;
}

/// Gradient of f(W_{N:1}) with respect to each W_j, given G = grad f at W_{N:1}:
/// W_{N:j+1}^T G W_{j-1:1}^T.
inline std::vector<Matrix> layer_gradients(const NetParams& p, const Matrix& end_grad) {
  detail::require_end_shape(p, end_grad, "layer_gradients");
  const auto pre = detail::prefix_products(p);
  const auto suf = detail::suffix_products(p);
  std::vector<Matrix> out;
  out.reserve(p.depth());
  for (std::size_t j = 1; j <= p.depth(); ++j) {
    out.push_back(suf[j + 1].transpose() * end_grad * pre[j - 1].transpose());
  }
  return out;
}

/// Balanced factorization of `end_to_end` over widths dims = (d_0, ..., d_N).
/// With the thin SVD U S V^T of rank k, W_j = Q_j S^{1/N} Q_{j-1}^T where
/// Q_0 = V, Q_N = U and interior Q_j are seeded random d_j x k semi-orthogonal.
inline NetParams balanced_init(const Matrix& end_to_end, const std::vector<Eigen::Index>& dims,
                               std::uint64_t seed) {
  require_finite(end_to_end, "balanced_init");
  if (dims.size() < 2) throw InputError("balanced_init: dims must list d_0..d_N with N >= 1");
  const std::size_t n_layers = dims.size() - 1;
  if (end_to_end.rows() != dims.back() || end_to_end.cols() != dims.front()) {
    throw InputError("balanced_init: end-to-end matrix shape does not match d_N x d_0");
  }
  for (Eigen::Index d : dims) {
    if (d < 1) throw InputError("balanced_init: widths must be positive");
  }
  if (n_layers == 1) return NetParams({end_to_end});

  const ThinSvd svd = thin_svd(end_to_end);
  const Eigen::Index k = svd.rank();
  for (std::size_t j = 1; j < n_layers; ++j) {
    if (dims[j] < k) {
      throw RankError("balanced_init: interior width d_" + std::to_string(j) + " = " +
                      std::to_string(dims[j]) + " is below rank " + std::to_string(k));
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n_layers);
  const Vector root = svd.singvals.unaryExpr([inv_n](double s) { return std::pow(s, inv_n); });

  std::vector<Matrix> q(n_layers + 1);
  q[0] = svd.right;
  q[n_layers] = svd.left;
  for (std::size_t j = 1; j < n_layers; ++j) {
    q[j] = random_orthogonal(dims[j], detail::mix_seed(seed, j)).leftCols(k);
  }
  std::vector<Matrix> layers;
  layers.reserve(n_layers);
  for (std::size_t j = 1; j <= n_layers; ++j) {
    layers.push_back(q[j] * root.asDiagonal() * q[j - 1].transpose());
  }
  return NetParams(std::move(layers));
}

struct BalanceReport {
  std::vector<double> residuals;  // ||W_j W_j^T - W_{j+1}^T W_{j+1}||_F, j = 1..N-1
  double max_residual = 0.0;
};

inline BalanceReport balance_report(const NetParams& p) {
  BalanceReport r;
  for (std::size_t j = 1; j < p.depth(); ++j) {
    const Matrix& a = p.layer(j);
    const Matrix& b = p.layer(j + 1);
    const double res = (a * a.transpose() - b.transpose() * b).norm();
    r.residuals.push_back(res);
    r.max_residual = std::max(r.max_residual, res);
  }
  return r;
}

/// W_{j+1}^T W_{j+1} - W_j W_j^T for j = 1..N-1; constant along gradient flow.
inline std::vector<Matrix> interface_differences(const NetParams& p) {
  std::vector<Matrix> out;
  for (std::size_t j = 1; j < p.depth(); ++j) {
    const Matrix& a = p.layer(j);
    const Matrix& b = p.layer(j + 1);
    out.push_back(b.transpose() * b - a * a.transpose());
  }
  return out;
}

/// dW/dt induced on the end-to-end matrix by the layer-wise flow dW_j/dt = -grad_j:
/// -sum_j W_{N:j+1} W_{N:j+1}^T G W_{j-1:1}^T W_{j-1:1}.
inline Matrix end_to_end_velocity(const NetParams& p, const Matrix& end_grad) {
  detail::require_end_shape(p, end_grad, "end_to_end_velocity");
  const auto pre = detail::prefix_products(p);
  const auto suf = detail::suffix_products(p);
  Matrix v = Matrix::Zero(p.out_dim(), p.in_dim());
  for (std::size_t j = 1; j <= p.depth(); ++j) {
    const Matrix& a = suf[j + 1];
    const Matrix& c = pre[j - 1];
    v.noalias() -= a * (a.transpose() * end_grad * c.transpose()) * c;
  }
  return v;
}

}  // namespace bwdln
