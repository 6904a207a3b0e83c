#pragma once

// Gradient descent and gradient flow on W_1..W_N for the loss of the
// end-to-end matrix, the certified step-size / rate constants, and rate fits.

#include <boost/numeric/odeint.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <vector>

#include "bwdln/bwloss.hpp"
#include "bwdln/io_format.hpp"
#include "bwdln/network.hpp"

namespace bwdln {

struct NetworkEval {
  Matrix end_to_end;
  double loss = 0.0;
  std::vector<Matrix> grads;
  double grad_norm_sq = 0.0;
};

/// Loss of compose(p) (smoothed when target.tau > 0) and its layer gradients.
/// Throws SingularityError when the unsmoothed gradient is unavailable.
inline NetworkEval network_eval(const NetParams& p, const Target& target) {
  NetworkEval out;
  out.end_to_end = compose(p);
  const LossEval e = loss_auto(out.end_to_end, target);
  out.loss = e.value;
  out.grads = layer_gradients(p, e.grad());
  for (const Matrix& g : out.grads) out.grad_norm_sq += g.squaredNorm();
  return out;
}

inline double network_loss(const NetParams& p, const Target& target) {
  return loss_auto(compose(p), target).value;
}

/// sigma_min((W W^T)^{1/2}), i.e. the n-th singular value of the n x m matrix W.
inline double sigma_min_sqrt_gram(const Matrix& w) {
  if (w.rows() == 0) return 0.0;
  if (w.rows() > w.cols()) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(w);
  return svd.singularValues()(w.rows() - 1);
}

struct Sample {
  long index = 0;
  double t = 0.0;
  double loss = 0.0;
  double grad_norm_sq = 0.0;
  double sigma_min = 0.0;
  double balance_residual = 0.0;
  double w_norm = 0.0;
};

struct Trajectory {
  std::vector<Sample> samples;

  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }
  const Sample& back() const { return samples.back(); }
};

inline Sample make_sample(long index, double t, const NetParams& p, const NetworkEval& e) {
  Sample s;
  s.index = index;
  s.t = t;
  s.loss = e.loss;
  s.grad_norm_sq = e.grad_norm_sq;
  s.sigma_min = sigma_min_sqrt_gram(e.end_to_end);
  s.balance_residual = balance_report(p).max_residual;
  s.w_norm = e.end_to_end.norm();
  return s;
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "index,t,loss,grad_norm_sq,sigma_min,balance_residual,w_norm\n";
  for (const Sample& s : traj.samples) {
    os << s.index << ',' << fmt17(s.t) << ',' << fmt17(s.loss) << ',' << fmt17(s.grad_norm_sq) << ','
       << fmt17(s.sigma_min) << ',' << fmt17(s.balance_residual) << ',' << fmt17(s.w_norm) << '\n';
  }
}

// ---- gradient descent ---------------------------------------------------

struct GdConfig {
  double eta = 1e-3;
  long max_iters = 10000;
  double target_loss = 1e-6;
  long record_every = 1;
  long start_index = 0;  // iteration counter of params0, for resumed runs
};

struct GdResult {
  NetParams params;
  Trajectory trajectory;
  long iterations = 0;  // final iteration index
  bool reached_target = false;
};

inline constexpr double kDivergenceFactor = 1e3;

/// W_j <- W_j - eta * grad_j for all layers simultaneously, until the loss is
/// <= target_loss or max_iters updates have been made.
inline GdResult gd_run(const NetParams& params0, const Target& target, const GdConfig& cfg) {
  if (!(cfg.eta > 0)) throw InputError("gd_run: eta must be positive");
  if (!(cfg.target_loss > 0)) throw InputError("gd_run: target loss must be positive");
  if (cfg.record_every < 1 || cfg.max_iters < 0) throw InputError("gd_run: bad iteration settings");
  GdResult res;
  NetParams p = params0;
  long k = cfg.start_index;
  double initial = -1.0;
  for (;;) {
    NetworkEval e = network_eval(p, target);
    if (initial < 0) initial = e.loss;
    if (!std::isfinite(e.loss) || e.loss > kDivergenceFactor * std::max(initial, 1e-300)) {
      throw DivergenceError("gd_run: loss " + std::to_string(e.loss) + " at iteration " +
                            std::to_string(k));
    }
    const bool done_target = e.loss <= cfg.target_loss;
    const bool done_iters = k - cfg.start_index >= cfg.max_iters;
    if (k % cfg.record_every == 0 || done_target || done_iters) {
      res.trajectory.samples.push_back(make_sample(k, static_cast<double>(k) * cfg.eta, p, e));
    }
    if (done_target || done_iters) {
      res.reached_target = done_target;
      break;
    }
    std::vector<Matrix> next;
    next.reserve(p.depth());
    for (std::size_t j = 1; j <= p.depth(); ++j) next.push_back(p.layer(j) - cfg.eta * e.grads[j - 1]);
    p = NetParams(std::move(next));
    ++k;
  }
  res.params = std::move(p);
  res.iterations = k;
  return res;
}

// ---- gradient flow ------------------------------------------------------

struct FlowConfig {
  double t_end = 1.0;
  double tol = 1e-8;         // absolute and relative local error of the adaptive pair
  double fixed_step = 0.0;   // > 0 selects classical RK4 with this step
  long record_every = 1;     // in accepted steps
  std::optional<double> target_loss;
  double initial_dt = 1e-3;
  double t0 = 0.0;
  long start_index = 0;
  long max_steps = 50'000'000;
};

struct FlowResult {
  NetParams params;
  Trajectory trajectory;
  double t = 0.0;
  double dt = 0.0;  // next proposed step, for resuming
  long steps = 0;   // final accepted-step index
  bool reached_target = false;
};

namespace detail {

using OdeState = std::vector<double>;

struct FlowSystem {
  const NetParams* shape;
  const Target* target;

  void operator()(const OdeState& x, OdeState& dxdt, double /*t*/) const {
    const Vector xv = Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
    const NetParams p = shape->unflatten(xv);
    const NetworkEval e = network_eval(p, *target);
    dxdt.resize(x.size());
    std::size_t off = 0;
    for (const Matrix& g : e.grads) {
      for (Eigen::Index i = 0; i < g.size(); ++i) dxdt[off++] = -g.data()[i];
    }
  }
};

inline OdeState to_state(const NetParams& p) {
  const Vector v = p.flatten();
  return OdeState(v.data(), v.data() + v.size());
}

inline NetParams from_state(const NetParams& shape, const OdeState& x) {
  return shape.unflatten(Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size())));
}

}  // namespace detail

/// Integrates dW_j/dt = -grad_j from t0. Stops at the first accepted step with
/// t >= t_end (steps are not clipped, so a run can be resumed from its final
/// (params, t, dt) bit-identically), or when the loss reaches target_loss.
inline FlowResult flow_run(const NetParams& params0, const Target& target, const FlowConfig& cfg) {
  namespace odeint = boost::numeric::odeint;
  if (!(cfg.t_end >= cfg.t0)) throw InputError("flow_run: t_end must be >= t0");
  if (cfg.fixed_step <= 0 && !(cfg.tol > 0)) throw InputError("flow_run: tol must be positive");
  if (cfg.record_every < 1) throw InputError("flow_run: record_every must be >= 1");
  if (!(cfg.initial_dt > 0)) throw InputError("flow_run: initial_dt must be positive");

  const detail::FlowSystem sys{&params0, &target};
  detail::OdeState x = detail::to_state(params0);
  FlowResult res;
  double t = cfg.t0;
  long k = cfg.start_index;

  auto record = [&](bool force) -> bool {
    const NetParams p = detail::from_state(params0, x);
    const NetworkEval e = network_eval(p, target);
    if (!std::isfinite(e.loss)) throw DivergenceError("flow_run: non-finite loss");
    const bool hit = cfg.target_loss && e.loss <= *cfg.target_loss;
    if (force || hit || k % cfg.record_every == 0) {
      res.trajectory.samples.push_back(make_sample(k, t, p, e));
    }
    return hit;
  };

  bool hit = record(false);
  double dt = cfg.fixed_step > 0 ? cfg.fixed_step : cfg.initial_dt;
  if (cfg.fixed_step > 0) {
    odeint::runge_kutta4<detail::OdeState> rk4;
    const double h = cfg.fixed_step;
    while (!hit && t < cfg.t_end - 1e-12 * h) {
      if (k - cfg.start_index >= cfg.max_steps) break;
      rk4.do_step(sys, x, t, h);
      t += h;
      ++k;
      hit = record(t >= cfg.t_end - 1e-12 * h);
    }
  } else {
    auto stepper = odeint::make_controlled(cfg.tol, cfg.tol, odeint::runge_kutta_dopri5<detail::OdeState>());
    while (!hit && t < cfg.t_end) {
      if (k - cfg.start_index >= cfg.max_steps) break;
      odeint::controlled_step_result r = stepper.try_step(sys, x, t, dt);
      if (r == odeint::fail) {
        if (dt < 1e-14 * std::max(1.0, std::abs(t))) {
          throw StepSizeUnderflowError("flow_run: step size " + std::to_string(dt) + " at t = " +
                                       std::to_string(t));
        }
        continue;
      }
      ++k;
      hit = record(t >= cfg.t_end);
    }
  }
  if (res.trajectory.empty() || res.trajectory.back().index != k) record(true);
  res.params = detail::from_state(params0, x);
  res.t = t;
  res.dt = dt;
  res.steps = k;
  res.reached_target = hit;
  return res;
}

// ---- certified constants ------------------------------------------------

/// Delta of the step-size bound for depth N, margin c, norm bound M,
/// sqrt(lambda_max(Sigma_0)) and ||Sigma_0^{1/2}||_F.
inline double gd_delta(int depth, double c, double m, double sqrt_lambda_max, double frob_sqrt_sigma0) {
  const double n = depth;
  return std::pow(2.0, n + 1) / std::pow(c, 2 * n) * n * n * std::pow(m, (4 * n - 3) / n) * sqrt_lambda_max +
         8 * n * (n - 1) * std::pow(m, (3 * n - 4) / n) * (std::pow(m, 1.0 / n) + frob_sqrt_sigma0);
}

struct CertifiedConstants {
  int depth = 1;
  double c = 0.0;        // modified deficiency margin of W(0)
  double loss0 = 0.0;    // loss being optimized, at W(0)
  double m = 0.0;        // sqrt(2 (loss0 + tr Sigma_0))
  double delta = 0.0;
  double eta_max = 0.0;
  double kappa = 0.0;    // strong-convexity constant K_tau, or K_{c^2} when tau = 0
  double c_const = 0.0;  // 2 (loss0 + tr Sigma_0)
  double flow_rate = 0.0;

  /// c^{2(N-1)/N}
  double c_power() const { return std::pow(c, 2.0 * (depth - 1) / depth); }
  /// Per-step bound L(k+1) <= factor * L(k) for step size eta.
  double contraction_factor(double eta) const { return 1.0 - 2.0 * eta * depth * c_power(); }
  /// Iterations sufficient for loss <= eps at step size eta (default eta_max).
  long iter_bound(double eps, std::optional<double> eta = std::nullopt) const {
    if (!(eps > 0)) throw InputError("iter_bound: eps must be positive");
    const double e = eta.value_or(eta_max);
    if (loss0 <= eps) return 0;
    const double k = std::log(loss0 / eps) / (2.0 * e * depth * c_power());
    return static_cast<long>(std::ceil(std::max(k, 0.0)));
  }
};

inline CertifiedConstants certified_constants(const NetParams& params0, const Target& target) {
  CertifiedConstants cc;
  cc.depth = static_cast<int>(params0.depth());
  const Matrix w = compose(params0);
  cc.c = mdm_margin(w, target);
  if (!(cc.c > 0)) {
    throw MdmFailedError("certified_constants: modified deficiency margin " + std::to_string(cc.c) +
                             " is not positive",
                         cc.c);
  }
  cc.loss0 = loss_auto(w, target).value;
  const double n = cc.depth;
  cc.c_const = 2.0 * (cc.loss0 + target.trace);
  cc.m = std::sqrt(cc.c_const);
  cc.delta = gd_delta(cc.depth, cc.c, cc.m, target.sigma_max_sqrt, std::sqrt(target.trace));
  const double cp = cc.c_power();
  const double b1 = cc.loss0 > 0 ? cc.c * cc.c / (8.0 * cc.m * std::sqrt(cc.loss0))
                                 : std::numeric_limits<double>::infinity();
  const double b2 = n * cp / (2.0 * cc.delta);
  const double b3 = 1.0 / (4.0 * n * cp);
  cc.eta_max = std::min({b1, b2, b3});
  const double smoothing = target.tau > 0 ? target.tau : cc.c * cc.c;
  cc.kappa = std::sqrt(smoothing * target.lambda_min) / (2.0 * cc.c_const * cc.c_const);
  cc.flow_rate = 8.0 * n * std::pow(cc.c, 2.0 * (2 * n - 1) / n) * cc.kappa;
  return cc;
}

// ---- rate estimation ----------------------------------------------------

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::size_t points = 0;
};

inline RateFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw InsufficientDataError("linear_fit: need at least two points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0)) throw InsufficientDataError("linear_fit: abscissae are all equal");
  RateFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  f.points = n;
  return f;
}

/// OLS slope of log(loss - optimum) against t over the last (1 - trim_fraction)
/// of the samples with loss > optimum + 1e-14.
inline RateFit estimate_rate(const Trajectory& traj, double optimum, double trim_fraction = 0.5) {
  if (!(trim_fraction >= 0 && trim_fraction < 1)) throw InputError("estimate_rate: trim fraction in [0,1)");
  std::vector<double> t, y;
  for (const Sample& s : traj.samples) {
    const double gap = s.loss - optimum;
    if (gap > 1e-14) {
      t.push_back(s.t);
      y.push_back(std::log(gap));
    }
  }
  if (t.size() < 10) {
    throw InsufficientDataError("estimate_rate: " + std::to_string(t.size()) +
                                " usable samples, need at least 10");
  }
  const std::size_t skip = static_cast<std::size_t>(std::floor(trim_fraction * t.size()));
  std::vector<double> tt(t.begin() + skip, t.end()), yy(y.begin() + skip, y.end());
  return linear_fit(tt, yy);
}

}  // namespace bwdln
