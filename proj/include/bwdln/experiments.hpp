#pragma once

// Experiment drivers: Zipf targets, near-target initialization, rate sweeps,
// critical-point tables and Hessian conditioning studies.

#include <array>
#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <ostream>
#include <thread>

#include "bwdln/critical.hpp"
#include "bwdln/hessian.hpp"
#include "bwdln/io.hpp"
#include "bwdln/optimize.hpp"

namespace bwdln {

// ---- targets and initialization -------------------------------------------

/// Sigma_0 = Omega diag(lambda) Omega^T with lambda_j = (n / j) lambda_min.
inline TargetRecord zipf_target(Eigen::Index n, double lambda_min, std::uint64_t seed, double tau = 0.0) {
  if (n < 1) throw InputError("zipf_target: n must be >= 1");
  if (!(lambda_min > 0)) throw InputError("zipf_target: lambda_min must be positive");
  if (!(tau >= 0)) throw InputError("zipf_target: tau must be >= 0");
  TargetRecord r;
  r.omega = random_orthogonal(n, seed);
  r.lambda.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) r.lambda(j) = static_cast<double>(n) / static_cast<double>(j + 1) * lambda_min;
  r.tau = tau;
  r.seed = seed;
  return r;
}

struct InitSpec {
  int depth = 1;
  double perturb_scale = 0.0;
  std::uint64_t seed = 0;
  Eigen::Index width = -1;  // hidden width, defaults to n
};

struct InitResult {
  NetParams params;
  Matrix sigma_init;  // W W^T of the end-to-end matrix
  double margin = 0.0;
};

/// Balanced parameters whose end-to-end W = Sigma(0)^{1/2} with
/// Sigma(0) = Sigma_0 - tau I + Gamma D Gamma^T, D = perturb_scale * diag(u), u ~ U(0,1).
inline InitResult init_near_target(const Target& target, const InitSpec& spec) {
  const Eigen::Index n = target.dim();
  if (spec.depth < 1) throw InputError("init_near_target: depth must be >= 1");
  if (!(spec.perturb_scale >= 0)) throw InputError("init_near_target: perturbation scale must be >= 0");
  if (target.tau > target.lambda_min) {
    throw TauTooLargeError("init_near_target: tau exceeds lambda_min(Sigma_0)");
  }
  const Eigen::Index width = spec.width < 0 ? n : spec.width;
  if (width < n) throw RankError("init_near_target: hidden width below n cannot carry a full-rank init");
  std::mt19937_64 rng(detail::mix_seed(spec.seed, 0x5eedULL));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector d(n);
  for (Eigen::Index i = 0; i < n; ++i) d(i) = spec.perturb_scale * unif(rng);
  const Matrix gamma = random_orthogonal(n, detail::mix_seed(spec.seed, 0x9a77aULL));
  Matrix sigma = target.sigma0.mat() + gamma * d.asDiagonal() * gamma.transpose();
  sigma.diagonal().array() -= target.tau;
  InitResult out;
  out.sigma_init = 0.5 * (sigma + sigma.transpose());
  const Matrix w0 = sqrtm_psd(PsdMatrix(out.sigma_init)).mat();
  out.margin = mdm_margin(w0, target);
  if (!(out.margin > 0)) {
    throw MdmFailedError("init_near_target: modified deficiency margin " + fmt17(out.margin) + " is not positive",
                         out.margin);
  }
  std::vector<Eigen::Index> dims(static_cast<std::size_t>(spec.depth) + 1, width);
  dims.front() = n;
  dims.back() = n;
  out.params = balanced_init(w0, dims, spec.seed);
  return out;
}

/// Minimum of the loss over end-to-end matrices of rank <= rank: the tail sum for
/// tau = 0, otherwise sum_{i >= rank} (sqrt(lambda_i) - sqrt(tau))^2 (tau <= lambda_rank).
inline double optimum_loss(const Target& target, Eigen::Index rank) {
  const Vector& l = target.eig().eigvals;
  const Eigen::Index n = l.size();
  rank = std::min(rank, n);
  if (target.tau > 0 && rank > 0 && target.tau > l(rank - 1)) {
    throw TauTooLargeError("optimum_loss: tau exceeds lambda_rank");
  }
  double v = 0.0;
  for (Eigen::Index i = rank; i < n; ++i) {
    v += target.tau > 0 ? std::pow(std::sqrt(std::max(l(i), 0.0)) - std::sqrt(target.tau), 2) : l(i);
  }
  return v;
}

// ---- trajectory checks ------------------------------------------------------

struct TrajectoryChecks {
  double max_balance_drift = 0.0;  // max over samples of balance residual
  double min_sigma_slack = std::numeric_limits<double>::infinity();  // min sigma_min - c
  double max_norm_excess = -std::numeric_limits<double>::infinity();  // max ||W||_F - M
  long loss_increases = 0;  // samples whose loss exceeds the previous one by more than slack
};

inline TrajectoryChecks check_trajectory(const Trajectory& traj, double c, double m, double loss_slack) {
  TrajectoryChecks out;
  for (std::size_t i = 0; i < traj.samples.size(); ++i) {
    const Sample& s = traj.samples[i];
    out.max_balance_drift = std::max(out.max_balance_drift, s.balance_residual);
    out.min_sigma_slack = std::min(out.min_sigma_slack, s.sigma_min - c);
    out.max_norm_excess = std::max(out.max_norm_excess, s.w_norm - m);
    if (i && s.loss > traj.samples[i - 1].loss + loss_slack) ++out.loss_increases;
  }
  return out;
}

/// Exponential bound L(t) - L* <= exp(-rate t) (L(0) - L*) checked at every sample.
struct FlowBoundReport {
  long violations = 0;
  double worst_ratio = 0.0;  // max (L(t) - L*) / bound(t)
  std::size_t samples = 0;
};

inline FlowBoundReport flow_bound_report(const Trajectory& traj, double rate, double optimum) {
  FlowBoundReport r;
  if (traj.empty()) return r;
  const double gap0 = traj.samples.front().loss - optimum;
  const double t0 = traj.samples.front().t;
  for (const Sample& s : traj.samples) {
    const double bound = std::exp(-rate * (s.t - t0)) * gap0;
    const double gap = s.loss - optimum;
    if (gap > bound * (1 + 1e-12) + 1e-15) ++r.violations;
    if (bound > 0) r.worst_ratio = std::max(r.worst_ratio, gap / bound);
    ++r.samples;
  }
  return r;
}

// ---- experiment configuration -------------------------------------------------

struct ExperimentConfig {
  Eigen::Index n = 20;
  Eigen::Index m = -1;  // input width d_0, defaults to n
  std::vector<int> depths{2, 3, 4, 5};
  std::vector<double> lambda_min_grid{0.7078 * 0.7078};
  double tau = 0.1;
  std::uint64_t seed = 0;
  std::string eta = "auto";
  double t_end = 400.0;
  long iters = 200000;
  std::string output_dir = ".";
  std::string mode = "flow";
  double tol = 1e-8;
  double perturb_scale = 0.02;
  double stop_loss = 1e-9;
  double trim = 0.5;
  long record_every = 1;
  int threads = 1;
  double synthetic_rate = 0.0;  // > 0: sweep cells fit e^{-rate t} instead of training
  int hessian_seeds = 7;
  int hessian_indices = 5;
  int hessian_depth = 3;
  std::vector<double> hessian_taus{0.1, 0.001};

  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k{
        "n",         "m",          "depths",        "lambda_min_grid", "tau",          "seed",
        "eta",       "t_end",      "iters",         "output_dir",      "mode",         "tol",
        "perturb_scale", "stop_loss", "trim",      "record_every",    "threads",      "synthetic_rate",
        "hessian_seeds", "hessian_indices", "hessian_depth", "hessian_taus"};
    return k;
  }

  static ExperimentConfig from_kv(const KeyValueConfig& kv) {
    const auto unknown = kv.unknown_keys(keys());
    if (!unknown.empty()) throw InputError("unknown config key: " + unknown.front());
    ExperimentConfig c;
    c.n = kv.get_long("n", c.n);
    c.m = kv.get_long("m", c.m);
    std::vector<double> depths(c.depths.begin(), c.depths.end());
    depths = kv.get_list("depths", depths);
    c.depths.assign(depths.begin(), depths.end());
    c.lambda_min_grid = kv.get_list("lambda_min_grid", c.lambda_min_grid);
    c.tau = kv.get_double("tau", c.tau);
    c.seed = static_cast<std::uint64_t>(kv.get_long("seed", static_cast<long>(c.seed)));
    c.eta = kv.get_string("eta", c.eta);
    c.t_end = kv.get_double("t_end", c.t_end);
    c.iters = kv.get_long("iters", c.iters);
    c.output_dir = kv.get_string("output_dir", c.output_dir);
    c.mode = kv.get_string("mode", c.mode);
    c.tol = kv.get_double("tol", c.tol);
    c.perturb_scale = kv.get_double("perturb_scale", c.perturb_scale);
    c.stop_loss = kv.get_double("stop_loss", c.stop_loss);
    c.trim = kv.get_double("trim", c.trim);
    c.record_every = kv.get_long("record_every", c.record_every);
    c.threads = static_cast<int>(kv.get_long("threads", c.threads));
    c.synthetic_rate = kv.get_double("synthetic_rate", c.synthetic_rate);
    c.hessian_seeds = static_cast<int>(kv.get_long("hessian_seeds", c.hessian_seeds));
    c.hessian_indices = static_cast<int>(kv.get_long("hessian_indices", c.hessian_indices));
    c.hessian_depth = static_cast<int>(kv.get_long("hessian_depth", c.hessian_depth));
    c.hessian_taus = kv.get_list("hessian_taus", c.hessian_taus);
    c.validate();
    return c;
  }

  void validate() const {
    if (n < 1) throw InputError("config: n must be >= 1");
    if (m == 0 || m < -1) throw InputError("config: m must be positive");
    if (depths.empty()) throw InputError("config: depths is empty");
    for (int d : depths)
      if (d < 1) throw InputError("config: depths must be >= 1");
    for (double l : lambda_min_grid)
      if (!(l > 0)) throw InputError("config: lambda_min_grid entries must be positive");
    if (!(tau >= 0)) throw InputError("config: tau must be >= 0");
    if (mode != "flow" && mode != "gd") throw InputError("config: mode must be flow or gd");
    if (eta != "auto") {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(eta, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != eta.size() || !(v > 0)) throw InputError("config: eta must be auto or a positive number");
    }
    if (!(t_end > 0) || iters < 1 || !(tol > 0) || record_every < 1 || threads < 1) {
      throw InputError("config: t_end, iters, tol, record_every and threads must be positive");
    }
    if (!(stop_loss > 0)) throw InputError("config: stop_loss must be positive");
    if (!(trim >= 0 && trim < 1)) throw InputError("config: trim must lie in [0, 1)");
    if (hessian_seeds < 1 || hessian_indices < 1 || hessian_depth < 1) {
      throw InputError("config: hessian settings must be positive");
    }
  }

  Json to_json() const {
    Json j;
    j["n"] = n;
    j["m"] = m < 0 ? n : m;
    j["depths"] = depths;
    j["lambda_min_grid"] = lambda_min_grid;
    j["tau"] = tau;
    j["seed"] = seed;
    j["eta"] = eta;
    j["t_end"] = t_end;
    j["iters"] = iters;
    j["output_dir"] = output_dir;
    j["mode"] = mode;
    j["tol"] = tol;
    j["perturb_scale"] = perturb_scale;
    j["stop_loss"] = stop_loss;
    j["trim"] = trim;
    j["record_every"] = record_every;
    j["threads"] = threads;
    j["synthetic_rate"] = synthetic_rate;
    j["hessian_seeds"] = hessian_seeds;
    j["hessian_indices"] = hessian_indices;
    j["hessian_depth"] = hessian_depth;
    j["hessian_taus"] = hessian_taus;
    return j;
  }
};

// ---- work pool ------------------------------------------------------------------

/// Runs job(i) for i in [0, count) on `threads` workers; the first exception is rethrown.
inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& job) {
  const std::size_t workers = std::min<std::size_t>(std::max(threads, 1), std::max<std::size_t>(count, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          job(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next.store(count);
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---- rate sweep -----------------------------------------------------------------

struct SweepCell {
  int depth = 1;
  double lambda_min = 0.0;
  double sigma_min_sqrt = 0.0;
  double slope = 0.0;
  double r2 = 0.0;
  std::size_t fit_points = 0;
  double margin = 0.0;
  double optimum = 0.0;
  double final_loss = 0.0;
  double t_final = 0.0;
  long steps = 0;
  bool reached = false;
  TrajectoryChecks checks;
  Trajectory trajectory;
};

inline Trajectory synthetic_trajectory(double rate, double optimum, double t_end, std::size_t samples) {
  Trajectory tr;
  for (std::size_t i = 0; i < samples; ++i) {
    Sample s;
    s.index = static_cast<long>(i);
    s.t = t_end * static_cast<double>(i) / static_cast<double>(samples - 1);
    s.loss = std::exp(-rate * s.t) + optimum;
    tr.samples.push_back(s);
  }
  return tr;
}

/// One (depth, lambda_min) cell: Zipf target, near-target init, training to
/// stop_loss and a log-linear fit of the loss gap.
inline SweepCell run_sweep_cell(const ExperimentConfig& cfg, int depth, double lambda_min, bool keep_trajectory) {
  SweepCell cell;
  cell.depth = depth;
  cell.lambda_min = lambda_min;
  cell.sigma_min_sqrt = std::sqrt(lambda_min);
  if (cfg.synthetic_rate > 0) {
    cell.trajectory = synthetic_trajectory(cfg.synthetic_rate, 0.0, 10.0 / cfg.synthetic_rate, 200);
    const RateFit f = estimate_rate(cell.trajectory, 0.0, cfg.trim);
    cell.slope = f.slope;
    cell.r2 = f.r2;
    cell.fit_points = f.points;
    if (!keep_trajectory) cell.trajectory = {};
    return cell;
  }
  if (cfg.m >= 0 && cfg.m != cfg.n) throw InputError("sweep: the near-target init needs m = n");
  const Target target = zipf_target(cfg.n, lambda_min, cfg.seed, cfg.tau).target();
  InitSpec spec;
  spec.depth = depth;
  spec.perturb_scale = cfg.perturb_scale;
  spec.seed = cfg.seed;
  const InitResult init = init_near_target(target, spec);
  cell.margin = init.margin;
  cell.optimum = optimum_loss(target, cfg.n);
  const CertifiedConstants cc = certified_constants(init.params, target);
  if (cfg.mode == "flow") {
    FlowConfig fc;
    fc.t_end = cfg.t_end;
    fc.tol = cfg.tol;
    fc.record_every = cfg.record_every;
    fc.target_loss = cell.optimum + cfg.stop_loss;
    const FlowResult r = flow_run(init.params, target, fc);
    cell.trajectory = r.trajectory;
    cell.t_final = r.t;
    cell.steps = r.steps;
    cell.reached = r.reached_target;
  } else {
    GdConfig gc;
    gc.eta = cfg.eta == "auto" ? cc.eta_max : std::stod(cfg.eta);
    gc.max_iters = cfg.iters;
    gc.target_loss = cell.optimum + cfg.stop_loss;
    gc.record_every = cfg.record_every;
    const GdResult r = gd_run(init.params, target, gc);
    cell.trajectory = r.trajectory;
    cell.t_final = r.trajectory.samples.back().t;
    cell.steps = r.iterations;
    cell.reached = r.reached_target;
  }
  cell.final_loss = cell.trajectory.samples.back().loss;
  cell.checks = check_trajectory(cell.trajectory, cc.c, cc.m, cfg.tol);
  const RateFit f = estimate_rate(cell.trajectory, cell.optimum, cfg.trim);
  cell.slope = f.slope;
  cell.r2 = f.r2;
  cell.fit_points = f.points;
  if (!keep_trajectory) cell.trajectory = {};
  return cell;
}

/// All (depth, lambda_min) cells, depth-major, computed on cfg.threads workers.
inline std::vector<SweepCell> run_sweep(const ExperimentConfig& cfg, bool keep_trajectories = false) {
  cfg.validate();
  std::vector<std::pair<int, double>> grid;
  for (int d : cfg.depths)
    for (double l : cfg.lambda_min_grid) grid.emplace_back(d, l);
  std::vector<SweepCell> cells(grid.size());
  parallel_for(grid.size(), cfg.threads, [&](std::size_t i) {
    cells[i] = run_sweep_cell(cfg, grid[i].first, grid[i].second, keep_trajectories);
  });
  return cells;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepCell>& cells) {
  os << "depth,sigma_min_sqrt,slope,r2\n";
  for (const SweepCell& c : cells) {
    os << c.depth << ',' << fmt17(c.sigma_min_sqrt) << ',' << fmt17(c.slope) << ',' << fmt17(c.r2) << '\n';
  }
}

/// Slope magnitude against depth, one line per sigma_min; plus the depth x sigma_min grid.
inline std::pair<std::string, std::string> sweep_svgs(const std::vector<SweepCell>& cells) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::vector<double> sig, dep;
  for (const SweepCell& c : cells) {
    if (std::find(sig.begin(), sig.end(), c.sigma_min_sqrt) == sig.end()) sig.push_back(c.sigma_min_sqrt);
    if (std::find(dep.begin(), dep.end(), double(c.depth)) == dep.end()) dep.push_back(c.depth);
  }
  std::sort(sig.begin(), sig.end());
  std::sort(dep.begin(), dep.end());
  std::vector<SvgSeries> series;
  std::vector<std::vector<double>> grid(sig.size(), std::vector<double>(dep.size(), std::nan("")));
  for (std::size_t s = 0; s < sig.size(); ++s) {
    SvgSeries line;
    line.label = "sigma_min = " + detail::num(sig[s]);
    line.color = colors[s % 6];
    for (const SweepCell& c : cells) {
      if (c.sigma_min_sqrt != sig[s]) continue;
      line.x.push_back(c.depth);
      line.y.push_back(-c.slope);
      const auto j = std::find(dep.begin(), dep.end(), double(c.depth)) - dep.begin();
      grid[s][static_cast<std::size_t>(j)] = -c.slope;
    }
    series.push_back(std::move(line));
  }
  return {svg_line_plot(series, "empirical convergence rate", "depth N", "-slope of log(L - L*)"),
          svg_grid_plot(dep, sig, grid, "rate over depth and sigma_min", "depth N", "sigma_min")};
}

// ---- critical table ---------------------------------------------------------------

struct CriticalRow {
  CriticalValue value;
  double grad_norm = 0.0;
  std::optional<double> grad_norm_tau;
};

/// Closed-form critical values with the gradient norm of each constructed point:
/// the restricted gradient for the unperturbed family, the ambient L_tau gradient
/// for the perturbed one.
inline std::vector<CriticalRow> critical_table(const Target& target, int k, std::uint64_t seed = 0) {
  std::vector<CriticalRow> rows;
  for (const CriticalValue& cv : enumerate_critical_values(target, k)) {
    CriticalRow row;
    row.value = cv;
    const CriticalPoint cp = make_critical(target, cv.index_set, target.dim(), false, seed);
    row.grad_norm = restricted_gradient(cp.w, target, k).norm();
    if (cv.value_tau) {
      const CriticalPoint cpt = make_critical(target, cv.index_set, target.dim(), true, seed);
      row.grad_norm_tau = loss_fn_tau(cpt.w, target).grad().norm();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_critical_table_csv(std::ostream& os, const std::vector<CriticalRow>& rows) {
  os << "subset,k,value,value_tau,grad_norm,grad_norm_tau\n";
  for (const CriticalRow& r : rows) {
    os << format_index_set(r.value.index_set) << ',' << r.value.index_set.size() << ',' << fmt17(r.value.value)
       << ',' << (r.value.value_tau ? fmt17(*r.value.value_tau) : "") << ',' << fmt17(r.grad_norm) << ','
       << (r.grad_norm_tau ? fmt17(*r.grad_norm_tau) : "") << '\n';
  }
}

// ---- Hessian study ------------------------------------------------------------------

struct HessianRecord {
  int seed_index = 0;
  int index = 0;  // critical point W*_i of rank n - i
  LossKind kind = LossKind::frobenius;
  double tau = 0.0;
  double loss = 0.0;
  ConditionReport report;
};

/// Parameter-space Hessians at the balanced lifts of the rank-(n - i) minimizers,
/// i = 0..indices-1, for the Frobenius loss and the BW loss at each tau.
inline std::vector<HessianRecord> run_hessian_study(const ExperimentConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = cfg.n;
  const Eigen::Index m = cfg.m < 0 ? n : cfg.m;
  if (cfg.hessian_indices > n) throw InputError("hessian study: more indices than ranks");
  if (n > m) throw InputError("hessian study: rank n exceeds the input dimension m");
  const double lambda_min = cfg.lambda_min_grid.front();
  struct Job {
    int s, i;
  };
  std::vector<Job> jobs;
  for (int s = 0; s < cfg.hessian_seeds; ++s)
    for (int i = 0; i < cfg.hessian_indices; ++i) jobs.push_back({s, i});
  const std::size_t per_job = 1 + cfg.hessian_taus.size();
  std::vector<HessianRecord> out(jobs.size() * per_job);
  parallel_for(jobs.size(), cfg.threads, [&](std::size_t jix) {
    const Job job = jobs[jix];
    const TargetRecord rec = zipf_target(n, lambda_min, detail::mix_seed(cfg.seed, 1000 + job.s));
    const int k = static_cast<int>(n) - job.i;
    IndexSet set(static_cast<std::size_t>(k));
    for (int a = 0; a < k; ++a) set[static_cast<std::size_t>(a)] = a;
    std::vector<Eigen::Index> dims(static_cast<std::size_t>(cfg.hessian_depth) + 1, n);
    dims.front() = m;
    const std::uint64_t lift_seed = detail::mix_seed(cfg.seed, 2000 + job.s);

    const Target t0 = rec.target();
    const CriticalPoint fro = make_critical(t0, set, m, false, lift_seed);
    const NetParams fro_lift = balanced_init(fro.w, dims, lift_seed);
    HessianRecord& rf = out[jix * per_job];
    rf.seed_index = job.s;
    rf.index = job.i;
    rf.kind = LossKind::frobenius;
    rf.loss = param_loss(fro_lift, t0, LossKind::frobenius);
    rf.report = condition_report(hess_param(fro_lift, t0, LossKind::frobenius));

    for (std::size_t a = 0; a < cfg.hessian_taus.size(); ++a) {
      const Target tt = t0.with_tau(cfg.hessian_taus[a]);
      const CriticalPoint bw = make_critical(tt, set, m, true, lift_seed);
      const NetParams bw_lift = balanced_init(bw.w, dims, lift_seed);
      HessianRecord& rb = out[jix * per_job + 1 + a];
      rb.seed_index = job.s;
      rb.index = job.i;
      rb.kind = LossKind::bw_tau;
      rb.tau = tt.tau;
      rb.loss = param_loss(bw_lift, tt, LossKind::bw_tau);
      rb.report = condition_report(hess_param(bw_lift, tt, LossKind::bw_tau));
    }
  });
  return out;
}

struct HessianAggregate {
  LossKind kind = LossKind::frobenius;
  double tau = 0.0;
  int index = 0;
  int count = 0;
  double loss_mean = 0, loss_std = 0;
  double lambda_max_mean = 0, lambda_max_std = 0;
  double kappa_rel_abs_mean = 0, kappa_rel_abs_std = 0;  // |kappa_rel|
  double kappa_abs_mean = 0, kappa_abs_std = 0;
};

/// Mean and (population) standard deviation over seeds, grouped by (kind, tau, index).
inline std::vector<HessianAggregate> aggregate_hessian_study(const std::vector<HessianRecord>& records) {
  std::vector<HessianAggregate> out;
  auto find = [&](const HessianRecord& r) -> HessianAggregate& {
    for (auto& a : out)
      if (a.kind == r.kind && a.tau == r.tau && a.index == r.index) return a;
    HessianAggregate a;
    a.kind = r.kind;
    a.tau = r.tau;
    a.index = r.index;
    out.push_back(a);
    return out.back();
  };
  struct Acc {
    double s = 0, ss = 0;
  };
  std::vector<std::array<Acc, 4>> acc;
  for (const HessianRecord& r : records) find(r);
  acc.resize(out.size());
  for (const HessianRecord& r : records) {
    HessianAggregate& a = find(r);
    auto& c = acc[static_cast<std::size_t>(&a - out.data())];
    const double v[4] = {r.loss, r.report.lambda_max, std::abs(r.report.kappa_rel), r.report.kappa_abs};
    for (int q = 0; q < 4; ++q) {
      c[q].s += v[q];
      c[q].ss += v[q] * v[q];
    }
    ++a.count;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    HessianAggregate& a = out[i];
    double mean[4], sd[4];
    for (int q = 0; q < 4; ++q) {
      mean[q] = acc[i][q].s / a.count;
      sd[q] = std::sqrt(std::max(acc[i][q].ss / a.count - mean[q] * mean[q], 0.0));
    }
    a.loss_mean = mean[0], a.loss_std = sd[0];
    a.lambda_max_mean = mean[1], a.lambda_max_std = sd[1];
    a.kappa_rel_abs_mean = mean[2], a.kappa_rel_abs_std = sd[2];
    a.kappa_abs_mean = mean[3], a.kappa_abs_std = sd[3];
  }
  return out;
}

/// Rows of one (kind, tau) group: `index,loss,lambda_max,kappa_rel_abs,kappa_abs`
/// (means), or the standard deviations when `std_dev` is set.
inline void write_hessian_csv(std::ostream& os, const std::vector<HessianAggregate>& aggs, LossKind kind,
                              double tau, bool std_dev = false) {
  os << "index,loss,lambda_max,kappa_rel_abs,kappa_abs\n";
  for (const HessianAggregate& a : aggs) {
    if (a.kind != kind || (kind == LossKind::bw_tau && a.tau != tau)) continue;
    if (std_dev) {
      os << a.index << ',' << fmt17(a.loss_std) << ',' << fmt17(a.lambda_max_std) << ','
         << fmt17(a.kappa_rel_abs_std) << ',' << fmt17(a.kappa_abs_std) << '\n';
    } else {
      os << a.index << ',' << fmt17(a.loss_mean) << ',' << fmt17(a.lambda_max_mean) << ','
         << fmt17(a.kappa_rel_abs_mean) << ',' << fmt17(a.kappa_abs_mean) << '\n';
    }
  }
}

inline std::string hessian_svg(const std::vector<HessianAggregate>& aggs, const std::vector<double>& taus) {
  static const char* colors[] = {"#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::vector<SvgSeries> series;
  SvgSeries fro;
  fro.label = "Frobenius";
  fro.color = "#1f77b4";
  for (const auto& a : aggs) {
    if (a.kind != LossKind::frobenius) continue;
    fro.x.push_back(a.index);
    fro.y.push_back(std::log10(a.kappa_abs_mean));
  }
  series.push_back(fro);
  for (std::size_t t = 0; t < taus.size(); ++t) {
    SvgSeries s;
    s.label = "BW, tau = " + detail::num(taus[t]);
    s.color = colors[t % 4];
    for (const auto& a : aggs) {
      if (a.kind != LossKind::bw_tau || a.tau != taus[t]) continue;
      s.x.push_back(a.index);
      s.y.push_back(std::log10(a.kappa_abs_mean));
    }
    series.push_back(s);
  }
  return svg_line_plot(series, "absolute condition number at critical points", "critical point index i",
                       "log10 kappa_abs");
}

// ---- manifest -------------------------------------------------------------------------

struct RunManifest {
  Json config;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
  std::vector<std::string> outputs;
  Json extra = Json::object();

  Json to_json() const {
    Json j;
    j["version"] = kVersion;
    j["config"] = config;
    j["seed"] = seed;
    j["wall_seconds"] = wall_seconds;
    j["outputs"] = outputs;
    if (!extra.empty()) j["results"] = extra;
    return j;
  }
};

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace bwdln
