#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "bwdln/bwdln.hpp"

using namespace bwdln;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  std::string eta = "auto";
  double tau = 0.0;
  int depth = 1;
  int threads = 1;
};

std::string join(const fs::path& dir, const std::string& name) { return (dir / name).string(); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create " + dir.string() + ": " + ec.message());
}

template <class F>
void write_with(const std::string& path, F&& body) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path);
  body(os);
}

double parse_eta(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || !(v > 0)) throw InputError("eta must be auto or a positive number");
  return v;
}

// ---- target ----------------------------------------------------------------

struct TargetArgs {
  long n = 20;
  double lambda_min = 0.0;
  double sigma_min = 0.7078;
};

int cmd_target(const Common& c, const TargetArgs& a) {
  const double lmin = a.lambda_min > 0 ? a.lambda_min : a.sigma_min * a.sigma_min;
  const TargetRecord r = zipf_target(a.n, lmin, c.seed, c.tau);
  const std::string out = c.out.empty() ? "target.json" : c.out;
  write_json(out, target_to_json(r));
  std::cout << "target n=" << a.n << " lambda_min=" << fmt17(lmin) << " -> " << out << "\n";
  return 0;
}

// ---- init --------------------------------------------------------------------

struct InitArgs {
  std::string target;
  double perturb = 0.02;
  long width = -1;
};

int cmd_init(const Common& c, const InitArgs& a, bool tau_given) {
  TargetRecord rec = target_from_json(read_json(a.target));
  if (tau_given) rec.tau = c.tau;
  const Target target = rec.target();
  InitSpec spec;
  spec.depth = c.depth;
  spec.perturb_scale = a.perturb;
  spec.seed = c.seed;
  spec.width = a.width;
  Stopwatch sw;
  const InitResult r = init_near_target(target, spec);
  const std::string out = c.out.empty() ? "params.json" : c.out;
  Json pj = params_to_json(r.params);
  pj["margin"] = r.margin;
  write_json(out, pj);
  RunManifest m;
  m.config = {{"command", "init"}, {"target", a.target}, {"depth", c.depth}, {"tau", rec.tau},
              {"perturb_scale", a.perturb}, {"width", a.width}};
  m.seed = c.seed;
  m.wall_seconds = sw.seconds();
  m.outputs = {out};
  m.extra = {{"margin", r.margin}, {"balance_residual", balance_report(r.params).max_residual}};
  write_json(out + ".manifest.json", m.to_json());
  std::cout << "init depth=" << c.depth << " margin=" << fmt17(r.margin) << " -> " << out << "\n";
  return 0;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  std::string target;
  std::string params;
  std::string mode = "flow";
  long iters = 100000;
  double t_end = 10.0;
  double tol = 1e-8;
  double fixed_step = 0.0;
  double stop_loss = 0.0;
  long record_every = 1;
};

int cmd_train(const Common& c, const TrainArgs& a, bool tau_given) {
  TargetRecord rec = target_from_json(read_json(a.target));
  if (tau_given) rec.tau = c.tau;
  const Target target = rec.target();
  const Checkpoint ck = checkpoint_from_json(read_json(a.params));
  if (ck.params.out_dim() != target.dim()) throw InputError("train: params do not match the target dimension");
  const fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
  ensure_dir(dir);
  const double optimum = optimum_loss(target, *std::min_element(ck.params.dims().begin(), ck.params.dims().end()));

  std::optional<CertifiedConstants> cc;
  try {
    cc = certified_constants(ck.params, target);
  } catch (const MdmFailedError&) {
    if (a.mode == "gd" && c.eta == "auto") throw;
  }

  Stopwatch sw;
  Trajectory traj;
  Checkpoint final;
  final.mode = a.mode;
  Json results;
  if (a.mode == "gd") {
    GdConfig g;
    g.eta = c.eta == "auto" ? cc->eta_max : parse_eta(c.eta);
    g.max_iters = a.iters;
    g.target_loss = a.stop_loss > 0 ? optimum + a.stop_loss : std::numeric_limits<double>::min();
    g.record_every = a.record_every;
    g.start_index = ck.index;
    const GdResult r = gd_run(ck.params, target, g);
    traj = r.trajectory;
    final.params = r.params;
    final.index = r.iterations;
    final.t = static_cast<double>(r.iterations) * g.eta;
    results["eta"] = g.eta;
    results["reached_target"] = r.reached_target;
    if (cc) {
      results["eta_max"] = cc->eta_max;
      results["iter_bound"] = a.stop_loss > 0 ? cc->iter_bound(a.stop_loss, g.eta) : -1;
    }
  } else if (a.mode == "flow") {
    FlowConfig f;
    f.t0 = ck.t;
    f.t_end = ck.t + a.t_end;
    f.tol = a.tol;
    f.fixed_step = a.fixed_step;
    if (ck.dt > 0) f.initial_dt = ck.dt;
    f.start_index = ck.index;
    f.record_every = a.record_every;
    if (a.stop_loss > 0) f.target_loss = optimum + a.stop_loss;
    const FlowResult r = flow_run(ck.params, target, f);
    traj = r.trajectory;
    final.params = r.params;
    final.t = r.t;
    final.dt = r.dt;
    final.index = r.steps;
    results["reached_target"] = r.reached_target;
    if (cc) {
      const FlowBoundReport b = flow_bound_report(traj, cc->flow_rate, optimum);
      results["flow_rate"] = cc->flow_rate;
      results["flow_bound_violations"] = b.violations;
    }
  } else {
    throw InputError("train: mode must be gd or flow");
  }

  const std::string tpath = join(dir, "trajectory.csv");
  const std::string ppath = join(dir, "final_params.json");
  write_with(tpath, [&](std::ostream& os) { write_trajectory_csv(os, traj); });
  write_json(ppath, checkpoint_to_json(final));
  if (cc) {
    results["margin"] = cc->c;
    results["kappa"] = cc->kappa;
  }
  results["optimum"] = optimum;
  results["final_loss"] = traj.samples.back().loss;
  RunManifest m;
  m.config = {{"command", "train"}, {"target", a.target}, {"params", a.params}, {"mode", a.mode},
              {"eta", c.eta},        {"iters", a.iters},   {"t_end", a.t_end},   {"tol", a.tol},
              {"fixed_step", a.fixed_step}, {"stop_loss", a.stop_loss}, {"record_every", a.record_every},
              {"tau", rec.tau}};
  m.seed = c.seed;
  m.wall_seconds = sw.seconds();
  m.outputs = {tpath, ppath};
  m.extra = results;
  write_json(join(dir, "manifest.json"), m.to_json());
  std::cout << "train " << a.mode << " final loss " << fmt17(traj.samples.back().loss) << " -> " << tpath << "\n";
  return 0;
}

// ---- experiment config -------------------------------------------------------

struct ExpArgs {
  double synthetic_rate = -1.0;
};

bool given(const CLI::App& sub, const std::string& name) {
  const CLI::Option* opt = sub.get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

ExperimentConfig load_experiment(const Common& c, const CLI::App& sub, const ExpArgs& a) {
  KeyValueConfig kv;
  if (!c.config.empty()) kv = KeyValueConfig::load(c.config);
  if (given(sub, "--seed")) kv.set("seed", std::to_string(c.seed));
  if (given(sub, "--tau")) {
    kv.set("tau", fmt17(c.tau));
    kv.set("hessian_taus", fmt17(c.tau));
  }
  if (given(sub, "--eta")) kv.set("eta", c.eta);
  if (given(sub, "--depth")) {
    kv.set("depths", std::to_string(c.depth));
    kv.set("hessian_depth", std::to_string(c.depth));
  }
  if (given(sub, "--threads")) kv.set("threads", std::to_string(c.threads));
  if (given(sub, "--out")) kv.set("output_dir", c.out);
  if (a.synthetic_rate >= 0) kv.set("synthetic_rate", fmt17(a.synthetic_rate));
  return ExperimentConfig::from_kv(kv);
}

int cmd_sweep(const ExperimentConfig& cfg) {
  Stopwatch sw;
  const fs::path dir(cfg.output_dir);
  ensure_dir(dir);
  const auto cells = run_sweep(cfg);
  const std::string csv = join(dir, "sweep.csv");
  write_with(csv, [&](std::ostream& os) { write_sweep_csv(os, cells); });
  const auto svgs = sweep_svgs(cells);
  write_text(join(dir, "sweep_depth.svg"), svgs.first);
  write_text(join(dir, "sweep_grid.svg"), svgs.second);
  Json per_cell = Json::array();
  for (const SweepCell& cell : cells) {
    per_cell.push_back({{"depth", cell.depth},
                        {"lambda_min", cell.lambda_min},
                        {"slope", cell.slope},
                        {"r2", cell.r2},
                        {"fit_points", cell.fit_points},
                        {"margin", cell.margin},
                        {"final_loss", cell.final_loss},
                        {"t_final", cell.t_final},
                        {"steps", cell.steps},
                        {"reached", cell.reached},
                        {"max_balance_drift", cell.checks.max_balance_drift},
                        {"min_sigma_slack", cell.checks.min_sigma_slack}});
  }
  RunManifest m;
  m.config = cfg.to_json();
  m.seed = cfg.seed;
  m.wall_seconds = sw.seconds();
  m.outputs = {csv, join(dir, "sweep_depth.svg"), join(dir, "sweep_grid.svg")};
  m.extra = {{"cells", per_cell}};
  write_json(join(dir, "manifest.json"), m.to_json());
  for (const SweepCell& cell : cells) {
    std::cout << "depth " << cell.depth << " sigma_min " << fmt17(cell.sigma_min_sqrt) << " slope "
              << fmt17(cell.slope) << " r2 " << fmt17(cell.r2) << "\n";
  }
  return 0;
}

int cmd_hessian(const ExperimentConfig& cfg) {
  Stopwatch sw;
  const fs::path dir(cfg.output_dir);
  ensure_dir(dir);
  const auto aggs = aggregate_hessian_study(run_hessian_study(cfg));
  std::vector<std::string> outputs;
  auto emit = [&](const std::string& name, LossKind kind, double tau) {
    const std::string mean = join(dir, name + ".csv");
    const std::string sd = join(dir, name + "_std.csv");
    write_with(mean, [&](std::ostream& os) { write_hessian_csv(os, aggs, kind, tau); });
    write_with(sd, [&](std::ostream& os) { write_hessian_csv(os, aggs, kind, tau, true); });
    outputs.push_back(mean);
    outputs.push_back(sd);
  };
  emit("hessian_frobenius", LossKind::frobenius, 0.0);
  for (double tau : cfg.hessian_taus) emit("hessian_bw_tau" + fmt17(tau), LossKind::bw_tau, tau);
  const std::string svg = join(dir, "hessian.svg");
  write_text(svg, hessian_svg(aggs, cfg.hessian_taus));
  outputs.push_back(svg);
  RunManifest m;
  m.config = cfg.to_json();
  m.seed = cfg.seed;
  m.wall_seconds = sw.seconds();
  m.outputs = outputs;
  write_json(join(dir, "manifest.json"), m.to_json());
  for (const auto& a : aggs) {
    std::cout << to_string(a.kind) << " tau " << fmt17(a.tau) << " i " << a.index << " kappa_abs "
              << fmt17(a.kappa_abs_mean) << "\n";
  }
  return 0;
}

// ---- critical ----------------------------------------------------------------

struct CriticalArgs {
  std::string target;
  int k = 1;
};

int cmd_critical(const Common& c, const CriticalArgs& a, bool tau_given) {
  TargetRecord rec = target_from_json(read_json(a.target));
  if (tau_given) rec.tau = c.tau;
  const auto rows = critical_table(rec.target(), a.k, c.seed);
  const std::string out = c.out.empty() ? "critical.csv" : c.out;
  write_with(out, [&](std::ostream& os) { write_critical_table_csv(os, rows); });
  std::cout << rows.size() << " critical values -> " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep linear network generators under the Bures-Wasserstein loss"};
  app.require_subcommand(1);
  Common c;
  TargetArgs ta;
  InitArgs ia;
  TrainArgs tr;
  ExpArgs ea;
  CriticalArgs ca;

  auto add_common = [&](CLI::App* s) {
    s->add_option("--seed", c.seed, "random seed");
    s->add_option("--out", c.out, "output file or directory");
    s->add_option("--tau", c.tau, "perturbation tau")->check(CLI::NonNegativeNumber);
  };

  CLI::App* target = app.add_subcommand("target", "write a Zipf-spectrum target covariance");
  add_common(target);
  target->add_option("--n", ta.n, "dimension")->check(CLI::PositiveNumber);
  target->add_option("--lambda-min", ta.lambda_min, "smallest eigenvalue");
  target->add_option("--sigma-min", ta.sigma_min, "smallest singular value of the target square root");

  CLI::App* init = app.add_subcommand("init", "balanced near-target initialization");
  add_common(init);
  init->add_option("--target", ia.target, "target JSON")->required();
  init->add_option("--depth", c.depth, "number of layers")->check(CLI::PositiveNumber);
  init->add_option("--perturb", ia.perturb, "scale of the random perturbation D");
  init->add_option("--width", ia.width, "hidden width (default n)");

  CLI::App* train = app.add_subcommand("train", "gradient descent or gradient flow");
  add_common(train);
  train->add_option("--target", tr.target, "target JSON")->required();
  train->add_option("--params", tr.params, "params or checkpoint JSON")->required();
  train->add_option("--mode", tr.mode, "gd or flow")->check(CLI::IsMember({"gd", "flow"}));
  train->add_option("--eta", c.eta, "step size or auto");
  train->add_option("--iters", tr.iters, "gradient descent iterations");
  train->add_option("--t-end", tr.t_end, "flow duration");
  train->add_option("--tol", tr.tol, "integrator tolerance");
  train->add_option("--fixed-step", tr.fixed_step, "fixed RK4 step (0 = adaptive)");
  train->add_option("--stop-loss", tr.stop_loss, "stop when loss - optimum <= this");
  train->add_option("--record-every", tr.record_every, "record every k-th step");

  CLI::App* sweep = app.add_subcommand("sweep-rate", "empirical convergence rates over depth and sigma_min");
  add_common(sweep);
  sweep->add_option("--config", c.config, "key = value config file");
  sweep->add_option("--depth", c.depth, "single depth override");
  sweep->add_option("--eta", c.eta, "step size or auto (gd mode)");
  sweep->add_option("--threads", c.threads, "worker threads");
  sweep->add_option("--synthetic-rate", ea.synthetic_rate, "fit e^{-rate t} instead of training");

  CLI::App* crit = app.add_subcommand("critical", "closed-form critical values with gradient norms");
  add_common(crit);
  crit->add_option("--target", ca.target, "target JSON")->required();
  crit->add_option("--k", ca.k, "rank")->required();

  CLI::App* hess = app.add_subcommand("hessian-study", "Hessian conditioning at critical points");
  add_common(hess);
  hess->add_option("--config", c.config, "key = value config file");
  hess->add_option("--depth", c.depth, "depth override");
  hess->add_option("--threads", c.threads, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*target) return cmd_target(c, ta);
    if (*init) return cmd_init(c, ia, init->count("--tau") > 0);
    if (*train) return cmd_train(c, tr, train->count("--tau") > 0);
    if (*crit) return cmd_critical(c, ca, crit->count("--tau") > 0);
    if (*sweep) return cmd_sweep(load_experiment(c, *sweep, ea));
    if (*hess) return cmd_hessian(load_experiment(c, *hess, ea));
  } catch (const MdmFailedError& e) {
    std::cerr << "error: " << e.what() << " (margin " << fmt17(e.margin()) << ")\n";
    return 2;
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
