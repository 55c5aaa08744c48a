#pragma once
// Experiment harness: plain key=value run configuration, the cut-off
// schedule eps(N), log-log rate fits, and the four convergence studies
// (particle count sweep, cut-off sweep, chaos distance vs the limit law,
// drift amplitude scaling). Every report embeds the config hash and the
// library version so result files are self-identifying, and every number
// is printed with %.17g so reruns and worker-count changes compare
// byte-for-byte.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kslab/errors.hpp"
#include "kslab/grid.hpp"
#include "kslab/initial.hpp"
#include "kslab/io.hpp"
#include "kslab/kernels.hpp"
#include "kslab/particles.hpp"
#include "kslab/pde.hpp"
#include "kslab/rng.hpp"
#include "kslab/transport.hpp"

namespace ks {

inline constexpr const char* kVersion = "kslab 1.0.0";

// Cut-off schedule eps(N) = lambda_cut * (ln N)^{-2/(d+2)}. Decays slowly
// enough that the kernel quadrature stays resolvable while N grows.
inline double epsilon_schedule(int N, double lambda_cut, int d) {
  if (N <= 2)
    throw std::domain_error("epsilon_schedule: N must be > 2");
  if (!(lambda_cut > 0))
    throw std::domain_error("epsilon_schedule: lambda_cut must be > 0");
  if (d < 1 || d > kMaxDim)
    throw std::domain_error("epsilon_schedule: d must be in 1..3");
  return lambda_cut *
         std::pow(std::log(static_cast<double>(N)), -2.0 / (d + 2));
}

// One experiment description. eps_auto defers the cut-off to
// epsilon_schedule at the point of use, where N is known.
struct SimConfig {
  int d = 1;
  int N = 64;
  double T = 0.5;
  double dt = 0.0125;
  bool eps_auto = false;
  double eps = 0.05;
  double lambda = 1.0;
  double lambda_cut = 1.0;
  double L = 8.0;
  int M = 512;
  std::uint64_t seed = 1;
  int n_seeds = 8;
  std::string drift_mode = "fast";  // fast: grid recurrence; direct: quadrature
  double rho_mean = 0.0;
  double rho_sigma = 1.0;
  double c0_amp = 1.0;
  double c0_sigma = 1.0;
  int record_stride = 0;  // 0: every ceil(eps/(8 dt)) steps
  std::string out_dir = "out";
};

namespace detail {

inline std::string trim(std::string s) {
  auto sp = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && sp(s.front())) s.erase(s.begin());
  while (!s.empty() && sp(s.back())) s.pop_back();
  return s;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " has a non-numeric value: " + v);
  }
  if (used != v.size())
    throw ConfigError("config key " + key + " has a non-numeric value: " + v);
  return x;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  double x = parse_double(key, v);
  long long n = std::llround(x);
  if (std::abs(x - static_cast<double>(n)) > 0)
    throw ConfigError("config key " + key + " must be an integer, got " + v);
  return n;
}

}  // namespace detail

// Applies one key=value assignment. Shared by the file parser and the
// command-line override path so both reject unknown keys identically.
inline void config_set(SimConfig& cfg, const std::string& key,
                       const std::string& value) {
  const std::string v = detail::trim(value);
  if (key == "d") cfg.d = static_cast<int>(detail::parse_int(key, v));
  else if (key == "N") cfg.N = static_cast<int>(detail::parse_int(key, v));
  else if (key == "T") cfg.T = detail::parse_double(key, v);
  else if (key == "dt") cfg.dt = detail::parse_double(key, v);
  else if (key == "eps") {
    if (v == "auto") {
      cfg.eps_auto = true;
      cfg.eps = 0;
    } else {
      cfg.eps_auto = false;
      cfg.eps = detail::parse_double(key, v);
    }
  } else if (key == "lambda") cfg.lambda = detail::parse_double(key, v);
  else if (key == "lambda_cut") cfg.lambda_cut = detail::parse_double(key, v);
  else if (key == "L") cfg.L = detail::parse_double(key, v);
  else if (key == "M") cfg.M = static_cast<int>(detail::parse_int(key, v));
  else if (key == "seed")
    cfg.seed = static_cast<std::uint64_t>(detail::parse_int(key, v));
  else if (key == "n_seeds")
    cfg.n_seeds = static_cast<int>(detail::parse_int(key, v));
  else if (key == "drift_mode") cfg.drift_mode = v;
  else if (key == "rho_mean") cfg.rho_mean = detail::parse_double(key, v);
  else if (key == "rho_sigma") cfg.rho_sigma = detail::parse_double(key, v);
  else if (key == "c0_amp") cfg.c0_amp = detail::parse_double(key, v);
  else if (key == "c0_sigma") cfg.c0_sigma = detail::parse_double(key, v);
  else if (key == "record_stride")
    cfg.record_stride = static_cast<int>(detail::parse_int(key, v));
  else if (key == "out") cfg.out_dir = v;
  else throw ConfigError("unknown config key: " + key);
}

// Plain key = value lines; '#' starts a comment, blank lines are skipped.
inline SimConfig parse_config_text(const std::string& text) {
  SimConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        " is not of the form key = value");
    config_set(cfg, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

inline SimConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

// Canonical key=value lines in fixed order. The output directory is not
// part of the experiment identity and is excluded.
inline std::vector<std::string> config_lines(const SimConfig& cfg) {
  std::vector<std::string> out;
  auto add = [&](const char* k, const std::string& v) {
    out.push_back(std::string(k) + "=" + v);
  };
  add("d", std::to_string(cfg.d));
  add("N", std::to_string(cfg.N));
  add("T", fmt17(cfg.T));
  add("dt", fmt17(cfg.dt));
  add("eps", cfg.eps_auto ? "auto" : fmt17(cfg.eps));
  add("lambda", fmt17(cfg.lambda));
  add("lambda_cut", fmt17(cfg.lambda_cut));
  add("L", fmt17(cfg.L));
  add("M", std::to_string(cfg.M));
  add("seed", std::to_string(cfg.seed));
  add("n_seeds", std::to_string(cfg.n_seeds));
  add("drift_mode", cfg.drift_mode);
  add("rho_mean", fmt17(cfg.rho_mean));
  add("rho_sigma", fmt17(cfg.rho_sigma));
  add("c0_amp", fmt17(cfg.c0_amp));
  add("c0_sigma", fmt17(cfg.c0_sigma));
  add("record_stride", std::to_string(cfg.record_stride));
  return out;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string config_hash(const SimConfig& cfg) {
  std::string joined;
  for (const auto& line : config_lines(cfg)) {
    joined += line;
    joined += '\n';
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(joined)));
  return buf;
}

inline InitialData make_initial(const SimConfig& cfg) {
  InitialData init;
  init.rho0.comp = {GaussianComponent{}};
  init.rho0.comp[0].mean = Vec{};
  init.rho0.comp[0].mean[0] = cfg.rho_mean;
  init.rho0.comp[0].sigma = cfg.rho_sigma;
  init.rho0.weight = {1.0};
  init.c0.amp = cfg.c0_amp;
  init.c0.mean = Vec{};
  init.c0.sigma = cfg.c0_sigma;
  return init;
}

inline GridSpec make_grid(const SimConfig& cfg) {
  return GridSpec{cfg.d, cfg.M, cfg.L};
}

inline KernelParams make_kernel(const SimConfig& cfg) {
  return KernelParams{cfg.d, cfg.lambda};
}

// Snaps the cut-off onto the step grid; at least 4 steps must fit below it.
// An explicit eps = 0 passes through and selects the limit system.
inline double resolved_eps(const SimConfig& cfg, int N) {
  if (!cfg.eps_auto && cfg.eps == 0) return 0.0;
  double eps = cfg.eps_auto
                   ? epsilon_schedule(N, cfg.lambda_cut, cfg.d)
                   : cfg.eps;
  long k = std::max<long>(4, std::llround(eps / cfg.dt));
  return static_cast<double>(k) * cfg.dt;
}

inline void validate(const SimConfig& cfg) {
  if (cfg.d < 1 || cfg.d > kMaxDim)
    throw ConfigError("dimension d must be 1, 2, or 3");
  if (cfg.N < 2) throw ConfigError("N must be >= 2 for interacting runs");
  if (!(cfg.dt > 0)) throw ConfigError("dt must be > 0");
  long steps = std::llround(cfg.T / cfg.dt);
  if (!(cfg.T > 0) || steps < 1 || std::abs(steps * cfg.dt - cfg.T) > 1e-9)
    throw ConfigError("horizon T must be a positive integer multiple of dt");
  if (!cfg.eps_auto && cfg.eps > 0) {
    if (cfg.dt > cfg.eps / 4.0 + 1e-12)
      throw ConfigError("dt must be <= eps/4 so steps resolve the cut-off");
    double lag = cfg.eps / cfg.dt;
    if (std::abs(lag - std::llround(lag)) > 1e-9)
      throw ConfigError("eps must be an integer multiple of dt");
  }
  if (!cfg.eps_auto && cfg.eps < 0)
    throw ConfigError("eps must be >= 0 (0 selects the limit system)");
  if (!(cfg.lambda >= 0)) throw ConfigError("lambda must be >= 0");
  if (!(cfg.lambda_cut > 0)) throw ConfigError("lambda_cut must be > 0");
  validate_spec(make_grid(cfg));
  if (cfg.drift_mode != "fast" && cfg.drift_mode != "direct")
    throw ConfigError("drift_mode must be 'fast' or 'direct'");
  if (cfg.n_seeds < 1) throw ConfigError("n_seeds must be >= 1");
  if (!(cfg.rho_sigma > 0)) throw ConfigError("rho_sigma must be > 0");
  if (!(cfg.c0_sigma > 0)) throw ConfigError("c0_sigma must be > 0");
  double image = std::exp(-cfg.L * cfg.L / (4.0 * cfg.T));
  if (image > 1e-10)
    throw ConfigError("box too small for horizon: exp(-L^2/(4T)) = " +
                      fmt17(image) + " exceeds 1e-10");
  InitialData init = make_initial(cfg);
  double tail = init.rho0.mass_outside_box(cfg.L, cfg.d);
  if (tail > 1e-10)
    throw ConfigError("initial density leaks mass " + fmt17(tail) +
                      " outside the box; enlarge L or shrink rho_sigma");
}

inline PdeConfig make_pde_config(const SimConfig& cfg, double eps) {
  PdeConfig pc;
  pc.grid = make_grid(cfg);
  pc.kernel = make_kernel(cfg);
  pc.dt = cfg.dt;
  pc.eps = eps;
  pc.coupled = true;
  pc.chem = ChemUpdate::auto_select;
  return pc;
}

// Ordinary least squares on (ln x, ln y). residual is the RMS deviation of
// ln y from the fitted line; se_slope comes from the usual normal-equation
// variance with n - 2 degrees of freedom.
struct FitResult {
  double slope = 0;
  double intercept = 0;
  double residual = 0;
  double se_slope = 0;
};

inline FitResult fit_loglog(std::span<const double> x,
                            std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("fit_loglog needs >= 2 matching points");
  std::size_t n = x.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0) || !(y[i] > 0))
      throw std::domain_error("fit_loglog needs positive coordinates");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0))
    throw std::domain_error("fit_loglog needs at least two distinct x");
  FitResult f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssr = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double e = ly[i] - (f.intercept + f.slope * lx[i]);
    ssr += e * e;
  }
  f.residual = std::sqrt(ssr / n);
  f.se_slope = n > 2 ? std::sqrt(ssr / (n - 2) / sxx) : 0.0;
  return f;
}

struct SweepPoint {
  double axis = 0;
  double mean = 0;
  double se = 0;  // standard error of the mean over seeds
  int n_seeds = 0;
  double extra = 0;  // second per-point value when extra_name is set
};

struct ConvergenceReport {
  std::string axis_name;
  std::string statistic;
  std::string extra_name;
  std::vector<SweepPoint> points;  // sorted along the axis
  bool has_slope = false;
  double slope = 0, intercept = 0, slope_se = 0;
  double band_lo = 0, band_hi = 0;  // slope +- 2 se
  std::string hash;
  std::string version = kVersion;
};

namespace detail {

inline SweepPoint summarize(double axis, std::span<const double> vals) {
  SweepPoint p;
  p.axis = axis;
  p.n_seeds = static_cast<int>(vals.size());
  for (double v : vals) p.mean += v;
  p.mean /= p.n_seeds;
  if (p.n_seeds > 1) {
    double ss = 0;
    for (double v : vals) ss += (v - p.mean) * (v - p.mean);
    p.se = std::sqrt(ss / (p.n_seeds - 1) / p.n_seeds);
  }
  return p;
}

inline void fit_report(ConvergenceReport& r) {
  if (r.points.size() < 2) return;
  std::vector<double> xs, ys;
  for (const auto& p : r.points) {
    if (!(p.mean > 0)) return;  // a zero mean has no log-log image
    xs.push_back(p.axis);
    ys.push_back(p.mean);
  }
  FitResult f = fit_loglog(xs, ys);
  r.has_slope = true;
  r.slope = f.slope;
  r.intercept = f.intercept;
  r.slope_se = f.se_slope;
  r.band_lo = f.slope - 2.0 * f.se_slope;
  r.band_hi = f.slope + 2.0 * f.se_slope;
}

}  // namespace detail

inline void write_report_csv(const std::string& path,
                             const ConvergenceReport& r) {
  auto os = detail::open_out(path, false);
  os << "# " << r.version << "\n";
  os << "# config " << r.hash << "\n";
  os << "# axis " << r.axis_name << "\n";
  os << "# statistic " << r.statistic << "\n";
  if (r.has_slope)
    os << "# slope " << fmt17(r.slope) << " se " << fmt17(r.slope_se)
       << " band " << fmt17(r.band_lo) << " " << fmt17(r.band_hi) << "\n";
  os << r.axis_name << ",mean,se,n_seeds";
  if (!r.extra_name.empty()) os << "," << r.extra_name;
  os << "\n";
  for (const auto& p : r.points) {
    os << fmt17(p.axis) << "," << fmt17(p.mean) << "," << fmt17(p.se) << ","
       << p.n_seeds;
    if (!r.extra_name.empty()) os << "," << fmt17(p.extra);
    os << "\n";
  }
  if (!os) throw IoError("write failed: " + path);
}

inline nlohmann::json report_json(const ConvergenceReport& r) {
  nlohmann::json j;
  j["version"] = r.version;
  j["config"] = r.hash;
  j["axis"] = r.axis_name;
  j["statistic"] = r.statistic;
  j["points"] = nlohmann::json::array();
  for (const auto& p : r.points) {
    nlohmann::json q;
    q["axis"] = p.axis;
    q["mean"] = p.mean;
    q["se"] = p.se;
    q["n_seeds"] = p.n_seeds;
    if (!r.extra_name.empty()) q[r.extra_name] = p.extra;
    j["points"].push_back(q);
  }
  if (r.has_slope) {
    j["slope"] = {{"value", r.slope},
                  {"intercept", r.intercept},
                  {"se", r.slope_se},
                  {"band", {r.band_lo, r.band_hi}}};
  }
  return j;
}

inline void write_report_json(const std::string& path,
                              const ConvergenceReport& r) {
  auto os = detail::open_out(path, false);
  os << report_json(r).dump(2) << "\n";
  if (!os) throw IoError("write failed: " + path);
}

// Particle-count sweep at fixed cut-off: statistic is the seed mean of
// (1/N) sum_i sup_t |X^i - Xbar^i| between the interacting system and the
// intermediate SDE under shared noise. One table pair serves every N.
inline ConvergenceReport sweep_N(const SimConfig& cfg,
                                 std::vector<int> Ns) {
  validate(cfg);
  if (cfg.eps_auto)
    throw ConfigError("sweep over N needs an explicit eps, not auto");
  if (!(cfg.eps > 0)) throw ConfigError("sweep over N needs eps > 0");
  if (Ns.empty()) throw ConfigError("sweep over N needs at least one N");
  std::sort(Ns.begin(), Ns.end());
  InitialData init = make_initial(cfg);
  MeanFieldTables mid =
      build_meanfield_tables(make_pde_config(cfg, cfg.eps), init, cfg.T);
  MeanFieldTables lim =
      build_meanfield_tables(make_pde_config(cfg, 0.0), init, cfg.T);

  ConvergenceReport r;
  r.axis_name = "N";
  r.statistic = "mean_sup_inter_mid";
  r.hash = config_hash(cfg);
  for (int N : Ns) {
    std::vector<double> vals;
    for (int k = 0; k < cfg.n_seeds; ++k) {
      CoupledParams p;
      p.init = init;
      p.grid = make_grid(cfg);
      p.kernel = make_kernel(cfg);
      p.n = N;
      p.seed = cfg.seed + static_cast<std::uint64_t>(k);
      p.T = cfg.T;
      p.dt = cfg.dt;
      p.eps = cfg.eps;
      p.record_stride = cfg.record_stride;
      p.mid_tables = &mid;
      p.limit_tables = &lim;
      vals.push_back(run_coupled(p).mean_sup_inter_mid);
    }
    r.points.push_back(detail::summarize(N, vals));
  }
  detail::fit_report(r);
  return r;
}

// Cut-off sweep at fixed N: statistic is the coupling gap between the
// intermediate SDE at eps and the limit SDE. The interacting system is not
// evolved; the same seed list serves every eps, so noise is shared across
// the axis.
inline ConvergenceReport sweep_eps(const SimConfig& cfg,
                                   std::vector<double> epses) {
  validate(cfg);
  if (epses.empty()) throw ConfigError("sweep over eps needs at least one eps");
  std::sort(epses.begin(), epses.end());
  InitialData init = make_initial(cfg);
  MeanFieldTables lim =
      build_meanfield_tables(make_pde_config(cfg, 0.0), init, cfg.T);

  ConvergenceReport r;
  r.axis_name = "eps";
  r.statistic = "mean_sup_mid_limit";
  r.hash = config_hash(cfg);
  for (double eps : epses) {
    MeanFieldTables mid =
        build_meanfield_tables(make_pde_config(cfg, eps), init, cfg.T);
    std::vector<double> vals;
    for (int k = 0; k < cfg.n_seeds; ++k) {
      CoupledParams p;
      p.init = init;
      p.grid = make_grid(cfg);
      p.kernel = make_kernel(cfg);
      p.n = cfg.N;
      p.seed = cfg.seed + static_cast<std::uint64_t>(k);
      p.T = cfg.T;
      p.dt = cfg.dt;
      p.eps = eps;
      p.record_stride = cfg.record_stride;
      p.mid_tables = &mid;
      p.limit_tables = &lim;
      p.with_interacting = false;
      vals.push_back(run_coupled(p).mean_sup_mid_limit);
    }
    r.points.push_back(detail::summarize(eps, vals));
  }
  detail::fit_report(r);
  return r;
}

// Propagation of chaos against the limit law: per N the cut-off follows
// epsilon_schedule, the interacting system runs alone, and the statistic is
// the seed mean of sup over record times of W1(empirical measure, rho_t of
// the limit PDE). interaction = false drops the memory drift (the chemical
// field term stays), giving the pure-diffusion reference when c0_amp = 0.
inline ConvergenceReport chaos_study(const SimConfig& cfg, std::vector<int> Ns,
                                     bool interaction = true) {
  validate(cfg);
  if (Ns.empty()) throw ConfigError("chaos study needs at least one N");
  if (!interaction && cfg.c0_amp != 0)
    throw ConfigError("pure-diffusion chaos study needs c0_amp = 0");
  std::sort(Ns.begin(), Ns.end());
  InitialData init = make_initial(cfg);
  PdeConfig lim_cfg = make_pde_config(cfg, 0.0);
  lim_cfg.coupled = interaction;

  ConvergenceReport r;
  r.axis_name = "N";
  r.statistic = "mean_sup_w1_inter_law";
  r.extra_name = "eps";
  r.hash = config_hash(cfg);
  for (int N : Ns) {
    double eps = resolved_eps(cfg, N);
    int stride = cfg.record_stride > 0 ? cfg.record_stride
                                       : default_decimation(eps, cfg.dt);
    PdeRun law = run_pde(lim_cfg, init, cfg.T, stride, false);
    std::vector<double> vals;
    for (int k = 0; k < cfg.n_seeds; ++k) {
      CoupledParams p;
      p.init = init;
      p.grid = make_grid(cfg);
      p.kernel = make_kernel(cfg);
      p.n = N;
      p.seed = cfg.seed + static_cast<std::uint64_t>(k);
      p.T = cfg.T;
      p.dt = cfg.dt;
      p.eps = eps;
      p.record_stride = stride;
      p.with_meanfield = false;
      p.interaction_enabled = interaction;
      p.law_path = &law.path;
      vals.push_back(run_coupled(p).sup_w1_inter_law);
    }
    SweepPoint pt = detail::summarize(N, vals);
    pt.extra = eps;
    r.points.push_back(pt);
  }
  detail::fit_report(r);
  return r;
}

struct DriftScalingReport {
  ConvergenceReport sup_drift;   // sup_x |memory drift| per eps
  ConvergenceReport lipschitz;   // finite-difference drift Lipschitz per eps
  ConvergenceReport functional;  // ||B[f]-B[g]||_inf / integral W1 per eps
};

namespace detail {

// Frozen-history drift probe: history blocks are constant in time, the
// probe ensemble holds one movable particle at slot 0, and the chemical
// term is switched off so only the memory quadrature contributes.
struct DriftProbe {
  ParticleEnsemble ens;
  ParticleHistory hist;
  InitialData init0;  // c0.amp = 0
  KernelParams kp;
  double eps = 0, L = 0;

  DriftProbe(int d, double L_, double lambda, double eps_, double window,
             double h, const std::vector<double>& atoms) {
    int n = static_cast<int>(atoms.size()) / d;
    ens.dim = d;
    ens.n = n;
    ens.time = eps_ + window;
    ens.pos = atoms;
    ens.id.resize(n);
    ens.slot_of.resize(n);
    for (int i = 0; i < n; ++i) {
      ens.id[i] = static_cast<std::uint32_t>(i);
      ens.slot_of[i] = static_cast<std::uint32_t>(i);
    }
    hist.h = h;
    long nodes = std::llround(window / h);
    for (long k = 0; k <= nodes; ++k) {
      hist.t.push_back(k * h);
      hist.snaps.push_back(atoms);
    }
    init0.c0.amp = 0;
    kp = KernelParams{d, lambda};
    eps = eps_;
    L = L_;
  }

  // Node spacing proportional to the cut-off keeps the trapezoid error of
  // the near-singular tau integral uniform across the sweep.
  static double refined_h(double window, double dt, double eps) {
    double cap = std::min(dt, eps / 8.0);
    long n = static_cast<long>(std::ceil(window / cap - 1e-12));
    return window / static_cast<double>(n);
  }

  Vec drift_at(std::span<const double> x) {
    for (int a = 0; a < ens.dim; ++a) ens.pos[a] = x[a];
    Vec b{};
    drift_interacting_direct(ens, hist, init0, kp, eps, L,
                             /*i=*/0, std::span<double>(b.data(), ens.dim));
    return b;
  }
};

inline double vec_norm(const Vec& v, int d) {
  double r2 = 0;
  for (int a = 0; a < d; ++a) r2 += v[a] * v[a];
  return std::sqrt(r2);
}

}  // namespace detail

// Drift amplitude scaling in the cut-off. A coincident-atom history makes
// the cut-off-limited self term dominate, so sup_x |b| tracks
// eps^{-(d-1)/2} and the finite-difference Lipschitz estimate tracks
// eps^{-d/2}. The functional report measures ||B[f]-B[g]||_inf over the
// trapezoid integral of W1(f_r, g_r) for a Gaussian atom pair differing
// only at the last memory node, which realizes the eps^{-(d/2+1)} envelope.
// The memory window is cfg.T; the clean power laws need the asymptotic
// regime max(eps) << T and lambda * max(eps) << 1.
inline DriftScalingReport drift_scaling_study(const SimConfig& cfg,
                                              std::vector<double> epses) {
  validate(cfg);
  if (epses.empty())
    throw ConfigError("drift scaling study needs at least one eps");
  std::sort(epses.begin(), epses.end());
  const int d = cfg.d;
  const double window = cfg.T;
  for (double e : epses)
    if (!(e > 0)) throw ConfigError("drift scaling eps values must be > 0");

  const std::vector<double> radii = {0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0};

  DriftScalingReport rep;
  for (ConvergenceReport* r :
       {&rep.sup_drift, &rep.lipschitz, &rep.functional}) {
    r->axis_name = "eps";
    r->hash = config_hash(cfg);
  }
  rep.sup_drift.statistic = "sup_interaction_drift";
  rep.lipschitz.statistic = "drift_lipschitz_fd";
  rep.functional.statistic = "memory_functional_ratio";

  // Gaussian pair atoms for the functional, shared across eps.
  const int n_pair = 32;
  const double sigma_pair = 0.05, delta = 0.02;
  std::vector<double> atoms_f(static_cast<std::size_t>(n_pair) * d, 0.0);
  {
    CounterRng rng{cfg.seed, kStreamSynthetic};
    for (int i = 0; i < n_pair; ++i) {
      std::array<double, kMaxDim> z{};
      rng.normals(static_cast<std::uint32_t>(i), 0,
                  std::span<double>(z.data(), d));
      for (int a = 0; a < d; ++a)
        atoms_f[static_cast<std::size_t>(i) * d + a] = sigma_pair * z[a];
    }
  }
  std::vector<double> atoms_g = atoms_f;
  for (int i = 0; i < n_pair; ++i) atoms_g[static_cast<std::size_t>(i) * d] += delta;

  const int n_cluster = 4;
  std::vector<double> cluster(static_cast<std::size_t>(n_cluster) * d, 0.0);

  for (double eps : epses) {
    double s = eps + window;
    double r_eps = std::sqrt(2.0 * eps);
    double h = detail::DriftProbe::refined_h(window, cfg.dt, eps);
    detail::DriftProbe probe(d, cfg.L, cfg.lambda, eps, window, h, cluster);

    double sup = 0, lip = 0;
    double fd = 0.1 * r_eps;
    for (double rad : radii) {
      Vec x{};
      x[0] = rad * r_eps;
      sup = std::max(sup, detail::vec_norm(probe.drift_at(x), d));
      Vec xp = x, xm = x;
      xp[0] += fd;
      xm[0] -= fd;
      Vec bp = probe.drift_at(xp), bm = probe.drift_at(xm);
      Vec diff{};
      for (int a = 0; a < d; ++a) diff[a] = bp[a] - bm[a];
      lip = std::max(lip, detail::vec_norm(diff, d) / (2.0 * fd));
    }
    SweepPoint ps;
    ps.axis = eps;
    ps.mean = sup;
    ps.n_seeds = 1;
    rep.sup_drift.points.push_back(ps);
    SweepPoint pl;
    pl.axis = eps;
    pl.mean = lip;
    pl.n_seeds = 1;
    rep.lipschitz.points.push_back(pl);

    // f and g agree except at the final node r = s - eps, where g's block
    // is f's shifted by delta along the first axis. The trapezoid weights
    // of the memory quadrature define the W1 integral, so the denominator
    // is w_last * delta exactly.
    detail::DriftProbe pf(d, cfg.L, cfg.lambda, eps, window, h, atoms_f);
    detail::DriftProbe pg(d, cfg.L, cfg.lambda, eps, window, h, atoms_f);
    pg.hist.snaps.back() = atoms_g;
    MemoryQuadrature quad = memory_nodes(s, eps, h);
    double denom = quad.weights.empty() ? 0.0 : quad.weights.back() * delta;
    double num = 0;
    for (double rad : radii) {
      Vec x{};
      x[0] = rad * r_eps;
      Vec bf = pf.drift_at(x), bg = pg.drift_at(x);
      Vec diff{};
      for (int a = 0; a < d; ++a) diff[a] = bf[a] - bg[a];
      num = std::max(num, detail::vec_norm(diff, d));
    }
    SweepPoint pq;
    pq.axis = eps;
    pq.mean = denom > 0 ? num / denom : 0.0;
    pq.n_seeds = 1;
    rep.functional.points.push_back(pq);
  }
  detail::fit_report(rep.sup_drift);
  detail::fit_report(rep.lipschitz);
  detail::fit_report(rep.functional);
  return rep;
}

// Interacting-system run for trajectory dumps. fast drives the grid
// recurrence; direct replays the full pairwise quadrature every step and is
// the small-N reference.
inline Trajectory run_interacting(const SimConfig& cfg) {
  validate(cfg);
  double eps = resolved_eps(cfg, cfg.N);
  if (!(eps > 0))
    throw ConfigError("particle runs need eps > 0 (set eps or eps = auto)");
  long steps = std::llround(cfg.T / cfg.dt);
  int stride = cfg.record_stride > 0 ? cfg.record_stride
                                     : default_decimation(eps, cfg.dt);
  InitialData init = make_initial(cfg);
  BrownianStore store{cfg.seed, cfg.d};
  ParticleEnsemble ens = init_ensemble(init, cfg.N, store, cfg.L);

  Trajectory tr;
  tr.dim = cfg.d;
  tr.n = cfg.N;
  auto record = [&]() {
    tr.t.push_back(ens.time);
    tr.snaps.push_back(ens.positions_by_id());
  };
  record();

  std::size_t dd = static_cast<std::size_t>(cfg.d);
  std::vector<double> drifts(ens.pos.size());
  KernelParams kp = make_kernel(cfg);

  if (cfg.drift_mode == "fast") {
    FastDriftState fast(make_grid(cfg), kp, cfg.dt, eps);
    fast.prime(ens);
    for (long k = 0; k < steps; ++k) {
      parallel_for(static_cast<std::size_t>(cfg.N), [&](std::size_t slot) {
        fast.drift(ens, ens.id[slot], init,
                   std::span<double>(drifts.data() + slot * dd, dd));
      });
      em_step(ens, drifts, store, cfg.dt, cfg.L);
      fast.advance(ens);
      if ((k + 1) % stride == 0 || k + 1 == steps) record();
    }
  } else {
    ParticleHistory hist;
    hist.h = cfg.dt;
    hist.record(ens);
    for (long k = 0; k < steps; ++k) {
      parallel_for(static_cast<std::size_t>(cfg.N), [&](std::size_t slot) {
        drift_interacting_direct(
            ens, hist, init, kp, eps, cfg.L, ens.id[slot],
            std::span<double>(drifts.data() + slot * dd, dd));
      });
      em_step(ens, drifts, store, cfg.dt, cfg.L);
      hist.record(ens);
      if ((k + 1) % stride == 0 || k + 1 == steps) record();
    }
  }
  return tr;
}

}  // namespace ks
