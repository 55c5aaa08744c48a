#pragma once
// Command-line front end. Every subcommand reads an optional key=value
// config file, applies flag overrides on top, validates, runs, and writes
// its artifacts under the configured output directory. Exit codes: 0 on
// success and for --help, 2 for a missing or unreadable file, 3 for a
// config whose message names the violated invariant, 1 otherwise.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kslab/harness.hpp"

namespace ks {

namespace detail {

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(static_cast<int>(parse_int("list", trim(item))));
  if (out.empty()) throw ConfigError("empty integer list");
  return out;
}

inline std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(parse_double("list", trim(item)));
  if (out.empty()) throw ConfigError("empty value list");
  return out;
}

// Flag overrides collected as raw strings so config_set applies the same
// parsing and rejection rules as the file path.
struct CliOverrides {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> sets;

  void add_flags(CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value config file");
    auto forward = [this](const char* key) {
      return [this, key](const std::string& v) {
        sets.emplace_back(key, v);
      };
    };
    sub->add_option_function<std::string>("--d", forward("d"), "dimension");
    sub->add_option_function<std::string>("--N", forward("N"),
                                          "particle count");
    sub->add_option_function<std::string>("--T", forward("T"), "horizon");
    sub->add_option_function<std::string>("--dt", forward("dt"), "time step");
    sub->add_option_function<std::string>("--eps", forward("eps"),
                                          "memory cut-off or 'auto'");
    sub->add_option_function<std::string>("--lambda", forward("lambda"),
                                          "chemical decay rate");
    sub->add_option_function<std::string>("--lambda-cut",
                                          forward("lambda_cut"),
                                          "cut-off schedule scale");
    sub->add_option_function<std::string>("--L", forward("L"),
                                          "box half-width");
    sub->add_option_function<std::string>("--M", forward("M"),
                                          "grid cells per axis");
    sub->add_option_function<std::string>("--seed", forward("seed"),
                                          "base seed");
    sub->add_option_function<std::string>("--seeds", forward("n_seeds"),
                                          "seeds per sweep point");
    sub->add_option_function<std::string>("--drift-mode",
                                          forward("drift_mode"),
                                          "fast or direct");
    sub->add_option_function<std::string>("--rho-sigma", forward("rho_sigma"),
                                          "initial density width");
    sub->add_option_function<std::string>("--c0-amp", forward("c0_amp"),
                                          "initial chemical amplitude");
    sub->add_option_function<std::string>("--c0-sigma", forward("c0_sigma"),
                                          "initial chemical width");
    sub->add_option_function<std::string>("--stride",
                                          forward("record_stride"),
                                          "record every this many steps");
    sub->add_option_function<std::string>("--out", forward("out"),
                                          "output directory");
  }

  SimConfig resolve() const {
    SimConfig cfg =
        config_path.empty() ? SimConfig{} : load_config(config_path);
    for (const auto& [k, v] : sets) config_set(cfg, k, v);
    return cfg;
  }
};

inline std::string join_path(const std::string& dir, const char* name) {
  return dir + "/" + name;
}

inline void emit_reports(const SimConfig& cfg, const ConvergenceReport& r,
                         const char* stem) {
  std::string csv = join_path(cfg.out_dir, (std::string(stem) + ".csv").c_str());
  std::string js = join_path(cfg.out_dir, (std::string(stem) + ".json").c_str());
  write_report_csv(csv, r);
  write_report_json(js, r);
  std::printf("config %s\n", r.hash.c_str());
  std::printf("wrote %s and %s\n", csv.c_str(), js.c_str());
  if (r.has_slope)
    std::printf("slope %.6g (se %.3g)\n", r.slope, r.slope_se);
}

inline int cmd_pde(const SimConfig& cfg) {
  validate(cfg);
  double eps = resolved_eps(cfg, cfg.N);
  PdeConfig pc = make_pde_config(cfg, eps);
  InitialData init = make_initial(cfg);
  int stride = cfg.record_stride > 0 ? cfg.record_stride : 1;
  PdeRun run = run_pde(pc, init, cfg.T, stride, true);
  std::vector<std::string> names = {"t",    "mass", "l2", "l3",
                                    "linf", "m1",   "gradc_inf"};
  std::vector<std::vector<double>> cols(names.size());
  for (const auto& row : run.diag) {
    cols[0].push_back(row.t);
    cols[1].push_back(row.mass);
    cols[2].push_back(row.l2);
    cols[3].push_back(row.l3);
    cols[4].push_back(row.linf);
    cols[5].push_back(row.m1);
    cols[6].push_back(row.gradc_inf);
  }
  write_csv(join_path(cfg.out_dir, "diagnostics.csv"), names, cols);
  write_grid_field(join_path(cfg.out_dir, "rho_final.ksgf"),
                   run.path.rho.back());
  write_grid_field(join_path(cfg.out_dir, "c_final.ksgf"),
                   run.path.c.back());
  std::printf("config %s\n", config_hash(cfg).c_str());
  std::printf("pde eps=%.17g steps=%ld snapshots=%zu -> %s\n", eps,
              std::lround(cfg.T / cfg.dt), run.path.rho.size(),
              cfg.out_dir.c_str());
  return 0;
}

inline int cmd_particles(const SimConfig& cfg) {
  Trajectory tr = run_interacting(cfg);
  write_trajectory(join_path(cfg.out_dir, "trajectory.kspt"), tr);
  nlohmann::json j;
  j["version"] = kVersion;
  j["config"] = config_hash(cfg);
  j["n"] = tr.n;
  j["d"] = tr.dim;
  j["snapshots"] = tr.t.size();
  j["eps"] = resolved_eps(cfg, cfg.N);
  auto os = open_out(join_path(cfg.out_dir, "summary.json"), false);
  os << j.dump(2) << "\n";
  std::printf("config %s\n", config_hash(cfg).c_str());
  std::printf("particles N=%d snapshots=%zu -> %s\n", tr.n, tr.t.size(),
              cfg.out_dir.c_str());
  return 0;
}

inline int cmd_couple(const SimConfig& cfg) {
  validate(cfg);
  double eps = resolved_eps(cfg, cfg.N);
  if (!(eps > 0))
    throw ConfigError("coupled runs need eps > 0 (set eps or eps = auto)");
  InitialData init = make_initial(cfg);
  MeanFieldTables mid =
      build_meanfield_tables(make_pde_config(cfg, eps), init, cfg.T);
  MeanFieldTables lim =
      build_meanfield_tables(make_pde_config(cfg, 0.0), init, cfg.T);
  CoupledParams p;
  p.init = init;
  p.grid = make_grid(cfg);
  p.kernel = make_kernel(cfg);
  p.n = cfg.N;
  p.seed = cfg.seed;
  p.T = cfg.T;
  p.dt = cfg.dt;
  p.eps = eps;
  p.record_stride = cfg.record_stride;
  p.mid_tables = &mid;
  p.limit_tables = &lim;
  CoupledRun run = run_coupled(p);
  std::vector<std::string> names = {"t", "gap_inter_mid", "gap_mid_limit"};
  std::vector<std::vector<double>> cols = {run.t, run.gap_inter_mid,
                                           run.gap_mid_limit};
  write_csv(join_path(cfg.out_dir, "gaps.csv"), names, cols);
  nlohmann::json j;
  j["version"] = kVersion;
  j["config"] = config_hash(cfg);
  j["eps"] = eps;
  j["mean_sup_inter_mid"] = run.mean_sup_inter_mid;
  j["mean_sup_mid_limit"] = run.mean_sup_mid_limit;
  auto os = open_out(join_path(cfg.out_dir, "summary.json"), false);
  os << j.dump(2) << "\n";
  std::printf("config %s\n", config_hash(cfg).c_str());
  std::printf("couple N=%d eps=%.17g sup_inter_mid=%.6g sup_mid_limit=%.6g\n",
              cfg.N, eps, run.mean_sup_inter_mid, run.mean_sup_mid_limit);
  return 0;
}

inline int cmd_w1(const std::string& a_path, const std::string& b_path) {
  Trajectory a = read_trajectory(a_path);
  Trajectory b = read_trajectory(b_path);
  if (a.dim != b.dim)
    throw ConfigError("trajectories have different dimensions");
  std::span<const double> xa(a.snaps.back());
  std::span<const double> xb(b.snaps.back());
  double value = 0;
  const char* how = "";
  if (a.dim == 1) {
    value = detail::w1_sorted_unequal(
        std::vector<double>(xa.begin(), xa.end()),
        std::vector<double>(xb.begin(), xb.end()));
    how = "sorted_1d";
  } else if (a.n == b.n && a.n <= 512) {
    value = w1_exact(xa, xb, a.n, a.dim).value;
    how = "assignment_exact";
  } else if (a.n == b.n) {
    value = w1_sliced(xa, xb, a.n, a.dim, 64, 1).value;
    how = "sliced";
  } else {
    throw ConfigError(
        "w1 needs equal particle counts in dimension >= 2");
  }
  std::printf("w1 %s %s\n", how, fmt17(value).c_str());
  return 0;
}

}  // namespace detail

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"numerical laboratory for a regularized chemotaxis particle "
               "system, its intermediate SDE/PDE pair, and the "
               "parabolic-parabolic limit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  detail::CliOverrides common;
  std::string n_list, eps_list;
  bool dry_run = false;
  bool pure_diffusion = false;
  std::string w1_a, w1_b;

  CLI::App* pde = app.add_subcommand("pde", "evolve the PDE pair");
  CLI::App* particles =
      app.add_subcommand("particles", "evolve the interacting system");
  CLI::App* couple = app.add_subcommand(
      "couple", "three coupled systems under shared noise");
  CLI::App* sweep_n =
      app.add_subcommand("sweep-n", "coupling gap across particle counts");
  CLI::App* sweep_e =
      app.add_subcommand("sweep-eps", "coupling gap across cut-offs");
  CLI::App* chaos = app.add_subcommand(
      "chaos", "W1 to the limit law along the cut-off schedule");
  CLI::App* drift = app.add_subcommand(
      "drift-scaling", "drift amplitude and Lipschitz growth in the cut-off");
  CLI::App* w1 = app.add_subcommand("w1", "distance between two trajectories");

  for (CLI::App* sub :
       {pde, particles, couple, sweep_n, sweep_e, chaos, drift})
    common.add_flags(sub);
  sweep_n->add_option("--N-list", n_list, "comma-separated particle counts");
  chaos->add_option("--N-list", n_list, "comma-separated particle counts");
  sweep_e->add_option("--eps-list", eps_list, "comma-separated cut-offs");
  drift->add_option("--eps-list", eps_list, "comma-separated cut-offs");
  chaos->add_flag("--dry-run", dry_run,
                  "print the planned runs and resolved eps, run nothing");
  chaos->add_flag("--pure-diffusion", pure_diffusion,
                  "disable the memory drift (needs c0_amp = 0)");
  w1->add_option("--a", w1_a, "first trajectory file")->required();
  w1->add_option("--b", w1_b, "second trajectory file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (w1->parsed()) return detail::cmd_w1(w1_a, w1_b);
    SimConfig cfg = common.resolve();
    if (pde->parsed()) return detail::cmd_pde(cfg);
    if (particles->parsed()) return detail::cmd_particles(cfg);
    if (couple->parsed()) return detail::cmd_couple(cfg);
    if (sweep_n->parsed()) {
      std::vector<int> Ns = n_list.empty()
                                ? std::vector<int>{64, 256, 1024}
                                : detail::parse_int_list(n_list);
      detail::emit_reports(cfg, sweep_N(cfg, Ns), "report");
      return 0;
    }
    if (sweep_e->parsed()) {
      std::vector<double> es = eps_list.empty()
                                   ? std::vector<double>{0.05, 0.1, 0.2}
                                   : detail::parse_double_list(eps_list);
      detail::emit_reports(cfg, sweep_eps(cfg, es), "report");
      return 0;
    }
    if (chaos->parsed()) {
      std::vector<int> Ns = n_list.empty()
                                ? std::vector<int>{128, 512, 2048}
                                : detail::parse_int_list(n_list);
      if (dry_run) {
        validate(cfg);
        std::sort(Ns.begin(), Ns.end());
        for (int N : Ns)
          std::printf("plan chaos N=%d eps=%.17g seeds=%d T=%.17g dt=%.17g\n",
                      N, resolved_eps(cfg, N), cfg.n_seeds, cfg.T, cfg.dt);
        return 0;
      }
      detail::emit_reports(cfg, chaos_study(cfg, Ns, !pure_diffusion),
                           "report");
      return 0;
    }
    if (drift->parsed()) {
      std::vector<double> es = eps_list.empty()
                                   ? std::vector<double>{0.04, 0.08, 0.16, 0.32}
                                   : detail::parse_double_list(eps_list);
      DriftScalingReport rep = drift_scaling_study(cfg, es);
      detail::emit_reports(cfg, rep.sup_drift, "report_sup_drift");
      detail::emit_reports(cfg, rep.lipschitz, "report_lipschitz");
      detail::emit_reports(cfg, rep.functional, "report_functional");
      return 0;
    }
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}

}  // namespace ks
