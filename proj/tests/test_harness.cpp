#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kslab/cli.hpp"
#include "kslab/harness.hpp"
#include "kslab/io.hpp"
#include "oracles.hpp"

using namespace ks;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(static_cast<bool>(is));
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

std::string fresh_dir(const char* name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

int run_cli(std::vector<std::string> args) {
  std::vector<const char*> argv = {"kslab"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

// Cheap sweep scale: 16 steps on a coarse grid.
SimConfig small_config() {
  SimConfig cfg;
  cfg.d = 1;
  cfg.N = 16;
  cfg.T = 0.2;
  cfg.dt = 0.0125;
  cfg.eps_auto = false;
  cfg.eps = 0.05;
  cfg.M = 128;
  cfg.n_seeds = 3;
  return cfg;
}

}  // namespace

TEST_CASE("epsilon schedule matches the pinned arithmetic and guards") {
  // d = 2: ln N = 16 gives 16^{-1/2} = 0.25.
  int n2 = static_cast<int>(std::llround(std::exp(16.0)));
  CHECK(std::abs(epsilon_schedule(n2, 1.0, 2) - 0.25) < 1e-8);
  // d = 1: ln N = 8 gives 8^{-2/3} = 0.25.
  int n1 = static_cast<int>(std::llround(std::exp(8.0)));
  CHECK(std::abs(epsilon_schedule(n1, 1.0, 1) - 0.25) < 1e-5);

  CHECK(epsilon_schedule(1000, 2.0, 1) ==
        doctest::Approx(2.0 * epsilon_schedule(1000, 1.0, 1)).epsilon(1e-14));
  CHECK(epsilon_schedule(4096, 1.0, 1) < epsilon_schedule(64, 1.0, 1));

  CHECK_THROWS_AS(epsilon_schedule(2, 1.0, 1), std::domain_error);
  CHECK_THROWS_AS(epsilon_schedule(1, 1.0, 2), std::domain_error);
  CHECK_THROWS_AS(epsilon_schedule(100, 0.0, 1), std::domain_error);
  CHECK_THROWS_AS(epsilon_schedule(100, 1.0, 0), std::domain_error);
}

TEST_CASE("log-log fit recovers power laws exactly") {
  std::vector<double> xs, ys;
  for (int k = 0; k < 6; ++k) {
    double x = 8.0 * std::pow(2.0, k);
    xs.push_back(x);
    ys.push_back(3.0 * std::pow(x, -0.5));
  }
  FitResult f = fit_loglog(xs, ys);
  CHECK(std::abs(f.slope + 0.5) < 1e-6);
  CHECK(f.residual < 1e-12);
  CHECK(f.se_slope < 1e-12);
  CHECK(std::abs(std::exp(f.intercept) - 3.0) < 1e-10);

  FitResult g = fit_loglog(std::vector<double>{2.0, 4.0},
                           std::vector<double>{5.0, 10.0});
  CHECK(std::abs(g.slope - 1.0) < 1e-12);
  CHECK(g.se_slope == 0.0);

  CHECK_THROWS_AS(
      fit_loglog(std::vector<double>{1.0}, std::vector<double>{1.0}),
      std::invalid_argument);
  CHECK_THROWS_AS(fit_loglog(std::vector<double>{1.0, 2.0},
                             std::vector<double>{1.0, -1.0}),
                  std::domain_error);
  CHECK_THROWS_AS(fit_loglog(std::vector<double>{1.0, 1.0},
                             std::vector<double>{1.0, 2.0}),
                  std::domain_error);
}

TEST_CASE("config text parses, rejects unknown keys, and hashes stably") {
  SimConfig cfg = parse_config_text(
      "# experiment\n"
      "d = 2\n"
      "N = 128\n"
      "eps = auto   # schedule\n"
      "dt = 0.025\n"
      "\n"
      "drift_mode = direct\n");
  CHECK(cfg.d == 2);
  CHECK(cfg.N == 128);
  CHECK(cfg.eps_auto);
  CHECK(cfg.dt == 0.025);
  CHECK(cfg.drift_mode == "direct");
  CHECK(cfg.M == 512);  // untouched default

  CHECK_THROWS_WITH_AS(parse_config_text("epsilon = 0.1\n"),
                       doctest::Contains("unknown config key"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("N = twelve\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("just words\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("N = 12.5\n"), ConfigError);

  // Canonical lines round-trip through the parser onto the same hash.
  std::string joined;
  for (const auto& line : config_lines(cfg)) joined += line + "\n";
  SimConfig back = parse_config_text(joined);
  CHECK(config_hash(back) == config_hash(cfg));

  // Frozen: changing the canonical line format breaks stored hashes.
  CHECK(config_hash(SimConfig{}) == "4f098306bfef4ee6");
  SimConfig other;
  other.N = 65;
  CHECK(config_hash(other) != config_hash(SimConfig{}));
  SimConfig renamed;
  renamed.out_dir = "elsewhere";  // output location is not identity
  CHECK(config_hash(renamed) == config_hash(SimConfig{}));
}

TEST_CASE("config validation names the violated invariant") {
  CHECK_NOTHROW(validate(SimConfig{}));

  SimConfig cfg;
  cfg.N = 1;
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("N must be >= 2"),
                       ConfigError);

  cfg = SimConfig{};
  cfg.dt = 0.02;  // eps / dt = 2.5
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("eps/4"), ConfigError);

  cfg = SimConfig{};
  cfg.T = 0.51;
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("multiple of dt"),
                       ConfigError);

  cfg = SimConfig{};
  cfg.eps = 0.055;  // above 4 dt but off the step grid
  CHECK_THROWS_WITH_AS(validate(cfg),
                       doctest::Contains("integer multiple of dt"),
                       ConfigError);

  cfg = SimConfig{};
  cfg.M = 100;
  CHECK_THROWS_AS(validate(cfg), std::exception);

  cfg = SimConfig{};
  cfg.drift_mode = "magic";
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("drift_mode"),
                       ConfigError);

  cfg = SimConfig{};
  cfg.L = 2.0;
  cfg.T = 10.0;
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("box too small"),
                       ConfigError);

  cfg = SimConfig{};
  cfg.rho_sigma = 4.0;  // heavy tail outside L = 8
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("outside the box"),
                       ConfigError);

  cfg = SimConfig{};
  cfg.n_seeds = 0;
  CHECK_THROWS_WITH_AS(validate(cfg), doctest::Contains("n_seeds"),
                       ConfigError);
}

TEST_CASE("cut-off resolution snaps to the step grid with a 4-step floor") {
  SimConfig cfg;
  cfg.dt = 0.0125;
  cfg.eps_auto = false;
  cfg.eps = 0.05;
  CHECK(resolved_eps(cfg, 64) == doctest::Approx(0.05).epsilon(1e-14));

  cfg.eps = 0;
  CHECK(resolved_eps(cfg, 64) == 0.0);

  cfg.eps = 1e-4;  // snaps up to 4 dt
  CHECK(resolved_eps(cfg, 64) == doctest::Approx(0.05).epsilon(1e-14));

  cfg.eps_auto = true;
  cfg.lambda_cut = 1.0;
  cfg.d = 1;
  double sched = epsilon_schedule(512, 1.0, 1);
  double snapped = resolved_eps(cfg, 512);
  CHECK(std::abs(snapped - sched) <= 0.5 * cfg.dt + 1e-15);
  CHECK(std::abs(snapped / cfg.dt - std::llround(snapped / cfg.dt)) < 1e-9);
}

TEST_CASE("grid field snapshots round-trip through the binary format") {
  std::string dir = fresh_dir("kslab_io_grid");
  GridSpec spec{2, 8, 4.0};
  GridField f(spec);
  f.time = 0.375;
  for (std::size_t i = 0; i < f.size(); ++i)
    f.v[i] = std::sin(0.1 * static_cast<double>(i)) * 3.25 + 1e-17;
  std::string path = dir + "/field.ksgf";
  write_grid_field(path, f);
  GridField g = read_grid_field(path);
  CHECK(g.spec.dim == spec.dim);
  CHECK(g.spec.cells == spec.cells);
  CHECK(g.spec.half_width == spec.half_width);
  CHECK(g.time == f.time);
  REQUIRE(g.v.size() == f.v.size());
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(g.v[i] == f.v[i]);

  // Corrupt magic and truncation both fail loudly.
  {
    std::ofstream os(dir + "/bad.ksgf", std::ios::binary);
    os << "KSXX";
  }
  CHECK_THROWS_AS(read_grid_field(dir + "/bad.ksgf"), IoError);
  std::string bytes = slurp(path);
  {
    std::ofstream os(dir + "/cut.ksgf", std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(read_grid_field(dir + "/cut.ksgf"), IoError);
  CHECK_THROWS_AS(read_grid_field(dir + "/absent.ksgf"), IoError);
}

TEST_CASE("trajectories round-trip and reject malformed blocks") {
  std::string dir = fresh_dir("kslab_io_traj");
  Trajectory tr;
  tr.dim = 2;
  tr.n = 3;
  tr.t = {0.0, 0.5};
  tr.snaps = {{0.1, 0.2, 0.3, 0.4, 0.5, 0.6},
              {1.1, 1.2, 1.3, 1.4, 1.5, 1.6}};
  std::string path = dir + "/run.kspt";
  write_trajectory(path, tr);
  Trajectory back = read_trajectory(path);
  CHECK(back.dim == 2);
  CHECK(back.n == 3);
  REQUIRE(back.t.size() == 2);
  CHECK(back.t[1] == 0.5);
  CHECK(back.snaps[1][5] == 1.6);

  Trajectory bad = tr;
  bad.snaps[1].pop_back();
  CHECK_THROWS_AS(write_trajectory(dir + "/bad.kspt", bad), IoError);
  bad = tr;
  bad.t.pop_back();
  CHECK_THROWS_AS(write_trajectory(dir + "/bad.kspt", bad), IoError);
}

TEST_CASE("csv emitter prints every double with full precision") {
  std::string dir = fresh_dir("kslab_io_csv");
  std::vector<std::string> names = {"t", "value"};
  std::vector<std::vector<double>> cols = {
      {0.1, 0.2}, {1.0 / 3.0, 6.02214076e23}};
  write_csv(dir + "/out.csv", names, cols);
  std::string text = slurp(dir + "/out.csv");
  CHECK(text.rfind("t,value\n", 0) == 0);
  CHECK(text.find(fmt17(1.0 / 3.0)) != std::string::npos);
  // Round-trip through the printed representation is exact.
  CHECK(std::stod(fmt17(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(std::stod(fmt17(6.02214076e23)) == 6.02214076e23);

  std::vector<std::vector<double>> ragged = {{1.0}, {1.0, 2.0}};
  CHECK_THROWS_AS(write_csv(dir + "/bad.csv", names, ragged), IoError);
}

TEST_CASE("reports embed version, hash, and slope and write identical bytes") {
  ConvergenceReport r;
  r.axis_name = "N";
  r.statistic = "mean_sup_inter_mid";
  r.hash = "0123456789abcdef";
  r.points = {{64.0, 0.5, 0.01, 8, 0.0}, {256.0, 0.25, 0.005, 8, 0.0}};
  detail::fit_report(r);
  REQUIRE(r.has_slope);
  CHECK(std::abs(r.slope + 0.5) < 1e-12);

  std::string dir = fresh_dir("kslab_reports");
  write_report_csv(dir + "/report.csv", r);
  write_report_json(dir + "/report.json", r);
  std::string csv = slurp(dir + "/report.csv");
  CHECK(csv.find("# kslab 1.0.0") != std::string::npos);
  CHECK(csv.find("# config 0123456789abcdef") != std::string::npos);
  CHECK(csv.find("# slope ") != std::string::npos);
  CHECK(csv.find("N,mean,se,n_seeds") != std::string::npos);

  auto j = nlohmann::json::parse(slurp(dir + "/report.json"));
  CHECK(j["version"] == "kslab 1.0.0");
  CHECK(j["config"] == "0123456789abcdef");
  CHECK(j["points"].size() == 2);
  CHECK(std::abs(j["slope"]["value"].get<double>() + 0.5) < 1e-12);

  write_report_csv(dir + "/report2.csv", r);
  write_report_json(dir + "/report2.json", r);
  CHECK(slurp(dir + "/report2.csv") == csv);
  CHECK(slurp(dir + "/report2.json") == slurp(dir + "/report.json"));
}

TEST_CASE("particle-count sweep reports shrinking gaps and honest stderr") {
  SimConfig cfg = small_config();
  cfg.n_seeds = 8;
  ConvergenceReport r = sweep_N(cfg, {16, 64});
  REQUIRE(r.points.size() == 2);
  CHECK(r.points[0].axis == 16.0);
  CHECK(r.points[1].axis == 64.0);
  CHECK(r.statistic == "mean_sup_inter_mid");
  CHECK(r.hash == config_hash(cfg));
  for (const auto& p : r.points) {
    CHECK(p.mean > 0);
    CHECK(p.n_seeds == 8);
    CHECK(std::isfinite(p.se));
  }
  CHECK(r.points[1].mean < r.points[0].mean);
  CHECK(r.has_slope);

  // Doubling the seed count shrinks the stderr estimate by about sqrt(2).
  SimConfig dbl = cfg;
  dbl.n_seeds = 16;
  ConvergenceReport r2 = sweep_N(dbl, {16, 64});
  for (std::size_t k = 0; k < 2; ++k) {
    double ratio = r.points[k].se / r2.points[k].se;
    CHECK(ratio > std::sqrt(2.0) * 0.7);
    CHECK(ratio < std::sqrt(2.0) * 1.3);
  }

  SimConfig bad = cfg;
  bad.eps_auto = true;
  CHECK_THROWS_WITH_AS(sweep_N(bad, {16, 64}),
                       doctest::Contains("explicit eps"), ConfigError);
  CHECK_THROWS_AS(sweep_N(cfg, {}), ConfigError);
}

TEST_CASE("cut-off sweep is monotone under shared noise and reproducible") {
  SimConfig cfg = small_config();
  cfg.T = 0.4;
  std::vector<double> epses = {0.05, 0.1, 0.2};
  ConvergenceReport a = sweep_eps(cfg, epses);
  REQUIRE(a.points.size() == 3);
  CHECK(a.statistic == "mean_sup_mid_limit");
  CHECK(a.points[0].mean < a.points[1].mean);
  CHECK(a.points[1].mean < a.points[2].mean);

  ConvergenceReport b = sweep_eps(cfg, epses);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(a.points[k].mean == b.points[k].mean);
    CHECK(a.points[k].se == b.points[k].se);
  }
}

TEST_CASE("chaos distance to the limit law falls with N on the schedule") {
  SimConfig cfg;
  cfg.d = 1;
  cfg.T = 0.25;
  cfg.dt = 0.0125;
  cfg.eps_auto = true;
  cfg.M = 256;
  cfg.n_seeds = 4;
  ConvergenceReport r = chaos_study(cfg, {16, 256});
  REQUIRE(r.points.size() == 2);
  CHECK(r.extra_name == "eps");
  CHECK(r.points[0].extra > r.points[1].extra);  // schedule decreases
  CHECK(r.points[0].mean > r.points[1].mean);
  CHECK(r.points[0].mean > 0);

  ConvergenceReport single = chaos_study(cfg, {64});
  CHECK(single.points.size() == 1);
  CHECK_FALSE(single.has_slope);
}

TEST_CASE("pure-diffusion chaos slope sits in the half-power band") {
  SimConfig cfg;
  cfg.d = 1;
  cfg.T = 0.25;
  cfg.dt = 0.0125;
  cfg.eps_auto = true;
  cfg.M = 256;
  cfg.n_seeds = 12;
  cfg.c0_amp = 0.0;
  ConvergenceReport r = chaos_study(cfg, {64, 256, 1024}, false);
  REQUIRE(r.points.size() == 3);
  REQUIRE(r.has_slope);
  CHECK(r.slope > -0.65);
  CHECK(r.slope < -0.35);

  SimConfig with_chem = cfg;
  with_chem.c0_amp = 1.0;
  CHECK_THROWS_WITH_AS(chaos_study(with_chem, {64, 256}, false),
                       doctest::Contains("c0_amp = 0"), ConfigError);
}

TEST_CASE("drift scaling study tracks the cut-off powers") {
  // Long window and slow decay put the sweep in the asymptotic regime.
  SimConfig cfg;
  cfg.d = 1;
  cfg.dt = 0.0125;
  cfg.T = 4.0;
  cfg.lambda = 0.1;
  cfg.L = 24.0;
  std::vector<double> epses = {0.01, 0.02, 0.04, 0.08};
  DriftScalingReport rep = drift_scaling_study(cfg, epses);

  REQUIRE(rep.sup_drift.points.size() == 4);
  REQUIRE(rep.lipschitz.points.size() == 4);
  REQUIRE(rep.functional.points.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(rep.sup_drift.points[k].mean > 0);
    CHECK(rep.lipschitz.points[k].mean > 0);
    CHECK(rep.functional.points[k].mean > 0);
  }
  // Shrinking the cut-off grows all three.
  CHECK(rep.sup_drift.points[0].mean > rep.sup_drift.points[3].mean);
  CHECK(rep.lipschitz.points[0].mean > rep.lipschitz.points[3].mean);
  CHECK(rep.functional.points[0].mean > rep.functional.points[3].mean);

  // d = 1 Lipschitz estimate grows like eps^{-1/2}.
  REQUIRE(rep.lipschitz.has_slope);
  CHECK(rep.lipschitz.slope > -0.8);
  CHECK(rep.lipschitz.slope < -0.2);

  // The last-node-localized Gaussian pair realizes the eps^{-(d/2+1)}
  // envelope of the memory functional.
  REQUIRE(rep.functional.has_slope);
  CHECK(rep.functional.slope > -2.0);
  CHECK(rep.functional.slope < -1.0);
}

TEST_CASE("d = 2 sup drift slope sits in the half-power band") {
  SimConfig cfg;
  cfg.d = 2;
  cfg.M = 64;
  cfg.dt = 0.0125;
  cfg.T = 4.0;
  cfg.lambda = 0.1;
  cfg.L = 24.0;
  DriftScalingReport rep =
      drift_scaling_study(cfg, {0.04, 0.08, 0.16, 0.32});
  REQUIRE(rep.sup_drift.has_slope);
  CHECK(rep.sup_drift.slope > -0.7);
  CHECK(rep.sup_drift.slope < -0.3);
}

TEST_CASE("equal memory histories give a zero drift difference") {
  detail::DriftProbe pf(1, 8.0, 1.0, 0.05, 0.5, 0.0125,
                        std::vector<double>{-0.3, 0.1, 0.4});
  detail::DriftProbe pg(1, 8.0, 1.0, 0.05, 0.5, 0.0125,
                        std::vector<double>{-0.3, 0.1, 0.4});
  for (double x : {-0.5, 0.0, 0.7}) {
    Vec a = pf.drift_at(std::span<const double>(&x, 1));
    Vec b = pg.drift_at(std::span<const double>(&x, 1));
    CHECK(a[0] == b[0]);
    CHECK(std::abs(a[0]) < 1e3);
  }
}

TEST_CASE("fast and direct interacting runs stay close under shared noise") {
  SimConfig cfg;
  cfg.d = 1;
  cfg.N = 8;
  cfg.T = 0.1;
  cfg.dt = 0.0125;
  cfg.eps_auto = false;
  cfg.eps = 0.05;
  cfg.M = 512;
  cfg.record_stride = 2;
  cfg.drift_mode = "fast";
  Trajectory fast = run_interacting(cfg);
  cfg.drift_mode = "direct";
  Trajectory direct = run_interacting(cfg);

  REQUIRE(fast.t.size() == direct.t.size());
  REQUIRE(fast.t.size() == 5);  // steps 0, 2, 4, 6, 8
  CHECK(fast.t.back() == doctest::Approx(0.1).epsilon(1e-12));
  double sup = 0;
  for (std::size_t k = 0; k < fast.t.size(); ++k)
    for (std::size_t i = 0; i < fast.snaps[k].size(); ++i)
      sup = std::max(sup,
                     std::abs(min_image(fast.snaps[k][i], direct.snaps[k][i],
                                        cfg.L)));
  CHECK(sup < 0.05);
  for (double x : fast.snaps.back()) {
    CHECK(x >= -cfg.L);
    CHECK(x < cfg.L);
  }
}

TEST_CASE("cli parses, plans, runs, and signals failure modes") {
  CHECK(run_cli({"--help"}) == 0);
  CHECK(run_cli({"pde", "--help"}) == 0);
  CHECK(run_cli({}) != 0);                    // subcommand required
  CHECK(run_cli({"pde", "--bogus"}) != 0);    // unknown flag
  CHECK(run_cli({"pde", "--config", "/nonexistent/run.cfg"}) == 2);

  std::string dir = fresh_dir("kslab_cli");
  {
    std::ofstream os(dir + "/bad.cfg");
    os << "N = 1\n";
  }
  CHECK(run_cli({"couple", "--config", dir + "/bad.cfg"}) == 3);

  // Dry-run prints the plan and writes nothing.
  std::string plan_dir = dir + "/plan";
  CHECK(run_cli({"chaos", "--N-list", "128,512", "--seeds", "4", "--eps",
                 "auto", "--dry-run", "--out", plan_dir}) == 0);
  CHECK_FALSE(std::filesystem::exists(plan_dir));

  // A short PDE run writes diagnostics and readable snapshots.
  std::string pde_dir = dir + "/pde";
  CHECK(run_cli({"pde", "--d", "1", "--M", "64", "--T", "0.05", "--dt",
                 "0.0125", "--eps", "0", "--out", pde_dir}) == 0);
  CHECK(std::filesystem::exists(pde_dir + "/diagnostics.csv"));
  GridField rho = read_grid_field(pde_dir + "/rho_final.ksgf");
  CHECK(std::abs(total_mass(rho) - 1.0) < 1e-9);
  GridField c = read_grid_field(pde_dir + "/c_final.ksgf");
  CHECK(c.spec.cells == 64);

  // Particle runs dump a readable trajectory; w1 of a file against itself
  // is zero.
  std::string pt_dir = dir + "/particles";
  CHECK(run_cli({"particles", "--d", "1", "--N", "8", "--T", "0.05", "--dt",
                 "0.0125", "--eps", "0.05", "--M", "64", "--out",
                 pt_dir}) == 0);
  std::string traj = pt_dir + "/trajectory.kspt";
  CHECK(std::filesystem::exists(pt_dir + "/summary.json"));
  Trajectory tr = read_trajectory(traj);
  CHECK(tr.n == 8);
  CHECK(run_cli({"w1", "--a", traj, "--b", traj}) == 0);
}

TEST_CASE("worker count changes no report byte") {
  SimConfig cfg = small_config();
  worker_override() = 1;
  std::string text1 = report_json(sweep_N(cfg, {8, 16})).dump(2);
  worker_override() = 8;
  std::string text8 = report_json(sweep_N(cfg, {8, 16})).dump(2);
  worker_override() = 0;
  CHECK(text1 == text8);
  CHECK(!text1.empty());
}
