#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

#include "fbee/cli.hpp"
#include "fbee/errors.hpp"

using namespace fbee;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

// Fresh artifact directory per case, under the ctest working directory.
std::string art_dir(const std::string& name) {
  const fs::path dir = fs::path("cli_artifacts") / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return text;
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << text;
}

json report_without_timings(const std::string& path) {
  json rep = json::parse(slurp(path));
  rep.erase("timings_ms");
  return rep;
}

// Scalar problem whose costate starts at sinh(sqrt 2)/(sqrt 2 cosh(sqrt 2) +
// sinh(sqrt 2)); every solver route reproduces it.
json scalar_config() {
  return {{"generator",
           {{"name", "lq"},
            {"params",
             {{"n", 1}, {"Q", 1.0}, {"R", 1.0}, {"G", 0.0}, {"B", 1.0}}}}},
          {"operator",
           {{"kind", "symmetric_negative"}, {"eigenvalues", {-1.0}}}},
          {"horizon", 1.0},
          {"steps", 400},
          {"initial_state", 1.0},
          {"solver", "riccati"}};
}

json flipped_toy_config() {
  return {{"generator",
           {{"name", "custom_affine"},
            {"params",
             {{"A",
               {{"kind", "symmetric_negative"}, {"eigenvalues", {-1.0}}}},
              {"B12", 1.0},
              {"B21", -1.0}}}}},
          {"horizon", 1.0},
          {"steps", 200},
          {"initial_state", 1.0},
          {"solver", "continuation"},
          {"certificate", {{"method", "monotone"}}}};
}

double psi0_from_csv(const std::string& csv) {
  // Header line, then the t = 0 row: t,y_0,psi_0 for a scalar problem.
  const auto header_end = csv.find('\n');
  REQUIRE(header_end != std::string::npos);
  double t = 0.0, y = 0.0, psi = 0.0;
  REQUIRE(std::sscanf(csv.c_str() + header_end + 1, "%lf,%lf,%lf", &t, &y,
                      &psi) == 3);
  CHECK(t == 0.0);
  return psi;
}

const char* cli_bin() { return std::getenv("FBEE_CLI_BIN"); }

int run_cli(const std::string& args, const std::string& env_prefix = "") {
  const std::string cmd = env_prefix + (env_prefix.empty() ? "" : " ") + "\"" +
                          cli_bin() + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("config schema rejects malformed documents") {
  CHECK_THROWS_AS(parse_problem_config(json::array()), ConfigError);
  CHECK_THROWS_AS(parse_problem_config(json::object()), ConfigError);

  json cfg = scalar_config();
  cfg["typo_field"] = 1;
  CHECK_THROWS_AS(parse_problem_config(cfg), ConfigError);

  cfg = scalar_config();
  cfg.erase("horizon");
  CHECK_THROWS_AS(parse_problem_config(cfg), ConfigError);

  cfg = scalar_config();
  cfg["horizon"] = -1.0;
  CHECK_THROWS_AS(parse_problem_config(cfg), ConfigError);

  cfg = scalar_config();
  cfg["steps"] = 0;
  CHECK_THROWS_AS(parse_problem_config(cfg), ConfigError);

  cfg = scalar_config();
  cfg["steps"] = 10.5;
  CHECK_THROWS_AS(parse_problem_config(cfg), ConfigError);

  cfg = scalar_config();
  cfg["solver"] = "newton";
  CHECK_THROWS_AS(parse_problem_config(cfg), ConfigError);

  cfg = scalar_config();
  cfg["initial_state"] = {1.0, 2.0};
  CHECK_THROWS_AS(parse_problem_config(cfg), ConfigError);

  cfg = scalar_config();
  cfg["generator"]["params"]["A"] = cfg["operator"];
  CHECK_THROWS_AS(parse_problem_config(cfg), ConfigError);

  cfg = scalar_config();
  cfg["generator"] = {{"name", "not_a_builtin"}};
  CHECK_THROWS_AS(parse_problem_config(cfg), ConfigError);

  cfg = scalar_config();
  cfg["seed"] = -3;
  CHECK_THROWS_AS(parse_problem_config(cfg), ConfigError);

  cfg = scalar_config();
  cfg["tolerances"] = {{"inner", 1e-9}, {"outer", 1}};
  CHECK_THROWS_AS(parse_problem_config(cfg), ConfigError);

  cfg = scalar_config();
  cfg["certificate"] = "monotone";
  CHECK_THROWS_AS(parse_problem_config(cfg), ConfigError);

  cfg = scalar_config();
  cfg["convergence"] = {{"steps_list", json::array()}};
  CHECK_THROWS_AS(parse_problem_config(cfg), ConfigError);
}

TEST_CASE("config parser fills defaults and overrides") {
  json doc = scalar_config();
  doc["tolerances"] = {{"inner", 1e-9}, {"max_inner", 40}, {"max_outer", 8}};
  doc["ball_radius"] = 1.5;
  doc["sample_budget"] = 64;
  doc["seed"] = 7;
  doc["label"] = "scalar-check";
  doc["convergence"] = {{"steps_list", {100, 200}}, {"order_floor", 0.0}};

  ProblemConfig cfg = parse_problem_config(doc);
  CHECK(cfg.gen.name == "lq");
  CHECK(cfg.gen.dim == 1);
  CHECK(cfg.horizon == 1.0);
  CHECK(cfg.steps == 400);
  CHECK(cfg.x.size() == 1);
  CHECK(cfg.x(0) == 1.0);
  CHECK(cfg.solver == "riccati");
  CHECK(cfg.label == "scalar-check");
  CHECK(cfg.inner_tol == 1e-9);
  CHECK(cfg.max_inner == 40);
  CHECK(cfg.max_outer == 8);
  CHECK(cfg.ball_radius == 1.5);
  CHECK(cfg.sample_budget == 64);
  CHECK(cfg.seed == 7);
  CHECK(cfg.steps_list == std::vector<int>{100, 200});
  CHECK(cfg.order_floor == 0.0);

  ProblemConfig bare = parse_problem_config(scalar_config());
  CHECK(bare.label == "lq");
  CHECK(bare.inner_tol == tol::inner_tol);
  CHECK(bare.steps_list == std::vector<int>({250, 500, 1000, 2000}));
}

TEST_CASE("config loader reports file problems as config errors") {
  CHECK_THROWS_AS(load_problem_config("no/such/file.json"), ConfigError);

  const std::string dir = art_dir("loader");
  const std::string path = dir + "/broken.json";
  spit(path, "{\"generator\": ");
  CHECK_THROWS_AS(load_problem_config(path), ConfigError);

  spit(path, scalar_config().dump());
  CHECK(load_problem_config(path).gen.name == "lq");
}

TEST_CASE("run_problem writes deterministic artifacts") {
  ProblemConfig cfg = parse_problem_config(scalar_config());
  cfg.out_dir = art_dir("det_a");
  RunArtifacts a = run_problem(cfg);
  CHECK(a.exit_code == 0);
  CHECK(fs::exists(a.trajectory_csv));
  CHECK(fs::exists(a.report_json));
  CHECK(a.certificate_json.empty());

  const std::string csv = slurp(a.trajectory_csv);
  CHECK(csv.rfind("t,y_0,psi_0\n", 0) == 0);
  CHECK(std::abs(psi0_from_csv(csv) - 0.38583) < 1e-3);

  const json rep = json::parse(slurp(a.report_json));
  CHECK(rep.at("solver") == "riccati");
  CHECK(rep.at("exit_code") == 0);
  CHECK(rep.at("grid").at("steps") == 400);
  CHECK(rep.at("residuals").at("mild").get<double>() >= 0.0);
  CHECK(rep.at("residuals").at("energy_identity").get<double>() < 1e-4);
  CHECK(rep.at("margins").contains("contraction"));
  CHECK(rep.at("declared_tolerance").get<double>() > 0.0);
  CHECK(rep.at("timings_ms").at("solve").get<double>() >= 0.0);

  cfg.out_dir = art_dir("det_b");
  RunArtifacts b = run_problem(cfg);
  CHECK(slurp(b.trajectory_csv) == csv);
  CHECK(report_without_timings(b.report_json) ==
        report_without_timings(a.report_json));
}

TEST_CASE("solver choice is reflected in artifacts and cross-checks") {
  json doc = scalar_config();
  doc["solver"] = "fredholm";
  ProblemConfig cfg = parse_problem_config(doc);
  cfg.out_dir = art_dir("fredholm");
  RunArtifacts fred = run_problem(cfg);

  doc["solver"] = "continuation";
  ProblemConfig cont_cfg = parse_problem_config(doc);
  cont_cfg.out_dir = art_dir("cont");
  RunArtifacts cont = run_problem(cont_cfg);
  const json rep = json::parse(slurp(cont.report_json));
  CHECK(rep.at("continuation").at("size_constant").get<double>() > 1.0);
  CHECK(rep.at("continuation").at("levels").size() >= 2);

  const double psi_fred = psi0_from_csv(slurp(fred.trajectory_csv));
  const double psi_cont = psi0_from_csv(slurp(cont.trajectory_csv));
  CHECK(std::abs(psi_fred - psi_cont) < 1e-6);
}

TEST_CASE("certificate requests gate the solve") {
  json doc = scalar_config();
  doc["solver"] = "continuation";
  doc["certificate"] = {{"method", "monotone"}};
  ProblemConfig cfg = parse_problem_config(doc);
  cfg.out_dir = art_dir("cert_pass");
  RunArtifacts ok = run_problem(cfg);
  CHECK(ok.exit_code == 0);
  CHECK(fs::exists(ok.certificate_json));
  const json cert = json::parse(slurp(ok.certificate_json));
  CHECK(cert.at("method") == "monotone");
  CHECK(cert.at("holds") == true);
  CHECK(cert.at("delta").get<double>() > 0.0);

  ProblemConfig flipped = parse_problem_config(flipped_toy_config());
  flipped.out_dir = art_dir("cert_fail");
  RunArtifacts bad = run_problem(flipped);
  CHECK(bad.exit_code == 4);
  CHECK(bad.trajectory_csv.empty());
  CHECK(fs::exists(bad.certificate_json));
  const json rep = json::parse(slurp(bad.report_json));
  CHECK(rep.at("exit_code") == 4);
  CHECK(rep.at("certificate").at("holds") == false);
  CHECK(!rep.contains("residuals"));
}

TEST_CASE("closed-form and wellposedness certificate methods run") {
  json doc = scalar_config();
  doc["certificate"] = {{"method", "closed_form"},
                        {"family", "general_drift"}};
  ProblemConfig cfg = parse_problem_config(doc);
  CertificateOutcome closed = run_certificate_check(cfg);
  CHECK(closed.summary.at("method") == "closed_form");
  CHECK(closed.summary.contains("verdict"));
  CHECK(closed.attach.has_value());

  doc["certificate"] = {{"method", "wellposedness"},
                        {"params", {{"q0", 1.0}, {"qbar0", 1.0}}}};
  CertificateOutcome wp = run_certificate_check(parse_problem_config(doc));
  CHECK(wp.summary.at("method") == "wellposedness");
  CHECK(wp.summary.at("params").at("q0") == 1.0);

  doc["certificate"] = {{"method", "divination"}};
  CHECK_THROWS_AS(run_certificate_check(parse_problem_config(doc)),
                  ConfigError);

  doc["certificate"] = {{"method", "closed_form"}, {"family", "bogus"}};
  CHECK_THROWS_AS(run_certificate_check(parse_problem_config(doc)),
                  ConfigError);
}

TEST_CASE("convergence study fits the trapezoid order") {
  ProblemConfig cfg = parse_problem_config(scalar_config());
  cfg.out_dir = art_dir("conv");
  ConvergenceStudy study = convergence_study(cfg, {250, 500, 1000, 2000});
  REQUIRE(study.rows.size() == 4);
  REQUIRE(study.fitted_order.has_value());
  CHECK(*study.fitted_order > 1.8);
  CHECK(*study.fitted_order < 2.3);
  CHECK(fs::exists(study.csv_path));
  const std::string csv = slurp(study.csv_path);
  CHECK(csv.rfind("steps,mild_residual,energy_identity_residual,runtime_ms\n",
                  0) == 0);

  // Residuals must shrink monotonically along the ladder.
  for (std::size_t i = 1; i < study.rows.size(); ++i)
    CHECK(study.rows[i].mild_residual < study.rows[i - 1].mild_residual);
}

TEST_CASE("convergence study without a ladder skips the fit") {
  ProblemConfig cfg = parse_problem_config(scalar_config());
  cfg.out_dir = art_dir("conv_single");
  ConvergenceStudy study = convergence_study(cfg, {400});
  CHECK(study.rows.size() == 1);
  CHECK(!study.fitted_order.has_value());
}

TEST_CASE("convergence study enforces the order floor") {
  ProblemConfig cfg = parse_problem_config(scalar_config());
  cfg.out_dir = art_dir("conv_floor");
  cfg.order_floor = 3.0;
  CHECK_THROWS_AS(convergence_study(cfg, {250, 500, 1000}),
                  NonConvergenceError);
}

TEST_CASE("kink forcing degrades the observed order without failing") {
  // A drift with a corner off the grid nodes spoils the trapezoid rule's
  // second order; with the floor disabled the study reports what it saw.
  ProblemConfig cfg = parse_problem_config(scalar_config());
  auto aff = *cfg.gen.affine;
  aff.b0 = [](double t) {
    return VectorXd::Constant(1, std::max(t - 1.0 / 3.0, 0.0));
  };
  cfg.gen = GeneratorTriple::from_affine("kinked", cfg.gen.A, std::move(aff));
  cfg.out_dir = art_dir("conv_kink");
  cfg.order_floor = 0.0;
  ConvergenceStudy study = convergence_study(cfg, {250, 500, 1000, 2000});
  REQUIRE(study.fitted_order.has_value());
  CHECK(*study.fitted_order > 0.5);
}

TEST_CASE("example catalog entries build and answer to their aliases") {
  ProblemConfig a = example_config("9.1");
  CHECK(a.gen.name == "linear_convex");
  CHECK(a.gen.dim == 4);
  CHECK(a.solver == "continuation");
  CHECK(example_config("linear_convex").label == a.label);

  ProblemConfig b = example_config("aq");
  CHECK(b.gen.name == "aq");
  CHECK(example_params("9.2").at("amplitude") == 0.1);

  ProblemConfig c = example_config("parabolic");
  CHECK(c.gen.dim == 32);
  CHECK(example_params("9.3").at("N") == 100.0);

  CHECK_THROWS_AS(example_config("9.4"), ConfigError);
  CHECK_THROWS_AS(example_params("nope"), ConfigError);
}

TEST_CASE("example 9.1 verifies its conditions and cross-checks") {
  const std::string dir = art_dir("ex91");
  RunArtifacts art = run_example("9.1", dir);
  CHECK(art.exit_code == 0);
  CHECK(fs::exists(art.trajectory_csv));

  const json ex = art.report.at("example");
  CHECK(ex.at("conditions").at("hold") == true);
  CHECK(ex.at("conditions").at("Q_min").get<double>() > 0.0);
  CHECK(ex.at("cross_check").at("holds") == true);
  CHECK(ex.at("cross_check").at("gap").get<double>() < 1e-5);
}

TEST_CASE("example 9.2 reports its coupling margin and energy bound") {
  const std::string dir = art_dir("ex92");
  RunArtifacts art = run_example("9.2", dir);
  CHECK(art.exit_code == 0);

  const json ex = art.report.at("example");
  CHECK(ex.at("conditions").at("hold") == true);
  CHECK(ex.at("conditions").at("coupling_margin").get<double>() > 0.0);
  CHECK(ex.at("energy_bound").at("state").at("holds") == true);
  CHECK(ex.at("energy_bound").at("gronwall_constant").get<double>() >= 1.0);
}

TEST_CASE("example 9.2 with the drift turned off reproduces 9.1 exactly") {
  const std::string dir91 = art_dir("ex91_again");
  RunArtifacts base = run_example("9.1", dir91);

  json params = example_params("9.2");
  params["amplitude"] = 0.0;
  ProblemConfig cfg = example_config("9.2");
  cfg.gen = make_builtin("aq", params);
  cfg.out_dir = art_dir("ex92_off");
  RunArtifacts off = run_problem(cfg);

  CHECK(slurp(off.trajectory_csv) == slurp(base.trajectory_csv));
}

TEST_CASE("example 9.3 solves the stiff block with a bounded costate") {
  const std::string dir = art_dir("ex93");
  RunArtifacts art = run_example("9.3", dir);
  CHECK(art.exit_code == 0);

  const json ex = art.report.at("example");
  CHECK(ex.at("conditions").at("hold") == true);
  CHECK(ex.at("psi_bound").at("holds") == true);
  CHECK(ex.at("psi_bound").at("sup").get<double>() <= 10.0);
  CHECK(ex.at("sampled_certificate").at("holds") == true);
}

TEST_CASE("exit codes follow the error taxonomy") {
  CHECK(exit_code_for([] { return 0; }) == 0);
  CHECK(exit_code_for([]() -> int { throw ConfigError("x"); }) == 5);
  CHECK(exit_code_for([]() -> int {
          throw std::invalid_argument("x");
        }) == 5);
  CHECK(exit_code_for([]() -> int { throw SingularOperatorError("x"); }) == 2);
  CHECK(exit_code_for([]() -> int { throw NonConvergenceError("x"); }) == 3);
}

TEST_CASE("binary round-trip: solve, artifacts, and log independence") {
  if (!cli_bin()) {
    MESSAGE("FBEE_CLI_BIN not set; skipping binary tests");
    return;
  }
  const std::string dir = art_dir("bin_solve");
  const std::string cfg_path = dir + "/config.json";
  spit(cfg_path, scalar_config().dump());

  CHECK(run_cli("solve-linear --config " + cfg_path + " --out " + dir) == 0);
  CHECK(fs::exists(dir + "/trajectory.csv"));
  CHECK(fs::exists(dir + "/report.json"));

  // Verbose logging goes to stderr only; artifacts stay byte-identical.
  const std::string dir2 = art_dir("bin_solve_log");
  CHECK(run_cli("solve-linear --config " + cfg_path + " --out " + dir2,
                "FBEE_LOG=debug") == 0);
  CHECK(slurp(dir2 + "/trajectory.csv") == slurp(dir + "/trajectory.csv"));

  const std::string dir3 = art_dir("bin_cont");
  CHECK(run_cli("solve-continuation --config " + cfg_path + " --out " + dir3 +
                " --certificate " + dir3 + "/cert.json") == 0);
  CHECK(fs::exists(dir3 + "/cert.json"));
}

TEST_CASE("binary reports the error taxonomy through exit codes") {
  if (!cli_bin()) {
    MESSAGE("FBEE_CLI_BIN not set; skipping binary tests");
    return;
  }
  const std::string dir = art_dir("bin_errors");

  CHECK(run_cli("solve-linear --config no/such/file.json") == 5);
  CHECK(run_cli("run-example 9.9 --out " + dir) == 5);
  CHECK(run_cli("definitely-not-a-subcommand") == 5);

  // Backward sweep through a quarter turn of the rotation group: the
  // two-point operator is singular there.
  json blowup = {{"generator",
                  {{"name", "custom_affine"},
                   {"params",
                    {{"A", {{"kind", "skew"}, {"zero_modes", 1}}},
                     {"B12", 1.0},
                     {"B21", 1.0}}}}},
                 {"horizon", 1.5707963267948966},
                 {"steps", 100000},
                 {"initial_state", 1.0},
                 {"solver", "shooting"}};
  const std::string blowup_path = dir + "/blowup.json";
  spit(blowup_path, blowup.dump());
  CHECK(run_cli("solve-linear --config " + blowup_path + " --out " + dir) ==
        2);

  const std::string flipped_path = dir + "/flipped.json";
  spit(flipped_path, flipped_toy_config().dump());
  CHECK(run_cli("check-lyapunov --config " + flipped_path + " --out " + dir) ==
        4);
  CHECK(fs::exists(dir + "/certificate.json"));
}

TEST_CASE("binary runs the example catalog end to end") {
  if (!cli_bin()) {
    MESSAGE("FBEE_CLI_BIN not set; skipping binary tests");
    return;
  }
  const std::string dir = art_dir("bin_example");
  CHECK(run_cli("run-example 9.1 --out " + dir) == 0);
  CHECK(fs::exists(dir + "/trajectory.csv"));
  CHECK(fs::exists(dir + "/report.json"));
  const json rep = json::parse(slurp(dir + "/report.json"));
  CHECK(rep.at("example").at("cross_check").at("holds") == true);
}
