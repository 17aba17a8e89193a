#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "CLI11.hpp"

#include "fbee/cli.hpp"
#include "fbee/errors.hpp"

namespace {

void write_json_artifact(const std::filesystem::path& path,
                         const nlohmann::json& doc) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw fbee::ConfigError("cannot write artifact file: " + path.string());
  out << doc.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical laboratory for forward-backward evolution equations"};
  app.fallthrough();

  std::string config_path, solver_flag, out_flag, certificate_flag;
  std::uint64_t seed_flag = 0;
  auto* config_opt =
      app.add_option("--config", config_path, "problem config JSON file");
  auto* solver_opt =
      app.add_option("--solver", solver_flag, "override the configured solver")
          ->check(CLI::IsMember(
              {"shooting", "fredholm", "riccati", "continuation"}));
  auto* out_opt =
      app.add_option("--out", out_flag, "directory for artifact files");
  auto* seed_opt =
      app.add_option("--seed", seed_flag, "override the sampling seed");
  auto* certificate_opt = app.add_option(
      "--certificate", certificate_flag,
      "write the certificate to this path; forces a check before solving");

  auto* solve_linear = app.add_subcommand(
      "solve-linear", "solve an affine problem by a direct route");
  auto* solve_continuation = app.add_subcommand(
      "solve-continuation", "solve by homotopy from the decoupled problem");
  auto* check_lyapunov = app.add_subcommand(
      "check-lyapunov", "run the certificate check without solving");
  auto* run_example_cmd =
      app.add_subcommand("run-example", "solve a bundled example problem");
  std::string example_name;
  run_example_cmd->add_option("name", example_name, "9.1, 9.2 or 9.3")
      ->required();
  auto* convergence_cmd = app.add_subcommand(
      "convergence", "solve on a ladder of grids and fit the observed order");
  app.require_subcommand(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 5;
  }

  return fbee::exit_code_for([&]() -> int {
    if (run_example_cmd->parsed()) {
      const std::string out_dir = out_opt->count() ? out_flag : ".";
      auto art = fbee::run_example(example_name, out_dir, seed_flag);
      std::printf("example %s: exit %d; artifacts in %s\n",
                  example_name.c_str(), art.exit_code, out_dir.c_str());
      return art.exit_code;
    }

    if (!config_opt->count())
      throw fbee::ConfigError("this subcommand needs --config");
    fbee::ProblemConfig cfg = fbee::load_problem_config(config_path);
    if (solver_opt->count()) cfg.solver = solver_flag;
    if (out_opt->count()) cfg.out_dir = out_flag;
    if (seed_opt->count()) cfg.seed = seed_flag;
    if (certificate_opt->count()) cfg.certificate_out = certificate_flag;

    if (check_lyapunov->parsed()) {
      auto outcome = fbee::run_certificate_check(cfg);
      const std::filesystem::path path =
          cfg.certificate_out.empty()
              ? std::filesystem::path(cfg.out_dir) / "certificate.json"
              : std::filesystem::path(cfg.certificate_out);
      write_json_artifact(path, outcome.summary);
      std::printf("certificate %s (%s)\n", outcome.passed ? "pass" : "FAIL",
                  path.string().c_str());
      return outcome.passed ? 0 : 4;
    }

    if (convergence_cmd->parsed()) {
      auto study = fbee::convergence_study(cfg, cfg.steps_list);
      if (study.fitted_order)
        std::printf("observed order %.3f on %s (%s)\n", *study.fitted_order,
                    study.fitted_on.c_str(), study.csv_path.c_str());
      else
        std::printf("no order fit (%s)\n", study.csv_path.c_str());
      return 0;
    }

    if (solve_linear->parsed() && cfg.solver == "continuation")
      throw fbee::ConfigError(
          "solve-linear drives the direct routes; pick shooting, fredholm or "
          "riccati");
    if (solve_continuation->parsed()) {
      if (solver_opt->count() && solver_flag != "continuation")
        throw fbee::ConfigError(
            "solve-continuation fixes the solver; drop --solver");
      cfg.solver = "continuation";
    }
    auto art = fbee::run_problem(cfg, certificate_opt->count() > 0);
    if (art.exit_code == 4)
      std::printf("certificate failed; report in %s\n", cfg.out_dir.c_str());
    else
      std::printf("solved %s: mild residual %.3e; artifacts in %s\n",
                  cfg.label.c_str(),
                  art.report.at("residuals").at("mild").get<double>(),
                  cfg.out_dir.c_str());
    return art.exit_code;
  });
}
