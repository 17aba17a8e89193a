#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fbee/continuation.hpp"
#include "fbee/generator.hpp"
#include "fbee/lyapunov.hpp"
#include "fbee/tolerances.hpp"
#include "fbee/trajectory.hpp"

// Front-end plumbing: problem configs, solver dispatch, artifact writers and
// the bundled example suite.  Everything here is deterministic given the
// config and its seed; wall-clock timings are the single exception and are
// kept in their own report field so artifact comparison can ignore them.

namespace fbee {

// A fully validated problem description.  parse_problem_config builds the
// generator eagerly, so a constructed config is always runnable; tests and
// the example suite may also fill the struct directly with a hand-built
// generator (time-dependent forcing, for instance, has no JSON spelling).
struct ProblemConfig {
  GeneratorTriple gen;
  double horizon = 1.0;
  int steps = 200;
  Eigen::VectorXd x;
  std::string solver = "riccati";  // shooting | fredholm | riccati | continuation
  std::string label;               // echoed into artifacts, defaults to gen.name

  double inner_tol = tol::inner_tol;
  int max_inner = tol::max_inner;
  int max_outer = tol::max_outer;

  // One ball and one budget govern every sampled quantity of a run (profile,
  // certificate, condition checks), so the recorded seed describes all of it.
  double ball_radius = 2.0;
  int sample_budget = 256;
  std::uint64_t seed = 0;

  std::string out_dir = ".";
  std::string certificate_out;  // artifact path; empty means out_dir default

  // Raw certificate request as given in the config; absent means only run a
  // check when the caller asks for one explicitly.
  std::optional<nlohmann::json> certificate;

  // Convergence study controls.
  std::vector<int> steps_list = {250, 500, 1000, 2000};
  double order_floor = 1.8;  // 0 disables the fitted-order assertion
};

// Validates the document against the config schema and builds the generator.
// Unknown top-level fields are rejected so typos fail loudly.
ProblemConfig parse_problem_config(const nlohmann::json& doc);

// Reads and parses a config file; malformed JSON is reported as ConfigError
// with the parser's line diagnostics attached.
ProblemConfig load_problem_config(const std::string& path);

// Outcome of a certificate request.  `attach` carries the operator
// certificate when the method produces one (the monotone route certifies
// without an operator and attaches nothing).
struct CertificateOutcome {
  bool requested = false;
  bool passed = false;
  nlohmann::json summary;
  std::optional<LyapunovCertificate> attach;
};

CertificateOutcome run_certificate_check(const ProblemConfig& cfg);

struct RunArtifacts {
  int exit_code = 0;
  std::string trajectory_csv;    // written file paths; empty when not written
  std::string report_json;
  std::string certificate_json;
  nlohmann::json report;
};

// Dispatches the configured solver, writes trajectory.csv and report.json
// into cfg.out_dir (plus certificate.json when requested), and returns the
// artifacts.  Solver failures propagate as the library's typed errors; a
// failed certificate is reported through exit_code 4 instead, with the solve
// skipped.  `want_certificate` forces a check even without a config entry.
RunArtifacts run_problem(const ProblemConfig& cfg,
                         bool want_certificate = false);

// Desk-scale configs of the bundled example suite.  Accepted names are the
// catalog numbers 9.1, 9.2, 9.3 or the descriptive aliases linear_convex,
// aq, parabolic.
ProblemConfig example_config(const std::string& name);

// Generator parameter set behind example_config, exposed so callers can
// build variants (zeroing the drift amplitude of 9.2 recovers 9.1 exactly).
nlohmann::json example_params(const std::string& name);

// Builds the named example, verifies its well-posedness conditions (a
// violated condition exits 4), solves by continuation, and for 9.1 checks
// the trajectory against the Riccati decoupling route to 1e-5 (a missed
// cross-check raises NonConvergenceError).  Artifacts land in out_dir.
RunArtifacts run_example(const std::string& name, const std::string& out_dir,
                         std::uint64_t seed = 0);

struct ConvergenceRow {
  int steps = 0;
  double mild_residual = 0.0;
  double energy_identity_residual = 0.0;
  double runtime_ms = 0.0;
};

struct ConvergenceStudy {
  std::vector<ConvergenceRow> rows;
  // Least-squares slope of log residual against log dt; absent when fewer
  // than two grid sizes were run or every residual sits at roundoff.
  std::optional<double> fitted_order;
  std::string fitted_on;  // which residual column the fit used
  std::string csv_path;
};

// Solves the config on every grid size, writes convergence.csv into
// cfg.out_dir, and fits the observed order.  The fit prefers the mild
// residual and falls back to the energy identity residual when the solver
// leaves only roundoff.  Raises NonConvergenceError when a grid size fails
// or the fitted order drops below cfg.order_floor.
ConvergenceStudy convergence_study(const ProblemConfig& cfg,
                                   const std::vector<int>& steps_list);

// Full-precision trajectory table (t, y_0.., psi_0..), one node per row,
// 17 significant digits so cross-language comparison is exact.
std::string trajectory_csv_text(const TrajectoryPair& traj);

// Runs `body` and maps the library's error taxonomy to process exit codes:
// 2 singular operator, 3 non-convergence, 5 invalid configuration.  Messages
// go to stderr.  This is the single mapping used by the binary and by tests.
int exit_code_for(const std::function<int()>& body);

}  // namespace fbee
