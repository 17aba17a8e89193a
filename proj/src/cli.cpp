#include "fbee/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <string>
#include <utility>

#include "fbee/errors.hpp"
#include "fbee/linear_fbee.hpp"
#include "fbee/log.hpp"
#include "fbee/sampling.hpp"

namespace fbee {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

constexpr double kExampleCrossTol = 1e-5;

double now_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(
             clock::now().time_since_epoch())
      .count();
}

void reject_unknown_keys(const json& obj,
                         const std::set<std::string>& allowed,
                         const char* where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (allowed.count(it.key()) == 0)
      throw ConfigError(std::string("unknown field \"") + it.key() +
                        "\" in " + where);
  }
}

double require_positive(const json& j, const char* field) {
  if (!j.is_number())
    throw ConfigError(std::string(field) + " must be a number");
  const double v = j.get<double>();
  if (!(v > 0.0))
    throw ConfigError(std::string(field) + " must be positive");
  return v;
}

int require_positive_int(const json& j, const char* field) {
  if (!j.is_number_integer())
    throw ConfigError(std::string(field) + " must be an integer");
  const int v = j.get<int>();
  if (v < 1) throw ConfigError(std::string(field) + " must be at least 1");
  return v;
}

std::string format_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.16e", v);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw ConfigError("cannot write artifact file: " + path);
  out << content;
}

double max_node_gap(const TrajectoryPair& a, const TrajectoryPair& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.y.size(); ++k)
    d = std::max({d, (a.y[k] - b.y[k]).norm(), (a.psi[k] - b.psi[k]).norm()});
  return d;
}

double spectral_norm(const MatrixXd& m) {
  return m.jacobiSvd().singularValues()(0);
}

double min_symmetric_eigenvalue(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()));
  return es.eigenvalues().minCoeff();
}

LyapunovParams lyapunov_params_from_json(const json& j) {
  reject_unknown_keys(
      j, {"p1", "pbar0", "q0", "qbar0", "gamma", "theta", "m", "mbar"},
      "certificate params");
  LyapunovParams p;
  p.p1 = j.value("p1", p.p1);
  p.pbar0 = j.value("pbar0", p.pbar0);
  p.q0 = j.value("q0", p.q0);
  p.qbar0 = j.value("qbar0", p.qbar0);
  p.gamma = j.value("gamma", p.gamma);
  p.theta = j.value("theta", p.theta);
  p.m = j.value("m", p.m);
  p.mbar = j.value("mbar", p.mbar);
  return p;
}

json lyapunov_params_to_json(const LyapunovParams& p) {
  return {{"p1", p.p1},       {"pbar0", p.pbar0}, {"q0", p.q0},
          {"qbar0", p.qbar0}, {"gamma", p.gamma}, {"theta", p.theta},
          {"m", p.m},         {"mbar", p.mbar}};
}

ClosedFormFamily family_from_name(const std::string& name) {
  if (name == "general_drift") return ClosedFormFamily::GeneralDrift;
  if (name == "boundary_drift") return ClosedFormFamily::BoundaryDrift;
  if (name == "schur_coupling") return ClosedFormFamily::SchurCoupling;
  if (name == "shifted_terminal") return ClosedFormFamily::ShiftedTerminal;
  if (name == "contractive_terminal")
    return ClosedFormFamily::ContractiveTerminal;
  if (name == "combined_terminal") return ClosedFormFamily::CombinedTerminal;
  throw ConfigError("unknown certificate family \"" + name + "\"");
}

json margins_to_json(const CertificateMargins& m) {
  return {{"delta_tT", m.delta_tT},  {"delta_T", m.delta_T},
          {"delta_interior", m.delta_interior}, {"epsilon", m.epsilon},
          {"mu", m.mu},              {"K", m.K}};
}

json certificate_to_json(const LyapunovCertificate& cert) {
  json j = {{"verdict", to_string(cert.verdict)},
            {"margins", margins_to_json(cert.margins)},
            {"ball_radius", cert.sample_ball_radius},
            {"sample_budget", cert.sample_budget},
            {"seed", cert.seed}};
  if (cert.spec.params)
    j["params"] = lyapunov_params_to_json(*cert.spec.params);
  if (cert.worst)
    j["worst"] = {{"condition", cert.worst->condition},
                  {"margin", cert.worst->margin},
                  {"t", cert.worst->t}};
  return j;
}

// Default closed-form operator used to evaluate the energy balance when the
// run does not carry its own certificate (unit weights, zero drift, which
// every supported operator kind admits).
double energy_identity_default(const SpectralOperator& A,
                               const AffineGenerator& aff,
                               const TrajectoryPair& traj,
                               const TimeGrid& grid) {
  LyapunovSpec spec;
  spec.params = LyapunovParams{};
  auto draft = certificate_draft(A, spec, grid);
  return energy_identity_residual(A, aff, traj, draft);
}

TrajectoryPair dispatch_solver(const ProblemConfig& cfg, const TimeGrid& grid,
                               const LyapunovCertificate* cert,
                               json* report) {
  const GeneratorTriple& gen = cfg.gen;
  const bool linear = cfg.solver == "fredholm" || cfg.solver == "riccati" ||
                      cfg.solver == "shooting";
  if (linear && !gen.affine)
    throw ConfigError("solver \"" + cfg.solver +
                      "\" needs an affine generator; use continuation");

  if (cfg.solver == "fredholm")
    return solve_fredholm(gen.A, *gen.affine, cfg.x, grid);
  if (cfg.solver == "riccati")
    return solve_via_decoupling(gen.A, *gen.affine, cfg.x, grid);
  if (cfg.solver == "shooting") {
    ShootingResult res = solve_shooting_skew(gen.A, *gen.affine, cfg.x, grid);
    if (report)
      (*report)["margins"]["shooting_min_singular"] = res.min_singular_value;
    return std::move(res.traj);
  }
  if (cfg.solver == "continuation") {
    ContinuationState st =
        solve_continuation(gen.A, gen, cfg.x, grid, {}, cert, cfg.inner_tol,
                           cfg.max_inner, cfg.max_outer);
    if (report) {
      json levels = json::array();
      for (const auto& level : st.history)
        levels.push_back({{"rho", level.rho},
                          {"epsilon", level.epsilon},
                          {"iterations", level.iterations},
                          {"residual", level.residual}});
      (*report)["continuation"] = {{"levels", levels},
                                   {"size_constant", st.size_constant}};
    }
    return std::move(st.current);
  }
  throw ConfigError("unknown solver \"" + cfg.solver + "\"");
}

json base_report(const ProblemConfig& cfg) {
  return {{"generator", cfg.gen.name},
          {"label", cfg.label.empty() ? cfg.gen.name : cfg.label},
          {"solver", cfg.solver},
          {"seed", cfg.seed},
          {"grid", {{"horizon", cfg.horizon}, {"steps", cfg.steps}}}};
}

struct SolveRun {
  TrajectoryPair traj;
  json report;
  CertificateOutcome cert;
  bool certificate_failed = false;
  double start_ms = 0.0;
};

SolveRun execute(const ProblemConfig& cfg, bool want_certificate) {
  SolveRun run;
  run.start_ms = now_ms();
  run.report = base_report(cfg);

  if (want_certificate || cfg.certificate.has_value()) {
    run.cert = run_certificate_check(cfg);
    run.report["certificate"] = run.cert.summary;
    if (!run.cert.passed) {
      run.certificate_failed = true;
      return run;
    }
  }

  TimeGrid grid(cfg.horizon, cfg.steps);
  const double solve_start = now_ms();
  run.traj = dispatch_solver(
      cfg, grid, run.cert.attach ? &*run.cert.attach : nullptr, &run.report);
  run.report["timings_ms"]["solve"] = now_ms() - solve_start;

  auto prof = lipschitz_profile(cfg.gen, grid, cfg.ball_radius,
                                cfg.sample_budget, cfg.seed);
  run.report["margins"]["contraction"] =
      contraction_margin(prof, cfg.horizon, 1.0);
  run.report["residuals"]["mild"] = run.traj.mild_residual;
  if (cfg.gen.affine)
    run.report["residuals"]["energy_identity"] =
        energy_identity_default(cfg.gen.A, *cfg.gen.affine, run.traj, grid);
  else
    run.report["residuals"]["energy_identity"] = nullptr;
  run.report["declared_tolerance"] = run.traj.declared_tolerance;
  return run;
}

RunArtifacts finalize(const ProblemConfig& cfg, SolveRun&& run,
                      int exit_code) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  RunArtifacts art;
  art.exit_code = exit_code;
  run.report["exit_code"] = exit_code;
  run.report["timings_ms"]["total"] = now_ms() - run.start_ms;

  if (run.cert.requested) {
    art.certificate_json =
        cfg.certificate_out.empty()
            ? (fs::path(cfg.out_dir) / "certificate.json").string()
            : cfg.certificate_out;
    write_file(art.certificate_json, run.cert.summary.dump(2) + "\n");
  }
  if (!run.certificate_failed) {
    art.trajectory_csv = (fs::path(cfg.out_dir) / "trajectory.csv").string();
    write_file(art.trajectory_csv, trajectory_csv_text(run.traj));
  }
  art.report_json = (fs::path(cfg.out_dir) / "report.json").string();
  write_file(art.report_json, run.report.dump(2) + "\n");
  art.report = std::move(run.report);
  return art;
}

// Shared generator parameter sets of the example suite, kept in one place so
// the condition checks read the same matrices the builder used.
json example_params_internal(const std::string& canonical) {
  const json A = {{"kind", "symmetric_negative"},
                  {"eigenvalues", {-0.5, -1.0, -1.5, -2.0}}};
  if (canonical == "9.1")
    return {{"n", 4}, {"A", A}, {"Q", 1.0}, {"R", 1.0}, {"G", 0.0},
            {"B", 1.0}};
  if (canonical == "9.2")
    return {{"n", 4},   {"A", A},   {"Q", 1.0},
            {"R", 1.0}, {"G", 0.0}, {"B", 1.0},
            {"amplitude", 0.1}};
  if (canonical == "9.3")
    return {{"n", 32},     {"lambda", 1.0}, {"L", 1.0},
            {"M", 1.0},    {"N", 100.0},    {"f", 1.0},
            {"y_d", -0.5}, {"z", -0.5}};
  throw ConfigError("unknown example \"" + canonical +
                    "\"; expected 9.1, 9.2 or 9.3");
}

std::string canonical_example_name(const std::string& name) {
  if (name == "9.1" || name == "linear_convex") return "9.1";
  if (name == "9.2" || name == "aq") return "9.2";
  if (name == "9.3" || name == "parabolic") return "9.3";
  throw ConfigError("unknown example \"" + name +
                    "\"; expected 9.1, 9.2 or 9.3");
}

// Positive-definiteness of the cost data, shared by examples 9.1 and 9.2.
bool verify_cost_conditions(const json& params, int n, json* out) {
  const MatrixXd Q = matrix_from_json(params.at("Q"), n, n, "Q");
  const MatrixXd R = matrix_from_json(params.at("R"), n, n, "R");
  const MatrixXd G = matrix_from_json(params.at("G"), n, n, "G");
  const double q_min = min_symmetric_eigenvalue(Q);
  const double r_min = min_symmetric_eigenvalue(R);
  const double g_min = min_symmetric_eigenvalue(G);
  (*out)["Q_min"] = q_min;
  (*out)["R_min"] = r_min;
  (*out)["G_min"] = g_min;
  return q_min > 0.0 && r_min > 0.0 && g_min >= -tol::psd_slack;
}

// Sampled coupling condition of the bounded-drift example: the cost
// curvature must dominate ||F_y|| (||G_y|| + ||Q_y|| T) with room to spare.
bool verify_coupling_condition(const ProblemConfig& cfg, const json& params,
                               json* out) {
  const int n = cfg.gen.dim;
  const MatrixXd Q = matrix_from_json(params.at("Q"), n, n, "Q");
  const double qyy_min = min_symmetric_eigenvalue(Q);

  BallSampler sampler(n, cfg.ball_radius, cfg.seed);
  const VectorXd zero = VectorXd::Zero(n);
  double fy_sup = 0.0, qy_sup = 0.0, gy_sup = 0.0;
  for (int s = 0; s < cfg.sample_budget; ++s) {
    const VectorXd y = sampler.next();
    fy_sup = std::max(fy_sup, spectral_norm(cfg.gen.b_y(0.0, y, zero)));
    qy_sup = std::max(qy_sup, cfg.gen.g(0.0, y, zero).norm());
    gy_sup = std::max(gy_sup, cfg.gen.h(y).norm());
  }
  const double margin =
      qyy_min - fy_sup * (gy_sup + qy_sup * cfg.horizon);
  (*out)["Fy_sup"] = fy_sup;
  (*out)["Qy_sup"] = qy_sup;
  (*out)["Gy_sup"] = gy_sup;
  (*out)["coupling_margin"] = margin;
  return margin > 0.0;
}

json energy_bound_to_json(const EnergyBoundReport& rep) {
  json j = {{"fitted_L", rep.fitted_L},
            {"gronwall_constant", rep.gronwall_constant},
            {"joint_form", rep.joint_form},
            {"state",
             {{"lhs", rep.state.lhs},
              {"rhs", rep.state.rhs},
              {"holds", rep.state.holds}}}};
  if (rep.costate)
    j["costate"] = {{"lhs", rep.costate->lhs},
                    {"rhs", rep.costate->rhs},
                    {"holds", rep.costate->holds}};
  else
    j["costate"] = nullptr;
  return j;
}

std::optional<double> fit_order(const std::vector<double>& dts,
                                const std::vector<double>& residuals) {
  if (dts.size() < 2) return std::nullopt;
  for (double r : residuals)
    if (!(r > 1e-13) || !std::isfinite(r)) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < dts.size(); ++i) {
    mx += std::log(dts[i]);
    my += std::log(residuals[i]);
  }
  mx /= static_cast<double>(dts.size());
  my /= static_cast<double>(dts.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < dts.size(); ++i) {
    const double dx = std::log(dts[i]) - mx;
    num += dx * (std::log(residuals[i]) - my);
    den += dx * dx;
  }
  if (den == 0.0) return std::nullopt;
  return num / den;
}

}  // namespace

ProblemConfig parse_problem_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown_keys(doc,
                      {"generator", "operator", "horizon", "steps",
                       "initial_state", "solver", "label", "tolerances",
                       "ball_radius", "sample_budget", "seed", "out_dir",
                       "certificate", "convergence"},
                      "config");

  if (!doc.contains("generator") || !doc.at("generator").is_object())
    throw ConfigError("config needs a \"generator\" object");
  const json& gspec = doc.at("generator");
  reject_unknown_keys(gspec, {"name", "params"}, "generator");
  if (!gspec.contains("name") || !gspec.at("name").is_string())
    throw ConfigError("generator needs a \"name\" string");
  json params = gspec.value("params", json::object());
  if (doc.contains("operator")) {
    if (params.contains("A"))
      throw ConfigError(
          "operator specified twice: top-level \"operator\" and generator "
          "params \"A\"");
    params["A"] = doc.at("operator");
  }

  ProblemConfig cfg;
  cfg.gen = make_builtin(gspec.at("name").get<std::string>(), params);

  if (!doc.contains("horizon"))
    throw ConfigError("config needs a \"horizon\" number");
  cfg.horizon = require_positive(doc.at("horizon"), "horizon");
  if (!doc.contains("steps"))
    throw ConfigError("config needs a \"steps\" integer");
  cfg.steps = require_positive_int(doc.at("steps"), "steps");

  if (!doc.contains("initial_state"))
    throw ConfigError("config needs an \"initial_state\"");
  cfg.x = vector_from_json(doc.at("initial_state"), cfg.gen.dim,
                           "initial_state");
  if (cfg.gen.A.dim != cfg.gen.dim)
    throw ConfigError("operator and generator dimensions differ");

  cfg.solver = doc.value("solver", std::string("riccati"));
  if (cfg.solver != "shooting" && cfg.solver != "fredholm" &&
      cfg.solver != "riccati" && cfg.solver != "continuation")
    throw ConfigError("unknown solver \"" + cfg.solver + "\"");
  cfg.label = doc.value("label", cfg.gen.name);

  if (doc.contains("tolerances")) {
    const json& t = doc.at("tolerances");
    reject_unknown_keys(t, {"inner", "max_inner", "max_outer"}, "tolerances");
    if (t.contains("inner"))
      cfg.inner_tol = require_positive(t.at("inner"), "tolerances.inner");
    if (t.contains("max_inner"))
      cfg.max_inner =
          require_positive_int(t.at("max_inner"), "tolerances.max_inner");
    if (t.contains("max_outer"))
      cfg.max_outer =
          require_positive_int(t.at("max_outer"), "tolerances.max_outer");
  }
  if (doc.contains("ball_radius"))
    cfg.ball_radius = require_positive(doc.at("ball_radius"), "ball_radius");
  if (doc.contains("sample_budget"))
    cfg.sample_budget =
        require_positive_int(doc.at("sample_budget"), "sample_budget");
  if (doc.contains("seed")) {
    const json& s = doc.at("seed");
    if (!s.is_number_integer() ||
        (!s.is_number_unsigned() && s.get<std::int64_t>() < 0))
      throw ConfigError("seed must be a nonnegative integer");
    cfg.seed = s.get<std::uint64_t>();
  }
  cfg.out_dir = doc.value("out_dir", std::string("."));
  if (doc.contains("certificate")) {
    if (!doc.at("certificate").is_object())
      throw ConfigError("certificate must be an object");
    cfg.certificate = doc.at("certificate");
  }
  if (doc.contains("convergence")) {
    const json& c = doc.at("convergence");
    reject_unknown_keys(c, {"steps_list", "order_floor"}, "convergence");
    if (c.contains("steps_list")) {
      if (!c.at("steps_list").is_array() || c.at("steps_list").empty())
        throw ConfigError("convergence.steps_list must be a nonempty array");
      cfg.steps_list.clear();
      for (const auto& e : c.at("steps_list"))
        cfg.steps_list.push_back(
            require_positive_int(e, "convergence.steps_list entry"));
    }
    if (c.contains("order_floor")) {
      if (!c.at("order_floor").is_number())
        throw ConfigError("convergence.order_floor must be a number");
      cfg.order_floor = c.at("order_floor").get<double>();
    }
  }
  return cfg;
}

ProblemConfig load_problem_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  try {
    return parse_problem_config(doc);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
}

CertificateOutcome run_certificate_check(const ProblemConfig& cfg) {
  CertificateOutcome out;
  out.requested = true;

  const json req = cfg.certificate.value_or(json::object());
  reject_unknown_keys(req,
                      {"method", "family", "params", "requested_delta",
                       "ball_radius", "sample_budget"},
                      "certificate");
  const std::string method = req.value("method", std::string("monotone"));
  const double ball = req.contains("ball_radius")
                          ? require_positive(req.at("ball_radius"),
                                             "certificate.ball_radius")
                          : cfg.ball_radius;
  const int budget = req.contains("sample_budget")
                         ? require_positive_int(req.at("sample_budget"),
                                                "certificate.sample_budget")
                         : cfg.sample_budget;
  TimeGrid grid(cfg.horizon, cfg.steps);

  if (method == "monotone") {
    auto rep = check_monotone_generator(cfg.gen, grid, ball, budget, cfg.seed);
    out.passed = rep.holds;
    out.summary = {{"method", "monotone"},
                   {"holds", rep.holds},
                   {"delta", rep.delta},
                   {"terminal_margin", rep.terminal_margin},
                   {"ball_radius", rep.ball_radius},
                   {"sample_budget", rep.sample_budget},
                   {"seed", rep.seed}};
    return out;
  }

  const LyapunovParams params =
      lyapunov_params_from_json(req.value("params", json::object()));
  if (method == "closed_form") {
    const std::string family_name =
        req.value("family", std::string("general_drift"));
    auto cert = check_closed_form_family(cfg.gen.A, cfg.gen, params, grid,
                                         family_from_name(family_name), ball,
                                         budget, cfg.seed);
    out.passed = cert.verdict != CertificateVerdict::Fail;
    out.summary = certificate_to_json(cert);
    out.summary["method"] = "closed_form";
    out.summary["family"] = family_name;
    out.attach = std::move(cert);
    return out;
  }
  if (method == "wellposedness") {
    LyapunovSpec spec;
    spec.params = params;
    auto draft = certificate_draft(cfg.gen.A, spec, grid);
    auto cert = check_wellposedness_conditions(
        cfg.gen.A, cfg.gen, std::move(draft), ball, budget,
        req.value("requested_delta", 0.0), cfg.seed);
    out.passed = cert.verdict != CertificateVerdict::Fail;
    out.summary = certificate_to_json(cert);
    out.summary["method"] = "wellposedness";
    out.attach = std::move(cert);
    return out;
  }
  throw ConfigError("unknown certificate method \"" + method +
                    "\"; expected monotone, closed_form or wellposedness");
}

RunArtifacts run_problem(const ProblemConfig& cfg, bool want_certificate) {
  SolveRun run = execute(cfg, want_certificate);
  return finalize(cfg, std::move(run), run.certificate_failed ? 4 : 0);
}

json example_params(const std::string& name) {
  return example_params_internal(canonical_example_name(name));
}

ProblemConfig example_config(const std::string& name) {
  const std::string canonical = canonical_example_name(name);
  const json params = example_params_internal(canonical);

  ProblemConfig cfg;
  cfg.solver = "continuation";
  cfg.label = "example-" + canonical;
  if (canonical == "9.3") {
    cfg.gen = make_builtin("parabolic_logistic", params);
    cfg.horizon = 1.0;
    cfg.steps = 200;
    // Smooth initial profile in the diffusion eigenbasis.
    cfg.x = VectorXd::Zero(cfg.gen.dim);
    for (int i = 0; i < cfg.gen.dim; ++i)
      cfg.x[i] = 0.6 / ((i + 1.0) * (i + 1.0));
  } else {
    cfg.gen = make_builtin(canonical == "9.1" ? "linear_convex" : "aq",
                           params);
    cfg.horizon = 1.0;
    cfg.steps = 2000;
    cfg.x = VectorXd(4);
    cfg.x << 0.8, -0.3, 0.5, -0.1;
  }
  return cfg;
}

RunArtifacts run_example(const std::string& name, const std::string& out_dir,
                         std::uint64_t seed) {
  const std::string canonical = canonical_example_name(name);
  ProblemConfig cfg = example_config(canonical);
  cfg.out_dir = out_dir;
  cfg.seed = seed;
  const json params = example_params_internal(canonical);
  TimeGrid grid(cfg.horizon, cfg.steps);

  json ex;
  ex["name"] = canonical;
  json conditions;
  bool conditions_hold = true;
  if (canonical == "9.1" || canonical == "9.2") {
    conditions_hold = verify_cost_conditions(params, cfg.gen.dim, &conditions);
    if (canonical == "9.2")
      conditions_hold =
          verify_coupling_condition(cfg, params, &conditions) &&
          conditions_hold;
  } else {
    const double f_min =
        vector_from_json(params.at("f"), cfg.gen.dim, "f").minCoeff();
    conditions["lambda"] = params.at("lambda").get<double>();
    conditions["L"] = params.at("L").get<double>();
    conditions["M"] = params.at("M").get<double>();
    conditions["N"] = params.at("N").get<double>();
    conditions["f_min"] = f_min;
    conditions_hold = params.at("lambda").get<double>() > 0.0 &&
                      params.at("L").get<double>() > 0.0 &&
                      params.at("M").get<double>() >= 0.0 &&
                      params.at("N").get<double>() > 0.0 && f_min >= 0.0;
  }
  conditions["hold"] = conditions_hold;
  ex["conditions"] = conditions;

  if (!conditions_hold) {
    SolveRun failed;
    failed.start_ms = now_ms();
    failed.report = base_report(cfg);
    failed.report["example"] = ex;
    failed.certificate_failed = true;  // suppress the (absent) trajectory
    return finalize(cfg, std::move(failed), 4);
  }

  SolveRun run = execute(cfg, false);
  int exit_code = 0;
  bool cross_check_failed = false;
  double cross_gap = 0.0;

  if (canonical == "9.1") {
    auto dec = solve_via_decoupling(cfg.gen.A, *cfg.gen.affine, cfg.x, grid);
    cross_gap = max_node_gap(run.traj, dec);
    ex["cross_check"] = {{"route", "riccati"},
                         {"gap", cross_gap},
                         {"tolerance", kExampleCrossTol},
                         {"holds", cross_gap <= kExampleCrossTol}};
    cross_check_failed = cross_gap > kExampleCrossTol;
  } else if (canonical == "9.2") {
    ex["energy_bound"] = energy_bound_to_json(energy_bound_check(
        cfg.gen, run.traj));
  } else {
    double psi_inf = 0.0, state_sup = 0.0, costate_sup = 0.0;
    for (std::size_t k = 0; k < run.traj.psi.size(); ++k) {
      psi_inf = std::max(psi_inf,
                         run.traj.psi[k].cwiseAbs().maxCoeff());
      state_sup = std::max(state_sup, run.traj.y[k].norm());
      costate_sup = std::max(costate_sup, run.traj.psi[k].norm());
    }
    const double weight_N = params.at("N").get<double>();
    const double psi_ceiling =
        std::sqrt(params.at("L").get<double>() * weight_N);
    const bool psi_bounded = psi_inf <= psi_ceiling;
    const double visited = std::max(state_sup, costate_sup);
    auto mono = check_monotone_generator(cfg.gen, grid, visited,
                                         cfg.sample_budget, cfg.seed);
    ex["psi_bound"] = {{"sup", psi_inf},
                       {"ceiling", psi_ceiling},
                       {"holds", psi_bounded}};
    ex["sampled_certificate"] = {{"holds", mono.holds},
                                 {"delta", mono.delta},
                                 {"terminal_margin", mono.terminal_margin},
                                 {"ball_radius", visited},
                                 {"sample_budget", mono.sample_budget},
                                 {"seed", mono.seed}};
    if (!psi_bounded || !mono.holds) exit_code = 4;
  }

  run.report["example"] = ex;
  RunArtifacts art = finalize(cfg, std::move(run), exit_code);
  if (cross_check_failed) {
    char buf[96];
    std::snprintf(buf, sizeof(buf),
                  "example 9.1 cross-check gap %.3e exceeds %.0e", cross_gap,
                  kExampleCrossTol);
    throw NonConvergenceError(buf);
  }
  return art;
}

ConvergenceStudy convergence_study(const ProblemConfig& cfg,
                                   const std::vector<int>& steps_list) {
  if (steps_list.empty())
    throw ConfigError("convergence study needs at least one grid size");

  ConvergenceStudy study;
  std::vector<double> dts, milds, energies;
  for (int steps : steps_list) {
    if (steps < 1) throw ConfigError("grid sizes must be at least 1");
    TimeGrid grid(cfg.horizon, steps);
    ConvergenceRow row;
    row.steps = steps;
    const double t0 = now_ms();
    TrajectoryPair traj;
    try {
      traj = dispatch_solver(cfg, grid, nullptr, nullptr);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "grid size %d failed: %s", steps,
                    e.what());
      throw NonConvergenceError(buf);
    }
    row.runtime_ms = now_ms() - t0;
    row.mild_residual = traj.mild_residual;
    row.energy_identity_residual =
        cfg.gen.affine
            ? energy_identity_default(cfg.gen.A, *cfg.gen.affine, traj, grid)
            : std::numeric_limits<double>::quiet_NaN();
    study.rows.push_back(row);
    dts.push_back(grid.dt());
    milds.push_back(row.mild_residual);
    energies.push_back(row.energy_identity_residual);
  }

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  std::string csv = "steps,mild_residual,energy_identity_residual,runtime_ms\n";
  for (const auto& row : study.rows) {
    csv += std::to_string(row.steps);
    csv += ',';
    csv += format_full(row.mild_residual);
    csv += ',';
    csv += format_full(row.energy_identity_residual);
    char tail[32];
    std::snprintf(tail, sizeof(tail), ",%.3f\n", row.runtime_ms);
    csv += tail;
  }
  study.csv_path = (fs::path(cfg.out_dir) / "convergence.csv").string();
  write_file(study.csv_path, csv);

  // The discretization is witnessed by whichever residual sits above
  // roundoff and the solver's own floor; exact discrete solvers push the
  // mild defect to machine precision, iterative ones hold it at a constant
  // tolerance, so the steeper of the two fits is the honest order.
  const auto mild_fit = fit_order(dts, milds);
  const auto energy_fit = fit_order(dts, energies);
  if (mild_fit && (!energy_fit || *mild_fit >= *energy_fit)) {
    study.fitted_order = mild_fit;
    study.fitted_on = "mild_residual";
  } else if (energy_fit) {
    study.fitted_order = energy_fit;
    study.fitted_on = "energy_identity_residual";
  }
  if (steps_list.size() < 2)
    log::info("%s", "single grid size; no order fit performed");

  if (study.fitted_order && cfg.order_floor > 0.0 &&
      *study.fitted_order < cfg.order_floor) {
    char buf[96];
    std::snprintf(buf, sizeof(buf),
                  "observed order %.3f on %s is below the floor %.2f",
                  *study.fitted_order, study.fitted_on.c_str(),
                  cfg.order_floor);
    throw NonConvergenceError(buf);
  }
  return study;
}

std::string trajectory_csv_text(const TrajectoryPair& traj) {
  if (traj.y.empty()) throw ConfigError("trajectory is empty");
  const int n = static_cast<int>(traj.y.front().size());
  std::string csv = "t";
  for (int i = 0; i < n; ++i) csv += ",y_" + std::to_string(i);
  for (int i = 0; i < n; ++i) csv += ",psi_" + std::to_string(i);
  csv += '\n';
  for (int k = 0; k <= traj.grid.steps; ++k) {
    csv += format_full(traj.grid.node(k));
    for (int i = 0; i < n; ++i) {
      csv += ',';
      csv += format_full(traj.y[k](i));
    }
    for (int i = 0; i < n; ++i) {
      csv += ',';
      csv += format_full(traj.psi[k](i));
    }
    csv += '\n';
  }
  return csv;
}

int exit_code_for(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 5;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 5;
  } catch (const SingularOperatorError& e) {
    std::fprintf(stderr, "singular operator: %s\n", e.what());
    return 2;
  } catch (const NonConvergenceError& e) {
    std::fprintf(stderr, "non-convergence: %s\n", e.what());
    return 3;
  }
}

}  // namespace fbee
