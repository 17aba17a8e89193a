// Acceptance gate: exercises the library end to end and prints one PASS or
// FAIL line per criterion.  Exit status is the number of failed criteria, so
// 0 means the build is good.  Every tolerance is pinned here, next to the
// check it guards.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "fbee/cli.hpp"
#include "fbee/continuation.hpp"
#include "fbee/errors.hpp"
#include "fbee/generator.hpp"
#include "fbee/linear_fbee.hpp"
#include "fbee/lyapunov.hpp"
#include "fbee/spectral_operator.hpp"

using namespace fbee;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

int g_failures = 0;

void verdict(int idx, const char* what, bool ok, const std::string& detail) {
  std::printf("%s %d: %s (%s)\n", ok ? "PASS" : "FAIL", idx, what,
              detail.c_str());
  if (!ok) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(const char* f, ...) {
  char buf[256];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

VectorXd vec1(double v) { return VectorXd::Constant(1, v); }

MatrixXd random_matrix(std::mt19937_64& rng, int n, double scale) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = scale * u(rng);
  return m;
}

VectorXd random_vector(std::mt19937_64& rng, int n, double scale) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * u(rng);
  return v;
}

VectorXd random_unit(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  VectorXd v(n);
  do {
    for (int i = 0; i < n; ++i) v(i) = gauss(rng);
  } while (v.norm() < 1e-8);
  return v / v.norm();
}

double spectral_gap(const MatrixXd& a, const MatrixXd& b) {
  return (a - b).jacobiSvd().singularValues()(0);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("acceptance: cannot read " + path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

LyapunovCertificate unit_draft(const SpectralOperator& A,
                               const TimeGrid& grid) {
  LyapunovSpec spec;
  spec.params = LyapunovParams{};
  return certificate_draft(A, spec, grid);
}

// 1. The scalar benchmark problem: every solver route lands on the frozen
// costate value, at the stated grid, in under a second.
void criterion_scalar_benchmark() {
  constexpr double kPsi0 = 0.38583;
  constexpr double kTol = 1e-3;
  constexpr double kBudgetSeconds = 1.0;

  auto gen = make_builtin("monotone_toy", json::object());
  TimeGrid grid(1.0, 2000);
  const VectorXd x = vec1(1.0);

  double worst_gap = 0.0, slowest = 0.0;
  bool ok = true;
  const auto run = [&](const char* route, auto&& solve) {
    const auto t0 = std::chrono::steady_clock::now();
    TrajectoryPair traj = solve();
    const double secs = seconds_since(t0);
    const double gap = std::abs(traj.psi[0](0) - kPsi0);
    worst_gap = std::max(worst_gap, gap);
    slowest = std::max(slowest, secs);
    if (gap >= kTol || secs >= kBudgetSeconds) {
      ok = false;
      std::fprintf(stderr, "  %s: gap %.2e, %.2f s\n", route, gap, secs);
    }
  };
  run("fredholm",
      [&] { return solve_fredholm(gen.A, *gen.affine, x, grid); });
  run("riccati",
      [&] { return solve_via_decoupling(gen.A, *gen.affine, x, grid); });
  run("continuation", [&] {
    return solve_continuation(gen.A, gen, x, grid).current;
  });

  verdict(1, "scalar benchmark agreement across solver routes", ok,
          fmt("worst gap %.2e, slowest %.2f s", worst_gap, slowest));
}

// 2. Shooting through the rotation group reproduces the tangent growth of
// the costate and reports the conjugate point as a singular operator.
void criterion_shooting_tangent() {
  constexpr double kTol = 1e-6;

  SpectralOperator A = SpectralOperator::skew({}, 1);
  const int n = 1;
  auto aff = AffineGenerator::constant(
      MatrixXd::Zero(n, n), MatrixXd::Identity(n, n),
      MatrixXd::Identity(n, n), MatrixXd::Zero(n, n), VectorXd::Zero(n),
      VectorXd::Zero(n), MatrixXd::Zero(n, n), VectorXd::Zero(n));

  const double T = std::atan(1.0);  // pi / 4
  TimeGrid grid(T, 2000);
  ShootingResult res = solve_shooting_skew(A, aff, vec1(1.0), grid);
  const double gap = std::abs(res.psi0(0) - std::tan(T));

  const int code = exit_code_for([&]() -> int {
    TimeGrid conjugate(2.0 * std::atan(1.0), 100000);  // pi / 2
    solve_shooting_skew(A, aff, vec1(1.0), conjugate);
    return 0;
  });

  verdict(2, "shooting matches tangent growth and flags the conjugate point",
          gap < kTol && code == 2,
          fmt("gap %.2e, conjugate-point exit %d", gap, code));
}

// 3. The monotone Riccati iteration on random sign-definite instances:
// ordered, positive semidefinite, and convergent to the direct integration.
void criterion_monotone_riccati() {
  constexpr double kOrderingSlack = -1e-10;
  constexpr double kPsdSlack = -1e-10;
  constexpr double kLimitTol = 1e-6;
  constexpr int kInstances = 20;
  constexpr int n = 8;

  std::mt19937_64 rng(8011);
  std::uniform_real_distribution<double> eig(-2.0, -0.25);

  double worst_order = 0.0, worst_psd = 0.0, worst_limit = 0.0;
  int worst_iters = 0;
  bool ok = true;
  for (int inst = 0; inst < kInstances; ++inst) {
    std::vector<double> eigs(n);
    for (double& e : eigs) e = eig(rng);
    SpectralOperator A = SpectralOperator::symmetric_negative(eigs);

    const MatrixXd B11 = random_matrix(rng, n, 0.3);
    const MatrixXd C = random_matrix(rng, n, 0.3);
    const MatrixXd D = random_matrix(rng, n, 0.3);
    const MatrixXd E = random_matrix(rng, n, 0.3);
    auto aff = AffineGenerator::constant(
        B11, -C * C.transpose(), D * D.transpose(), B11.transpose(),
        VectorXd::Zero(n), VectorXd::Zero(n), E * E.transpose(),
        VectorXd::Zero(n));

    TimeGrid grid(1.0, 200);
    MonotoneIterationResult res = riccati_monotone_iteration(A, aff, grid);
    RiccatiSolution direct = integrate_riccati(A, aff, grid);

    double limit_gap = 0.0;
    for (std::size_t k = 0; k < direct.P.size(); ++k)
      limit_gap = std::max(
          limit_gap,
          (res.iterates.back()[k] - direct.P[k]).cwiseAbs().maxCoeff());

    worst_order = std::min(worst_order, res.ordering_slack);
    worst_psd = std::min(worst_psd, res.psd_slack);
    worst_limit = std::max(worst_limit, limit_gap);
    worst_iters = std::max(worst_iters, res.iterations);
    if (!res.converged || res.ordering_slack < kOrderingSlack ||
        res.psd_slack < kPsdSlack || limit_gap > kLimitTol)
      ok = false;
  }

  verdict(3, "monotone Riccati iteration is ordered and hits the limit", ok,
          fmt("ordering %.1e, psd %.1e, limit gap %.1e, max %d iters",
              worst_order, worst_psd, worst_limit, worst_iters));
}

// 4. The energy identity residual behaves like a second-order quadrature
// defect: each grid doubling shrinks it by a factor of 4, within 20%.
void criterion_energy_identity_order() {
  constexpr double kRatioLo = 3.2;
  constexpr double kRatioHi = 4.8;
  constexpr int kInstances = 5;
  constexpr int n = 4;

  std::mt19937_64 rng(8042);
  std::uniform_real_distribution<double> freq(0.4, 1.6);

  double ratio_lo = 1e300, ratio_hi = 0.0;
  bool ok = true;
  for (int inst = 0; inst < kInstances; ++inst) {
    SpectralOperator A = SpectralOperator::skew({freq(rng), freq(rng)}, 0);
    const MatrixXd E = random_matrix(rng, n, 0.25);
    auto aff = AffineGenerator::constant(
        random_matrix(rng, n, 0.25), random_matrix(rng, n, 0.25),
        random_matrix(rng, n, 0.25), random_matrix(rng, n, 0.25),
        random_vector(rng, n, 0.3), random_vector(rng, n, 0.3),
        E * E.transpose(), random_vector(rng, n, 0.3));
    const VectorXd x = random_vector(rng, n, 0.8);

    double residual[3];
    const int ladder[3] = {500, 1000, 2000};
    for (int i = 0; i < 3; ++i) {
      TimeGrid grid(0.8, ladder[i]);
      TrajectoryPair traj = solve_shooting_skew(A, aff, x, grid).traj;
      residual[i] =
          energy_identity_residual(A, aff, traj, unit_draft(A, grid));
    }
    for (int i = 0; i < 2; ++i) {
      const double ratio = residual[i] / residual[i + 1];
      ratio_lo = std::min(ratio_lo, ratio);
      ratio_hi = std::max(ratio_hi, ratio);
      if (ratio < kRatioLo || ratio > kRatioHi) ok = false;
    }
  }

  verdict(4, "energy identity residual shrinks fourfold per grid doubling",
          ok, fmt("doubling ratios in [%.2f, %.2f]", ratio_lo, ratio_hi));
}

// 5. The resolvent-smoothed operator keeps its dissipation inequalities at
// machine precision and its semigroup converges as the smoothing recedes.
void criterion_yosida() {
  constexpr double kSlack = -1e-12;
  constexpr double kSemigroupTol = 1e-2;
  constexpr int kVectors = 100;

  SpectralOperator sym =
      SpectralOperator::symmetric_negative({-5.0, -3.1, -1.7, -0.9, -0.2});
  SpectralOperator skw = SpectralOperator::skew({0.7, 2.3}, 2);

  std::mt19937_64 rng(8055);
  double worst = 0.0;
  bool ok = true;
  for (double lambda : {0.1, 1.0, 10.0, 100.0}) {
    SpectralOperator sym_l = yosida_apply(sym, lambda);
    SpectralOperator skw_l = yosida_apply(skw, lambda);
    const double bound = -lambda * sym.sigma0 / (lambda + sym.sigma0);
    for (int i = 0; i < kVectors; ++i) {
      const VectorXd xs = random_unit(rng, sym.dim);
      const double sym_slack = bound - sym_l.apply(xs).dot(xs);
      const VectorXd xk = random_unit(rng, skw.dim);
      const double skw_slack =
          -(skw_l.apply(xk).dot(xk) + skw_l.adjoint_apply(xk).dot(xk));
      worst = std::min({worst, sym_slack, skw_slack});
      if (sym_slack < kSlack || skw_slack < kSlack) ok = false;
    }
  }

  double deviation = 0.0;
  for (const SpectralOperator& A : {sym, skw}) {
    SpectralOperator smoothed = yosida_apply(A, 1000.0);
    for (int k = 0; k <= 10; ++k) {
      const double t = 0.025 * k;
      deviation = std::max(deviation,
                           spectral_gap(semigroup_matrix(smoothed, t),
                                        semigroup_matrix(A, t)));
    }
  }
  if (deviation >= kSemigroupTol) ok = false;

  verdict(5, "smoothed operator keeps dissipation and tracks the semigroup",
          ok, fmt("worst slack %.1e, semigroup deviation %.2e", worst,
                  deviation));
}

// 6. The worst-mode decay envelope is strictly decreasing with the
// advertised endpoint behavior.
void criterion_decay_profile() {
  constexpr double kEndpointTol = 1e-6;
  constexpr int kTriples = 1000;

  std::mt19937_64 rng(8066);
  std::uniform_real_distribution<double> weight(0.05, 2.0);
  std::uniform_real_distribution<double> kappa(1e-6, 49.0);
  std::uniform_real_distribution<double> gap(1e-3, 5.0);

  bool ok = true;
  double worst_endpoint = 0.0;
  for (int i = 0; i < kTriples; ++i) {
    const double a = weight(rng), b = weight(rng);
    const double k1 = kappa(rng);
    const double k2 = k1 + gap(rng);
    if (!(decay_profile(a, b, k1) > decay_profile(a, b, k2))) ok = false;

    const double at_zero = std::abs(decay_profile(a, b, 1e-9) - (a + b));
    const double at_tail = std::abs(decay_profile(a, b, 50.0) - b / 50.0);
    worst_endpoint = std::max({worst_endpoint, at_zero, at_tail});
    if (at_zero >= kEndpointTol || at_tail >= kEndpointTol) ok = false;
  }

  verdict(6, "decay envelope is strictly monotone with the stated limits",
          ok, fmt("worst endpoint defect %.1e", worst_endpoint));
}

// 7. Every certified builtin solves to full coupling within the inner
// tolerance, and the sign-flipped toy is refused certification.
void criterion_certified_builtins() {
  constexpr double kResidualTol = 1e-6;

  struct Entry {
    const char* name;
    json params;
    int steps;
  };
  const json toy_op = {{"kind", "symmetric_negative"},
                       {"eigenvalues", {-1.0}}};
  const std::vector<Entry> entries = {
      {"lq", json::object(), 400},
      {"linear_convex", json::object(), 400},
      {"aq", json::object(), 400},
      {"parabolic_logistic", json::object(), 200},
      {"custom_affine", {{"A", toy_op}, {"B12", -1.0}, {"B21", 1.0}}, 400},
      {"monotone_toy", json::object(), 400},
  };
  const ClosedFormFamily families[] = {
      ClosedFormFamily::GeneralDrift,      ClosedFormFamily::BoundaryDrift,
      ClosedFormFamily::SchurCoupling,     ClosedFormFamily::ShiftedTerminal,
      ClosedFormFamily::ContractiveTerminal,
      ClosedFormFamily::CombinedTerminal,
  };

  bool ok = true;
  int certified = 0;
  double worst_residual = 0.0;
  std::string detail;
  for (const Entry& e : entries) {
    auto gen = make_builtin(e.name, e.params);
    TimeGrid grid(1.0, e.steps);

    bool holds =
        check_monotone_generator(gen, grid, 2.0, 256).holds;
    for (int f = 0; !holds && f < 6; ++f)
      holds = check_closed_form_family(gen.A, gen, LyapunovParams{}, grid,
                                       families[f], 2.0)
                  .verdict != CertificateVerdict::Fail;
    if (!holds) continue;

    ++certified;
    VectorXd x = VectorXd::Zero(gen.dim);
    for (int i = 0; i < gen.dim; ++i) x(i) = 0.6 / ((i + 1.0) * (i + 1.0));
    ContinuationState st = solve_continuation(gen.A, gen, x, grid);
    const double residual = st.history.back().residual;
    worst_residual = std::max(worst_residual, residual);
    if (st.history.back().rho != 1.0 || residual > kResidualTol) {
      ok = false;
      detail += fmt(" %s residual %.1e;", e.name, residual);
    }
  }

  // The certificate that clears the toy must refuse its sign flip: the
  // monotone screen, and the balanced-coupling operator check that issues
  // Both for the unflipped twin.
  auto flipped = make_builtin(
      "custom_affine", {{"A", toy_op}, {"B12", 1.0}, {"B21", -1.0}});
  auto toy = make_builtin("monotone_toy", json::object());
  TimeGrid grid(1.0, 400);
  LyapunovSpec spec;
  LyapunovParams balanced;
  balanced.gamma = 1.0;
  spec.params = balanced;
  const auto refusal = check_wellposedness_conditions(
      flipped.A, flipped, certificate_draft(flipped.A, spec, grid), 2.0, 256);
  const auto twin = check_wellposedness_conditions(
      toy.A, toy, certificate_draft(toy.A, spec, grid), 2.0, 256);
  const bool flipped_refused =
      !check_monotone_generator(flipped, grid, 2.0, 256).holds &&
      refusal.verdict == CertificateVerdict::Fail &&
      twin.verdict == CertificateVerdict::Both;
  if (!flipped_refused) ok = false;

  verdict(7, "certified builtins reach full coupling; flipped toy refused",
          ok && certified > 0,
          fmt("%d certified, worst residual %.1e, flipped refused %s%s",
              certified, worst_residual, flipped_refused ? "yes" : "no",
              detail.c_str()));
}

// 8. The fitted stability constant is a property of the problem, not of the
// probe: insensitive to the perturbation size and tame across coupling.
void criterion_stability_constant() {
  constexpr double kSizeSpread = 1.1;   // < 10% across perturbation sizes
  constexpr double kRhoSpread = 2.0;    // < 2x across coupling levels
  const double deltas[3] = {0.01, 0.005, 0.0025};

  auto gen = make_builtin("monotone_toy", json::object());
  TimeGrid grid(1.0, 800);
  const VectorXd x = vec1(1.0);
  auto prof = lipschitz_profile(gen, grid, 2.0, 256, 0);

  bool ok = true;
  double k_lo = 1e300, k_hi = 0.0, spread_hi = 0.0;
  for (double rho : {0.0, 0.5, 1.0}) {
    TrajectoryPair base = picard_solve_at_rho(gen.A, gen, rho, {}, x, grid,
                                              TrajectoryPair{});
    std::vector<TrajectoryPair> perturbed;
    std::vector<PerturbationDelta> ds;
    for (double d : deltas) {
      HomotopyForcing forcing;
      forcing.h0 = vec1(d);
      perturbed.push_back(picard_solve_at_rho(gen.A, gen, rho, forcing, x,
                                              grid, base));
      PerturbationDelta delta;
      delta.dh0 = vec1(d);
      ds.push_back(delta);
    }
    AprioriBoundReport rep = apriori_bound_check(base, perturbed, ds, prof,
                                                 rho);
    if (!rep.all_hold) ok = false;

    double lo = 1e300, hi = 0.0;
    for (const auto& entry : rep.entries) {
      lo = std::min(lo, entry.stability_ratio);
      hi = std::max(hi, entry.stability_ratio);
    }
    spread_hi = std::max(spread_hi, hi / lo);
    if (hi / lo >= kSizeSpread) ok = false;
    k_lo = std::min(k_lo, rep.stability_constant);
    k_hi = std::max(k_hi, rep.stability_constant);
  }
  if (k_hi / k_lo >= kRhoSpread) ok = false;

  verdict(8, "fitted stability constant is probe-independent", ok,
          fmt("size spread %.4f, coupling spread %.3f", spread_hi,
              k_hi / k_lo));
}

// 9. The bundled example catalog: conditions verified, solves cross-checked,
// the zero-drift variant bit-identical to its linear twin, all inside the
// time budget.
void criterion_example_catalog() {
  constexpr double kBudgetSeconds = 60.0;

  const auto t0 = std::chrono::steady_clock::now();
  namespace fs = std::filesystem;
  const fs::path root = "acceptance_artifacts";
  fs::remove_all(root);

  bool ok = true;
  std::string detail;
  try {
    RunArtifacts a91 = run_example("9.1", (root / "ex91").string());
    RunArtifacts a92 = run_example("9.2", (root / "ex92").string());
    RunArtifacts a93 = run_example("9.3", (root / "ex93").string());

    const double gap =
        a91.report.at("example").at("cross_check").at("gap").get<double>();
    if (a91.exit_code != 0 || a92.exit_code != 0 || a93.exit_code != 0)
      ok = false;
    if (!a93.report.at("example").at("psi_bound").at("holds").get<bool>())
      ok = false;
    if (!a93.report.at("example")
             .at("sampled_certificate")
             .at("holds")
             .get<bool>())
      ok = false;

    json params = example_params("9.2");
    params["amplitude"] = 0.0;
    ProblemConfig off = example_config("9.2");
    off.gen = make_builtin("aq", params);
    off.out_dir = (root / "ex92_zero_drift").string();
    RunArtifacts zero = run_problem(off);
    const bool identical =
        slurp(zero.trajectory_csv) == slurp(a91.trajectory_csv);
    if (!identical) ok = false;

    const double elapsed = seconds_since(t0);
    if (elapsed >= kBudgetSeconds) ok = false;
    detail = fmt("cross-check gap %.1e, zero-drift identical %s, %.1f s",
                 gap, identical ? "yes" : "no", elapsed);
  } catch (const std::exception& e) {
    ok = false;
    detail = fmt("exception: %s", e.what());
  }

  verdict(9, "example catalog verified, cross-checked and reproducible", ok,
          detail);
}

}  // namespace

int main() {
  criterion_scalar_benchmark();
  criterion_shooting_tangent();
  criterion_monotone_riccati();
  criterion_energy_identity_order();
  criterion_yosida();
  criterion_decay_profile();
  criterion_certified_builtins();
  criterion_stability_constant();
  criterion_example_catalog();

  std::printf("%d of 9 criteria passed\n", 9 - g_failures);
  return g_failures;
}
