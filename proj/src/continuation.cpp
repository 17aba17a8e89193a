#include "fbee/continuation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>
#include <vector>

#include "fbee/errors.hpp"
#include "fbee/log.hpp"

namespace fbee {
namespace {

using Eigen::VectorXd;

VectorXd forcing_at(const std::function<VectorXd(double)>& f, double t, int n,
                    const char* name) {
  if (!f) return VectorXd::Zero(n);
  VectorXd v = f(t);
  if (v.size() != n)
    throw ConfigError(std::string(name) + " forcing has wrong dimension");
  return v;
}

// Frozen level-rho forcings along an iterate: F = rho b + b0, G = rho g + g0
// node by node, terminal = rho h(y_N) + h0.
void freeze_along(const GeneratorTriple& gen, double rho,
                  const HomotopyForcing& fc, const TimeGrid& grid,
                  const std::vector<VectorXd>& y,
                  const std::vector<VectorXd>& psi, std::vector<VectorXd>& F,
                  std::vector<VectorXd>& G, VectorXd& terminal) {
  const int n = gen.dim;
  const int N = grid.steps;
  F.resize(N + 1);
  G.resize(N + 1);
  for (int k = 0; k <= N; ++k) {
    const double t = grid.node(k);
    F[k] = forcing_at(fc.b0, t, n, "b0");
    G[k] = forcing_at(fc.g0, t, n, "g0");
    if (rho != 0.0) {
      F[k] += rho * gen.b(t, y[k], psi[k]);
      G[k] += rho * gen.g(t, y[k], psi[k]);
    }
  }
  terminal = fc.h0.size() > 0 ? fc.h0 : VectorXd::Zero(n);
  if (rho != 0.0) terminal += rho * gen.h(y[N]);
}

double pair_distance(const std::vector<VectorXd>& ya,
                     const std::vector<VectorXd>& yb,
                     const std::vector<VectorXd>& pa,
                     const std::vector<VectorXd>& pb) {
  double d = 0.0;
  for (std::size_t k = 0; k < ya.size(); ++k)
    d = std::max({d, (ya[k] - yb[k]).norm(), (pa[k] - pb[k]).norm()});
  return d;
}

void validate_level_inputs(const SpectralOperator& A,
                           const GeneratorTriple& gen, double rho,
                           const HomotopyForcing& forcing, const VectorXd& x,
                           const TimeGrid& grid) {
  if (gen.dim != A.dim)
    throw ConfigError("generator and operator dimensions differ");
  if (x.size() != gen.dim) throw ConfigError("initial state has wrong size");
  if (grid.steps < 1) throw ConfigError("grid needs at least one step");
  if (!(rho >= 0.0 && rho <= 1.0))
    throw ConfigError("homotopy level must lie in [0, 1]");
  if (forcing.h0.size() != 0 && forcing.h0.size() != gen.dim)
    throw ConfigError("h0 forcing has wrong dimension");
}

TrajectoryPair picard_impl(const SpectralOperator& A,
                           const GeneratorTriple& gen, double rho,
                           const HomotopyForcing& forcing, const VectorXd& x,
                           const TimeGrid& grid,
                           const TrajectoryPair& warm_start, double inner_tol,
                           int max_inner, int* iterations_out) {
  validate_level_inputs(A, gen, rho, forcing, x, grid);
  if (!(inner_tol > 0.0)) throw ConfigError("inner tolerance must be positive");
  if (max_inner < 1) throw ConfigError("max_inner must be at least 1");

  const int n = gen.dim;
  const int N = grid.steps;

  std::vector<VectorXd> y, psi;
  if (warm_start.y.empty()) {
    y.assign(N + 1, VectorXd::Zero(n));
    psi.assign(N + 1, VectorXd::Zero(n));
  } else {
    if (static_cast<int>(warm_start.y.size()) != N + 1 ||
        static_cast<int>(warm_start.psi.size()) != N + 1 ||
        warm_start.y[0].size() != n)
      throw ConfigError("warm start does not match the grid");
    y = warm_start.y;
    psi = warm_start.psi;
  }

  std::vector<VectorXd> F, G;
  VectorXd terminal;

  auto accept = [&](double residual, int iterations) {
    TrajectoryPair out;
    out.grid = grid;
    out.y = std::move(y);
    out.psi = std::move(psi);
    out.mild_residual = residual;
    out.declared_tolerance = inner_tol;
    out.solver_tag = SolverTag::Continuation;
    if (iterations_out != nullptr) *iterations_out = iterations;
    return out;
  };

  // At rho = 0 the frozen forcings do not depend on the iterate, so one
  // sweep pair lands the fixed point exactly.
  if (rho == 0.0) {
    freeze_along(gen, rho, forcing, grid, y, psi, F, G, terminal);
    y = forward_sweep(A, grid, x, F);
    psi = backward_sweep(A, grid, terminal, G);
    const double res = mild_residual(A, grid, y, psi, F, G, terminal);
    return accept(res, 1);
  }

  double prev_dist = std::numeric_limits<double>::infinity();
  int growth_streak = 0;
  for (int it = 1; it <= max_inner; ++it) {
    freeze_along(gen, rho, forcing, grid, y, psi, F, G, terminal);
    std::vector<VectorXd> y_next = forward_sweep(A, grid, x, F);
    std::vector<VectorXd> psi_next = backward_sweep(A, grid, terminal, G);
    const double dist = pair_distance(y_next, y, psi_next, psi);
    y = std::move(y_next);
    psi = std::move(psi_next);

    if (!std::isfinite(dist) || dist > tol::growth_limit) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "no contraction at rho = %.6f (blow-up)",
                    rho);
      throw NonConvergenceError(buf);
    }
    if (dist < inner_tol) {
      freeze_along(gen, rho, forcing, grid, y, psi, F, G, terminal);
      const double res = mild_residual(A, grid, y, psi, F, G, terminal);
      if (res <= inner_tol) return accept(res, it);
    }
    growth_streak = dist > prev_dist ? growth_streak + 1 : 0;
    if (growth_streak >= 5) {
      char buf[96];
      std::snprintf(buf, sizeof(buf),
                    "no contraction at rho = %.6f (distance growing)", rho);
      throw NonConvergenceError(buf);
    }
    prev_dist = dist;
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf),
                "no contraction at rho = %.6f within %d iterations", rho,
                max_inner);
  throw NonConvergenceError(buf);
}

double trapezoid(const TimeGrid& grid, const std::vector<double>& v) {
  double s = 0.0;
  for (int k = 0; k < grid.steps; ++k) s += 0.5 * (v[k] + v[k + 1]);
  return s * grid.dt();
}

// <A* psi, psi>: nonpositive for the symmetric kind, zero for the skew kind.
double adjoint_dissipation(const SpectralOperator& A, const VectorXd& psi) {
  return A.adjoint_apply(psi).dot(psi);
}

}  // namespace

TrajectoryPair picard_solve_at_rho(const SpectralOperator& A,
                                   const GeneratorTriple& gen, double rho,
                                   const HomotopyForcing& forcing,
                                   const VectorXd& x, const TimeGrid& grid,
                                   const TrajectoryPair& warm_start,
                                   double inner_tol, int max_inner) {
  return picard_impl(A, gen, rho, forcing, x, grid, warm_start, inner_tol,
                     max_inner, nullptr);
}

ContinuationState solve_continuation(const SpectralOperator& A,
                                     const GeneratorTriple& gen,
                                     const VectorXd& x, const TimeGrid& grid,
                                     const HomotopyForcing& forcing,
                                     const LyapunovCertificate* certificate,
                                     double inner_tol, int max_inner,
                                     int max_outer) {
  validate_level_inputs(A, gen, 0.0, forcing, x, grid);
  if (!(inner_tol > 0.0)) throw ConfigError("inner tolerance must be positive");
  if (max_inner < 1) throw ConfigError("max_inner must be at least 1");
  if (max_outer < 1) throw ConfigError("max_outer must be at least 1");
  if (!(gen.flags.lipschitz && gen.flags.differentiable))
    log::info(
        "generator '%s' is not flagged uniformly Lipschitz and "
        "differentiable; continuation convergence is not guaranteed",
        gen.name.c_str());
  if (certificate == nullptr)
    log::info("%s", "no certificate attached; continuation runs without a "
                    "step guarantee");
  else if (certificate->verdict == CertificateVerdict::Fail)
    log::info("%s", "attached certificate verdict is Fail; running anyway");

  ContinuationState st;
  st.forcing = forcing;
  st.inner_tol = inner_tol;
  st.max_inner = max_inner;
  st.max_outer = max_outer;

  const double eps_initial = 0.5;
  int iterations = 0;
  TrajectoryPair traj =
      picard_impl(A, gen, 0.0, forcing, x, grid, TrajectoryPair{},
                  st.inner_tol, st.max_inner, &iterations);
  st.history.push_back({0.0, 0.0, iterations, traj.mild_residual});

  double eps = eps_initial;
  int attempts = 1;
  while (st.rho < 1.0) {
    if (attempts >= st.max_outer) {
      char buf[96];
      std::snprintf(buf, sizeof(buf),
                    "continuation exceeded %d outer steps at rho = %.6f",
                    st.max_outer, st.rho);
      throw NonConvergenceError(buf);
    }
    const double target = std::min(1.0, st.rho + eps);
    ++attempts;
    try {
      TrajectoryPair cand =
          picard_impl(A, gen, target, forcing, x, grid, traj, st.inner_tol,
                      st.max_inner, &iterations);
      st.history.push_back(
          {target, target - st.rho, iterations, cand.mild_residual});
      st.rho = target;
      traj = std::move(cand);
      eps = std::min(eps * tol::epsilon_growth, eps_initial);
    } catch (const NonConvergenceError&) {
      eps *= 0.5;
      if (eps < tol::epsilon_floor) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "continuation stalled at rho = %.6f",
                      st.rho);
        throw NonConvergenceError(buf);
      }
      log::debug("homotopy step to rho = %.6f rejected; epsilon now %.3e",
                 target, eps);
    }
  }
  st.epsilon = eps;

  const int n = gen.dim;
  double sup_y = 0.0, sup_psi = 0.0;
  for (int k = 0; k <= grid.steps; ++k) {
    sup_y = std::max(sup_y, traj.y[k].norm());
    sup_psi = std::max(sup_psi, traj.psi[k].norm());
  }
  const VectorXd zero = VectorXd::Zero(n);
  std::vector<double> data_norm(grid.steps + 1);
  for (int k = 0; k <= grid.steps; ++k) {
    const double t = grid.node(k);
    data_norm[k] = gen.b(t, zero, zero).norm() + gen.g(t, zero, zero).norm() +
                   forcing_at(forcing.b0, t, n, "b0").norm() +
                   forcing_at(forcing.g0, t, n, "g0").norm();
  }
  double denom = x.norm() + gen.h(zero).norm() + trapezoid(grid, data_norm);
  if (forcing.h0.size() > 0) denom += forcing.h0.norm();
  st.size_constant = denom > 0.0 ? (sup_y + sup_psi) / denom : 0.0;

  st.current = std::move(traj);
  return st;
}

double contraction_margin(const LipschitzProfile& profile, double T,
                          double rho) {
  const int m = static_cast<int>(profile.L_by.size());
  if (m < 1 || profile.L_gpsi.size() != profile.L_by.size())
    throw ConfigError("contraction_margin needs matching per-node rates");
  if (!(T >= 0.0)) throw ConfigError("horizon must be nonnegative");
  if (!(rho >= 0.0 && rho <= 1.0))
    throw ConfigError("homotopy level must lie in [0, 1]");
  if (m == 1 || T == 0.0) return 0.0;

  const int N = m - 1;
  const double dt = T / N;
  std::vector<double> cum_g(m, 0.0), tail_b(m, 0.0);
  for (int i = 1; i <= N; ++i)
    cum_g[i] = cum_g[i - 1] + 0.5 * dt * (profile.L_gpsi[i - 1] + profile.L_gpsi[i]);
  for (int i = N - 1; i >= 0; --i)
    tail_b[i] = tail_b[i + 1] + 0.5 * dt * (profile.L_by[i] + profile.L_by[i + 1]);

  double int_g = 0.0, int_b = 0.0;
  for (int i = 0; i < N; ++i) {
    int_g += 0.5 * dt *
             (std::exp(rho * cum_g[i]) + std::exp(rho * cum_g[i + 1]));
    int_b += 0.5 * dt *
             (std::exp(rho * tail_b[i]) + std::exp(rho * tail_b[i + 1]));
  }
  const double backward_factor =
      std::exp(rho * cum_g[N]) * profile.sup_h_y + profile.sup_g_y * int_g;
  const double forward_factor = profile.sup_b_psi * int_b;
  return rho * rho * backward_factor * forward_factor;
}

AprioriBoundReport apriori_bound_check(
    const TrajectoryPair& base, const std::vector<TrajectoryPair>& perturbed,
    const std::vector<PerturbationDelta>& deltas,
    const LipschitzProfile& profile, double rho) {
  if (perturbed.size() != deltas.size())
    throw ConfigError("need exactly one delta per perturbed solve");
  if (base.y.empty()) throw ConfigError("base trajectory is empty");
  if (!(rho >= 0.0 && rho <= 1.0))
    throw ConfigError("homotopy level must lie in [0, 1]");
  const int N = base.grid.steps;
  const int n = static_cast<int>(base.y[0].size());
  if (static_cast<int>(profile.L_by.size()) != N + 1 ||
      profile.L_gpsi.size() != profile.L_by.size())
    throw ConfigError("profile was sampled on a different grid");

  const double dt = base.grid.dt();
  std::vector<double> cum_g(N + 1, 0.0), tail_b(N + 1, 0.0);
  for (int i = 1; i <= N; ++i)
    cum_g[i] = cum_g[i - 1] + 0.5 * dt * (profile.L_gpsi[i - 1] + profile.L_gpsi[i]);
  for (int i = N - 1; i >= 0; --i)
    tail_b[i] = tail_b[i + 1] + 0.5 * dt * (profile.L_by[i] + profile.L_by[i + 1]);
  const double K_forward = std::exp(rho * tail_b[0]);
  const double K_backward = std::exp(rho * cum_g[N]);

  AprioriBoundReport rep;
  rep.all_hold = true;
  for (std::size_t j = 0; j < perturbed.size(); ++j) {
    const TrajectoryPair& p = perturbed[j];
    if (p.grid.steps != N || p.grid.horizon != base.grid.horizon)
      throw ConfigError("perturbed solve uses a different grid");
    const PerturbationDelta& d = deltas[j];

    std::vector<double> ny(N + 1), npsi(N + 1), nb0(N + 1), ng0(N + 1),
        sq(N + 1);
    for (int k = 0; k <= N; ++k) {
      ny[k] = (p.y[k] - base.y[k]).norm();
      npsi[k] = (p.psi[k] - base.psi[k]).norm();
      const double t = base.grid.node(k);
      nb0[k] = forcing_at(d.db0, t, n, "db0").norm();
      ng0[k] = forcing_at(d.dg0, t, n, "dg0").norm();
      sq[k] = nb0[k] * nb0[k] + ng0[k] * ng0[k];
    }
    const double lhs_y = *std::max_element(ny.begin(), ny.end());
    const double lhs_psi = *std::max_element(npsi.begin(), npsi.end());
    const double norm_dx = d.dx.size() > 0 ? d.dx.norm() : 0.0;
    const double norm_dh0 = d.dh0.size() > 0 ? d.dh0.norm() : 0.0;

    std::vector<double> wy(N + 1), wpsi(N + 1);
    for (int k = 0; k <= N; ++k) {
      wpsi[k] = std::exp(rho * tail_b[k]) * npsi[k];
      wy[k] = std::exp(rho * cum_g[k]) * ny[k];
    }
    AprioriBoundEntry e;
    e.state.lhs = lhs_y;
    e.state.rhs = rho * profile.sup_b_psi * trapezoid(base.grid, wpsi) +
                  K_forward * (norm_dx + trapezoid(base.grid, nb0));
    e.costate.lhs = lhs_psi;
    e.costate.rhs = rho * (K_backward * profile.sup_h_y * ny[N] +
                           profile.sup_g_y * trapezoid(base.grid, wy)) +
                    K_backward * (norm_dh0 + trapezoid(base.grid, ng0));
    e.state.holds = e.state.lhs <= (1.0 + rep.slack) * e.state.rhs;
    e.costate.holds = e.costate.lhs <= (1.0 + rep.slack) * e.costate.rhs;

    const double numer = lhs_y * lhs_y + lhs_psi * lhs_psi;
    const double denom = norm_dx * norm_dx + norm_dh0 * norm_dh0 +
                         trapezoid(base.grid, sq);
    if (denom > 0.0)
      e.stability_ratio = numer / denom;
    else
      e.stability_ratio =
          numer > 1e-24 ? std::numeric_limits<double>::infinity() : 0.0;

    rep.all_hold = rep.all_hold && e.state.holds && e.costate.holds;
    rep.stability_constant =
        std::max(rep.stability_constant, e.stability_ratio);
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

EnergyBoundReport energy_bound_check(const GeneratorTriple& gen,
                                     const TrajectoryPair& traj,
                                     const HomotopyForcing& forcing) {
  if (traj.y.empty()) throw ConfigError("trajectory is empty");
  const int n = gen.dim;
  if (traj.y[0].size() != n)
    throw ConfigError("trajectory and generator dimensions differ");
  const TimeGrid& grid = traj.grid;
  const int N = grid.steps;
  const double T = grid.horizon;

  EnergyBoundReport rep;
  std::vector<double> nb0(N + 1), g_zero_norm(N + 1);
  double sup_y = 0.0, sup_psi = 0.0;
  bool costate_dissipative = true;
  const VectorXd zero = VectorXd::Zero(n);
  for (int k = 0; k <= N; ++k) {
    const double t = grid.node(k);
    const VectorXd& yk = traj.y[k];
    const VectorXd& pk = traj.psi[k];
    const VectorXd bk = gen.b(t, yk, pk);
    const VectorXd gk = gen.g(t, yk, pk);
    const double qb = bk.dot(yk) / (1.0 + yk.squaredNorm());
    const double qg = gk.dot(pk) / (1.0 + pk.squaredNorm());
    rep.fitted_L = std::max({rep.fitted_L, qb, qg});
    sup_y = std::max(sup_y, yk.norm());
    sup_psi = std::max(sup_psi, pk.norm());
    nb0[k] = forcing_at(forcing.b0, t, n, "b0").norm();

    const VectorXd b_no_psi = gen.b(t, yk, zero);
    if ((bk - b_no_psi).norm() > 1e-12 * (1.0 + bk.norm()))
      rep.joint_form = true;
    const VectorXd g_no_psi = gen.g(t, yk, zero);
    g_zero_norm[k] = g_no_psi.norm();
    const double channel =
        adjoint_dissipation(gen.A, pk) + (gk - g_no_psi).dot(pk);
    if (channel > 1e-10 * (1.0 + pk.squaredNorm())) costate_dissipative = false;
  }

  rep.gronwall_constant = std::exp(2.0 * rep.fitted_L * T);
  rep.state.lhs = sup_y;
  rep.state.rhs = rep.gronwall_constant *
                  (1.0 + traj.y[0].norm() + trapezoid(grid, nb0));
  rep.state.holds = rep.state.lhs <= (1.0 + rep.slack) * rep.state.rhs;

  if (costate_dissipative) {
    BoundCheck c;
    c.lhs = sup_psi;
    c.rhs = traj.psi[N].norm() +
            T * *std::max_element(g_zero_norm.begin(), g_zero_norm.end());
    c.holds = c.lhs <= (1.0 + rep.slack) * c.rhs;
    rep.costate = c;
  }
  return rep;
}

}  // namespace fbee
