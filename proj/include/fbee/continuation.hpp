#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "fbee/generator.hpp"
#include "fbee/lyapunov.hpp"
#include "fbee/spectral_operator.hpp"
#include "fbee/tolerances.hpp"
#include "fbee/trajectory.hpp"

namespace fbee {

// Inhomogeneous data of the homotopy family.  The system solved at level
// rho is
//
//   y'   =  A y   + rho b(t, y, psi) + b0(t)
//   psi' = -A*psi - rho g(t, y, psi) - g0(t),  psi(T) = rho h(y(T)) + h0,
//
// so rho = 0 is a decoupled pair of sweeps and rho = 1 the full problem.
// Empty callables and a size-zero h0 mean zero.
struct HomotopyForcing {
  std::function<Eigen::VectorXd(double)> b0, g0;
  Eigen::VectorXd h0;
};

// One accepted homotopy level: the step that reached it, the Picard
// iterations it cost, and the mild residual of the accepted iterate.
struct HomotopyLevel {
  double rho = 0.0;
  double epsilon = 0.0;
  int iterations = 0;
  double residual = 0.0;
};

struct ContinuationState {
  double rho = 0.0;
  double epsilon = 0.0;
  TrajectoryPair current;
  HomotopyForcing forcing;
  double inner_tol = tol::inner_tol;
  int max_inner = tol::max_inner;
  int max_outer = tol::max_outer;
  std::vector<HomotopyLevel> history;
  // Empirical constant of the size estimate: (||y||_inf + ||psi||_inf)
  // divided by ||x|| + ||h(0)|| + ||h0|| + int (||b(s,0,0)|| + ||b0|| +
  // ||g(s,0,0)|| + ||g0||) ds, or zero when that denominator vanishes.
  double size_constant = 0.0;
};

// Fixed-point sweep for the level-rho system: the nonlinearities are frozen
// along the current iterate, and the resulting decoupled Duhamel integrals
// produce the next one.  Stops once successive iterates move less than
// inner_tol in the node sup norm and the accepted iterate's mild residual is
// itself below inner_tol.  A warm_start with no nodes means the zero
// trajectory.  Divergence (the step growing five times in a row, or the
// iteration cap) raises NonConvergenceError so the caller can shrink its
// homotopy step.
TrajectoryPair picard_solve_at_rho(const SpectralOperator& A,
                                   const GeneratorTriple& gen, double rho,
                                   const HomotopyForcing& forcing,
                                   const Eigen::VectorXd& x,
                                   const TimeGrid& grid,
                                   const TrajectoryPair& warm_start,
                                   double inner_tol = tol::inner_tol,
                                   int max_inner = tol::max_inner);

// Drives rho from 0 to 1.  The rho = 0 level is the exact decoupled solve;
// each later level warm-starts from the previous one.  On an inner failure
// the step is halved (floor tol::epsilon_floor, below which the run is
// declared stalled and NonConvergenceError reports the last good rho); after
// a success it grows again by tol::epsilon_growth up to its initial value.
// A certificate, when supplied, is only inspected for its verdict: a failing
// or missing one is logged, not fatal, since the run itself is the test.
ContinuationState solve_continuation(
    const SpectralOperator& A, const GeneratorTriple& gen,
    const Eigen::VectorXd& x, const TimeGrid& grid,
    const HomotopyForcing& forcing = {},
    const LyapunovCertificate* certificate = nullptr,
    double inner_tol = tol::inner_tol, int max_inner = tol::max_inner,
    int max_outer = tol::max_outer);

// Small-data solvability product at homotopy level rho: the value
//
//   rho^2 [e^{rho I_g(T)} sup||h_y|| + sup||g_y|| int_0^T e^{rho I_g(s)} ds]
//        * [sup||b_psi|| int_0^T e^{rho J_b(s)} ds],
//
// where I_g(s) integrates the profile's per-node g_psi rates over [0, s] and
// J_b(s) the b_y rates over [s, T].  A value below 1 certifies convergence
// of the fixed-point iteration without any certificate.  The profile must
// have been sampled on a grid with nodes spanning [0, T].
double contraction_margin(const LipschitzProfile& profile, double T,
                          double rho);

// Data offsets that distinguish a perturbed solve from the base solve.
// Empty callables and size-zero vectors mean zero.
struct PerturbationDelta {
  Eigen::VectorXd dx;
  std::function<Eigen::VectorXd(double)> db0, dg0;
  Eigen::VectorXd dh0;
};

// Measured left side against evaluated right side of one inequality.
struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;  // lhs <= (1 + slack) * rhs
};

struct AprioriBoundEntry {
  BoundCheck state;    // sup-norm bound on y_pert - y_base
  BoundCheck costate;  // sup-norm bound on psi_pert - psi_base
  // Squared-difference quotient: (||dy||_inf^2 + ||dpsi||_inf^2) over
  // ||dx||^2 + ||dh0||^2 + int (||db0||^2 + ||dg0||^2) ds.
  double stability_ratio = 0.0;
};

struct AprioriBoundReport {
  std::vector<AprioriBoundEntry> entries;
  bool all_hold = false;
  // Largest stability_ratio over the batch: the fitted constant of the
  // squared stability estimate, reported rather than assumed.
  double stability_constant = 0.0;
  double slack = 0.05;
};

// Checks each perturbed solve against the Gronwall difference bounds
// implied by the profile's Lipschitz data:
//
//   ||dy||_inf  <= rho sup||b_psi|| int e^{rho J_b(s)} ||dpsi(s)|| ds
//                 + e^{rho J_b(0)} (||dx|| + int ||db0||),
//   ||dpsi||_inf <= rho [e^{rho I_g(T)} sup||h_y|| ||dy(T)||
//                 + sup||g_y|| int e^{rho I_g(s)} ||dy(s)|| ds]
//                 + e^{rho I_g(T)} (||dh0|| + int ||dg0||),
//
// with a multiplicative discretization slack, and fits the empirical
// constant of the squared stability estimate over the whole batch.  All
// trajectories must share the base grid; deltas run parallel to perturbed.
AprioriBoundReport apriori_bound_check(
    const TrajectoryPair& base, const std::vector<TrajectoryPair>& perturbed,
    const std::vector<PerturbationDelta>& deltas,
    const LipschitzProfile& profile, double rho);

struct EnergyBoundReport {
  // Smallest nonnegative L with <b, y> <= L(1 + ||y||^2) and
  // <g, psi> <= L(1 + ||psi||^2) along the trajectory nodes.
  double fitted_L = 0.0;
  // True when b evaluated with the costate zeroed differs from b along the
  // trajectory, i.e. the drift pairing leans on the boundedness of psi.
  bool joint_form = false;
  double gronwall_constant = 1.0;  // e^{2 L T}
  BoundCheck state;  // ||y||_inf <= e^{2LT} (1 + ||x|| + int ||b0||)
  // ||psi||_inf <= ||psi(T)|| + T sup||g(t, y, 0)||, emitted only when the
  // costate channel of the backward equation is dissipative along the
  // trajectory (<A* psi, psi> + <g(t,y,psi) - g(t,y,0), psi> <= 0 at every
  // node), which is what makes the bound derivable.
  std::optional<BoundCheck> costate;
  double slack = 0.05;
};

// Coercivity and uniform-boundedness diagnostics along a computed
// trajectory.  The forcing argument supplies the b0 whose integral enters
// the state bound; defaulted to zero it reproduces the unforced estimate.
EnergyBoundReport energy_bound_check(const GeneratorTriple& gen,
                                     const TrajectoryPair& traj,
                                     const HomotopyForcing& forcing = {});

}  // namespace fbee
