#pragma once

// Central numerical tolerances and limits. Every solver and checker in the
// library reads its thresholds from here so that cross-route comparisons are
// made against one consistent set of constants.

namespace fbee::tol {

// Exact linear-algebra identities (semigroup law, blockwise-vs-dense agreement).
inline constexpr double linear_algebra = 1e-12;

// Default acceptance level for integral-equation defects of computed
// trajectories.
inline constexpr double residual = 1e-8;

// Slack allowed below zero when certifying positive semidefiniteness by
// eigenvalue: lambda_min >= -psd_slack counts as PSD.
inline constexpr double psd_slack = 1e-10;

// Norm threshold above which a backward Riccati sweep is declared to have
// blown up in finite time.
inline constexpr double riccati_blowup = 1e8;

// Minimal singular value below which the shooting operator (or any other
// square solve that admits a clean singularity) is declared non-invertible.
inline constexpr double singular = 1e-10;

// Condition-number ceiling for the dense discretized Fredholm system, and the
// size guard on its dimension n*(N+1).
inline constexpr double fredholm_condition_limit = 1e12;
inline constexpr int fredholm_size_limit = 20000;

// Step-halving self-check: integrating at N and 2N must agree to this level,
// otherwise the requested grid is too coarse for the instance.
inline constexpr double step_halving = 1e-6;

// Homotopy/Picard iteration defaults.
inline constexpr double inner_tol = 1e-8;
inline constexpr int max_inner = 200;
inline constexpr int max_outer = 64;
inline constexpr double epsilon_floor = 1e-4;
inline constexpr double epsilon_growth = 1.5;

// Default budget of quasi-random sample points used when certifying
// conditions over a ball in state space.
inline constexpr int sample_budget = 2048;

// Sampled Lipschitz or norm values above this are reported as a sign of
// unbounded growth on the declared ball.
inline constexpr double growth_limit = 1e6;

// Stopping increment for matrix fixed-point sweeps (mild Riccati iteration,
// monotone approximation).
inline constexpr double fixed_point = 1e-10;

}  // namespace fbee::tol
