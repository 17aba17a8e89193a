#pragma once

#include <Eigen/Dense>
#include <vector>

// Generator A of the evolution, realized by spectral truncation.
//
// Two structural kinds are supported:
//
//   SymmetricNegative:  A* = A with sup sigma(A) = -sigma0 < 0.  Realized as
//                       diag(mu_1, ..., mu_n), all mu_i <= -sigma0.  The
//                       semigroup e^{At} is a strict contraction and exists
//                       for t >= 0 only (the backward flow is not defined).
//
//   Skew:               A* = -A, sigma0 = 0.  Realized as a block-diagonal
//                       matrix of 2x2 rotation generators
//                           a·I + w·J,   J = [[0, 1], [-1, 0]],
//                       plus optional zero modes.  Genuine skew operators
//                       have a = 0 and generate the rotation group
//                           e^{At} = [[cos wt, sin wt], [-sin wt, cos wt]];
//                       resolvent smoothing (yosida_apply) produces blocks
//                       with a < 0 of the same structural kind.
//
// All blockwise exponentials are exact, so the dense and spectral
// realizations agree to roundoff.

namespace fbee {

enum class OperatorKind { SymmetricNegative, Skew };

struct SpectralOperator {
  OperatorKind kind;
  int dim = 0;
  // Decay margin: sup Re sigma(A) = -sigma0.  Strictly positive exactly for
  // the SymmetricNegative kind.
  double sigma0 = 0.0;

  // SymmetricNegative data: one eigenvalue per axis.
  std::vector<double> eigenvalues;

  // Skew data: one (decay, omega) pair per 2x2 block, then zero_modes
  // trailing axes on which A acts as 0.
  std::vector<double> block_decay;
  std::vector<double> block_omega;
  int zero_modes = 0;

  /// Builds a symmetric negative operator from its eigenvalue list.
  /// Throws std::invalid_argument unless every eigenvalue is < 0.
  static SpectralOperator symmetric_negative(std::vector<double> eigenvalues);

  /// Builds a skew operator from rotation frequencies (each w != 0 spawns a
  /// 2x2 block) and a count of zero modes.
  static SpectralOperator skew(std::vector<double> frequencies,
                               int zero_modes = 0);

  Eigen::MatrixXd dense() const;

  // Operator 2-norm (spectral radius; the realization is normal).
  double norm() const;

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;          // A x
  Eigen::VectorXd adjoint_apply(const Eigen::VectorXd& x) const;  // A* x
};

// Uniform partition of [0, T] with nodes t_k = k T / N.
struct TimeGrid {
  double horizon = 0.0;
  int steps = 0;

  TimeGrid() = default;  // empty sentinel for not-yet-assigned results
  TimeGrid(double T, int N);

  double dt() const { return horizon / steps; }
  double node(int k) const { return horizon * k / steps; }
};

/// e^{At} x, computed blockwise.  t < 0 is rejected for the
/// SymmetricNegative kind and inverts the group for the Skew kind.
Eigen::VectorXd semigroup_apply(const SpectralOperator& A, double t,
                                const Eigen::VectorXd& x);

/// e^{A*t} x (the adjoint semigroup, used by backward sweeps).
Eigen::VectorXd adjoint_semigroup_apply(const SpectralOperator& A, double t,
                                        const Eigen::VectorXd& x);

/// Dense e^{At}; exact blockwise exponential.
Eigen::MatrixXd semigroup_matrix(const SpectralOperator& A, double t);

/// Dense e^{A*t}.
Eigen::MatrixXd adjoint_semigroup_matrix(const SpectralOperator& A, double t);

/// Yosida approximation A_lambda = lambda A (lambda - A)^{-1}, lambda > 0.
/// Returns a bounded operator of the same structural kind.  Satisfies
///   <A_lambda x, x> <= -lambda sigma0 / (lambda + sigma0) |x|^2  (symmetric)
///   <(A_lambda + A_lambda*) x, x> <= 0                           (skew)
SpectralOperator yosida_apply(const SpectralOperator& A, double lambda);

/// One exponential-trapezoid step of the variation-of-constants formula on
/// panel [t_k, t_{k+1}]:
///
///   e^{A dt} x + dt/2 (e^{A dt} f(t_k) + f(t_{k+1})).
///
/// This single quadrature rule (second order on smooth forcing) is used by
/// every integral and evolution in the library.
Eigen::VectorXd duhamel_step(const SpectralOperator& A, const TimeGrid& grid,
                             int k, const Eigen::VectorXd& f_k,
                             const Eigen::VectorXd& f_k1,
                             const Eigen::VectorXd& x);

}  // namespace fbee
