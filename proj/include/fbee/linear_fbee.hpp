#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "fbee/generator.hpp"
#include "fbee/spectral_operator.hpp"
#include "fbee/trajectory.hpp"

namespace fbee {

// Discrete two-parameter evolution operator of y' = (A + B(t))y, the product
// of the one-step implicit exponential trapezoid propagators from node
// t_index up to node s_index.
Eigen::MatrixXd evolution_operator(const SpectralOperator& A,
                                   const std::function<Eigen::MatrixXd(double)>& B,
                                   const TimeGrid& grid, int s_index,
                                   int t_index);

// Direct solve of the coupled affine system by collocation of the backward
// mild equation: psi is characterized by a Fredholm equation of the second
// kind whose kernel is built from the forward and backward evolution
// operators, discretized with trapezoid weights on the grid nodes.  The
// resulting n(N+1) square system is solved by dense LU.
TrajectoryPair solve_fredholm(const SpectralOperator& A,
                              const AffineGenerator& aff,
                              const Eigen::VectorXd& x, const TimeGrid& grid);

struct ShootingResult {
  TrajectoryPair traj;
  Eigen::VectorXd psi0;
  Eigen::MatrixXd shooting_operator;
  double min_singular_value = 0.0;
};

// Reduction of the affine system to a single linear solve for psi(0): the
// doubled system (y; psi) is integrated as a group (so A must be the skew
// kind), and the terminal condition becomes an n x n system for psi(0).
ShootingResult solve_shooting_skew(const SpectralOperator& A,
                                   const AffineGenerator& aff,
                                   const Eigen::VectorXd& x,
                                   const TimeGrid& grid);

struct RiccatiSolution {
  TimeGrid grid;
  std::vector<Eigen::MatrixXd> P;      // nodes 0..N
  std::vector<Eigen::VectorXd> p;      // nodes 0..N
  std::vector<Eigen::MatrixXd> P_mid;  // panel midpoints 0..N-1
};

enum class RiccatiRoute {
  Differential,  // backward Runge-Kutta on the matrix differential equation
  MildPicard,    // fixed-point iteration on the mild integral form
};

// Decoupling field of the affine system: P solves the matrix Riccati
// equation P' + P(A + B11) + (A* + B22)P + P B12 P + B21 = 0, P(T) = H, and
// p the linear offset equation with terminal h0.  The differential route
// integrates on the requested grid and on its halving and demands agreement;
// P_mid then carries the fine-grid midpoint values.
RiccatiSolution integrate_riccati(const SpectralOperator& A,
                                  const AffineGenerator& aff,
                                  const TimeGrid& grid,
                                  RiccatiRoute route = RiccatiRoute::Differential);

struct MonotoneIterationResult {
  std::vector<std::vector<Eigen::MatrixXd>> iterates;  // P_0 = 0, P_1, ...
  bool converged = false;
  int iterations = 0;
  double last_increment = 0.0;
  // Smallest eigenvalue of P_m - P_{m+1} (m >= 1) over all nodes; the
  // iteration is monotone when this stays above a small negative slack.
  double ordering_slack = 0.0;
  // Smallest eigenvalue of any iterate at any node.
  double psd_slack = 0.0;
};

// Constructive approximation of the Riccati solution under the sign
// hypotheses H >= 0, B21(t) >= 0, -B12(t) >= 0, B22 = B11*: freezing the
// feedback at the previous iterate yields linear Lyapunov equations whose
// solutions decrease monotonically to the Riccati solution.
MonotoneIterationResult riccati_monotone_iteration(const SpectralOperator& A,
                                                   const AffineGenerator& aff,
                                                   const TimeGrid& grid,
                                                   int max_iter = 50);

// Solve the coupled system through the decoupling field: integrate the
// Riccati pair (P, p), close the forward loop with the feedback B12 P, and
// recover psi = P y + p.
TrajectoryPair solve_via_decoupling(const SpectralOperator& A,
                                    const AffineGenerator& aff,
                                    const Eigen::VectorXd& x,
                                    const TimeGrid& grid);
TrajectoryPair solve_via_decoupling(const SpectralOperator& A,
                                    const AffineGenerator& aff,
                                    const Eigen::VectorXd& x,
                                    const TimeGrid& grid,
                                    const RiccatiSolution& ric);

struct DecouplingFieldReport {
  // Sup over interior nodes of the decoupling identity residual
  // K_t + K_y [Ay + b(t, y, K)] + A*K + g(t, y, K) with K = P y + p and
  // central time differences.
  double pde_residual = 0.0;
  // Sup over nodes of |psi_k - (P_k y_k + p_k)|.
  double representation_residual = 0.0;
  // |P_N y_N + p_N - h(y_N)|.
  double terminal_residual = 0.0;
};

// Check that an affine field (P, p) actually decouples a trajectory of the
// possibly nonlinear generator along that trajectory.
DecouplingFieldReport verify_decoupling_field(const SpectralOperator& A,
                                              const GeneratorTriple& gen,
                                              const RiccatiSolution& field,
                                              const TrajectoryPair& traj);

}  // namespace fbee
