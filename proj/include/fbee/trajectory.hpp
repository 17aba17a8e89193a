#pragma once

#include <Eigen/Dense>
#include <vector>

#include "fbee/generator.hpp"
#include "fbee/spectral_operator.hpp"

namespace fbee {

enum class SolverTag { Fredholm, Shooting, Riccati, Continuation };

// A discrete forward-backward trajectory on a shared grid.  mild_residual is
// the largest node deviation of (y, psi) from the composite-trapezoid
// variation-of-constants sweeps rerun with the trajectory's own forcing
// frozen, i.e. the defect of the discretized integral equations.  Solvers of
// order two leave a residual of order dt^2, which declared_tolerance
// reflects.
struct TrajectoryPair {
  TimeGrid grid;
  std::vector<Eigen::VectorXd> y;
  std::vector<Eigen::VectorXd> psi;
  double mild_residual = 0.0;
  double declared_tolerance = 0.0;
  SolverTag solver_tag = SolverTag::Fredholm;
};

// One forward pass of the exponential trapezoid rule: y[0] = x and
// y[k+1] = e^{A dt}(y[k] + dt/2 F[k]) + dt/2 F[k+1].  Unrolled, this is
// exactly the composite-trapezoid discretization of the mild equation.
std::vector<Eigen::VectorXd> forward_sweep(const SpectralOperator& A,
                                           const TimeGrid& grid,
                                           const Eigen::VectorXd& x,
                                           const std::vector<Eigen::VectorXd>& F);

// Backward counterpart driven by the adjoint semigroup: psi[N] = terminal and
// psi[k] = e^{A* dt}(psi[k+1] + dt/2 G[k+1]) + dt/2 G[k].
std::vector<Eigen::VectorXd> backward_sweep(
    const SpectralOperator& A, const TimeGrid& grid,
    const Eigen::VectorXd& terminal, const std::vector<Eigen::VectorXd>& G);

// Defect of a given trajectory against the discretized mild equations, with
// forcings F[k], G[k] and the terminal value frozen from the trajectory
// itself.  Returns the largest node deviation across both sweeps.
double mild_residual(const SpectralOperator& A, const TimeGrid& grid,
                     const std::vector<Eigen::VectorXd>& y,
                     const std::vector<Eigen::VectorXd>& psi,
                     const std::vector<Eigen::VectorXd>& F,
                     const std::vector<Eigen::VectorXd>& G,
                     const Eigen::VectorXd& terminal);

// Convenience overloads that freeze the forcing from an affine generator or
// a general triple evaluated along the trajectory.
double mild_residual(const SpectralOperator& A, const AffineGenerator& aff,
                     const TimeGrid& grid,
                     const std::vector<Eigen::VectorXd>& y,
                     const std::vector<Eigen::VectorXd>& psi);
double mild_residual(const SpectralOperator& A, const GeneratorTriple& gen,
                     const TimeGrid& grid,
                     const std::vector<Eigen::VectorXd>& y,
                     const std::vector<Eigen::VectorXd>& psi);

// Tolerance a second-order solver may honestly declare for its residual:
// a generous constant times dt^2, scaled by the size of the data it saw,
// floored at the library-wide residual target.
double second_order_tolerance(const TimeGrid& grid, double data_scale);

}  // namespace fbee
