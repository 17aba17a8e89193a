#include "fbee/trajectory.hpp"

#include <algorithm>
#include <stdexcept>

#include "fbee/tolerances.hpp"

namespace fbee {

using Eigen::VectorXd;

std::vector<VectorXd> forward_sweep(const SpectralOperator& A,
                                    const TimeGrid& grid, const VectorXd& x,
                                    const std::vector<VectorXd>& F) {
  if (static_cast<int>(F.size()) != grid.steps + 1)
    throw std::invalid_argument("forward_sweep: one forcing value per node");
  const double dt = grid.dt();
  std::vector<VectorXd> y(grid.steps + 1);
  y[0] = x;
  for (int k = 0; k < grid.steps; ++k)
    y[k + 1] = semigroup_apply(A, dt, y[k] + 0.5 * dt * F[k]) +
               0.5 * dt * F[k + 1];
  return y;
}

std::vector<VectorXd> backward_sweep(const SpectralOperator& A,
                                     const TimeGrid& grid,
                                     const VectorXd& terminal,
                                     const std::vector<VectorXd>& G) {
  if (static_cast<int>(G.size()) != grid.steps + 1)
    throw std::invalid_argument("backward_sweep: one forcing value per node");
  const double dt = grid.dt();
  std::vector<VectorXd> psi(grid.steps + 1);
  psi[grid.steps] = terminal;
  for (int k = grid.steps - 1; k >= 0; --k)
    psi[k] = adjoint_semigroup_apply(A, dt, psi[k + 1] + 0.5 * dt * G[k + 1]) +
             0.5 * dt * G[k];
  return psi;
}

double mild_residual(const SpectralOperator& A, const TimeGrid& grid,
                     const std::vector<VectorXd>& y,
                     const std::vector<VectorXd>& psi,
                     const std::vector<VectorXd>& F,
                     const std::vector<VectorXd>& G,
                     const VectorXd& terminal) {
  const auto y_ref = forward_sweep(A, grid, y[0], F);
  const auto psi_ref = backward_sweep(A, grid, terminal, G);
  double defect = 0.0;
  for (int k = 0; k <= grid.steps; ++k) {
    defect = std::max(defect, (y[k] - y_ref[k]).norm());
    defect = std::max(defect, (psi[k] - psi_ref[k]).norm());
  }
  return defect;
}

double mild_residual(const SpectralOperator& A, const AffineGenerator& aff,
                     const TimeGrid& grid, const std::vector<VectorXd>& y,
                     const std::vector<VectorXd>& psi) {
  std::vector<VectorXd> F(grid.steps + 1), G(grid.steps + 1);
  for (int k = 0; k <= grid.steps; ++k) {
    const double t = grid.node(k);
    F[k] = aff.B11(t) * y[k] + aff.B12(t) * psi[k] + aff.b0(t);
    G[k] = aff.B21(t) * y[k] + aff.B22(t) * psi[k] + aff.g0(t);
  }
  return mild_residual(A, grid, y, psi, F, G,
                       VectorXd(aff.H * y[grid.steps] + aff.h0));
}

double mild_residual(const SpectralOperator& A, const GeneratorTriple& gen,
                     const TimeGrid& grid, const std::vector<VectorXd>& y,
                     const std::vector<VectorXd>& psi) {
  std::vector<VectorXd> F(grid.steps + 1), G(grid.steps + 1);
  for (int k = 0; k <= grid.steps; ++k) {
    const double t = grid.node(k);
    F[k] = gen.b(t, y[k], psi[k]);
    G[k] = gen.g(t, y[k], psi[k]);
  }
  return mild_residual(A, grid, y, psi, F, G, gen.h(y[grid.steps]));
}

double second_order_tolerance(const TimeGrid& grid, double data_scale) {
  const double dt = grid.dt();
  return std::max(tol::residual, 100.0 * dt * dt * (1.0 + data_scale));
}

}  // namespace fbee
