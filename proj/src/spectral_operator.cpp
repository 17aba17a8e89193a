#include "fbee/spectral_operator.hpp"

#include <cmath>
#include <complex>
#include <stdexcept>

#include "fbee/tolerances.hpp"

namespace fbee {

SpectralOperator SpectralOperator::symmetric_negative(
    std::vector<double> eigenvalues) {
  if (eigenvalues.empty()) {
    throw std::invalid_argument(
        "SpectralOperator::symmetric_negative: empty eigenvalue list");
  }
  double top = eigenvalues.front();
  for (double mu : eigenvalues) {
    if (!(mu < 0.0)) {
      throw std::invalid_argument(
          "SpectralOperator::symmetric_negative: eigenvalues must be "
          "strictly negative");
    }
    top = std::max(top, mu);
  }
  SpectralOperator A;
  A.kind = OperatorKind::SymmetricNegative;
  A.dim = static_cast<int>(eigenvalues.size());
  A.sigma0 = -top;
  A.eigenvalues = std::move(eigenvalues);
  return A;
}

SpectralOperator SpectralOperator::skew(std::vector<double> frequencies,
                                        int zero_modes) {
  if (zero_modes < 0) {
    throw std::invalid_argument("SpectralOperator::skew: zero_modes < 0");
  }
  for (double w : frequencies) {
    if (w == 0.0) {
      throw std::invalid_argument(
          "SpectralOperator::skew: frequency 0 is a zero mode, pass it via "
          "zero_modes");
    }
  }
  if (frequencies.empty() && zero_modes == 0) {
    throw std::invalid_argument("SpectralOperator::skew: empty operator");
  }
  SpectralOperator A;
  A.kind = OperatorKind::Skew;
  A.dim = 2 * static_cast<int>(frequencies.size()) + zero_modes;
  A.sigma0 = 0.0;
  A.block_decay.assign(frequencies.size(), 0.0);
  A.block_omega = std::move(frequencies);
  A.zero_modes = zero_modes;
  return A;
}

Eigen::MatrixXd SpectralOperator::dense() const {
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(dim, dim);
  if (kind == OperatorKind::SymmetricNegative) {
    for (int i = 0; i < dim; ++i) M(i, i) = eigenvalues[i];
    return M;
  }
  for (std::size_t b = 0; b < block_omega.size(); ++b) {
    const int i = static_cast<int>(2 * b);
    M(i, i) = block_decay[b];
    M(i, i + 1) = block_omega[b];
    M(i + 1, i) = -block_omega[b];
    M(i + 1, i + 1) = block_decay[b];
  }
  return M;
}

double SpectralOperator::norm() const {
  double n = 0.0;
  if (kind == OperatorKind::SymmetricNegative) {
    for (double mu : eigenvalues) n = std::max(n, std::abs(mu));
    return n;
  }
  for (std::size_t b = 0; b < block_omega.size(); ++b) {
    n = std::max(n, std::hypot(block_decay[b], block_omega[b]));
  }
  return n;
}

Eigen::VectorXd SpectralOperator::apply(const Eigen::VectorXd& x) const {
  if (x.size() != dim) {
    throw std::invalid_argument("SpectralOperator::apply: dimension mismatch");
  }
  Eigen::VectorXd y(dim);
  if (kind == OperatorKind::SymmetricNegative) {
    for (int i = 0; i < dim; ++i) y[i] = eigenvalues[i] * x[i];
    return y;
  }
  for (std::size_t b = 0; b < block_omega.size(); ++b) {
    const int i = static_cast<int>(2 * b);
    const double a = block_decay[b], w = block_omega[b];
    y[i] = a * x[i] + w * x[i + 1];
    y[i + 1] = -w * x[i] + a * x[i + 1];
  }
  y.tail(zero_modes).setZero();
  return y;
}

Eigen::VectorXd SpectralOperator::adjoint_apply(const Eigen::VectorXd& x) const {
  if (kind == OperatorKind::SymmetricNegative) return apply(x);
  Eigen::VectorXd y(dim);
  for (std::size_t b = 0; b < block_omega.size(); ++b) {
    const int i = static_cast<int>(2 * b);
    const double a = block_decay[b], w = block_omega[b];
    y[i] = a * x[i] - w * x[i + 1];
    y[i + 1] = w * x[i] + a * x[i + 1];
  }
  y.tail(zero_modes).setZero();
  return y;
}

TimeGrid::TimeGrid(double T, int N) : horizon(T), steps(N) {
  if (!(T > 0.0)) throw std::invalid_argument("TimeGrid: horizon must be > 0");
  if (N < 1) throw std::invalid_argument("TimeGrid: steps must be >= 1");
}

namespace {

// Applies e^{At} with the rotation sign flipped when adjoint is requested
// (the symmetric kind is self-adjoint, the skew kind has A* = -A on the
// rotation part and the decay part unchanged).
Eigen::VectorXd semigroup_apply_impl(const SpectralOperator& A, double t,
                                     const Eigen::VectorXd& x, bool adjoint) {
  if (x.size() != A.dim) {
    throw std::invalid_argument("semigroup_apply: dimension mismatch");
  }
  if (A.kind == OperatorKind::SymmetricNegative && t < 0.0) {
    throw std::invalid_argument(
        "semigroup_apply: t < 0 is not defined for the SymmetricNegative "
        "kind (no backward flow)");
  }
  Eigen::VectorXd y(A.dim);
  if (A.kind == OperatorKind::SymmetricNegative) {
    for (int i = 0; i < A.dim; ++i) y[i] = std::exp(A.eigenvalues[i] * t) * x[i];
    return y;
  }
  const double sign = adjoint ? -1.0 : 1.0;
  for (std::size_t b = 0; b < A.block_omega.size(); ++b) {
    const int i = static_cast<int>(2 * b);
    const double amp = std::exp(A.block_decay[b] * t);
    const double c = std::cos(A.block_omega[b] * t);
    const double s = sign * std::sin(A.block_omega[b] * t);
    y[i] = amp * (c * x[i] + s * x[i + 1]);
    y[i + 1] = amp * (-s * x[i] + c * x[i + 1]);
  }
  y.tail(A.zero_modes) = x.tail(A.zero_modes);
  return y;
}

Eigen::MatrixXd semigroup_matrix_impl(const SpectralOperator& A, double t,
                                      bool adjoint) {
  if (A.kind == OperatorKind::SymmetricNegative && t < 0.0) {
    throw std::invalid_argument(
        "semigroup_matrix: t < 0 is not defined for the SymmetricNegative "
        "kind (no backward flow)");
  }
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(A.dim, A.dim);
  if (A.kind == OperatorKind::SymmetricNegative) {
    for (int i = 0; i < A.dim; ++i) M(i, i) = std::exp(A.eigenvalues[i] * t);
    return M;
  }
  const double sign = adjoint ? -1.0 : 1.0;
  for (std::size_t b = 0; b < A.block_omega.size(); ++b) {
    const int i = static_cast<int>(2 * b);
    const double amp = std::exp(A.block_decay[b] * t);
    const double c = std::cos(A.block_omega[b] * t);
    const double s = sign * std::sin(A.block_omega[b] * t);
    M(i, i) = amp * c;
    M(i, i + 1) = amp * s;
    M(i + 1, i) = -amp * s;
    M(i + 1, i + 1) = amp * c;
  }
  for (int i = A.dim - A.zero_modes; i < A.dim; ++i) M(i, i) = 1.0;
  return M;
}

}  // namespace

Eigen::VectorXd semigroup_apply(const SpectralOperator& A, double t,
                                const Eigen::VectorXd& x) {
  return semigroup_apply_impl(A, t, x, /*adjoint=*/false);
}

Eigen::VectorXd adjoint_semigroup_apply(const SpectralOperator& A, double t,
                                        const Eigen::VectorXd& x) {
  return semigroup_apply_impl(A, t, x, /*adjoint=*/true);
}

Eigen::MatrixXd semigroup_matrix(const SpectralOperator& A, double t) {
  return semigroup_matrix_impl(A, t, /*adjoint=*/false);
}

Eigen::MatrixXd adjoint_semigroup_matrix(const SpectralOperator& A, double t) {
  return semigroup_matrix_impl(A, t, /*adjoint=*/true);
}

SpectralOperator yosida_apply(const SpectralOperator& A, double lambda) {
  if (!(lambda > 0.0)) {
    throw std::invalid_argument("yosida_apply: lambda must be > 0");
  }
  SpectralOperator B = A;
  if (A.kind == OperatorKind::SymmetricNegative) {
    // mu -> lambda mu / (lambda - mu); increasing in mu, so the spectral
    // bound maps to -lambda sigma0 / (lambda + sigma0).
    for (auto& mu : B.eigenvalues) mu = lambda * mu / (lambda - mu);
    B.sigma0 = lambda * A.sigma0 / (lambda + A.sigma0);
    return B;
  }
  // Each 2x2 block a·I + w·J is isomorphic to the complex number z = a + i w;
  // the Yosida map acts as z -> lambda z / (lambda - z).  Zero modes stay 0.
  for (std::size_t b = 0; b < B.block_omega.size(); ++b) {
    const std::complex<double> z(A.block_decay[b], A.block_omega[b]);
    const std::complex<double> zl = lambda * z / (lambda - z);
    B.block_decay[b] = zl.real();
    B.block_omega[b] = zl.imag();
  }
  return B;
}

Eigen::VectorXd duhamel_step(const SpectralOperator& A, const TimeGrid& grid,
                             int k, const Eigen::VectorXd& f_k,
                             const Eigen::VectorXd& f_k1,
                             const Eigen::VectorXd& x) {
  if (k < 0 || k >= grid.steps) {
    throw std::invalid_argument("duhamel_step: step index out of range");
  }
  const double dt = grid.dt();
  Eigen::VectorXd y = semigroup_apply(A, dt, x + 0.5 * dt * f_k);
  y += 0.5 * dt * f_k1;
  return y;
}

}  // namespace fbee
