#include "fbee/linear_fbee.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>

#include "fbee/errors.hpp"
#include "fbee/log.hpp"
#include "fbee/tolerances.hpp"

namespace fbee {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SampledAffine {
  std::vector<MatrixXd> B11, B12, B21, B22;
  std::vector<VectorXd> b0, g0;
  MatrixXd H;
  VectorXd h0;
};

SampledAffine sample(const AffineGenerator& aff, const TimeGrid& grid) {
  SampledAffine s;
  const int N = grid.steps;
  s.B11.reserve(N + 1);
  for (int k = 0; k <= N; ++k) {
    const double t = grid.node(k);
    s.B11.push_back(aff.B11(t));
    s.B12.push_back(aff.B12(t));
    s.B21.push_back(aff.B21(t));
    s.B22.push_back(aff.B22(t));
    s.b0.push_back(aff.b0(t));
    s.g0.push_back(aff.g0(t));
  }
  s.H = aff.H;
  s.h0 = aff.h0;
  return s;
}

double data_scale(const SampledAffine& s, const std::vector<VectorXd>& y,
                  const std::vector<VectorXd>& psi) {
  double coef = s.H.norm();
  for (std::size_t k = 0; k < s.B11.size(); ++k) {
    coef = std::max({coef, s.B11[k].norm(), s.B12[k].norm(), s.B21[k].norm(),
                     s.B22[k].norm()});
  }
  double state = s.h0.norm();
  for (std::size_t k = 0; k < y.size(); ++k)
    state = std::max({state, y[k].norm(), psi[k].norm(), s.b0[k].norm(),
                      s.g0[k].norm()});
  return coef * (1.0 + state) + state;
}

// One-step propagators of the implicit exponential trapezoid rule.  Forward,
// for y' = (A + B(t))y:   That_k = (I - dt/2 B_{k+1})^{-1} E (I + dt/2 B_k),
// E = e^{A dt}.  Backward, for psi' = -(A* + B(t))psi, mapping node k+1 to
// node k:                 Rhat_k = (I - dt/2 B_k)^{-1} E* (I + dt/2 B_{k+1}).
std::vector<MatrixXd> forward_steps(const MatrixXd& E,
                                    const std::vector<MatrixXd>& B,
                                    double dt) {
  const int N = static_cast<int>(B.size()) - 1;
  const int n = static_cast<int>(E.rows());
  const MatrixXd I = MatrixXd::Identity(n, n);
  std::vector<MatrixXd> T(N);
  for (int k = 0; k < N; ++k)
    T[k] = (I - 0.5 * dt * B[k + 1]).lu().solve(E * (I + 0.5 * dt * B[k]));
  return T;
}

std::vector<MatrixXd> backward_steps(const MatrixXd& Eadj,
                                     const std::vector<MatrixXd>& B,
                                     double dt) {
  const int N = static_cast<int>(B.size()) - 1;
  const int n = static_cast<int>(Eadj.rows());
  const MatrixXd I = MatrixXd::Identity(n, n);
  std::vector<MatrixXd> R(N);
  for (int k = 0; k < N; ++k)
    R[k] = (I - 0.5 * dt * B[k]).lu().solve(Eadj * (I + 0.5 * dt * B[k + 1]));
  return R;
}

// Forward solve of y' = (A + B(t))y + q(t) with the same implicit rule the
// propagators above realize, so that terminal identities built from them
// are honored to roundoff.
std::vector<VectorXd> forward_closed_loop(const SpectralOperator& A,
                                          const TimeGrid& grid,
                                          const std::vector<MatrixXd>& B,
                                          const std::vector<VectorXd>& q,
                                          const VectorXd& x) {
  const double dt = grid.dt();
  const int N = grid.steps;
  const int n = A.dim;
  const MatrixXd E = semigroup_matrix(A, dt);
  const MatrixXd I = MatrixXd::Identity(n, n);
  std::vector<VectorXd> y(N + 1);
  y[0] = x;
  for (int k = 0; k < N; ++k) {
    VectorXd rhs = E * ((I + 0.5 * dt * B[k]) * y[k] + 0.5 * dt * q[k]) +
                   0.5 * dt * q[k + 1];
    y[k + 1] = (I - 0.5 * dt * B[k + 1]).lu().solve(rhs);
  }
  return y;
}

// Value of a node-sampled matrix function at the midpoint of panel k, by the
// 4-point cubic rule (one-sided at the boundary panels).
MatrixXd midpoint(const std::vector<MatrixXd>& f, int k) {
  const int N = static_cast<int>(f.size()) - 1;
  if (N < 3) return 0.5 * (f[k] + f[k + 1]);
  if (k == 0) return (5.0 * f[0] + 15.0 * f[1] - 5.0 * f[2] + f[3]) / 16.0;
  if (k == N - 1)
    return (f[N - 3] - 5.0 * f[N - 2] + 15.0 * f[N - 1] + 5.0 * f[N]) / 16.0;
  return (-f[k - 1] + 9.0 * f[k] + 9.0 * f[k + 1] - f[k + 2]) / 16.0;
}

[[noreturn]] void throw_blowup(double t) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "Riccati blow-up at t = %.6f", t);
  throw NonConvergenceError(buf);
}

// Backward Runge-Kutta sweep for P' = F(t, P), P(T) = H, on a grid with N
// steps; F is supplied with exact coefficient evaluations at half steps.
std::vector<MatrixXd> rk4_backward(
    const TimeGrid& grid, const MatrixXd& H,
    const std::function<MatrixXd(double, const MatrixXd&)>& F) {
  const int N = grid.steps;
  const double dt = grid.dt();
  std::vector<MatrixXd> P(N + 1);
  P[N] = H;
  for (int k = N - 1; k >= 0; --k) {
    const double t1 = grid.node(k + 1);
    const double tm = t1 - 0.5 * dt;
    const MatrixXd& Pk1 = P[k + 1];
    MatrixXd f1 = F(t1, Pk1);
    MatrixXd f2 = F(tm, Pk1 - 0.5 * dt * f1);
    MatrixXd f3 = F(tm, Pk1 - 0.5 * dt * f2);
    MatrixXd f4 = F(grid.node(k), Pk1 - dt * f3);
    P[k] = Pk1 - (dt / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4);
    if (!P[k].allFinite() || P[k].norm() > tol::riccati_blowup)
      throw_blowup(grid.node(k));
  }
  return P;
}

double min_eigenvalue(const MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (M + M.transpose()),
                                             Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

void require_symmetric_psd(const MatrixXd& M, const std::string& what) {
  if ((M - M.transpose()).norm() > tol::psd_slack * std::max(1.0, M.norm()))
    throw ConfigError(what + " must be symmetric");
  if (min_eigenvalue(M) < -tol::psd_slack)
    throw ConfigError(what + " must be positive semidefinite");
}

}  // namespace

MatrixXd evolution_operator(const SpectralOperator& A,
                            const std::function<MatrixXd(double)>& B,
                            const TimeGrid& grid, int s_index, int t_index) {
  if (t_index < 0 || s_index > grid.steps || s_index < t_index)
    throw std::invalid_argument("evolution_operator: need 0 <= t <= s <= N");
  const int n = A.dim;
  const double dt = grid.dt();
  const MatrixXd E = semigroup_matrix(A, dt);
  const MatrixXd I = MatrixXd::Identity(n, n);
  MatrixXd Phi = I;
  for (int k = t_index; k < s_index; ++k) {
    MatrixXd step = (I - 0.5 * dt * B(grid.node(k + 1)))
                        .lu()
                        .solve(E * (I + 0.5 * dt * B(grid.node(k))));
    Phi = step * Phi;
  }
  return Phi;
}

TrajectoryPair solve_fredholm(const SpectralOperator& A,
                              const AffineGenerator& aff, const VectorXd& x,
                              const TimeGrid& grid) {
  const int n = A.dim;
  const int N = grid.steps;
  const int dim = n * (N + 1);
  if (dim > tol::fredholm_size_limit)
    throw ConfigError("Fredholm system size n(N+1) = " + std::to_string(dim) +
                      " exceeds the limit " +
                      std::to_string(tol::fredholm_size_limit));
  if (x.size() != n) throw ConfigError("initial state has wrong dimension");

  const double dt = grid.dt();
  const SampledAffine s = sample(aff, grid);
  const MatrixXd E = semigroup_matrix(A, dt);
  const MatrixXd Eadj = adjoint_semigroup_matrix(A, dt);
  const std::vector<MatrixXd> That = forward_steps(E, s.B11, dt);
  const std::vector<MatrixXd> Rhat = backward_steps(Eadj, s.B22, dt);

  // Separable kernel part L_i G_j with L_i the backward flow of H and G_j
  // the forward flow to the horizon; v and J carry the affine tail terms.
  std::vector<MatrixXd> L(N + 1), G(N + 1);
  std::vector<VectorXd> v(N + 1), J(N + 1);
  L[N] = s.H;
  G[N] = MatrixXd::Identity(n, n);
  v[N] = s.h0;
  J[N] = VectorXd::Zero(n);
  for (int i = N - 1; i >= 0; --i) {
    L[i] = Rhat[i] * L[i + 1];
    G[i] = G[i + 1] * That[i];
    v[i] = Rhat[i] * v[i + 1];
    J[i] = 0.5 * dt * (s.g0[i] + Rhat[i] * s.g0[i + 1]) + Rhat[i] * J[i + 1];
  }

  std::vector<double> w(N + 1, dt);
  w[0] = w[N] = 0.5 * dt;
  std::vector<MatrixXd> B12w(N + 1);
  for (int j = 0; j <= N; ++j) B12w[j] = w[j] * s.B12[j];

  VectorXd forced = G[0] * x;  // G_0 x + sum_j w_j G_j b0_j, reused per row
  for (int j = 0; j <= N; ++j) forced += w[j] * (G[j] * s.b0[j]);

  // The non-separable kernel block W(i,j) (the B21 double integral) obeys
  // three recursions that let us fill the Nystrom matrix one row at a time,
  // keeping only the previous row:
  //   W(N,.) = 0
  //   W(i,j) = Rhat_i W(i+1,j)                                   for j > i
  //   W(i,i) = dt/2 [B21_i + Rhat_i B21_{i+1} That_i] + Rhat_i W(i+1,i+1) That_i
  //   W(i,j) = W(i,j+1) That_j                                   for j < i.
  MatrixXd M = MatrixXd::Zero(dim, dim);
  VectorXd rhs(dim);
  std::vector<MatrixXd> prev(N + 1), cur(N + 1);
  for (int j = 0; j <= N; ++j) prev[j] = MatrixXd::Zero(n, n);
  for (int i = N; i >= 0; --i) {
    if (i == N) {
      for (int j = 0; j <= N; ++j) cur[j].setZero(n, n);
    } else {
      for (int j = i + 1; j <= N; ++j) cur[j] = Rhat[i] * prev[j];
      cur[i] = 0.5 * dt * (s.B21[i] + Rhat[i] * s.B21[i + 1] * That[i]) +
               Rhat[i] * prev[i + 1] * That[i];
      for (int j = i - 1; j >= 0; --j) cur[j] = cur[j + 1] * That[j];
    }

    for (int j = 0; j <= N; ++j) {
      M.block(i * n, j * n, n, n) = -(L[i] * G[j] + cur[j]) * B12w[j];
    }
    M.block(i * n, i * n, n, n) += MatrixXd::Identity(n, n);

    VectorXd r = L[i] * forced + cur[0] * x + J[i] + v[i];
    for (int j = 0; j <= N; ++j) r += cur[j] * (w[j] * s.b0[j]);
    rhs.segment(i * n, n) = r;

    std::swap(prev, cur);
  }

  Eigen::PartialPivLU<MatrixXd> lu(M);
  const double rcond = lu.rcond();
  if (!(rcond > 1.0 / tol::fredholm_condition_limit)) {
    char buf[96];
    std::snprintf(buf, sizeof(buf),
                  "Fredholm operator numerically non-invertible "
                  "(rcond = %.3e)",
                  rcond);
    throw SingularOperatorError(buf);
  }
  const VectorXd psi_flat = lu.solve(rhs);

  TrajectoryPair out;
  out.grid = grid;
  out.solver_tag = SolverTag::Fredholm;
  out.psi.resize(N + 1);
  for (int k = 0; k <= N; ++k) out.psi[k] = psi_flat.segment(k * n, n);

  std::vector<VectorXd> q(N + 1);
  for (int k = 0; k <= N; ++k) q[k] = s.B12[k] * out.psi[k] + s.b0[k];
  out.y = forward_closed_loop(A, grid, s.B11, q, x);

  out.mild_residual = mild_residual(A, aff, grid, out.y, out.psi);
  out.declared_tolerance =
      second_order_tolerance(grid, data_scale(s, out.y, out.psi));
  log::debug("fredholm: dim=%d rcond=%.3e residual=%.3e", dim, rcond,
             out.mild_residual);
  return out;
}

ShootingResult solve_shooting_skew(const SpectralOperator& A,
                                   const AffineGenerator& aff,
                                   const VectorXd& x, const TimeGrid& grid) {
  if (A.kind != OperatorKind::Skew)
    throw ConfigError(
        "shooting requires the skew kind; the backward flow of a "
        "dissipative operator is not available");
  const int n = A.dim;
  const int N = grid.steps;
  const double dt = grid.dt();
  const SampledAffine s = sample(aff, grid);

  // Doubled system z = (y; psi) with generator diag(A, -A*) = diag(A, A)
  // plus the bounded block [[B11, B12], [-B21, -B22]] and forcing (b0; -g0).
  const MatrixXd E = semigroup_matrix(A, dt);
  MatrixXd Ehat = MatrixXd::Zero(2 * n, 2 * n);
  Ehat.topLeftCorner(n, n) = E;
  Ehat.bottomRightCorner(n, n) = E;
  const MatrixXd I2 = MatrixXd::Identity(2 * n, 2 * n);

  std::vector<MatrixXd> Bhat(N + 1);
  std::vector<VectorXd> qhat(N + 1);
  for (int k = 0; k <= N; ++k) {
    Bhat[k] = MatrixXd::Zero(2 * n, 2 * n);
    Bhat[k].topLeftCorner(n, n) = s.B11[k];
    Bhat[k].topRightCorner(n, n) = s.B12[k];
    Bhat[k].bottomLeftCorner(n, n) = -s.B21[k];
    Bhat[k].bottomRightCorner(n, n) = -s.B22[k];
    qhat[k] = VectorXd(2 * n);
    qhat[k] << s.b0[k], -s.g0[k];
  }

  // Accumulate PhiHat(T, 0) and the forced term sum_k PhiHat(T, t_{k+1}) S_k
  // while walking the interval backward; S_k is the per-step source of the
  // implicit trapezoid rule, so the terminal identity below holds exactly
  // for the trajectory integrated with the same steps.
  std::vector<MatrixXd> That(N);
  std::vector<VectorXd> Shat(N);
  MatrixXd Phi = I2;
  VectorXd acc = VectorXd::Zero(2 * n);
  for (int k = N - 1; k >= 0; --k) {
    auto lu = (I2 - 0.5 * dt * Bhat[k + 1]).lu();
    That[k] = lu.solve(Ehat * (I2 + 0.5 * dt * Bhat[k]));
    Shat[k] =
        lu.solve(0.5 * dt * (Ehat * qhat[k]) + 0.5 * dt * qhat[k + 1]);
    acc += Phi * Shat[k];
    Phi = Phi * That[k];
  }

  MatrixXd C(n, 2 * n);
  C << -s.H, MatrixXd::Identity(n, n);
  const MatrixXd CPhi = C * Phi;
  const MatrixXd S = CPhi.rightCols(n);
  Eigen::JacobiSVD<MatrixXd> svd(S, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double min_sv = svd.singularValues().minCoeff();
  if (min_sv < tol::singular) {
    char buf[96];
    std::snprintf(buf, sizeof(buf),
                  "shooting operator not invertible (min singular value "
                  "%.3e)",
                  min_sv);
    throw SingularOperatorError(buf);
  }
  const VectorXd rhs = s.h0 - CPhi.leftCols(n) * x - C * acc;
  const VectorXd psi0 = svd.solve(rhs);

  ShootingResult res;
  res.psi0 = psi0;
  res.shooting_operator = S;
  res.min_singular_value = min_sv;

  VectorXd z(2 * n);
  z << x, psi0;
  res.traj.grid = grid;
  res.traj.solver_tag = SolverTag::Shooting;
  res.traj.y.resize(N + 1);
  res.traj.psi.resize(N + 1);
  res.traj.y[0] = x;
  res.traj.psi[0] = psi0;
  for (int k = 0; k < N; ++k) {
    z = That[k] * z + Shat[k];
    res.traj.y[k + 1] = z.head(n);
    res.traj.psi[k + 1] = z.tail(n);
  }

  res.traj.mild_residual = mild_residual(A, aff, grid, res.traj.y, res.traj.psi);
  res.traj.declared_tolerance =
      second_order_tolerance(grid, data_scale(s, res.traj.y, res.traj.psi));
  log::debug("shooting: min_sv=%.3e residual=%.3e", min_sv,
             res.traj.mild_residual);
  return res;
}

RiccatiSolution integrate_riccati(const SpectralOperator& A,
                                  const AffineGenerator& aff,
                                  const TimeGrid& grid, RiccatiRoute route) {
  const int N = grid.steps;
  const MatrixXd Ad = A.dense();
  const MatrixXd Adt = Ad.transpose();

  RiccatiSolution sol;
  sol.grid = grid;

  if (route == RiccatiRoute::Differential) {
    auto F = [&](double t, const MatrixXd& P) -> MatrixXd {
      return -(P * (Ad + aff.B11(t)) + (Adt + aff.B22(t)) * P +
               P * aff.B12(t) * P + aff.B21(t));
    };
    const std::vector<MatrixXd> coarse = rk4_backward(grid, aff.H, F);
    const TimeGrid fine_grid(grid.horizon, 2 * N);
    const std::vector<MatrixXd> fine = rk4_backward(fine_grid, aff.H, F);
    double disagreement = 0.0;
    for (int k = 0; k <= N; ++k)
      disagreement = std::max(disagreement, (coarse[k] - fine[2 * k]).norm());
    if (disagreement > tol::step_halving) {
      char buf[96];
      std::snprintf(buf, sizeof(buf),
                    "Riccati accuracy failure: step-halving disagreement "
                    "%.3e",
                    disagreement);
      throw NonConvergenceError(buf);
    }
    sol.P.resize(N + 1);
    sol.P_mid.resize(N);
    for (int k = 0; k <= N; ++k) sol.P[k] = fine[2 * k];
    for (int k = 0; k < N; ++k) sol.P_mid[k] = fine[2 * k + 1];
  } else {
    // Fixed-point iteration on the mild (integral) form: with the bounded
    // part folded into Q(t) = P B11 + B22 P + P B12 P + B21, the backward
    // sandwich recursion below unrolls to
    //   P(t) = e^{A*(T-t)} H e^{A(T-t)} + int_t^T e^{A*(s-t)} Q e^{A(s-t)} ds.
    const double dt = grid.dt();
    const MatrixXd E = semigroup_matrix(A, dt);
    const MatrixXd Eadj = adjoint_semigroup_matrix(A, dt);
    std::vector<MatrixXd> P(N + 1, aff.H), Q(N + 1), Pnew(N + 1);
    const int max_sweeps = 500;
    bool converged = false;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
      for (int k = 0; k <= N; ++k) {
        const double t = grid.node(k);
        Q[k] = P[k] * aff.B11(t) + aff.B22(t) * P[k] +
               P[k] * aff.B12(t) * P[k] + aff.B21(t);
      }
      Pnew[N] = aff.H;
      for (int k = N - 1; k >= 0; --k) {
        Pnew[k] = Eadj * (Pnew[k + 1] + 0.5 * dt * Q[k + 1]) * E +
                  0.5 * dt * Q[k];
        if (!Pnew[k].allFinite() || Pnew[k].norm() > tol::riccati_blowup)
          throw_blowup(grid.node(k));
      }
      double increment = 0.0;
      for (int k = 0; k <= N; ++k)
        increment = std::max(increment, (Pnew[k] - P[k]).norm());
      P.swap(Pnew);
      converged = increment < tol::fixed_point;
    }
    if (!converged)
      throw NonConvergenceError(
          "Riccati mild-form iteration did not reach a fixed point");
    sol.P = P;
    sol.P_mid.resize(N);
    for (int k = 0; k < N; ++k) sol.P_mid[k] = midpoint(sol.P, k);
  }

  // Affine offset p by the same backward Runge-Kutta steps, with the just
  // computed P supplying exact (or interpolated) midpoint values.
  const double dt = grid.dt();
  sol.p.resize(N + 1);
  sol.p[N] = aff.h0;
  auto pf = [&](double t, const MatrixXd& P, const VectorXd& p) -> VectorXd {
    return -(Adt * p + (P * aff.B12(t) + aff.B22(t)) * p + P * aff.b0(t) +
             aff.g0(t));
  };
  for (int k = N - 1; k >= 0; --k) {
    const double t1 = grid.node(k + 1);
    const double tm = t1 - 0.5 * dt;
    const double t0 = grid.node(k);
    const VectorXd& p1 = sol.p[k + 1];
    VectorXd f1 = pf(t1, sol.P[k + 1], p1);
    VectorXd f2 = pf(tm, sol.P_mid[k], p1 - 0.5 * dt * f1);
    VectorXd f3 = pf(tm, sol.P_mid[k], p1 - 0.5 * dt * f2);
    VectorXd f4 = pf(t0, sol.P[k], p1 - dt * f3);
    sol.p[k] = p1 - (dt / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4);
  }
  return sol;
}

MonotoneIterationResult riccati_monotone_iteration(const SpectralOperator& A,
                                                   const AffineGenerator& aff,
                                                   const TimeGrid& grid,
                                                   int max_iter) {
  const int n = A.dim;
  const int N = grid.steps;
  const double dt = grid.dt();

  require_symmetric_psd(aff.H, "terminal coupling H");
  for (int k = 0; k <= N; ++k) {
    const double t = grid.node(k);
    require_symmetric_psd(aff.B21(t), "B21");
    require_symmetric_psd(-aff.B12(t), "-B12");
    const MatrixXd B11 = aff.B11(t);
    const MatrixXd B22 = aff.B22(t);
    if ((B22 - B11.transpose()).norm() >
        tol::psd_slack * std::max(1.0, B11.norm()))
      throw ConfigError("monotone iteration requires B22 = B11*");
  }

  const MatrixXd Ad = A.dense();

  MonotoneIterationResult res;
  res.iterates.push_back(
      std::vector<MatrixXd>(N + 1, MatrixXd::Zero(n, n)));
  res.ordering_slack = std::numeric_limits<double>::infinity();
  res.psd_slack = std::numeric_limits<double>::infinity();

  for (int m = 0; m < max_iter; ++m) {
    const std::vector<MatrixXd>& Pm = res.iterates.back();
    // Freeze the feedback: P' + P Am(t) + Am(t)* P + Qm(t) = 0 with
    // Am = A + B11 + B12 Pm and Qm = B21 - Pm B12 Pm >= 0.
    auto F = [&](double t, const MatrixXd& Pmt, const MatrixXd& P) -> MatrixXd {
      const MatrixXd Am = Ad + aff.B11(t) + aff.B12(t) * Pmt;
      const MatrixXd Qm = aff.B21(t) - Pmt * aff.B12(t) * Pmt;
      return -(P * Am + Am.transpose() * P + Qm);
    };
    std::vector<MatrixXd> next(N + 1);
    next[N] = aff.H;
    for (int k = N - 1; k >= 0; --k) {
      const double t1 = grid.node(k + 1);
      const double tm = t1 - 0.5 * dt;
      const double t0 = grid.node(k);
      const MatrixXd Pm_mid = midpoint(Pm, k);
      const MatrixXd& P1 = next[k + 1];
      MatrixXd f1 = F(t1, Pm[k + 1], P1);
      MatrixXd f2 = F(tm, Pm_mid, P1 - 0.5 * dt * f1);
      MatrixXd f3 = F(tm, Pm_mid, P1 - 0.5 * dt * f2);
      MatrixXd f4 = F(t0, Pm[k], P1 - dt * f3);
      next[k] = P1 - (dt / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4);
      if (!next[k].allFinite() || next[k].norm() > tol::riccati_blowup)
        throw_blowup(grid.node(k));
    }

    double increment = 0.0;
    for (int k = 0; k <= N; ++k) {
      increment = std::max(increment, (next[k] - Pm[k]).norm());
      res.psd_slack = std::min(res.psd_slack, min_eigenvalue(next[k]));
      // The ordering next <= Pm is guaranteed from the second iterate on;
      // P1 >= P0 = 0 is the PSD part above.
      if (m >= 1)
        res.ordering_slack =
            std::min(res.ordering_slack, min_eigenvalue(Pm[k] - next[k]));
    }
    res.iterates.push_back(std::move(next));
    res.iterations = m + 1;
    res.last_increment = increment;
    if (increment < tol::fixed_point) {
      res.converged = true;
      break;
    }
  }
  return res;
}

TrajectoryPair solve_via_decoupling(const SpectralOperator& A,
                                    const AffineGenerator& aff,
                                    const VectorXd& x, const TimeGrid& grid) {
  return solve_via_decoupling(A, aff, x, grid,
                              integrate_riccati(A, aff, grid));
}

TrajectoryPair solve_via_decoupling(const SpectralOperator& A,
                                    const AffineGenerator& aff,
                                    const VectorXd& x, const TimeGrid& grid,
                                    const RiccatiSolution& ric) {
  const int N = grid.steps;
  const SampledAffine s = sample(aff, grid);

  // Closed loop: y' = (A + B11 + B12 P(t)) y + B12 p(t) + b0.
  std::vector<MatrixXd> C(N + 1);
  std::vector<VectorXd> q(N + 1);
  for (int k = 0; k <= N; ++k) {
    C[k] = s.B11[k] + s.B12[k] * ric.P[k];
    q[k] = s.B12[k] * ric.p[k] + s.b0[k];
  }
  TrajectoryPair out;
  out.grid = grid;
  out.solver_tag = SolverTag::Riccati;
  out.y = forward_closed_loop(A, grid, C, q, x);
  out.psi.resize(N + 1);
  for (int k = 0; k <= N; ++k) out.psi[k] = ric.P[k] * out.y[k] + ric.p[k];

  out.mild_residual = mild_residual(A, aff, grid, out.y, out.psi);
  out.declared_tolerance =
      second_order_tolerance(grid, data_scale(s, out.y, out.psi));
  log::debug("decoupling: residual=%.3e", out.mild_residual);
  return out;
}

DecouplingFieldReport verify_decoupling_field(const SpectralOperator& A,
                                              const GeneratorTriple& gen,
                                              const RiccatiSolution& field,
                                              const TrajectoryPair& traj) {
  const int N = traj.grid.steps;
  const double dt = traj.grid.dt();
  const MatrixXd Ad = A.dense();
  const MatrixXd Adt = Ad.transpose();

  DecouplingFieldReport rep;
  for (int k = 0; k <= N; ++k) {
    const VectorXd K = field.P[k] * traj.y[k] + field.p[k];
    rep.representation_residual =
        std::max(rep.representation_residual, (traj.psi[k] - K).norm());
  }
  const VectorXd KT = field.P[N] * traj.y[N] + field.p[N];
  rep.terminal_residual = (KT - gen.h(traj.y[N])).norm();

  for (int k = 1; k < N; ++k) {
    const double t = traj.grid.node(k);
    const VectorXd& y = traj.y[k];
    const VectorXd K = field.P[k] * y + field.p[k];
    const VectorXd Kt = ((field.P[k + 1] - field.P[k - 1]) * y +
                         (field.p[k + 1] - field.p[k - 1])) /
                        (2.0 * dt);
    const VectorXd r = Kt + field.P[k] * (Ad * y + gen.b(t, y, K)) + Adt * K +
                       gen.g(t, y, K);
    rep.pde_residual = std::max(rep.pde_residual, r.norm());
  }
  return rep;
}

}  // namespace fbee
