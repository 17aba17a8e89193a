#include "fbee/lyapunov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "fbee/errors.hpp"
#include "fbee/sampling.hpp"
#include "fbee/tolerances.hpp"

namespace fbee {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kCommutationTol = 1e-10;
constexpr double kSeriesBranch = 1e-8;

MatrixXd symmetrized(const MatrixXd& X) {
  return 0.5 * (X + X.transpose());
}

double lambda_min(const MatrixXd& S) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrized(S),
                                             Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double lambda_max(const MatrixXd& S) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrized(S),
                                             Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

double spectral_norm(const MatrixXd& X) {
  if (X.size() == 0) return 0.0;
  Eigen::JacobiSVD<MatrixXd> svd(X);
  return svd.singularValues()(0);
}

// (e^{a tau} - 1) / a, continued through a = 0 by its series so the
// closed-form blocks stay smooth across vanishing drift gaps.
double expm1_ratio(double a, double tau) {
  const double x = a * tau;
  if (std::abs(x) < kSeriesBranch)
    return tau * (1.0 + 0.5 * x + x * x / 6.0);
  return std::expm1(x) / a;
}

// Decay rate of each spectral coordinate: the eigenvalue for the symmetric
// kind, the block decay (zero for a genuine group) for the skew kind.
std::vector<double> mode_decays(const SpectralOperator& A) {
  std::vector<double> mu(static_cast<size_t>(A.dim), 0.0);
  if (A.kind == OperatorKind::SymmetricNegative) {
    for (int i = 0; i < A.dim; ++i) mu[i] = A.eigenvalues[i];
  } else {
    for (size_t b = 0; b < A.block_decay.size(); ++b) {
      mu[2 * b] = A.block_decay[b];
      mu[2 * b + 1] = A.block_decay[b];
    }
  }
  return mu;
}

bool commutes_with(const MatrixXd& X, const MatrixXd& Ad) {
  const double scale = std::max(1.0, X.norm() * Ad.norm());
  return (X * Ad - Ad * X).norm() <= kCommutationTol * scale;
}

void require_symmetric(const MatrixXd& X, const char* what) {
  if ((X - X.transpose()).norm() > kCommutationTol * std::max(1.0, X.norm()))
    throw ConfigError(std::string(what) + " must be symmetric");
}

// Solves X + c (X S + R X) = C exactly in vectorized form; diagonal S and R
// reduce to an entrywise divide, which keeps large diagonal data cheap.
MatrixXd solve_coupling(const MatrixXd& S, const MatrixXd& R, double c,
                        const MatrixXd& C) {
  const int n = static_cast<int>(C.rows());
  const double off = (S - MatrixXd(S.diagonal().asDiagonal())).norm() +
                     (R - MatrixXd(R.diagonal().asDiagonal())).norm();
  if (off <= 1e-14 * (1.0 + S.norm() + R.norm())) {
    MatrixXd X(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double denom = 1.0 + c * (S(j, j) + R(i, i));
        if (std::abs(denom) < tol::singular)
          throw SingularOperatorError("coupling step pivot vanished");
        X(i, j) = C(i, j) / denom;
      }
    return X;
  }
  const MatrixXd I = MatrixXd::Identity(n, n);
  MatrixXd op = MatrixXd::Identity(n * n, n * n);
  for (int bj = 0; bj < n; ++bj) {
    op.block(bj * n, bj * n, n, n) += c * R;
    for (int j = 0; j < n; ++j)
      op.block(bj * n, j * n, n, n) += (c * S(j, bj)) * I;
  }
  Eigen::PartialPivLU<MatrixXd> lu(op);
  const VectorXd rhs = Eigen::Map<const VectorXd>(C.data(), n * n);
  const VectorXd sol = lu.solve(rhs);
  if (!sol.allFinite())
    throw SingularOperatorError("coupling step solve produced non-finite values");
  return Eigen::Map<const MatrixXd>(sol.data(), n, n);
}

// Composite Simpson weights on the uniform grid; an odd panel count closes
// with a 3/8 segment, a single panel falls back to the trapezoid.
std::vector<double> simpson_weights(int steps, double h) {
  std::vector<double> w(static_cast<size_t>(steps) + 1, 0.0);
  if (steps == 1) {
    w[0] = w[1] = 0.5 * h;
    return w;
  }
  const int even_end = (steps % 2 == 0) ? steps : steps - 3;
  for (int k = 0; k + 2 <= even_end; k += 2) {
    w[k] += h / 3.0;
    w[k + 1] += 4.0 * h / 3.0;
    w[k + 2] += h / 3.0;
  }
  if (steps % 2 == 1) {
    const double c = 3.0 * h / 8.0;
    w[even_end] += c;
    w[even_end + 1] += 3.0 * c;
    w[even_end + 2] += 3.0 * c;
    w[steps] += c;
  }
  return w;
}

LyapunovData materialize_data(const LyapunovSpec& spec, int n) {
  if (spec.params.has_value() == spec.data.has_value())
    throw ConfigError(
        "certificate spec must set exactly one of params or data");
  if (spec.params) return LyapunovData::from_params(*spec.params, n);
  if (spec.data->dim != n)
    throw ConfigError("certificate data dimension does not match the system");
  return *spec.data;
}

MatrixXd doubled_drift(const MatrixXd& M, const MatrixXd& Mbar) {
  const int n = static_cast<int>(M.rows());
  MatrixXd D = MatrixXd::Zero(2 * n, 2 * n);
  D.topLeftCorner(n, n) = M;
  D.bottomRightCorner(n, n) = -Mbar.transpose();
  return D;
}

MatrixXd doubled_weight(const MatrixXd& Q0, const MatrixXd& Qbar0,
                        const MatrixXd& Theta) {
  const int n = static_cast<int>(Q0.rows());
  MatrixXd Q(2 * n, 2 * n);
  Q.topLeftCorner(n, n) = Q0;
  Q.topRightCorner(n, n) = Theta.transpose();
  Q.bottomLeftCorner(n, n) = Theta;
  Q.bottomRightCorner(n, n) = Qbar0;
  return Q;
}

MatrixXd doubled_generator(const GeneratorTriple& gen, double t,
                           const VectorXd& y, const VectorXd& psi) {
  const int n = gen.dim;
  MatrixXd B(2 * n, 2 * n);
  B.topLeftCorner(n, n) = gen.b_y(t, y, psi);
  B.topRightCorner(n, n) = gen.b_psi(t, y, psi);
  B.bottomLeftCorner(n, n) = -gen.g_y(t, y, psi);
  B.bottomRightCorner(n, n) = -gen.g_psi(t, y, psi);
  return B;
}

// [[-(g_y + g_y^T), b_y^T - g_psi], [b_y - g_psi^T, b_psi + b_psi^T]],
// the symmetric part of the generator seen through the swap pairing.
MatrixXd monotonicity_block(const GeneratorTriple& gen, double t,
                            const VectorXd& y, const VectorXd& psi) {
  const int n = gen.dim;
  const MatrixXd by = gen.b_y(t, y, psi);
  const MatrixXd bp = gen.b_psi(t, y, psi);
  const MatrixXd gy = gen.g_y(t, y, psi);
  const MatrixXd gp = gen.g_psi(t, y, psi);
  MatrixXd S(2 * n, 2 * n);
  S.topLeftCorner(n, n) = -(gy + gy.transpose());
  S.topRightCorner(n, n) = by.transpose() - gp;
  S.bottomLeftCorner(n, n) = by - gp.transpose();
  S.bottomRightCorner(n, n) = bp + bp.transpose();
  return S;
}

struct SamplePlan {
  std::vector<VectorXd> y;
  std::vector<VectorXd> psi;
};

// Deterministic ball samples shared by all checkers; affine generators keep
// one representative draw since their Jacobians ignore the sample point.
SamplePlan draw_samples(const GeneratorTriple& gen, double ball_radius,
                        int sample_budget, std::uint64_t seed) {
  if (sample_budget < 1)
    throw ConfigError("sample budget must be >= 1");
  if (!(ball_radius >= 0.0))
    throw ConfigError("sample ball radius must be >= 0");
  const int count = gen.affine ? 1 : sample_budget;
  BallSampler sample_y(gen.dim, ball_radius, seed);
  BallSampler sample_psi(gen.dim, ball_radius, seed ^ 0x9e3779b97f4a7c15ULL);
  SamplePlan plan;
  plan.y.reserve(count);
  plan.psi.reserve(count);
  for (int i = 0; i < count; ++i) {
    plan.y.push_back(sample_y.next());
    plan.psi.push_back(sample_psi.next());
  }
  return plan;
}

struct MarginTracker {
  double least = std::numeric_limits<double>::infinity();
  WorstSample sample;

  void offer(const char* condition, double margin, double t,
             const VectorXd& y, const VectorXd& psi) {
    if (margin < least) {
      least = margin;
      sample.condition = condition;
      sample.margin = margin;
      sample.t = t;
      sample.y = y;
      sample.psi = psi;
    }
  }
};

// Scalar profiles of the closed-form family at the drift boundary, one per
// spectral coordinate: p1(t) and pbar0(t) weights of the coupling estimates.
VectorXd boundary_state_profile(const SpectralOperator& A,
                                const LyapunovParams& p, double tau) {
  const auto mu = mode_decays(A);
  VectorXd out(A.dim);
  for (int i = 0; i < A.dim; ++i) {
    const double a = 2.0 * (mu[i] + A.sigma0);
    out(i) = p.p1 * std::exp(a * tau) + p.q0 * expm1_ratio(a, tau);
  }
  return out;
}

VectorXd boundary_costate_profile(const SpectralOperator& A,
                                  const LyapunovParams& p, double t) {
  const auto mu = mode_decays(A);
  VectorXd out(A.dim);
  for (int i = 0; i < A.dim; ++i) {
    const double a = 2.0 * (mu[i] + A.sigma0);
    out(i) = p.pbar0 * std::exp(a * t) + p.qbar0 * expm1_ratio(a, t);
  }
  return out;
}

// diag(e^{2(mu_i + sigma0) tau}): the terminal-weight exponentials of the
// fixed-weight families, identity for a genuine group.
MatrixXd weight_exponential(const SpectralOperator& A, double tau) {
  const auto mu = mode_decays(A);
  VectorXd d(A.dim);
  for (int i = 0; i < A.dim; ++i)
    d(i) = std::exp(2.0 * (mu[i] + A.sigma0) * tau);
  return d.asDiagonal();
}

void validate_draft(const LyapunovCertificate& draft, int n) {
  if (static_cast<int>(draft.Pi.size()) != draft.grid.steps + 1)
    throw ConfigError("certificate draft needs one Pi sample per grid node");
  for (const auto& pi : draft.Pi)
    if (pi.rows() != 2 * n || pi.cols() != 2 * n)
      throw ConfigError("certificate Pi samples have the wrong dimension");
}

}  // namespace

LyapunovData LyapunovData::constant(const MatrixXd& M, const MatrixXd& Mbar,
                                    const MatrixXd& Q0, const MatrixXd& Qbar0,
                                    const MatrixXd& Theta, const MatrixXd& P_T,
                                    const MatrixXd& Pbar_0,
                                    const MatrixXd& Gamma_T) {
  LyapunovData d;
  d.dim = static_cast<int>(M.rows());
  d.M = [M](double) { return M; };
  d.Mbar = [Mbar](double) { return Mbar; };
  d.Theta = [Theta](double) { return Theta; };
  d.Q0 = [Q0](double) { return Q0; };
  d.Qbar0 = [Qbar0](double) { return Qbar0; };
  d.P_T = P_T;
  d.Pbar_0 = Pbar_0;
  d.Gamma_T = Gamma_T;
  return d;
}

LyapunovData LyapunovData::from_params(const LyapunovParams& params, int n) {
  if (n < 1) throw ConfigError("closed-form data needs dimension >= 1");
  if (!(params.p1 > 0.0) || !(params.pbar0 > 0.0) || !(params.q0 > 0.0) ||
      !(params.qbar0 > 0.0))
    throw ConfigError("closed-form weights p1, pbar0, q0, qbar0 must be positive");
  const MatrixXd I = MatrixXd::Identity(n, n);
  return constant(params.m * I, params.mbar * I, params.q0 * I,
                  params.qbar0 * I, params.theta * I, params.p1 * I,
                  -params.pbar0 * I, params.gamma * I);
}

MatrixXd LyapunovTriple::Pi(int k) const {
  const int n = static_cast<int>(P[static_cast<size_t>(k)].rows());
  MatrixXd pi(2 * n, 2 * n);
  pi.topLeftCorner(n, n) = P[static_cast<size_t>(k)];
  pi.topRightCorner(n, n) = Gamma[static_cast<size_t>(k)].transpose();
  pi.bottomLeftCorner(n, n) = Gamma[static_cast<size_t>(k)];
  pi.bottomRightCorner(n, n) = Pbar[static_cast<size_t>(k)];
  return pi;
}

const char* to_string(CertificateVerdict v) {
  switch (v) {
    case CertificateVerdict::TypeI: return "TypeI";
    case CertificateVerdict::TypeII: return "TypeII";
    case CertificateVerdict::Both: return "Both";
    case CertificateVerdict::Fail: return "Fail";
  }
  return "Fail";
}

LyapunovTriple solve_lyapunov_triple(const SpectralOperator& A,
                                     const LyapunovData& data,
                                     const TimeGrid& grid) {
  const int n = A.dim;
  if (data.dim != n)
    throw ConfigError("coupling data dimension does not match the operator");
  if (!data.M || !data.Mbar || !data.Theta || !data.Q0 || !data.Qbar0)
    throw ConfigError("coupling data must provide M, Mbar, Theta, Q0, Qbar0");
  auto check_shape = [n](const MatrixXd& X, const char* what) {
    if (X.rows() != n || X.cols() != n)
      throw ConfigError(std::string(what) + " has the wrong dimension");
  };
  check_shape(data.P_T, "P(T)");
  check_shape(data.Pbar_0, "Pbar(0)");
  check_shape(data.Gamma_T, "Gamma(T)");
  require_symmetric(data.P_T, "P(T)");
  require_symmetric(data.Pbar_0, "Pbar(0)");

  const int N = grid.steps;
  const double dt = grid.dt();
  const double c = 0.5 * dt;

  std::vector<MatrixXd> Mv(N + 1), Mbv(N + 1), Thv(N + 1), Q0v(N + 1),
      Qbv(N + 1);
  for (int k = 0; k <= N; ++k) {
    const double t = grid.node(k);
    Mv[k] = data.M(t);
    Mbv[k] = data.Mbar(t);
    Thv[k] = data.Theta(t);
    Q0v[k] = data.Q0(t);
    Qbv[k] = data.Qbar0(t);
    check_shape(Mv[k], "M(t)");
    check_shape(Mbv[k], "Mbar(t)");
    check_shape(Thv[k], "Theta(t)");
    check_shape(Q0v[k], "Q0(t)");
    check_shape(Qbv[k], "Qbar0(t)");
    require_symmetric(Q0v[k], "Q0(t)");
    require_symmetric(Qbv[k], "Qbar0(t)");
  }

  if (A.kind == OperatorKind::SymmetricNegative) {
    const MatrixXd Ad = A.dense();
    for (int k = 0; k <= N; ++k)
      if (!commutes_with(Mv[k], Ad) || !commutes_with(Mbv[k], Ad) ||
          !commutes_with(Thv[k], Ad))
        throw ConfigError(
            "symmetric operator kind needs coupling data that commutes with "
            "A; supply data aligned with the spectral axes or use a skew "
            "operator");
    if (!commutes_with(data.Gamma_T, Ad))
      throw ConfigError(
          "symmetric operator kind needs a terminal coupling block that "
          "commutes with A");
  }

  const MatrixXd E = semigroup_matrix(A, dt);
  const MatrixXd Et = adjoint_semigroup_matrix(A, dt);

  LyapunovTriple out;
  out.grid = grid;
  out.P.assign(N + 1, MatrixXd());
  out.Pbar.assign(N + 1, MatrixXd());
  out.Gamma.assign(N + 1, MatrixXd());

  out.P[N] = symmetrized(data.P_T);
  for (int k = N - 1; k >= 0; --k) {
    const MatrixXd& Pn = out.P[k + 1];
    const MatrixXd W =
        Pn * Mv[k + 1] + Mv[k + 1].transpose() * Pn - Q0v[k + 1];
    const MatrixXd C = Et * (Pn - c * W) * E + c * Q0v[k];
    out.P[k] = symmetrized(solve_coupling(Mv[k], Mv[k].transpose(), c, C));
  }

  out.Pbar[0] = symmetrized(data.Pbar_0);
  for (int k = 0; k < N; ++k) {
    const MatrixXd& Pb = out.Pbar[k];
    const MatrixXd W = Mbv[k] * Pb + Pb * Mbv[k].transpose() + Qbv[k];
    const MatrixXd C = E * (Pb - c * W) * Et - c * Qbv[k + 1];
    out.Pbar[k + 1] =
        symmetrized(solve_coupling(Mbv[k + 1].transpose(), Mbv[k + 1], c, C));
  }

  out.Gamma[N] = data.Gamma_T;
  if (A.kind == OperatorKind::SymmetricNegative) {
    // With commuting data the propagators of the coupling equation cancel
    // against A and a plain implicit trapezoid step remains.
    for (int k = N - 1; k >= 0; --k) {
      const MatrixXd& Gn = out.Gamma[k + 1];
      const MatrixXd rhs = Gn - c * (Gn * Mv[k + 1] - Mbv[k + 1] * Gn) +
                           c * (Thv[k] + Thv[k + 1]);
      out.Gamma[k] = solve_coupling(Mv[k], -Mbv[k], c, rhs);
    }
  } else {
    // Group case: transport the terminal block with the two drifted
    // one-step propagators, one of them inverted through the group.
    const MatrixXd Einv = semigroup_matrix(A, -dt);
    const MatrixXd I = MatrixXd::Identity(n, n);
    for (int k = N - 1; k >= 0; --k) {
      const MatrixXd phi =
          (I + c * Mv[k + 1]).lu().solve(E * (I - c * Mv[k]));
      const MatrixXd phibar_inv =
          (I - c * Mbv[k]).lu().solve(Einv * (I + c * Mbv[k + 1]));
      const MatrixXd& Gn = out.Gamma[k + 1];
      out.Gamma[k] =
          phibar_inv * Gn * phi + c * (Thv[k] + phibar_inv * Thv[k + 1] * phi);
    }
  }
  return out;
}

LyapunovTriple closed_form_pi(const SpectralOperator& A,
                              const LyapunovParams& params,
                              const TimeGrid& grid) {
  if (!(params.p1 > 0.0) || !(params.pbar0 > 0.0) || !(params.q0 > 0.0) ||
      !(params.qbar0 > 0.0))
    throw ConfigError("closed-form weights p1, pbar0, q0, qbar0 must be positive");
  if (params.m < -A.sigma0 || params.mbar < -A.sigma0)
    throw ConfigError(
        "closed-form drift sits below the decay bound of A; the family needs "
        "m and mbar at or above -sigma0");

  const int n = A.dim;
  const int N = grid.steps;
  const double T = grid.horizon;
  const auto mu = mode_decays(A);
  const double cpl = params.mbar - params.m;

  LyapunovTriple out;
  out.grid = grid;
  out.P.assign(N + 1, MatrixXd());
  out.Pbar.assign(N + 1, MatrixXd());
  out.Gamma.assign(N + 1, MatrixXd());
  for (int k = 0; k <= N; ++k) {
    const double t = grid.node(k);
    const double tau = T - t;
    VectorXd p(n), pbar(n);
    for (int i = 0; i < n; ++i) {
      const double a = 2.0 * (mu[i] - params.m);
      const double abar = 2.0 * (mu[i] - params.mbar);
      p(i) = params.p1 * std::exp(a * tau) + params.q0 * expm1_ratio(a, tau);
      pbar(i) = -(params.pbar0 * std::exp(abar * t) +
                  params.qbar0 * expm1_ratio(abar, t));
    }
    const double g = params.gamma * std::exp(cpl * tau) +
                     params.theta * expm1_ratio(cpl, tau);
    out.P[k] = p.asDiagonal();
    out.Pbar[k] = pbar.asDiagonal();
    out.Gamma[k] = g * MatrixXd::Identity(n, n);
  }
  return out;
}

double eta_kappa(double kappa) { return expm1_ratio(kappa, 1.0); }

double decay_profile(double alpha, double beta, double kappa) {
  return alpha * std::exp(-kappa) + beta * expm1_ratio(-kappa, 1.0);
}

LyapunovCertificate certificate_draft(const SpectralOperator& A,
                                      const LyapunovSpec& spec,
                                      const TimeGrid& grid) {
  if (spec.params.has_value() == spec.data.has_value())
    throw ConfigError(
        "certificate spec must set exactly one of params or data");
  const LyapunovTriple triple =
      spec.params ? closed_form_pi(A, *spec.params, grid)
                  : solve_lyapunov_triple(A, *spec.data, grid);
  LyapunovCertificate cert;
  cert.spec = spec;
  cert.grid = grid;
  cert.Pi.reserve(static_cast<size_t>(grid.steps) + 1);
  for (int k = 0; k <= grid.steps; ++k) cert.Pi.push_back(triple.Pi(k));
  return cert;
}

double energy_identity_residual(const SpectralOperator& A,
                                const AffineGenerator& aff,
                                const TrajectoryPair& traj,
                                const LyapunovCertificate& cert) {
  const int n = A.dim;
  if (aff.dim != n)
    throw ConfigError("affine generator dimension does not match the operator");
  if (cert.grid.steps != traj.grid.steps ||
      std::abs(cert.grid.horizon - traj.grid.horizon) >
          1e-12 * std::max(1.0, traj.grid.horizon))
    throw ConfigError("certificate and trajectory grids differ");
  validate_draft(cert, n);

  const LyapunovData dat = materialize_data(cert.spec, n);
  const int N = traj.grid.steps;
  const auto w = simpson_weights(N, traj.grid.dt());

  VectorXd z0(2 * n), zN(2 * n);
  z0 << traj.y.front(), traj.psi.front();
  zN << traj.y.back(), traj.psi.back();
  const double lhs =
      zN.dot(cert.Pi.back() * zN) - z0.dot(cert.Pi.front() * z0);

  double rhs = 0.0;
  for (int k = 0; k <= N; ++k) {
    const double t = traj.grid.node(k);
    VectorXd z(2 * n);
    z << traj.y[static_cast<size_t>(k)], traj.psi[static_cast<size_t>(k)];
    MatrixXd BM(2 * n, 2 * n);
    BM.topLeftCorner(n, n) = aff.B11(t) + dat.M(t);
    BM.topRightCorner(n, n) = aff.B12(t);
    BM.bottomLeftCorner(n, n) = -aff.B21(t);
    BM.bottomRightCorner(n, n) = -aff.B22(t) - dat.Mbar(t).transpose();
    const MatrixXd Q = doubled_weight(dat.Q0(t), dat.Qbar0(t), dat.Theta(t));
    const MatrixXd& pi = cert.Pi[static_cast<size_t>(k)];
    const MatrixXd S = pi * BM + BM.transpose() * pi - Q;
    VectorXd f(2 * n);
    f << aff.b0(t), -aff.g0(t);
    rhs += w[static_cast<size_t>(k)] * (z.dot(S * z) + 2.0 * z.dot(pi * f));
  }
  return std::abs(lhs - rhs);
}

LyapunovCertificate check_wellposedness_conditions(
    const SpectralOperator& A, const GeneratorTriple& gen,
    LyapunovCertificate draft, double ball_radius, int sample_budget,
    double requested_delta, std::uint64_t seed) {
  const int n = gen.dim;
  if (A.dim != n)
    throw ConfigError("operator and generator dimensions differ");
  validate_draft(draft, n);
  const LyapunovData dat = materialize_data(draft.spec, n);

  LyapunovCertificate cert = std::move(draft);
  cert.sample_ball_radius = ball_radius;
  cert.sample_budget = sample_budget;
  cert.seed = seed;

  const SamplePlan plan = draw_samples(gen, ball_radius, sample_budget, seed);
  const int N = cert.grid.steps;
  const double T = cert.grid.horizon;
  const VectorXd none = VectorXd::Zero(n);
  MarginTracker tracker;

  auto P_at = [&](int k) { return cert.Pi[static_cast<size_t>(k)].topLeftCorner(n, n); };
  auto Pbar_at = [&](int k) {
    return cert.Pi[static_cast<size_t>(k)].bottomRightCorner(n, n);
  };
  auto Gamma_at = [&](int k) {
    return cert.Pi[static_cast<size_t>(k)].bottomLeftCorner(n, n);
  };

  // Endpoint signs: the costate block stays negative on the whole horizon
  // and the state block is positive at the terminal time.
  double delta_tT = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= N; ++k) {
    const double margin = lambda_min(-Pbar_at(k));
    if (margin < delta_tT) delta_tT = margin;
    tracker.offer("endpoint sign", margin, cert.grid.node(k), none, none);
  }
  {
    const double margin = lambda_min(P_at(N));
    delta_tT = std::min(delta_tT, margin);
    tracker.offer("endpoint sign", margin, T, none, none);
  }

  // Terminal compatibility of the state block with the terminal slope.
  const MatrixXd PT = P_at(N);
  const MatrixXd GT = Gamma_at(N);
  const MatrixXd PbarT = Pbar_at(N);
  double delta_T = std::numeric_limits<double>::infinity();
  double sup_hy = 0.0;
  for (const auto& y : plan.y) {
    const MatrixXd hy = gen.h_y(y);
    sup_hy = std::max(sup_hy, spectral_norm(hy));
    const MatrixXd block = PT + hy.transpose() * GT + GT.transpose() * hy +
                           hy.transpose() * PbarT * hy;
    const double margin = lambda_min(block);
    if (margin < delta_T) delta_T = margin;
    tracker.offer("terminal compatibility", margin, T, y, none);
  }

  // Drift inequality with and without the generator sandwich; the largest
  // sandwich eigenvalue doubles as the split allowance epsilon.
  double drift_margin = std::numeric_limits<double>::infinity();
  double coupled_margin = std::numeric_limits<double>::infinity();
  double epsilon = -std::numeric_limits<double>::infinity();
  double sup_gy = 0.0, sup_bpsi = 0.0, sup_pi = 0.0;
  for (int k = 0; k <= N; ++k) {
    const double t = cert.grid.node(k);
    const MatrixXd& pi = cert.Pi[static_cast<size_t>(k)];
    {
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrized(pi),
                                                 Eigen::EigenvaluesOnly);
      sup_pi = std::max(sup_pi, std::max(std::abs(es.eigenvalues().minCoeff()),
                                         std::abs(es.eigenvalues().maxCoeff())));
    }
    const MatrixXd Mfull = doubled_drift(dat.M(t), dat.Mbar(t));
    const MatrixXd Q = doubled_weight(dat.Q0(t), dat.Qbar0(t), dat.Theta(t));
    const MatrixXd drift_block = Q - (pi * Mfull + Mfull.transpose() * pi);
    const double dm = lambda_min(drift_block);
    if (dm < drift_margin) drift_margin = dm;
    tracker.offer("drift inequality", dm, t, none, none);
    for (size_t i = 0; i < plan.y.size(); ++i) {
      const VectorXd& y = plan.y[i];
      const VectorXd& psi = plan.psi[i];
      sup_gy = std::max(sup_gy, spectral_norm(gen.g_y(t, y, psi)));
      sup_bpsi = std::max(sup_bpsi, spectral_norm(gen.b_psi(t, y, psi)));
      const MatrixXd B = doubled_generator(gen, t, y, psi);
      const MatrixXd sandwich = pi * B + B.transpose() * pi;
      epsilon = std::max(epsilon, lambda_max(sandwich));
      const double cm = lambda_min(drift_block - sandwich);
      if (cm < coupled_margin) coupled_margin = cm;
      tracker.offer("coupled drift inequality", cm, t, y, psi);
    }
  }

  cert.margins.delta_tT = delta_tT;
  cert.margins.delta_T = delta_T;
  cert.margins.delta_interior = std::min(drift_margin, coupled_margin);
  cert.margins.epsilon = epsilon;

  const bool pass = delta_tT > requested_delta && delta_T > requested_delta &&
                    cert.margins.delta_interior > requested_delta;
  if (pass) {
    cert.verdict = CertificateVerdict::Both;
    const double di = cert.margins.delta_interior;
    const double slope2 = std::max({1.0, sup_gy * sup_gy, sup_bpsi * sup_bpsi});
    cert.margins.mu =
        0.5 * std::min(di / slope2, delta_T / std::max(1.0, sup_hy * sup_hy));
    const MatrixXd G0 = Gamma_at(0);
    const double corner = lambda_max(P_at(0)) +
                          spectral_norm(G0) * spectral_norm(G0) / delta_tT;
    cert.margins.K = std::max(corner, 2.0 * sup_pi * sup_pi / di);
    cert.worst.reset();
  } else {
    cert.verdict = CertificateVerdict::Fail;
    cert.margins.mu = 0.0;
    cert.margins.K = 0.0;
    cert.worst = tracker.sample;
  }
  return cert;
}

MonotoneGeneratorReport check_monotone_generator(const GeneratorTriple& gen,
                                                 const TimeGrid& grid,
                                                 double ball_radius,
                                                 int sample_budget,
                                                 std::uint64_t seed) {
  const SamplePlan plan = draw_samples(gen, ball_radius, sample_budget, seed);
  MonotoneGeneratorReport rep;
  rep.ball_radius = ball_radius;
  rep.sample_budget = sample_budget;
  rep.seed = seed;

  double worst_block = -std::numeric_limits<double>::infinity();
  for (int k = 0; k <= grid.steps; ++k) {
    const double t = grid.node(k);
    for (size_t i = 0; i < plan.y.size(); ++i)
      worst_block = std::max(
          worst_block, lambda_max(monotonicity_block(gen, t, plan.y[i],
                                                     plan.psi[i])));
  }
  double terminal = std::numeric_limits<double>::infinity();
  for (const auto& y : plan.y)
    terminal =
        std::min(terminal, lambda_min(gen.h_y(y) + gen.h_y(y).transpose()));

  rep.delta = std::max(0.0, -worst_block);
  rep.terminal_margin = terminal;
  rep.holds = rep.delta > 0.0 && terminal >= -tol::psd_slack;
  return rep;
}

LyapunovCertificate check_closed_form_family(
    const SpectralOperator& A, const GeneratorTriple& gen,
    const LyapunovParams& params, const TimeGrid& grid,
    ClosedFormFamily family, double ball_radius, int sample_budget,
    std::uint64_t seed) {
  const int n = gen.dim;
  if (A.dim != n)
    throw ConfigError("operator and generator dimensions differ");
  if (!(params.p1 > 0.0) || !(params.pbar0 > 0.0) || !(params.q0 > 0.0) ||
      !(params.qbar0 > 0.0))
    throw ConfigError("closed-form weights p1, pbar0, q0, qbar0 must be positive");

  const double sigma0 = A.sigma0;
  const int N = grid.steps;
  const double T = grid.horizon;
  const SamplePlan plan = draw_samples(gen, ball_radius, sample_budget, seed);
  const VectorXd none = VectorXd::Zero(n);
  MarginTracker tracker;

  LyapunovCertificate cert;
  cert.grid = grid;
  cert.sample_ball_radius = ball_radius;
  cert.sample_budget = sample_budget;
  cert.seed = seed;
  cert.spec.params = params;

  auto finish = [&](bool ok) {
    cert.verdict = ok ? CertificateVerdict::Both : CertificateVerdict::Fail;
    if (ok)
      cert.worst.reset();
    else
      cert.worst = tracker.sample;
    return cert;
  };

  // Fixed-weight terminal families: a structural terminal normalization
  // paired with a sign condition on the weighted generator sandwich.
  if (family == ClosedFormFamily::ShiftedTerminal ||
      family == ClosedFormFamily::ContractiveTerminal ||
      family == ClosedFormFamily::CombinedTerminal) {
    const MatrixXd I = MatrixXd::Identity(n, n);
    double terminal = std::numeric_limits<double>::infinity();
    for (const auto& y : plan.y) {
      const MatrixXd hy = gen.h_y(y);
      MatrixXd block;
      if (family == ClosedFormFamily::ShiftedTerminal)
        block = I + hy + hy.transpose();
      else if (family == ClosedFormFamily::ContractiveTerminal)
        block = I - hy.transpose() * hy;
      else
        block = I + hy + hy.transpose() - hy.transpose() * hy;
      const double margin = lambda_min(block);
      if (margin < terminal) terminal = margin;
      tracker.offer("terminal normalization", margin, T, y, none);
    }

    double eps_sup = -std::numeric_limits<double>::infinity();
    cert.Pi.reserve(static_cast<size_t>(N) + 1);
    for (int k = 0; k <= N; ++k) {
      const double t = grid.node(k);
      MatrixXd W = MatrixXd::Zero(2 * n, 2 * n);
      W.topLeftCorner(n, n) = weight_exponential(A, T - t);
      if (family != ClosedFormFamily::ContractiveTerminal) {
        W.topRightCorner(n, n) = I;
        W.bottomLeftCorner(n, n) = I;
      }
      if (family != ClosedFormFamily::ShiftedTerminal)
        W.bottomRightCorner(n, n) = weight_exponential(A, t);
      cert.Pi.push_back(W);
      for (size_t i = 0; i < plan.y.size(); ++i) {
        const MatrixXd B = doubled_generator(gen, t, plan.y[i], plan.psi[i]);
        const double top = lambda_max(W * B + B.transpose() * W);
        eps_sup = std::max(eps_sup, top);
        tracker.offer("generator sandwich", -top, t, plan.y[i], plan.psi[i]);
      }
    }
    cert.margins.delta_tT = terminal;
    cert.margins.delta_T = terminal;
    cert.margins.delta_interior = -eps_sup;
    cert.margins.epsilon = eps_sup;
    return finish(terminal > 0.0 && eps_sup <= tol::psd_slack);
  }

  // Drifted families share a scalar drift; the coupling route additionally
  // chooses its own off-diagonal weight, so it rejects a caller-set one.
  LyapunovParams p = params;
  if (family == ClosedFormFamily::GeneralDrift) {
    if (p.m != p.mbar)
      throw ConfigError("this family uses one shared drift; set m = mbar");
    if (p.m + sigma0 <= 0.0)
      throw ConfigError(
          "this family needs a drift strictly above -sigma0; use the "
          "boundary family at the limiting drift");
  } else {
    if (std::abs(p.m + sigma0) > 1e-12 || std::abs(p.mbar + sigma0) > 1e-12)
      throw ConfigError(
          "the boundary families need the drift pinned at -sigma0");
  }
  if (family == ClosedFormFamily::SchurCoupling &&
      (p.gamma != 0.0 || p.theta != 0.0))
    throw ConfigError(
        "the coupling route chooses gamma itself; pass gamma = theta = 0");

  double s_running = 0.0;
  if (family == ClosedFormFamily::GeneralDrift) {
    const double kap = 2.0 * (sigma0 + p.m);
    s_running = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= N; ++k) {
      const double t = grid.node(k);
      const double eT = std::exp(-kap * (T - t));
      const double e0 = std::exp(-kap * t);
      const double e11 =
          p.q0 * (sigma0 + p.m * eT) / (sigma0 + p.m) - 2.0 * p.m * p.p1 * eT;
      const double e22 = p.qbar0 * (sigma0 + p.m * e0) / (sigma0 + p.m) -
                         2.0 * p.m * p.pbar0 * e0;
      const double mid = 0.5 * (e11 + e22);
      const double rad =
          std::sqrt(0.25 * (e11 - e22) * (e11 - e22) + p.theta * p.theta);
      const double margin = mid - rad;
      if (margin < s_running) s_running = margin;
      tracker.offer("running weight inequality", margin, t, none, none);
    }
  } else {
    s_running = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= N; ++k) {
      const double t = grid.node(k);
      const double e11 =
          p.q0 * (1.0 + 2.0 * sigma0 * (T - t)) + 2.0 * sigma0 * p.p1;
      const double e22 = p.qbar0 * (1.0 + 2.0 * sigma0 * t) +
                         2.0 * sigma0 * p.pbar0;
      const double mid = 0.5 * (e11 + e22);
      const double rad =
          std::sqrt(0.25 * (e11 - e22) * (e11 - e22) + p.theta * p.theta);
      const double margin = mid - rad;
      if (margin < s_running) s_running = margin;
      tracker.offer("running weight inequality", margin, t, none, none);
    }
  }

  if (family == ClosedFormFamily::SchurCoupling) {
    // Structural screen, then the coupling weight large enough that the
    // Schur complement bound caps the sandwich at half the running margin.
    double pair_defect = 0.0, bpsi_top = -std::numeric_limits<double>::infinity();
    double gy_gap = std::numeric_limits<double>::infinity();
    double feedback_top = -std::numeric_limits<double>::infinity();
    double coupling_sq = 0.0, direct = 0.0;
    for (int k = 0; k <= N; ++k) {
      const double t = grid.node(k);
      const VectorXd p1t = boundary_state_profile(A, p, T - t);
      const VectorXd pb0t = boundary_costate_profile(A, p, t);
      const MatrixXd P1 = p1t.asDiagonal();
      const MatrixXd Pb0 = pb0t.asDiagonal();
      for (size_t i = 0; i < plan.y.size(); ++i) {
        const VectorXd& y = plan.y[i];
        const VectorXd& psi = plan.psi[i];
        const MatrixXd by = gen.b_y(t, y, psi);
        const MatrixXd bp = gen.b_psi(t, y, psi);
        const MatrixXd gy = gen.g_y(t, y, psi);
        const MatrixXd gp = gen.g_psi(t, y, psi);
        pair_defect = std::max(pair_defect, (by - gp.transpose()).norm());
        bpsi_top = std::max(bpsi_top, lambda_max(bp + bp.transpose()));
        gy_gap = std::min(gy_gap, lambda_min(gy + gy.transpose()));
        feedback_top = std::max(
            feedback_top, lambda_max(-(Pb0 * gp + gp.transpose() * Pb0)));
        coupling_sq = std::max(
            coupling_sq, std::pow(spectral_norm(bp.transpose() * P1 + Pb0 * gy), 2));
        direct = std::max(direct,
                          spectral_norm(P1 * by + by.transpose() * P1));
      }
    }
    const double scale = 1.0 + spectral_norm(gen.b_y(0.0, none, none));
    if (pair_defect > kCommutationTol * scale) {
      tracker.offer("paired first-order blocks", -pair_defect, 0.0, none, none);
      cert.Pi.assign(static_cast<size_t>(N) + 1, MatrixXd::Zero(2 * n, 2 * n));
      cert.margins.delta_interior = -pair_defect;
      return finish(false);
    }
    if (bpsi_top > tol::psd_slack) {
      tracker.offer("forward coupling sign", -bpsi_top, 0.0, none, none);
      cert.Pi.assign(static_cast<size_t>(N) + 1, MatrixXd::Zero(2 * n, 2 * n));
      cert.margins.delta_interior = -bpsi_top;
      return finish(false);
    }
    if (!(gy_gap > 0.0)) {
      tracker.offer("backward coupling gap", gy_gap, 0.0, none, none);
      cert.Pi.assign(static_cast<size_t>(N) + 1, MatrixXd::Zero(2 * n, 2 * n));
      cert.margins.delta_interior = gy_gap;
      return finish(false);
    }
    if (feedback_top > tol::psd_slack) {
      tracker.offer("costate feedback sign", -feedback_top, 0.0, none, none);
      cert.Pi.assign(static_cast<size_t>(N) + 1, MatrixXd::Zero(2 * n, 2 * n));
      cert.margins.delta_interior = -feedback_top;
      return finish(false);
    }
    const double C = coupling_sq / gy_gap;
    const double D = direct / gy_gap;
    p.gamma = std::max(1.0, 2.0 * D) + 2.0 * C / s_running;
    p.theta = 0.0;
    cert.spec.params = p;
  }

  // Terminal compatibility with the family's costate weight.
  const double kap = 2.0 * (sigma0 + p.m);
  double wbar = 0.0;
  if (family == ClosedFormFamily::GeneralDrift) {
    for (int k = 0; k <= N; ++k) {
      const double tau = T - grid.node(k);
      const double e = std::exp(-kap * tau);
      wbar = std::max(wbar, p.pbar0 * e + p.qbar0 * expm1_ratio(-kap, tau));
    }
  } else {
    wbar = p.pbar0 + p.qbar0 * T;
  }
  double terminal = std::numeric_limits<double>::infinity();
  const MatrixXd I = MatrixXd::Identity(n, n);
  for (const auto& y : plan.y) {
    const MatrixXd hy = gen.h_y(y);
    const MatrixXd block = p.p1 * I + p.gamma * (hy + hy.transpose()) -
                           wbar * hy.transpose() * hy;
    const double margin = lambda_min(block);
    if (margin < terminal) terminal = margin;
    tracker.offer("terminal compatibility", margin, T, y, none);
  }

  const LyapunovTriple triple = closed_form_pi(A, p, grid);
  cert.Pi.reserve(static_cast<size_t>(N) + 1);
  double delta_tT = std::numeric_limits<double>::infinity();
  double eps_sup = -std::numeric_limits<double>::infinity();
  for (int k = 0; k <= N; ++k) {
    const double t = grid.node(k);
    cert.Pi.push_back(triple.Pi(k));
    const MatrixXd& pi = cert.Pi.back();
    const double endpoint = lambda_min(-triple.Pbar[static_cast<size_t>(k)]);
    if (endpoint < delta_tT) delta_tT = endpoint;
    tracker.offer("endpoint sign", endpoint, t, none, none);
    for (size_t i = 0; i < plan.y.size(); ++i) {
      const MatrixXd B = doubled_generator(gen, t, plan.y[i], plan.psi[i]);
      const double top = lambda_max(pi * B + B.transpose() * pi);
      eps_sup = std::max(eps_sup, top);
    }
  }
  {
    const double margin = lambda_min(triple.P.back());
    delta_tT = std::min(delta_tT, margin);
    tracker.offer("endpoint sign", margin, T, none, none);
  }
  const double attainable = s_running - std::max(eps_sup, 0.0);
  tracker.offer("generator sandwich", attainable, T, none, none);

  cert.margins.delta_tT = delta_tT;
  cert.margins.delta_T = terminal;
  cert.margins.delta_interior = attainable;
  cert.margins.epsilon = eps_sup;
  return finish(delta_tT > 0.0 && terminal > 0.0 && attainable > 0.0);
}

LyapunovCertificate check_type_conditions_raw(const GeneratorTriple& gen,
                                              LyapunovCertificate draft,
                                              double mu, double K,
                                              double ball_radius,
                                              int sample_budget,
                                              std::uint64_t seed) {
  const int n = gen.dim;
  validate_draft(draft, n);
  if (!(mu > 0.0) || !(K > 0.0))
    throw ConfigError("the raw conditions need mu > 0 and K > 0");
  const LyapunovData dat = materialize_data(draft.spec, n);

  LyapunovCertificate cert = std::move(draft);
  cert.sample_ball_radius = ball_radius;
  cert.sample_budget = sample_budget;
  cert.seed = seed;
  cert.margins = CertificateMargins{};
  cert.margins.mu = mu;
  cert.margins.K = K;

  const SamplePlan plan = draw_samples(gen, ball_radius, sample_budget, seed);
  const int N = cert.grid.steps;
  const double T = cert.grid.horizon;
  const VectorXd none = VectorXd::Zero(n);
  const MatrixXd In = MatrixXd::Identity(n, n);
  MarginTracker tracker;

  // Shared initial corner: Pi(0) <= diag(K, 0).
  MatrixXd corner0 = cert.Pi.front();
  corner0.topLeftCorner(n, n) -= K * In;
  const double corner_margin = -lambda_max(corner0);
  tracker.offer("initial corner", corner_margin, 0.0, none, none);
  const bool corner_ok = corner_margin >= -tol::psd_slack;

  // Terminal corners at rho in {0, 1}.
  double term_first = std::numeric_limits<double>::infinity();
  double term_second = std::numeric_limits<double>::infinity();
  const MatrixXd& PiT = cert.Pi.back();
  for (const auto& y : plan.y) {
    const MatrixXd hy = gen.h_y(y);
    for (int rho = 0; rho <= 1; ++rho) {
      MatrixXd L = MatrixXd::Identity(2 * n, 2 * n);
      L.bottomLeftCorner(n, n) = static_cast<double>(rho) * hy;
      const MatrixXd sandwich = L.transpose() * PiT * L;
      MatrixXd first = sandwich;
      first.topLeftCorner(n, n) -= mu * hy.transpose() * hy;
      first.bottomRightCorner(n, n) += K * In;
      MatrixXd second = sandwich;
      second.bottomRightCorner(n, n) += K * In;
      const double m1 = lambda_min(first);
      const double m2 = lambda_min(second);
      term_first = std::min(term_first, m1);
      term_second = std::min(term_second, m2);
      tracker.offer("terminal corner", std::max(m1, m2), T, y, none);
    }
  }

  // Interior corners: the penalized running block against the -K pad.
  double int_first = -std::numeric_limits<double>::infinity();
  double int_second = -std::numeric_limits<double>::infinity();
  for (int k = 0; k <= N; ++k) {
    const double t = cert.grid.node(k);
    const MatrixXd& pi = cert.Pi[static_cast<size_t>(k)];
    const MatrixXd Mfull = doubled_drift(dat.M(t), dat.Mbar(t));
    const MatrixXd Q = doubled_weight(dat.Q0(t), dat.Qbar0(t), dat.Theta(t));
    const MatrixXd drift_part = pi * Mfull + Mfull.transpose() * pi;
    for (size_t i = 0; i < plan.y.size(); ++i) {
      const VectorXd& y = plan.y[i];
      const VectorXd& psi = plan.psi[i];
      const MatrixXd B = doubled_generator(gen, t, y, psi);
      const MatrixXd gy = gen.g_y(t, y, psi);
      const MatrixXd bp = gen.b_psi(t, y, psi);
      for (int rho = 0; rho <= 1; ++rho) {
        const MatrixXd H = static_cast<double>(rho) *
                               (pi * B + B.transpose() * pi) +
                           drift_part;
        MatrixXd first_block = H - Q;
        first_block.topLeftCorner(n, n) += mu * gy.transpose() * gy;
        MatrixXd second_block = H - Q;
        second_block.bottomRightCorner(n, n) += mu * bp.transpose() * bp;
        MatrixXd big1 = MatrixXd::Zero(4 * n, 4 * n);
        big1.topLeftCorner(2 * n, 2 * n) = first_block;
        big1.topRightCorner(2 * n, 2 * n) = pi;
        big1.bottomLeftCorner(2 * n, 2 * n) = pi;
        big1.bottomRightCorner(2 * n, 2 * n) =
            -K * MatrixXd::Identity(2 * n, 2 * n);
        MatrixXd big2 = big1;
        big2.topLeftCorner(2 * n, 2 * n) = second_block;
        const double t1 = lambda_max(big1);
        const double t2 = lambda_max(big2);
        int_first = std::max(int_first, t1);
        int_second = std::max(int_second, t2);
        tracker.offer("interior corner", -std::min(t1, t2), t, y, psi);
      }
    }
  }

  const bool first_ok = corner_ok && term_first >= -tol::psd_slack &&
                        int_first <= tol::psd_slack;
  const bool second_ok = corner_ok && term_second >= -tol::psd_slack &&
                         int_second <= tol::psd_slack;
  cert.margins.delta_tT = corner_margin;
  cert.margins.delta_T = std::max(term_first, term_second);
  cert.margins.delta_interior = std::max(-int_first, -int_second);

  if (first_ok && second_ok)
    cert.verdict = CertificateVerdict::Both;
  else if (first_ok)
    cert.verdict = CertificateVerdict::TypeI;
  else if (second_ok)
    cert.verdict = CertificateVerdict::TypeII;
  else
    cert.verdict = CertificateVerdict::Fail;
  if (cert.verdict == CertificateVerdict::Fail)
    cert.worst = tracker.sample;
  else
    cert.worst.reset();
  return cert;
}

}  // namespace fbee
