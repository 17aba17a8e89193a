#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fbee/errors.hpp"
#include "fbee/generator.hpp"
#include "fbee/linear_fbee.hpp"
#include "fbee/lyapunov.hpp"
#include "fbee/tolerances.hpp"

using namespace fbee;
using nlohmann::json;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec1(double v) { return VectorXd::Constant(1, v); }

// Balanced point of the closed-form family: all weights one, unit coupling,
// zero drift.  On A = -1 the blocks are P = (1 + e^{-2(T-t)})/2,
// Pbar = -(1 + e^{-2t})/2, Gamma = 1.
LyapunovParams balanced_params() {
  LyapunovParams p;
  p.gamma = 1.0;
  return p;
}

// Zero-drift parameter point whose blocks collapse to P = 1, Pbar = -1,
// Gamma = 0 on A = -1: the running weights exactly feed the decay.
LyapunovParams collapsed_params() {
  LyapunovParams p;
  p.q0 = 2.0;
  p.qbar0 = 2.0;
  return p;
}

double sup_block_error(const LyapunovTriple& a, const LyapunovTriple& b) {
  double sup = 0.0;
  for (size_t k = 0; k < a.P.size(); ++k) {
    sup = std::max(sup, (a.P[k] - b.P[k]).norm());
    sup = std::max(sup, (a.Pbar[k] - b.Pbar[k]).norm());
    sup = std::max(sup, (a.Gamma[k] - b.Gamma[k]).norm());
  }
  return sup;
}

// Non-commuting time-varying data on a rotation block, for the routes that
// may not lean on any spectral alignment.
LyapunovData rotating_data() {
  LyapunovData d;
  d.dim = 2;
  d.M = [](double t) {
    MatrixXd m(2, 2);
    m << 0.2 * std::sin(t), 0.1, -0.05, 0.1 * std::cos(t);
    return m;
  };
  d.Mbar = [](double t) {
    MatrixXd m(2, 2);
    m << 0.1 * std::cos(t), -0.08, 0.12, 0.15 * std::sin(t);
    return m;
  };
  d.Q0 = [](double t) {
    MatrixXd m(2, 2);
    m << 1.0 + 0.1 * std::sin(t), 0.2, 0.2, 0.8;
    return m;
  };
  d.Qbar0 = [](double t) {
    MatrixXd m(2, 2);
    m << 0.9, -0.1, -0.1, 1.1 + 0.1 * std::cos(t);
    return m;
  };
  d.Theta = [](double t) {
    MatrixXd m(2, 2);
    m << 0.3 * std::sin(t), 0.1, 0.0, -0.2 * std::cos(t);
    return m;
  };
  d.P_T = (MatrixXd(2, 2) << 1.0, 0.2, 0.2, 0.8).finished();
  d.Pbar_0 = (MatrixXd(2, 2) << -1.0, 0.1, 0.1, -1.2).finished();
  d.Gamma_T = (MatrixXd(2, 2) << 0.4, 0.1, -0.3, 0.5).finished();
  return d;
}

// Trapezoid-weight reconstruction of the diagonal blocks from the evolution
// operators of the drifted systems, the quadrature-side counterpart of the
// sweep the solver performs.
double representation_error(const SpectralOperator& A, const LyapunovData& d,
                            int N) {
  const TimeGrid grid(0.8, N);
  const LyapunovTriple triple = solve_lyapunov_triple(A, d, grid);
  const double dt = grid.dt();
  auto Bm = [&d](double t) { return MatrixXd(-d.M(t)); };
  auto Bmbar = [&d](double t) { return MatrixXd(-d.Mbar(t)); };

  double err = 0.0;
  for (int i : {0, N / 2}) {
    MatrixXd rep = MatrixXd::Zero(2, 2);
    for (int j = i; j <= N; ++j) {
      const MatrixXd phi = evolution_operator(A, Bm, grid, j, i);
      const double w = (j == i || j == N) ? 0.5 * dt : dt;
      rep += w * phi.transpose() * d.Q0(grid.node(j)) * phi;
    }
    const MatrixXd phiT = evolution_operator(A, Bm, grid, N, i);
    rep += phiT.transpose() * d.P_T * phiT;
    err = std::max(err, (rep - triple.P[static_cast<size_t>(i)]).norm());
  }
  for (int i : {N / 2, N}) {
    MatrixXd rep = MatrixXd::Zero(2, 2);
    for (int j = 0; j <= i; ++j) {
      const MatrixXd phi = evolution_operator(A, Bmbar, grid, i, j);
      const double w = (j == 0 || j == i) ? 0.5 * dt : dt;
      rep -= w * phi * d.Qbar0(grid.node(j)) * phi.transpose();
    }
    const MatrixXd phi0 = evolution_operator(A, Bmbar, grid, i, 0);
    rep += phi0 * d.Pbar_0 * phi0.transpose();
    err = std::max(err, (rep - triple.Pbar[static_cast<size_t>(i)]).norm());
  }
  return err;
}

// A four-dimensional rotating system with smooth time-varying coefficients
// and forcings, generic enough that no error term cancels by accident.
AffineGenerator rotating_affine() {
  MatrixXd C1(4, 4), C2(4, 4), C3(4, 4), C4(4, 4);
  C1 << 0.3, 0.1, 0.0, -0.2, -0.1, 0.2, 0.1, 0.0, 0.0, 0.1, -0.3, 0.1, 0.2,
      0.0, -0.1, 0.1;
  C2 << 0.1, -0.2, 0.1, 0.0, 0.2, 0.1, 0.0, 0.1, -0.1, 0.0, 0.2, -0.1, 0.0,
      0.1, 0.1, 0.2;
  C3 << 0.2, 0.0, -0.1, 0.1, 0.1, 0.3, 0.0, -0.1, 0.0, 0.1, 0.2, 0.0, -0.1,
      0.0, 0.1, 0.3;
  C4 << 0.1, 0.1, 0.0, 0.0, -0.1, 0.2, 0.1, 0.0, 0.1, 0.0, 0.1, 0.1, 0.0,
      -0.1, 0.0, 0.2;
  VectorXd w1(4), w2(4), w3(4);
  w1 << 0.4, -0.3, 0.2, 0.1;
  w2 << -0.2, 0.3, 0.1, -0.4;
  w3 << 0.3, 0.1, -0.2, 0.2;

  AffineGenerator aff;
  aff.dim = 4;
  aff.B11 = [C1, C2](double t) { return MatrixXd(0.1 * (C1 + std::sin(t) * C2)); };
  aff.B12 = [C3](double t) {
    return MatrixXd(-0.3 * MatrixXd::Identity(4, 4) + 0.05 * std::cos(t) * C3);
  };
  aff.B21 = [C4](double t) {
    return MatrixXd(0.4 * MatrixXd::Identity(4, 4) +
                    0.05 * std::sin(2.0 * t) * C4);
  };
  aff.B22 = [C2](double t) { return MatrixXd(0.1 * std::cos(t) * C2); };
  aff.b0 = [w1](double t) { return VectorXd(0.2 * std::cos(t) * w1); };
  aff.g0 = [w2](double t) { return VectorXd(0.15 * std::sin(2.0 * t) * w2); };
  aff.H = 0.1 * C1;
  aff.h0 = 0.3 * w3;
  return aff;
}

// A genuinely nonlinear scalar generator for the sampling paths.
GeneratorTriple soft_toy() {
  GeneratorTriple gen;
  gen.name = "soft_toy";
  gen.A = SpectralOperator::symmetric_negative({-1.0});
  gen.dim = 1;
  gen.b = [](double, const VectorXd& y, const VectorXd& psi) {
    return VectorXd(-psi + 0.1 * y.array().sin().matrix());
  };
  gen.g = [](double, const VectorXd& y, const VectorXd& psi) {
    return VectorXd(y + 0.05 * psi.array().sin().matrix());
  };
  gen.h = [](const VectorXd& y) { return VectorXd(VectorXd::Zero(y.size())); };
  gen.b_y = [](double, const VectorXd& y, const VectorXd&) {
    return MatrixXd(0.1 * y.array().cos().matrix().asDiagonal());
  };
  gen.b_psi = [](double, const VectorXd&, const VectorXd&) {
    return MatrixXd(-MatrixXd::Identity(1, 1));
  };
  gen.g_y = [](double, const VectorXd&, const VectorXd&) {
    return MatrixXd(MatrixXd::Identity(1, 1));
  };
  gen.g_psi = [](double, const VectorXd&, const VectorXd& psi) {
    return MatrixXd(0.05 * psi.array().cos().matrix().asDiagonal());
  };
  gen.h_y = [](const VectorXd&) { return MatrixXd(MatrixXd::Zero(1, 1)); };
  return gen;
}

}  // namespace

TEST_CASE("closed-form blocks collapse to constants at the balanced weights") {
  const auto A = SpectralOperator::symmetric_negative({-1.0});
  const TimeGrid grid(1.0, 64);
  const auto triple = closed_form_pi(A, collapsed_params(), grid);
  for (int k = 0; k <= grid.steps; ++k) {
    CHECK(triple.P[k](0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(triple.Pbar[k](0, 0) == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(triple.Gamma[k](0, 0) == 0.0);
  }
}

TEST_CASE("general route reproduces the constant closed form to second order") {
  const auto A = SpectralOperator::symmetric_negative({-1.0});
  const TimeGrid grid(1.0, 2000);
  const auto data = LyapunovData::from_params(collapsed_params(), 1);
  const auto triple = solve_lyapunov_triple(A, data, grid);
  double sup = 0.0;
  for (int k = 0; k <= grid.steps; ++k) {
    sup = std::max(sup, std::abs(triple.P[k](0, 0) - 1.0));
    sup = std::max(sup, std::abs(triple.Pbar[k](0, 0) + 1.0));
    CHECK(triple.Gamma[k](0, 0) == 0.0);
  }
  CHECK(sup < 1e-6);
}

TEST_CASE("skew group route transports the blocks exactly for scalar drift") {
  const auto A = SpectralOperator::skew({1.0});
  LyapunovParams p;
  p.gamma = 0.5;
  p.theta = 0.25;
  const TimeGrid grid(1.0, 97);
  const auto data = LyapunovData::from_params(p, 2);
  const auto num = solve_lyapunov_triple(A, data, grid);
  const auto exact = closed_form_pi(A, p, grid);
  CHECK(sup_block_error(num, exact) < 1e-12);
  const double tau = 1.0 - grid.node(40);
  CHECK(num.P[40](0, 0) == doctest::Approx(1.0 + tau).epsilon(1e-13));
  CHECK(num.P[40](0, 1) == doctest::Approx(0.0));
  CHECK(num.Gamma[40](1, 1) ==
        doctest::Approx(0.5 + 0.25 * tau).epsilon(1e-13));
}

TEST_CASE("general and closed-form routes agree on a stiff symmetric pair") {
  const auto A = SpectralOperator::symmetric_negative({-1.0, -2.0});
  LyapunovParams p;
  p.p1 = 0.8;
  p.pbar0 = 1.2;
  p.q0 = 0.6;
  p.qbar0 = 0.9;
  p.gamma = 0.5;
  p.theta = 0.4;
  p.m = 0.3;
  p.mbar = 0.5;
  const TimeGrid grid(1.0, 40000);
  const auto num = solve_lyapunov_triple(A, LyapunovData::from_params(p, 2), grid);
  const auto exact = closed_form_pi(A, p, grid);
  CHECK(sup_block_error(num, exact) <= 1e-8);
}

TEST_CASE("sampled blocks satisfy their evolution-operator representations") {
  const auto A = SpectralOperator::skew({1.3});
  const auto d = rotating_data();
  const double coarse = representation_error(A, d, 160);
  const double fine = representation_error(A, d, 320);
  CHECK(fine < 1e-3);
  CHECK(coarse / fine > 2.5);
  CHECK(coarse / fine < 6.0);
}

TEST_CASE("positive weights keep the diagonal blocks signed") {
  const auto A = SpectralOperator::symmetric_negative({-1.0, -2.0});
  const auto data = LyapunovData::constant(
      (MatrixXd(2, 2) << 0.2, 0, 0, -0.1).finished(),
      (MatrixXd(2, 2) << 0.1, 0, 0, 0.3).finished(),
      (MatrixXd(2, 2) << 1.0, 0, 0, 2.0).finished(),
      (MatrixXd(2, 2) << 0.5, 0, 0, 1.5).finished(),
      (MatrixXd(2, 2) << 0.3, 0, 0, -0.2).finished(),
      (MatrixXd(2, 2) << 1.0, 0, 0, 0.5).finished(),
      (MatrixXd(2, 2) << -1.0, 0, 0, -2.0).finished(),
      (MatrixXd(2, 2) << 0.4, 0, 0, 0.1).finished());
  const TimeGrid grid(1.0, 400);
  const auto triple = solve_lyapunov_triple(A, data, grid);
  for (int k = 0; k <= grid.steps; ++k) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> ep(triple.P[k]);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eb(triple.Pbar[k]);
    CHECK(ep.eigenvalues().minCoeff() > 0.0);
    CHECK(eb.eigenvalues().maxCoeff() < 0.0);
  }
}

TEST_CASE("symmetric kind rejects data that leaves the spectral axes") {
  const auto A = SpectralOperator::symmetric_negative({-1.0, -2.0});
  auto data = LyapunovData::from_params(collapsed_params(), 2);
  data.M = [](double) {
    return (MatrixXd(2, 2) << 0.0, 0.3, 0.0, 0.0).finished();
  };
  const TimeGrid grid(1.0, 16);
  CHECK_THROWS_AS(solve_lyapunov_triple(A, data, grid), ConfigError);

  auto data2 = LyapunovData::from_params(collapsed_params(), 2);
  data2.Gamma_T = (MatrixXd(2, 2) << 0.0, 1.0, 0.0, 0.0).finished();
  CHECK_THROWS_AS(solve_lyapunov_triple(A, data2, grid), ConfigError);

  const auto skew = SpectralOperator::skew({1.0});
  auto free_data = rotating_data();
  CHECK_NOTHROW(solve_lyapunov_triple(skew, free_data, grid));
}

TEST_CASE("data validation rejects shape and symmetry defects") {
  const auto A = SpectralOperator::symmetric_negative({-1.0});
  const TimeGrid grid(1.0, 8);
  auto data = LyapunovData::from_params(collapsed_params(), 1);
  data.dim = 2;
  CHECK_THROWS_AS(solve_lyapunov_triple(A, data, grid), ConfigError);

  const auto A2 = SpectralOperator::symmetric_negative({-1.0, -2.0});
  auto asym = LyapunovData::from_params(collapsed_params(), 2);
  asym.Q0 = [](double) {
    return (MatrixXd(2, 2) << 1.0, 0.3, 0.0, 1.0).finished();
  };
  CHECK_THROWS_AS(solve_lyapunov_triple(A2, asym, grid), ConfigError);

  auto bad_terminal = LyapunovData::from_params(collapsed_params(), 2);
  bad_terminal.P_T = (MatrixXd(2, 2) << 1.0, 0.5, 0.0, 1.0).finished();
  CHECK_THROWS_AS(solve_lyapunov_triple(A2, bad_terminal, grid), ConfigError);

  LyapunovParams zero_weight;
  zero_weight.p1 = 0.0;
  CHECK_THROWS_AS(LyapunovData::from_params(zero_weight, 1), ConfigError);
}

TEST_CASE("closed form enforces the drift bound and allows the boundary") {
  const auto A = SpectralOperator::symmetric_negative({-1.0, -2.0});
  const TimeGrid grid(1.0, 10);
  LyapunovParams below;
  below.m = -1.2;
  below.mbar = -1.2;
  CHECK_THROWS_AS(closed_form_pi(A, below, grid), ConfigError);

  LyapunovParams boundary;
  boundary.m = -1.0;
  boundary.mbar = -1.0;
  const auto triple = closed_form_pi(A, boundary, grid);
  CHECK(triple.P[0](0, 0) == doctest::Approx(2.0).epsilon(1e-13));
  CHECK(triple.P[0](1, 1) ==
        doctest::Approx(0.5 * (1.0 + std::exp(-2.0))).epsilon(1e-13));
}

TEST_CASE("eta and the decay profile match their limits") {
  CHECK(eta_kappa(0.0) == doctest::Approx(1.0));
  CHECK(eta_kappa(1.0) == doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-14));
  CHECK(std::abs(eta_kappa(1e-8) - (1.0 + 0.5e-8)) < 1e-12);
  CHECK(decay_profile(1.0, 1.0, 1.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(decay_profile(1.3, 0.7, 1e-9) - 2.0) < 1e-6);
  CHECK(std::abs(decay_profile(1.3, 0.7, 50.0) - 0.7 / 50.0) < 1e-6);
}

TEST_CASE("decay profile is strictly monotone on random parameters") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> weight(0.1, 5.0);
  std::uniform_real_distribution<double> rate(1e-6, 60.0);
  for (int i = 0; i < 1000; ++i) {
    const double alpha = weight(rng);
    const double beta = weight(rng);
    double k1 = rate(rng);
    double k2 = rate(rng);
    if (k1 > k2) std::swap(k1, k2);
    if (k2 - k1 < 1e-9) continue;
    CHECK(decay_profile(alpha, beta, k2) < decay_profile(alpha, beta, k1));
  }
}

TEST_CASE("energy balance vanishes for a decoupled certificate") {
  const auto A = SpectralOperator::symmetric_negative({-1.0});
  auto aff = AffineGenerator::zero(1);
  aff.h0 = vec1(0.7);
  const TimeGrid grid(1.0, 4000);
  const auto traj = solve_via_decoupling(A, aff, vec1(1.3), grid);

  LyapunovSpec spec;
  spec.params = collapsed_params();
  const auto cert = certificate_draft(A, spec, grid);
  CHECK(energy_identity_residual(A, aff, traj, cert) < 1e-10);
}

TEST_CASE("energy defect shrinks at second order") {
  const auto A = SpectralOperator::skew({0.7, 1.3});
  const auto aff = rotating_affine();
  LyapunovParams p;
  p.p1 = 1.1;
  p.pbar0 = 0.9;
  p.q0 = 1.3;
  p.qbar0 = 0.8;
  p.gamma = 0.4;
  p.theta = 0.3;
  p.m = 0.2;
  p.mbar = 0.5;
  VectorXd x(4);
  x << 0.4, -0.3, 0.2, 0.1;

  auto residual_at = [&](int N) {
    const TimeGrid grid(1.0, N);
    LyapunovSpec spec;
    spec.params = p;
    const auto cert = certificate_draft(A, spec, grid);
    const auto shot = solve_shooting_skew(A, aff, x, grid);
    return energy_identity_residual(A, aff, shot.traj, cert);
  };
  const double r500 = residual_at(500);
  const double r1000 = residual_at(1000);
  const double r2000 = residual_at(2000);
  CHECK(r500 / r1000 > 3.2);
  CHECK(r500 / r1000 < 4.8);
  CHECK(r1000 / r2000 > 3.2);
  CHECK(r1000 / r2000 < 4.8);
}

TEST_CASE("energy balance rejects mismatched grids") {
  const auto A = SpectralOperator::symmetric_negative({-1.0});
  auto aff = AffineGenerator::zero(1);
  const auto traj = solve_via_decoupling(A, aff, vec1(1.0), TimeGrid(1.0, 200));
  LyapunovSpec spec;
  spec.params = collapsed_params();
  const auto cert = certificate_draft(A, spec, TimeGrid(1.0, 100));
  CHECK_THROWS_AS(energy_identity_residual(A, aff, traj, cert), ConfigError);
}

TEST_CASE("certificate spec must choose exactly one route") {
  const auto A = SpectralOperator::symmetric_negative({-1.0});
  const TimeGrid grid(1.0, 10);
  LyapunovSpec neither;
  CHECK_THROWS_AS(certificate_draft(A, neither, grid), ConfigError);
  LyapunovSpec both;
  both.params = collapsed_params();
  both.data = LyapunovData::from_params(collapsed_params(), 1);
  CHECK_THROWS_AS(certificate_draft(A, both, grid), ConfigError);
}

TEST_CASE("wellposedness margins certify the balanced toy") {
  const auto A = SpectralOperator::symmetric_negative({-1.0});
  const auto gen = make_builtin("monotone_toy", json::object());
  const TimeGrid grid(1.0, 200);
  LyapunovSpec spec;
  spec.params = balanced_params();
  auto cert = check_wellposedness_conditions(
      A, gen, certificate_draft(A, spec, grid), 1.0, 16, 0.0, 7);

  CHECK(cert.verdict == CertificateVerdict::Both);
  CHECK(!cert.worst.has_value());
  const double e2 = std::exp(-2.0);
  CHECK(cert.margins.delta_tT ==
        doctest::Approx(0.5 * (1.0 + e2)).epsilon(1e-12));
  CHECK(cert.margins.delta_T == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cert.margins.delta_interior == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cert.margins.epsilon ==
        doctest::Approx(-2.0 + 0.5 * (1.0 - e2)).epsilon(1e-12));
  CHECK(cert.margins.mu == doctest::Approx(0.5).epsilon(1e-12));
  // sup |eig(Pi)| sits at the endpoints of the horizon; K doubles its square
  // since the interior margin is exactly one.
  const double top =
      0.25 * (1.0 - e2) + std::sqrt(std::pow(0.25 * (3.0 + e2), 2) + 1.0);
  CHECK(cert.margins.K == doctest::Approx(2.0 * top * top).epsilon(1e-12));
  CHECK(cert.sample_budget == 16);
  CHECK(cert.seed == 7);
}

TEST_CASE("wellposedness margins catch the sign-flipped coupling") {
  const auto A = SpectralOperator::symmetric_negative({-1.0});
  const auto gen = make_builtin(
      "custom_affine",
      json{{"A", -1.0}, {"B12", 1.0}, {"B21", -1.0}});
  const TimeGrid grid(1.0, 200);
  LyapunovSpec spec;
  spec.params = balanced_params();
  auto cert = check_wellposedness_conditions(
      A, gen, certificate_draft(A, spec, grid), 1.0, 16);

  CHECK(cert.verdict == CertificateVerdict::Fail);
  const double e2 = std::exp(-2.0);
  CHECK(cert.margins.delta_interior ==
        doctest::Approx(-0.5 * (3.0 - e2)).epsilon(1e-12));
  CHECK(cert.margins.epsilon ==
        doctest::Approx(2.0 + 0.5 * (1.0 - e2)).epsilon(1e-12));
  CHECK(cert.margins.mu == 0.0);
  CHECK(cert.margins.K == 0.0);
  REQUIRE(cert.worst.has_value());
  CHECK(cert.worst->condition == "coupled drift inequality");
}

TEST_CASE("degenerate certificate fails at the endpoint sign") {
  const auto A = SpectralOperator::symmetric_negative({-1.0});
  const auto gen = make_builtin("monotone_toy", json::object());
  const TimeGrid grid(1.0, 50);
  const MatrixXd Z = MatrixXd::Zero(1, 1);
  LyapunovSpec spec;
  spec.data = LyapunovData::constant(Z, Z, Z, Z, Z, Z, Z, Z);
  auto cert = check_wellposedness_conditions(
      A, gen, certificate_draft(A, spec, grid), 1.0, 4);
  CHECK(cert.verdict == CertificateVerdict::Fail);
  REQUIRE(cert.worst.has_value());
  CHECK(cert.worst->condition == "endpoint sign");
}

TEST_CASE("verdict is monotone in the requested margin") {
  const auto A = SpectralOperator::symmetric_negative({-1.0});
  const auto gen = make_builtin("monotone_toy", json::object());
  const TimeGrid grid(1.0, 100);
  LyapunovSpec spec;
  spec.params = balanced_params();
  const auto draft = certificate_draft(A, spec, grid);

  std::vector<CertificateVerdict> verdicts;
  for (double delta : {0.0, 0.5, 0.6, 0.9}) {
    auto cert = check_wellposedness_conditions(A, gen, draft, 1.0, 8, delta);
    verdicts.push_back(cert.verdict);
    if (cert.verdict == CertificateVerdict::Fail) {
      REQUIRE(cert.worst.has_value());
      CHECK(cert.worst->condition == "endpoint sign");
    }
  }
  CHECK(verdicts[0] == CertificateVerdict::Both);
  CHECK(verdicts[1] == CertificateVerdict::Both);
  CHECK(verdicts[2] == CertificateVerdict::Fail);
  CHECK(verdicts[3] == CertificateVerdict::Fail);
}

TEST_CASE("terminal slope feeds the compatibility block") {
  const auto A = SpectralOperator::symmetric_negative({-1.0});
  const auto gen = make_builtin(
      "custom_affine",
      json{{"A", -1.0}, {"B12", -1.0}, {"B21", 1.0}, {"H", 0.5}});
  const TimeGrid grid(1.0, 200);
  LyapunovSpec spec;
  spec.params = balanced_params();
  auto cert = check_wellposedness_conditions(
      A, gen, certificate_draft(A, spec, grid), 1.0, 8);
  CHECK(cert.verdict == CertificateVerdict::Both);
  const double pbarT = -0.5 * (1.0 + std::exp(-2.0));
  CHECK(cert.margins.delta_T ==
        doctest::Approx(1.0 + 1.0 + 0.25 * pbarT).epsilon(1e-12));
}

TEST_CASE("checker is deterministic given the seed") {
  const auto gen = soft_toy();
  const TimeGrid grid(1.0, 60);
  LyapunovSpec spec;
  spec.params = balanced_params();
  const auto draft = certificate_draft(gen.A, spec, grid);
  const auto a =
      check_wellposedness_conditions(gen.A, gen, draft, 0.75, 16, 0.0, 11);
  const auto b =
      check_wellposedness_conditions(gen.A, gen, draft, 0.75, 16, 0.0, 11);
  CHECK(a.margins.delta_T == b.margins.delta_T);
  CHECK(a.margins.delta_interior == b.margins.delta_interior);
  CHECK(a.margins.epsilon == b.margins.epsilon);
  CHECK(a.verdict == b.verdict);
  CHECK(a.sample_ball_radius == 0.75);
  CHECK(a.seed == 11);
}

TEST_CASE("monotone generator screen separates the toy from its flip") {
  const TimeGrid grid(1.0, 40);
  const auto toy = make_builtin("monotone_toy", json::object());
  const auto rep = check_monotone_generator(toy, grid, 1.0, 8);
  CHECK(rep.holds);
  CHECK(rep.delta == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(rep.terminal_margin == doctest::Approx(0.0));

  const auto flipped = make_builtin(
      "custom_affine",
      json{{"A", -1.0}, {"B12", 1.0}, {"B21", -1.0}});
  const auto bad = check_monotone_generator(flipped, grid, 1.0, 8);
  CHECK(!bad.holds);
  CHECK(bad.delta == 0.0);

  const auto lq = make_builtin("lq", json::object());
  const auto ctrl = check_monotone_generator(lq, grid, 1.0, 8);
  CHECK(ctrl.holds);
  CHECK(ctrl.delta == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("general drift family certifies the rotating toy") {
  const auto A = SpectralOperator::skew({1.0});
  const auto gen = make_builtin(
      "monotone_toy", json{{"A", {{"kind", "skew"}, {"frequencies", {1.0}}}}});
  LyapunovParams p;
  p.q0 = 2.0;
  p.qbar0 = 2.0;
  p.gamma = 1.0;
  p.m = 0.5;
  p.mbar = 0.5;
  const TimeGrid grid(1.0, 400);
  auto cert = check_closed_form_family(A, gen, p, grid,
                                       ClosedFormFamily::GeneralDrift, 1.0);
  CHECK(cert.verdict == CertificateVerdict::Both);
  CHECK(cert.margins.delta_interior ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(cert.margins.epsilon ==
        doctest::Approx(-(1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(cert.margins.delta_T == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cert.margins.delta_tT == doctest::Approx(1.0).epsilon(1e-12));

  LyapunovParams mismatch = p;
  mismatch.mbar = 0.6;
  CHECK_THROWS_AS(check_closed_form_family(A, gen, mismatch, grid,
                                           ClosedFormFamily::GeneralDrift, 1.0),
                  ConfigError);
  LyapunovParams at_boundary = p;
  at_boundary.m = 0.0;
  at_boundary.mbar = 0.0;
  CHECK_THROWS_AS(check_closed_form_family(A, gen, at_boundary, grid,
                                           ClosedFormFamily::GeneralDrift, 1.0),
                  ConfigError);
}

TEST_CASE("boundary family certifies the zero-mode toy") {
  const auto A = SpectralOperator::skew({}, 1);
  const auto gen = make_builtin(
      "monotone_toy",
      json{{"A", {{"kind", "skew"}, {"zero_modes", 1}}}});
  LyapunovParams p;
  p.gamma = 1.0;
  const TimeGrid grid(1.0, 200);
  auto cert = check_closed_form_family(A, gen, p, grid,
                                       ClosedFormFamily::BoundaryDrift, 1.0);
  CHECK(cert.verdict == CertificateVerdict::Both);
  CHECK(cert.margins.delta_tT == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cert.margins.delta_T == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cert.margins.delta_interior == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cert.margins.epsilon == doctest::Approx(-1.0).epsilon(1e-12));

  LyapunovParams off = p;
  off.m = 0.1;
  off.mbar = 0.1;
  CHECK_THROWS_AS(check_closed_form_family(A, gen, off, grid,
                                           ClosedFormFamily::BoundaryDrift, 1.0),
                  ConfigError);
}

TEST_CASE("coupling family chooses its weight on the control pair") {
  const auto A = SpectralOperator::symmetric_negative({-1.0});
  const auto gen = make_builtin("lq", json{{"Q", 2.0}});
  LyapunovParams p;
  p.m = -1.0;
  p.mbar = -1.0;
  const TimeGrid grid(1.0, 200);
  auto cert = check_closed_form_family(A, gen, p, grid,
                                       ClosedFormFamily::SchurCoupling, 1.0);
  CHECK(cert.verdict == CertificateVerdict::Both);
  REQUIRE(cert.spec.params.has_value());
  CHECK(cert.spec.params->gamma == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(cert.margins.delta_interior == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(cert.margins.epsilon ==
        doctest::Approx(0.5 * (-15.0 + std::sqrt(61.0))).epsilon(1e-12));
  CHECK(cert.margins.delta_T == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cert.margins.delta_tT == doctest::Approx(1.0).epsilon(1e-12));

  const auto unpaired = make_builtin(
      "custom_affine",
      json{{"A", -1.0}, {"B11", 0.3}, {"B22", -0.3}, {"B12", -1.0},
           {"B21", 1.0}});
  auto bad = check_closed_form_family(A, unpaired, p, grid,
                                      ClosedFormFamily::SchurCoupling, 1.0);
  CHECK(bad.verdict == CertificateVerdict::Fail);
  REQUIRE(bad.worst.has_value());
  CHECK(bad.worst->condition == "paired first-order blocks");

  LyapunovParams with_gamma = p;
  with_gamma.gamma = 1.0;
  CHECK_THROWS_AS(check_closed_form_family(A, gen, with_gamma, grid,
                                           ClosedFormFamily::SchurCoupling, 1.0),
                  ConfigError);
}

TEST_CASE("fixed-weight terminal families test the sandwich sign") {
  const TimeGrid grid(1.0, 100);
  const auto A1 = SpectralOperator::symmetric_negative({-1.0});
  const auto toy = make_builtin("monotone_toy", json::object());
  auto shifted = check_closed_form_family(A1, toy, LyapunovParams{}, grid,
                                          ClosedFormFamily::ShiftedTerminal, 1.0);
  CHECK(shifted.verdict == CertificateVerdict::Both);
  CHECK(shifted.margins.delta_T == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(shifted.margins.epsilon == doctest::Approx(-1.0).epsilon(1e-12));

  const auto A2 = SpectralOperator::symmetric_negative({-1.0, -2.0});
  const auto toy2 = make_builtin(
      "monotone_toy",
      json{{"A", {{"kind", "symmetric_negative"}, {"eigenvalues", {-1.0, -2.0}}}}});
  auto weighted = check_closed_form_family(A2, toy2, LyapunovParams{}, grid,
                                           ClosedFormFamily::ShiftedTerminal, 1.0);
  CHECK(weighted.Pi.front()(1, 1) ==
        doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
  CHECK(weighted.Pi.back()(1, 1) == doctest::Approx(1.0).epsilon(1e-12));

  auto contractive = check_closed_form_family(
      A1, toy, LyapunovParams{}, grid, ClosedFormFamily::ContractiveTerminal,
      1.0);
  CHECK(contractive.verdict == CertificateVerdict::Fail);
  CHECK(contractive.margins.epsilon == doctest::Approx(2.0).epsilon(1e-12));
  REQUIRE(contractive.worst.has_value());
  CHECK(contractive.worst->condition == "generator sandwich");

  auto combined = check_closed_form_family(A1, toy, LyapunovParams{}, grid,
                                           ClosedFormFamily::CombinedTerminal,
                                           1.0);
  CHECK(combined.margins.delta_T == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("raw type conditions accept the derived pair and reject a small K") {
  const auto A = SpectralOperator::symmetric_negative({-1.0});
  const auto gen = make_builtin("monotone_toy", json::object());
  const TimeGrid grid(1.0, 200);
  LyapunovSpec spec;
  spec.params = balanced_params();
  const auto draft = certificate_draft(A, spec, grid);
  const auto certified =
      check_wellposedness_conditions(A, gen, draft, 1.0, 8);
  REQUIRE(certified.verdict == CertificateVerdict::Both);

  auto raw = check_type_conditions_raw(gen, draft, certified.margins.mu,
                                       certified.margins.K, 1.0, 8);
  CHECK(raw.verdict == CertificateVerdict::Both);
  CHECK(raw.margins.mu == certified.margins.mu);
  CHECK(raw.margins.K == certified.margins.K);

  // A tiny K breaks the interior corner hardest: its Schur complement grows
  // like |Pi|^2 / K, so that is the condition the tracker reports.
  auto squeezed = check_type_conditions_raw(gen, draft, 0.5, 0.1, 1.0, 8);
  CHECK(squeezed.verdict == CertificateVerdict::Fail);
  REQUIRE(squeezed.worst.has_value());
  CHECK(squeezed.worst->condition == "interior corner");

  CHECK_THROWS_AS(check_type_conditions_raw(gen, draft, 0.0, 1.0, 1.0, 8),
                  ConfigError);
}
