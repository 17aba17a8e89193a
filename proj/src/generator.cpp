#include "fbee/generator.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <utility>

#include "fbee/errors.hpp"
#include "fbee/sampling.hpp"

namespace fbee {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

double spectral_norm(const MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<MatrixXd> svd(m);
  return svd.singularValues()(0);
}

double sym_lambda_max(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()),
                                             Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

// Cost weights must be symmetric positive definite to be inverted; the
// threshold matches the solver-wide singularity tolerance.
Eigen::LLT<MatrixXd> checked_weight_factor(const MatrixXd& R,
                                           const std::string& field) {
  if ((R - R.transpose()).norm() > 1e-12 * std::max(1.0, R.norm()))
    throw ConfigError(field + " must be symmetric");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(R, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < tol::singular)
    throw ConfigError(field + " is not invertible (min eigenvalue < 1e-10)");
  return R.llt();
}

MatrixXd neg_feedback_gain(const MatrixXd& B, const Eigen::LLT<MatrixXd>& R) {
  return -B * R.solve(B.transpose());
}

SpectralOperator default_operator(const json& params, int n) {
  if (params.contains("A")) return operator_from_json(params.at("A"));
  return SpectralOperator::symmetric_negative(std::vector<double>(n, -1.0));
}

int infer_dim(const json& params) {
  if (params.contains("n")) return params.at("n").get<int>();
  if (params.contains("A")) return operator_from_json(params.at("A")).dim;
  for (const char* field : {"Q", "G", "B11", "B12", "B21", "B22"}) {
    if (params.contains(field) && params.at(field).is_array())
      return static_cast<int>(params.at(field).size());
  }
  return 1;
}

GeneratorTriple make_lq(const json& params) {
  const int n = infer_dim(params);
  SpectralOperator A = default_operator(params, n);
  if (A.dim != n) throw ConfigError("lq: operator dim does not match n");

  MatrixXd B = params.contains("B")
                   ? matrix_from_json(params.at("B"), n, -1, "B")
                   : MatrixXd::Identity(n, n);
  const int m = static_cast<int>(B.cols());
  MatrixXd R = params.contains("R")
                   ? matrix_from_json(params.at("R"), m, m, "R")
                   : MatrixXd::Identity(m, m);
  MatrixXd S = params.contains("S")
                   ? matrix_from_json(params.at("S"), m, n, "S")
                   : MatrixXd::Zero(m, n);
  MatrixXd Q = params.contains("Q")
                   ? matrix_from_json(params.at("Q"), n, n, "Q")
                   : MatrixXd::Identity(n, n);
  MatrixXd G = params.contains("G")
                   ? matrix_from_json(params.at("G"), n, n, "G")
                   : MatrixXd::Zero(n, n);

  auto Rf = checked_weight_factor(R, "R");
  MatrixXd B11 = -B * Rf.solve(S);
  MatrixXd B12 = neg_feedback_gain(B, Rf);
  MatrixXd B21 = Q - S.transpose() * Rf.solve(S);
  MatrixXd B22 = -S.transpose() * Rf.solve(B.transpose());

  auto aff = AffineGenerator::constant(B11, B12, B21, B22, VectorXd::Zero(n),
                                       VectorXd::Zero(n), G, VectorXd::Zero(n));
  auto gen = GeneratorTriple::from_affine("lq", std::move(A), std::move(aff));
  gen.lipschitz = std::max({spectral_norm(B11), spectral_norm(B12),
                            spectral_norm(B21), spectral_norm(B22),
                            spectral_norm(G)});
  return gen;
}

GeneratorTriple make_linear_convex(const json& params) {
  const int n = infer_dim(params);
  SpectralOperator A = default_operator(params, n);
  if (A.dim != n)
    throw ConfigError("linear_convex: operator dim does not match n");

  MatrixXd B = params.contains("B")
                   ? matrix_from_json(params.at("B"), n, -1, "B")
                   : MatrixXd::Identity(n, n);
  const int m = static_cast<int>(B.cols());
  MatrixXd R = params.contains("R")
                   ? matrix_from_json(params.at("R"), m, m, "R")
                   : MatrixXd::Identity(m, m);
  MatrixXd Q = params.contains("Q")
                   ? matrix_from_json(params.at("Q"), n, n, "Q")
                   : MatrixXd::Identity(n, n);
  MatrixXd G = params.contains("G")
                   ? matrix_from_json(params.at("G"), n, n, "G")
                   : MatrixXd::Zero(n, n);

  auto Rf = checked_weight_factor(R, "R");
  MatrixXd B12 = neg_feedback_gain(B, Rf);

  auto aff = AffineGenerator::constant(MatrixXd::Zero(n, n), B12, Q,
                                       MatrixXd::Zero(n, n), VectorXd::Zero(n),
                                       VectorXd::Zero(n), G, VectorXd::Zero(n));
  auto gen =
      GeneratorTriple::from_affine("linear_convex", std::move(A), std::move(aff));
  gen.lipschitz = std::max({spectral_norm(B12), spectral_norm(Q),
                            spectral_norm(G)});
  return gen;
}

GeneratorTriple make_aq(const json& params) {
  const double amp = params.value("amplitude", 0.1);
  if (amp == 0.0) {
    // The zero-amplitude problem is exactly the linear-convex one; reuse its
    // closures so the two produce bit-identical trajectories.
    auto gen = make_linear_convex(params);
    gen.name = "aq";
    return gen;
  }

  const int n = infer_dim(params);
  SpectralOperator A = default_operator(params, n);
  if (A.dim != n) throw ConfigError("aq: operator dim does not match n");

  MatrixXd B = params.contains("B")
                   ? matrix_from_json(params.at("B"), n, -1, "B")
                   : MatrixXd::Identity(n, n);
  const int m = static_cast<int>(B.cols());
  MatrixXd R = params.contains("R")
                   ? matrix_from_json(params.at("R"), m, m, "R")
                   : MatrixXd::Identity(m, m);
  MatrixXd Q = params.contains("Q")
                   ? matrix_from_json(params.at("Q"), n, n, "Q")
                   : MatrixXd::Identity(n, n);
  MatrixXd G = params.contains("G")
                   ? matrix_from_json(params.at("G"), n, n, "G")
                   : MatrixXd::Zero(n, n);

  auto Rf = checked_weight_factor(R, "R");
  MatrixXd B12 = neg_feedback_gain(B, Rf);

  GeneratorTriple gen;
  gen.name = "aq";
  gen.A = std::move(A);
  gen.dim = n;
  gen.b = [amp, B12](double, const VectorXd& y, const VectorXd& psi) {
    return VectorXd(amp * y.array().tanh() + (B12 * psi).array());
  };
  gen.b_y = [amp, n](double, const VectorXd& y, const VectorXd&) {
    VectorXd t = y.array().tanh();
    MatrixXd J = MatrixXd::Zero(n, n);
    J.diagonal() = amp * (1.0 - t.array().square());
    return J;
  };
  gen.b_psi = [B12](double, const VectorXd&, const VectorXd&) { return B12; };
  gen.g = [amp, Q](double, const VectorXd& y, const VectorXd& psi) {
    VectorXd t = y.array().tanh();
    return VectorXd(Q * y +
                    (amp * (1.0 - t.array().square()) * psi.array()).matrix());
  };
  gen.g_y = [amp, Q](double, const VectorXd& y, const VectorXd& psi) {
    VectorXd t = y.array().tanh();
    MatrixXd J = Q;
    J.diagonal() += VectorXd(amp * (-2.0) * t.array() *
                             (1.0 - t.array().square()) * psi.array());
    return J;
  };
  gen.g_psi = [amp, n](double, const VectorXd& y, const VectorXd&) {
    VectorXd t = y.array().tanh();
    MatrixXd J = MatrixXd::Zero(n, n);
    J.diagonal() = amp * (1.0 - t.array().square());
    return J;
  };
  gen.h = [G](const VectorXd& y) { return VectorXd(G * y); };
  gen.h_y = [G](const VectorXd&) { return G; };
  // g_y grows linearly in psi through the F_y(y) psi term, so the uniform
  // Lipschitz hypotheses fail globally even though growth stays linear.
  gen.flags = {true, false, true, false};
  return gen;
}

GeneratorTriple make_parabolic_logistic(const json& params) {
  if (params.contains("A"))
    throw ConfigError(
        "parabolic_logistic builds its own diffusion operator; drop \"A\"");
  const int n = params.value("n", 32);
  if (n < 1) throw ConfigError("parabolic_logistic: n must be >= 1");
  const double lambda = params.value("lambda", 1.0);
  const double L = params.value("L", 1.0);
  const double M = params.value("M", 1.0);
  const double N = params.value("N", 100.0);
  if (!(N > 0.0)) throw ConfigError("parabolic_logistic: N must be positive");
  VectorXd f = params.contains("f")
                   ? vector_from_json(params.at("f"), n, "f")
                   : VectorXd::Constant(n, 1.0);
  VectorXd y_d = params.contains("y_d")
                     ? vector_from_json(params.at("y_d"), n, "y_d")
                     : VectorXd::Constant(n, -0.5);
  VectorXd z = params.contains("z")
                   ? vector_from_json(params.at("z"), n, "z")
                   : VectorXd::Constant(n, -0.5);

  // Dirichlet second differences on n interior points of (0,1).  The state
  // is kept in the eigenbasis; the sine transform S below is orthonormal,
  // symmetric and involutive, so it is its own inverse and adjoint.
  const double h = 1.0 / (n + 1);
  std::vector<double> mu(n);
  for (int k = 1; k <= n; ++k) {
    const double s = std::sin(0.5 * k * std::numbers::pi * h);
    mu[k - 1] = -4.0 / (h * h) * s * s;
  }
  auto A = SpectralOperator::symmetric_negative(mu);

  MatrixXd S(n, n);
  const double scale = std::sqrt(2.0 * h);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      S(j, k) = scale * std::sin((j + 1) * (k + 1) * std::numbers::pi * h);

  GeneratorTriple gen;
  gen.name = "parabolic_logistic";
  gen.A = std::move(A);
  gen.dim = n;
  // Nonlinearities act pointwise on grid values, so every closure hops to
  // the physical basis, applies the formula, and hops back.
  gen.b = [S, lambda, N, f](double, const VectorXd& yh, const VectorXd& ph) {
    VectorXd y = S * yh, p = S * ph;
    VectorXd phys =
        -lambda * y.array() - (1.0 / N) * p.array() * y.array().square() +
        f.array();
    return VectorXd(S * phys);
  };
  gen.b_y = [S, lambda, N](double, const VectorXd& yh, const VectorXd& ph) {
    VectorXd y = S * yh, p = S * ph;
    VectorXd d = -lambda - (2.0 / N) * y.array() * p.array();
    return MatrixXd(S * d.asDiagonal() * S);
  };
  gen.b_psi = [S, N](double, const VectorXd& yh, const VectorXd&) {
    VectorXd y = S * yh;
    VectorXd d = -(1.0 / N) * y.array().square();
    return MatrixXd(S * d.asDiagonal() * S);
  };
  gen.g = [S, lambda, N, L, y_d](double, const VectorXd& yh,
                                 const VectorXd& ph) {
    VectorXd y = S * yh, p = S * ph;
    VectorXd phys = -lambda * p.array() -
                    (1.0 / N) * y.array() * p.array().square() +
                    L * (y.array() - y_d.array());
    return VectorXd(S * phys);
  };
  gen.g_y = [S, N, L](double, const VectorXd&, const VectorXd& ph) {
    VectorXd p = S * ph;
    VectorXd d = L - (1.0 / N) * p.array().square();
    return MatrixXd(S * d.asDiagonal() * S);
  };
  gen.g_psi = gen.b_y;
  gen.h = [S, M, z](const VectorXd& yh) {
    VectorXd y = S * yh;
    return VectorXd(S * (M * (y.array() - z.array())).matrix());
  };
  gen.h_y = [n, M](const VectorXd&) {
    return MatrixXd(M * MatrixXd::Identity(n, n));
  };
  // Cubic terms: locally Lipschitz only.
  gen.flags = {false, false, true, false};
  return gen;
}

GeneratorTriple make_custom_affine(const json& params) {
  if (!params.contains("A"))
    throw ConfigError("custom_affine requires an operator \"A\"");
  SpectralOperator A = operator_from_json(params.at("A"));
  const int n = A.dim;
  auto mat = [&](const char* field) {
    return params.contains(field)
               ? matrix_from_json(params.at(field), n, n, field)
               : MatrixXd::Zero(n, n);
  };
  auto vec = [&](const char* field) {
    return params.contains(field)
               ? vector_from_json(params.at(field), n, field)
               : VectorXd::Zero(n);
  };
  MatrixXd B11 = mat("B11"), B12 = mat("B12"), B21 = mat("B21"),
           B22 = mat("B22"), H = mat("H");
  VectorXd b0 = vec("b0"), g0 = vec("g0"), h0 = vec("h0");
  auto aff = AffineGenerator::constant(B11, B12, B21, B22, b0, g0, H, h0);
  auto gen =
      GeneratorTriple::from_affine("custom_affine", std::move(A), std::move(aff));
  gen.lipschitz = std::max({spectral_norm(B11), spectral_norm(B12),
                            spectral_norm(B21), spectral_norm(B22),
                            spectral_norm(H)});
  return gen;
}

GeneratorTriple make_monotone_toy(const json& params) {
  SpectralOperator A =
      params.contains("A")
          ? operator_from_json(params.at("A"))
          : SpectralOperator::symmetric_negative({-1.0});
  const int n = A.dim;
  auto aff = AffineGenerator::constant(
      MatrixXd::Zero(n, n), -MatrixXd::Identity(n, n),
      MatrixXd::Identity(n, n), MatrixXd::Zero(n, n), VectorXd::Zero(n),
      VectorXd::Zero(n), MatrixXd::Zero(n, n), VectorXd::Zero(n));
  auto gen =
      GeneratorTriple::from_affine("monotone_toy", std::move(A), std::move(aff));
  gen.lipschitz = 1.0;
  return gen;
}

}  // namespace

AffineGenerator AffineGenerator::constant(
    const MatrixXd& B11, const MatrixXd& B12, const MatrixXd& B21,
    const MatrixXd& B22, const VectorXd& b0, const VectorXd& g0,
    const MatrixXd& H, const VectorXd& h0) {
  const int n = static_cast<int>(B11.rows());
  for (const auto* m : {&B11, &B12, &B21, &B22, &H}) {
    if (m->rows() != n || m->cols() != n)
      throw ConfigError("affine generator blocks must be square and equal");
  }
  if (b0.size() != n || g0.size() != n || h0.size() != n)
    throw ConfigError("affine generator forcings must have the block size");
  AffineGenerator aff;
  aff.dim = n;
  aff.B11 = [B11](double) { return B11; };
  aff.B12 = [B12](double) { return B12; };
  aff.B21 = [B21](double) { return B21; };
  aff.B22 = [B22](double) { return B22; };
  aff.b0 = [b0](double) { return b0; };
  aff.g0 = [g0](double) { return g0; };
  aff.H = H;
  aff.h0 = h0;
  return aff;
}

AffineGenerator AffineGenerator::zero(int n) {
  return constant(MatrixXd::Zero(n, n), MatrixXd::Zero(n, n),
                  MatrixXd::Zero(n, n), MatrixXd::Zero(n, n),
                  VectorXd::Zero(n), VectorXd::Zero(n), MatrixXd::Zero(n, n),
                  VectorXd::Zero(n));
}

GeneratorTriple GeneratorTriple::from_affine(std::string name,
                                             SpectralOperator A,
                                             AffineGenerator aff) {
  if (A.dim != aff.dim)
    throw ConfigError("operator and affine generator dims differ");
  GeneratorTriple gen;
  gen.name = std::move(name);
  gen.A = std::move(A);
  gen.dim = aff.dim;
  gen.b = [aff](double t, const VectorXd& y, const VectorXd& psi) {
    return VectorXd(aff.B11(t) * y + aff.B12(t) * psi + aff.b0(t));
  };
  gen.g = [aff](double t, const VectorXd& y, const VectorXd& psi) {
    return VectorXd(aff.B21(t) * y + aff.B22(t) * psi + aff.g0(t));
  };
  gen.h = [aff](const VectorXd& y) { return VectorXd(aff.H * y + aff.h0); };
  gen.b_y = [aff](double t, const VectorXd&, const VectorXd&) {
    return aff.B11(t);
  };
  gen.b_psi = [aff](double t, const VectorXd&, const VectorXd&) {
    return aff.B12(t);
  };
  gen.g_y = [aff](double t, const VectorXd&, const VectorXd&) {
    return aff.B21(t);
  };
  gen.g_psi = [aff](double t, const VectorXd&, const VectorXd&) {
    return aff.B22(t);
  };
  gen.h_y = [aff](const VectorXd&) { return aff.H; };
  gen.affine = std::move(aff);
  return gen;
}

GeneratorTriple make_builtin(const std::string& name, const json& params) {
  if (!params.is_object() && !params.is_null())
    throw ConfigError("builtin params must be a JSON object");
  if (name == "lq") return make_lq(params);
  if (name == "linear_convex") return make_linear_convex(params);
  if (name == "aq") return make_aq(params);
  if (name == "parabolic_logistic") return make_parabolic_logistic(params);
  if (name == "custom_affine") return make_custom_affine(params);
  if (name == "monotone_toy") return make_monotone_toy(params);
  throw ConfigError("unknown builtin generator: " + name);
}

LipschitzProfile lipschitz_profile(const GeneratorTriple& gen,
                                   const TimeGrid& grid, double ball_radius,
                                   int sample_budget, std::uint64_t seed) {
  if (sample_budget < 1)
    throw ConfigError("lipschitz_profile: sample budget must be >= 1");
  LipschitzProfile prof;
  prof.ball_radius = ball_radius;
  prof.samples = sample_budget;
  prof.seed = seed;
  prof.L_by.assign(grid.steps + 1, 0.0);
  prof.L_gpsi.assign(grid.steps + 1, 0.0);

  BallSampler sample_y(gen.dim, ball_radius, seed);
  BallSampler sample_psi(gen.dim, ball_radius,
                         seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<VectorXd> ys, ps;
  ys.reserve(sample_budget);
  ps.reserve(sample_budget);
  for (int i = 0; i < sample_budget; ++i) {
    ys.push_back(sample_y.next());
    ps.push_back(sample_psi.next());
  }

  // Time-invariant generators are profiled at one node and the values are
  // replicated; otherwise every node is sampled.
  const int last_node = gen.time_invariant ? 0 : grid.steps;
  for (int k = 0; k <= last_node; ++k) {
    const double t = grid.node(k);
    double l_by = 0.0, l_gpsi = 0.0;
    for (int i = 0; i < sample_budget; ++i) {
      l_by = std::max(l_by, sym_lambda_max(gen.b_y(t, ys[i], ps[i])));
      l_gpsi = std::max(l_gpsi, sym_lambda_max(gen.g_psi(t, ys[i], ps[i])));
      prof.sup_b_psi =
          std::max(prof.sup_b_psi, spectral_norm(gen.b_psi(t, ys[i], ps[i])));
      prof.sup_g_y =
          std::max(prof.sup_g_y, spectral_norm(gen.g_y(t, ys[i], ps[i])));
    }
    prof.L_by[k] = std::max(0.0, l_by);
    prof.L_gpsi[k] = std::max(0.0, l_gpsi);
  }
  if (gen.time_invariant) {
    std::fill(prof.L_by.begin(), prof.L_by.end(), prof.L_by[0]);
    std::fill(prof.L_gpsi.begin(), prof.L_gpsi.end(), prof.L_gpsi[0]);
  }
  for (int i = 0; i < sample_budget; ++i)
    prof.sup_h_y = std::max(prof.sup_h_y, spectral_norm(gen.h_y(ys[i])));

  const double biggest =
      std::max({prof.sup_b_psi, prof.sup_g_y, prof.sup_h_y,
                *std::max_element(prof.L_by.begin(), prof.L_by.end()),
                *std::max_element(prof.L_gpsi.begin(), prof.L_gpsi.end())});
  prof.growth_flagged = biggest > tol::growth_limit;
  return prof;
}

SpectralOperator operator_from_json(const json& j) {
  if (j.is_number()) {
    const double mu = j.get<double>();
    return SpectralOperator::symmetric_negative({mu});
  }
  if (!j.is_object() || !j.contains("kind"))
    throw ConfigError("operator spec must be a number or {kind, ...} object");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "symmetric_negative") {
    auto eigs = j.at("eigenvalues").get<std::vector<double>>();
    return SpectralOperator::symmetric_negative(std::move(eigs));
  }
  if (kind == "skew") {
    std::vector<double> freq;
    if (j.contains("frequencies"))
      freq = j.at("frequencies").get<std::vector<double>>();
    const int zero_modes = j.value("zero_modes", 0);
    return SpectralOperator::skew(std::move(freq), zero_modes);
  }
  throw ConfigError("unknown operator kind: " + kind);
}

MatrixXd matrix_from_json(const json& j, int rows, int cols,
                          const std::string& field) {
  if (j.is_number()) {
    if (cols >= 0 && cols != rows)
      throw ConfigError(field + ": scalar shorthand needs a square matrix");
    return j.get<double>() * MatrixXd::Identity(rows, rows);
  }
  if (!j.is_array() || j.empty() || !j.front().is_array())
    throw ConfigError(field + " must be a scalar or an array of rows");
  const int r = static_cast<int>(j.size());
  const int c = static_cast<int>(j.front().size());
  if (r != rows) throw ConfigError(field + ": wrong row count");
  if (cols >= 0 && c != cols) throw ConfigError(field + ": wrong column count");
  MatrixXd m(r, c);
  for (int i = 0; i < r; ++i) {
    const auto& row = j.at(i);
    if (!row.is_array() || static_cast<int>(row.size()) != c)
      throw ConfigError(field + ": ragged rows");
    for (int k = 0; k < c; ++k) m(i, k) = row.at(k).get<double>();
  }
  return m;
}

VectorXd vector_from_json(const json& j, int n, const std::string& field) {
  if (j.is_number()) return VectorXd::Constant(n, j.get<double>());
  if (!j.is_array()) throw ConfigError(field + " must be a scalar or array");
  if (static_cast<int>(j.size()) != n)
    throw ConfigError(field + ": wrong length");
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = j.at(i).get<double>();
  return v;
}

}  // namespace fbee
