#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fbee/spectral_operator.hpp"
#include "fbee/tolerances.hpp"

namespace fbee {

// Coefficients of a forward-backward system that is affine in (y, psi):
//
//   y'   =  A y   + B11(t) y + B12(t) psi + b0(t)
//   psi' = -A*psi - B21(t) y - B22(t) psi - g0(t),  psi(T) = H y(T) + h0.
//
// Time-dependent entries are supplied as callables so solvers can sample
// them on whatever grid they use.
struct AffineGenerator {
  int dim = 0;
  std::function<Eigen::MatrixXd(double)> B11, B12, B21, B22;
  std::function<Eigen::VectorXd(double)> b0, g0;
  Eigen::MatrixXd H;
  Eigen::VectorXd h0;

  static AffineGenerator constant(const Eigen::MatrixXd& B11,
                                  const Eigen::MatrixXd& B12,
                                  const Eigen::MatrixXd& B21,
                                  const Eigen::MatrixXd& B22,
                                  const Eigen::VectorXd& b0,
                                  const Eigen::VectorXd& g0,
                                  const Eigen::MatrixXd& H,
                                  const Eigen::VectorXd& h0);
  static AffineGenerator zero(int n);
};

// Which of the standing regularity assumptions a generator satisfies
// globally.  "lipschitz_jacobian" additionally asks the Jacobians themselves
// to be Lipschitz.
struct RegularityFlags {
  bool linear_growth = true;
  bool lipschitz = true;
  bool differentiable = true;
  bool lipschitz_jacobian = true;
};

// The data (b, g, h) of a forward-backward system together with its linear
// part A, first derivatives, and structural metadata.  Evaluation must be
// pure: closures may capture precomputed matrices but no mutable state.
struct GeneratorTriple {
  std::string name;
  SpectralOperator A;
  int dim = 0;
  bool time_invariant = true;

  std::function<Eigen::VectorXd(double, const Eigen::VectorXd&,
                                const Eigen::VectorXd&)>
      b, g;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> h;

  std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&,
                                const Eigen::VectorXd&)>
      b_y, b_psi, g_y, g_psi;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> h_y;

  // Uniform Lipschitz constant when one is known in closed form.
  std::optional<double> lipschitz;
  RegularityFlags flags;

  // Present exactly when the generator is affine; linear solvers consume it.
  std::optional<AffineGenerator> affine;

  static GeneratorTriple from_affine(std::string name, SpectralOperator A,
                                     AffineGenerator aff);
};

// Builds one of the named model problems.  Parameters arrive as JSON so the
// CLI config can pass them through untouched; matrices may be given as
// nested arrays or as a scalar meaning that multiple of the identity.
//
//   lq                 Q, R, S, G, B and an operator "A"
//   linear_convex      Q, R, G, B quadratic-cost gradients, "A"
//   aq                 linear_convex plus a bounded drift amplitude*tanh(y)
//   parabolic_logistic lambda, L, M, N, f, y_d, z, n interior grid points;
//                      builds its own diffusion operator
//   custom_affine      B11, B12, B21, B22, b0, g0, H, h0, "A"
//   monotone_toy       b = -psi, g = y, h = 0 over a given "A"
GeneratorTriple make_builtin(const std::string& name,
                             const nlohmann::json& params);

// Sampled Lipschitz data over a centered ball, used by certificates and the
// continuation step bound.  Per-node values are lower bounds obtained by
// maximizing over the sample set; the ball radius and seed are recorded so
// every downstream artifact can state what was actually explored.
struct LipschitzProfile {
  std::vector<double> L_by;    // per grid node, [lambda_max(sym b_y)]^+
  std::vector<double> L_gpsi;  // per grid node, [lambda_max(sym g_psi)]^+
  double sup_b_psi = 0.0;
  double sup_g_y = 0.0;
  double sup_h_y = 0.0;
  double ball_radius = 0.0;
  int samples = 0;
  std::uint64_t seed = 0;
  bool growth_flagged = false;  // some sampled norm exceeded 1e6
};

LipschitzProfile lipschitz_profile(const GeneratorTriple& gen,
                                   const TimeGrid& grid, double ball_radius,
                                   int sample_budget = tol::sample_budget,
                                   std::uint64_t seed = 0);

// JSON parsing helpers shared by the builtins and the CLI config reader.
SpectralOperator operator_from_json(const nlohmann::json& j);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, int rows, int cols,
                                 const std::string& field);
Eigen::VectorXd vector_from_json(const nlohmann::json& j, int n,
                                 const std::string& field);

}  // namespace fbee
