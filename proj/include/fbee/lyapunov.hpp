#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fbee/generator.hpp"
#include "fbee/spectral_operator.hpp"
#include "fbee/trajectory.hpp"

// Quadratic certificates for forward-backward systems.  A certificate is a
// time-dependent symmetric operator Pi on the doubled space (y, psi) whose
// blocks
//
//     Pi = [[P, Gamma^T], [Gamma, Pbar]]
//
// solve linear Lyapunov equations driven by a drift pair (M, Mbar) and a
// symmetric weight [[Q0, Theta^T], [Theta, Qbar0]].  Sign and slope margins
// of Pi against the generator's Jacobians certify well-posedness of the
// coupled system; this header builds such operators (sampled or in closed
// form) and evaluates the margins on deterministic sample sets.

namespace fbee {

// Closed-form certificate family: every data block is a scalar profile times
// the identity.  The weights p1, pbar0, q0, qbar0 must be positive and the
// drifts must not fall below -sigma0 of the operator they are paired with
// (the boundary value m = -sigma0 is the limiting member and is allowed).
struct LyapunovParams {
  double p1 = 1.0;     // terminal state weight, P(T) = p1 I
  double pbar0 = 1.0;  // initial costate weight, Pbar(0) = -pbar0 I
  double q0 = 1.0;     // running state weight, Q0 = q0 I
  double qbar0 = 1.0;  // running costate weight, Qbar0 = qbar0 I
  double gamma = 0.0;  // terminal coupling, Gamma(T) = gamma I
  double theta = 0.0;  // running coupling weight, Theta = theta I
  double m = 0.0;      // state drift
  double mbar = 0.0;   // costate drift
};

// General time-sampled data of the three linear block equations
//
//   P'    + P(A - M) + (A - M)^* P + Q0 = 0,          P(T)    given,
//   Pbar' - (A - Mbar) Pbar - Pbar (A - Mbar)^* + Qbar0 = 0,  Pbar(0) given,
//   Gamma' + Gamma (A - M) - (A - Mbar) Gamma + Theta = 0,    Gamma(T) given.
//
// Q0 and Qbar0 must be symmetric at every time.
struct LyapunovData {
  int dim = 0;
  std::function<Eigen::MatrixXd(double)> M, Mbar, Theta;
  std::function<Eigen::MatrixXd(double)> Q0, Qbar0;
  Eigen::MatrixXd P_T;
  Eigen::MatrixXd Pbar_0;
  Eigen::MatrixXd Gamma_T;

  static LyapunovData constant(const Eigen::MatrixXd& M,
                               const Eigen::MatrixXd& Mbar,
                               const Eigen::MatrixXd& Q0,
                               const Eigen::MatrixXd& Qbar0,
                               const Eigen::MatrixXd& Theta,
                               const Eigen::MatrixXd& P_T,
                               const Eigen::MatrixXd& Pbar_0,
                               const Eigen::MatrixXd& Gamma_T);

  // The sampled-data image of a closed-form parameter set in dimension n.
  static LyapunovData from_params(const LyapunovParams& params, int n);
};

// A certificate declares its operator either through the closed-form family
// or through general sampled data; exactly one member is set.
struct LyapunovSpec {
  std::optional<LyapunovParams> params;
  std::optional<LyapunovData> data;
};

// Time samples of the three blocks on a shared grid.  P and Pbar are kept
// exactly symmetric node by node, so the assembled doubled matrix is exactly
// symmetric by construction.
struct LyapunovTriple {
  TimeGrid grid;
  std::vector<Eigen::MatrixXd> P;
  std::vector<Eigen::MatrixXd> Pbar;
  std::vector<Eigen::MatrixXd> Gamma;

  // [[P, Gamma^T], [Gamma, Pbar]] at node k.
  Eigen::MatrixXd Pi(int k) const;
};

// Integrates the three block equations with one implicit exponential
// trapezoid step per panel; the implicit half couples the unknown through a
// small Sylvester-type equation solved exactly in vectorized form.  For the
// SymmetricNegative kind the coupling equation can drop A only when the data
// commutes with it, so M, Mbar, Theta and Gamma(T) are required to commute
// with A there; the Skew kind propagates the coupling block with the group
// and its inverse and needs no restriction.
LyapunovTriple solve_lyapunov_triple(const SpectralOperator& A,
                                     const LyapunovData& data,
                                     const TimeGrid& grid);

// Evaluates the closed-form family mode by mode in the spectral basis.  The
// removable singularity at a vanishing drift gap is continued with a series
// branch below 1e-8.  Drifts below -sigma0 are rejected.
LyapunovTriple closed_form_pi(const SpectralOperator& A,
                              const LyapunovParams& params,
                              const TimeGrid& grid);

// (e^kappa - 1) / kappa, continued by 1 across kappa = 0.
double eta_kappa(double kappa);

// alpha e^{-kappa} + beta (1 - e^{-kappa}) / kappa for positive weights:
// the worst-mode envelope of the closed-form blocks.  Strictly decreasing
// in kappa, with limits alpha + beta at 0+ and 0 at infinity.
double decay_profile(double alpha, double beta, double kappa);

enum class CertificateVerdict { TypeI, TypeII, Both, Fail };

// Smallest eigenvalue margins of the certified inequalities; positive values
// certify.  mu and K are a feasible pair for the raw pointwise conditions,
// derived from the margins when the verdict is Both and zero otherwise.
struct CertificateMargins {
  double delta_tT = 0.0;       // endpoint signs: -Pbar(t) and P(T)
  double delta_T = 0.0;        // terminal compatibility block over h_y samples
  double delta_interior = 0.0; // drift inequality, with and without the generator
  double epsilon = 0.0;        // largest eigenvalue of the generator sandwich
  double mu = 0.0;
  double K = 0.0;
};

// The most violated condition of a failed certificate.
struct WorstSample {
  std::string condition;
  double margin = 0.0;
  double t = 0.0;
  Eigen::VectorXd y;
  Eigen::VectorXd psi;
};

struct LyapunovCertificate {
  LyapunovSpec spec;
  TimeGrid grid;
  std::vector<Eigen::MatrixXd> Pi;  // doubled 2n x 2n samples, symmetric
  CertificateMargins margins;
  double sample_ball_radius = 0.0;
  int sample_budget = 0;
  std::uint64_t seed = 0;
  CertificateVerdict verdict = CertificateVerdict::Fail;
  std::optional<WorstSample> worst;  // set when the verdict is Fail
};

const char* to_string(CertificateVerdict v);

// Assembles a certificate draft (spec, grid and Pi samples, no margins yet)
// through whichever route the spec declares.
LyapunovCertificate certificate_draft(const SpectralOperator& A,
                                      const LyapunovSpec& spec,
                                      const TimeGrid& grid);

// Energy balance of a trajectory against the doubled quadratic form: the
// difference of the endpoint terms <Pi z, z> minus a composite Simpson
// quadrature of the running form, where z = (y, psi) and the drift and
// weight enter through the certificate's data.  Returns the absolute
// defect, at least second order in the grid spacing for smooth data (the
// trajectory and Pi samples set the floor, not the quadrature).
double energy_identity_residual(const SpectralOperator& A,
                                const AffineGenerator& aff,
                                const TrajectoryPair& traj,
                                const LyapunovCertificate& cert);

// Evaluates the sufficient well-posedness conditions of a certificate draft
// over the grid and a deterministic ball sample of (y, psi) pairs:
//
//   endpoint signs          -Pbar(t) and P(T) positive definite,
//   terminal compatibility  P(T) + h_y^T Gamma(T) + Gamma(T)^T h_y
//                             + h_y^T Pbar(T) h_y positive definite,
//   drift inequality        Q - Pi M - M^T Pi positive definite, alone and
//                           with the generator sandwich Pi B + B^T Pi
//                           subtracted, B = [[b_y, b_psi], [-g_y, -g_psi]].
//
// The verdict is Both when every margin clears requested_delta and Fail
// otherwise, with the worst offending sample recorded.  Affine generators
// collapse the ball to one representative sample since their Jacobians do
// not depend on (y, psi).  margins.epsilon reports the largest eigenvalue
// of the generator sandwich separately, so the interior inequality can also
// be read in split form: drift margin minus epsilon.
LyapunovCertificate check_wellposedness_conditions(const SpectralOperator& A,
                                                   const GeneratorTriple& gen,
                                                   LyapunovCertificate draft,
                                                   double ball_radius,
                                                   int sample_budget,
                                                   double requested_delta = 0.0,
                                                   std::uint64_t seed = 0);

// Uniform monotonicity of (y, psi) -> (g, -b) together with h_y + h_y^T >= 0
// certifies well-posedness with no certificate operator at all.  holds is
// true when the terminal slope is positive semidefinite on the sample set
// and the block matrix
//
//   [[-(g_y + g_y^T), b_y^T - g_psi], [b_y - g_psi^T, b_psi + b_psi^T]]
//
// stays below -delta for some delta > 0; delta is the largest certified
// constant (zero when holds is false).
struct MonotoneGeneratorReport {
  bool holds = false;
  double delta = 0.0;
  double terminal_margin = 0.0;  // min eigenvalue of h_y + h_y^T
  double ball_radius = 0.0;
  int sample_budget = 0;
  std::uint64_t seed = 0;
};

MonotoneGeneratorReport check_monotone_generator(const GeneratorTriple& gen,
                                                 const TimeGrid& grid,
                                                 double ball_radius,
                                                 int sample_budget,
                                                 std::uint64_t seed = 0);

// Concrete sufficient conditions built from the closed-form family.  Each
// member pins how the running and terminal inequalities are specialized:
//
//   GeneralDrift         scalar drift m = mbar anywhere above -sigma0; the
//                        running 2x2 weight matrix and the terminal block
//                        use the drift explicitly.
//   BoundaryDrift        the limiting member m = mbar = -sigma0; running
//                        weights grow linearly in t and the generator
//                        sandwich uses the boundary closed form.
//   SchurCoupling        structured Jacobians b_y = g_psi^T,
//                        b_psi + b_psi^T <= 0, g_y + g_y^T >= delta; the
//                        coupling weight is chosen large and the sandwich
//                        bound follows from a Schur complement estimate.
//   ShiftedTerminal      I + h_y + h_y^T >= delta with a one-sided weight.
//   ContractiveTerminal  I - h_y^T h_y >= delta with a diagonal weight.
//   CombinedTerminal     I + h_y + h_y^T - h_y^T h_y >= delta.
//
// The last three test their fixed-weight sandwich against <= 0 rather than
// an epsilon allowance.  Failures name the violated condition in worst.
enum class ClosedFormFamily {
  GeneralDrift,
  BoundaryDrift,
  SchurCoupling,
  ShiftedTerminal,
  ContractiveTerminal,
  CombinedTerminal,
};

LyapunovCertificate check_closed_form_family(const SpectralOperator& A,
                                             const GeneratorTriple& gen,
                                             const LyapunovParams& params,
                                             const TimeGrid& grid,
                                             ClosedFormFamily family,
                                             double ball_radius,
                                             int sample_budget = 256,
                                             std::uint64_t seed = 0);

// Direct evaluation of the raw pointwise conditions for a user-supplied
// weight pair (mu, K).  Both condition sets share the initial corner bound
// Pi(0) <= diag(K, 0); the first set relaxes the terminal block by
// mu h_y^T h_y and penalizes the interior block by mu g_y^T g_y, the second
// keeps the terminal block unrelaxed and penalizes by mu b_psi^T b_psi.
// The verdict reports which of the two sets holds on the sample set.
LyapunovCertificate check_type_conditions_raw(const GeneratorTriple& gen,
                                              LyapunovCertificate draft,
                                              double mu, double K,
                                              double ball_radius,
                                              int sample_budget,
                                              std::uint64_t seed = 0);

}  // namespace fbee
