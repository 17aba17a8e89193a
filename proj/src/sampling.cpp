#include "fbee/sampling.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace fbee {

namespace {

// Unique positive root of x^{d+1} = x + 1; the classic irrational base for
// d-dimensional Kronecker sequences.
double generalized_golden_ratio(int d) {
  double x = 1.5;
  for (int i = 0; i < 64; ++i) {
    x = std::pow(1.0 + x, 1.0 / (d + 1));
  }
  return x;
}

}  // namespace

BallSampler::BallSampler(int dim, double radius, std::uint64_t seed)
    : dim_(dim), radius_(radius), seed_(seed) {
  if (dim < 1) throw std::invalid_argument("BallSampler: dim must be >= 1");
  if (!(radius > 0.0))
    throw std::invalid_argument("BallSampler: radius must be positive");
  const int d = dim + 1;  // direction components plus one radial coordinate
  const double phi = generalized_golden_ratio(d);
  alpha_.resize(d);
  state_.resize(d);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double inv = 1.0;
  for (int i = 0; i < d; ++i) {
    inv /= phi;
    alpha_[i] = inv;
    state_[i] = unif(rng);
  }
}

Eigen::VectorXd BallSampler::next() {
  const int d = dim_ + 1;
  for (int i = 0; i < d; ++i) {
    state_[i] += alpha_[i];
    state_[i] -= std::floor(state_[i]);
  }
  Eigen::VectorXd direction = 2.0 * state_.head(dim_).array() - 1.0;
  double norm = direction.norm();
  if (norm < 1e-12) {
    direction.setZero();
    direction[0] = 1.0;
    norm = 1.0;
  }
  const double r = radius_ * std::pow(state_[dim_], 1.0 / dim_);
  return (r / norm) * direction;
}

}  // namespace fbee
