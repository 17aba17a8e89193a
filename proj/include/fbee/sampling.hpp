#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace fbee {

// Deterministic low-discrepancy sampler over a centered ball.  Points come
// from a Kronecker additive-recurrence sequence (generalized golden ratio),
// so coverage is even and every draw is reproducible from the seed, which
// only shifts the starting offset.
class BallSampler {
 public:
  BallSampler(int dim, double radius, std::uint64_t seed);

  Eigen::VectorXd next();

  int dim() const { return dim_; }
  double radius() const { return radius_; }
  std::uint64_t seed() const { return seed_; }

 private:
  int dim_;
  double radius_;
  std::uint64_t seed_;
  Eigen::VectorXd alpha_;
  Eigen::VectorXd state_;
};

}  // namespace fbee
