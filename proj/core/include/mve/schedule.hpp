#pragma once

// Cosine noise schedule and the v-parameterization identities.

#include <span>
#include <vector>

#include "mve/tensor.hpp"

namespace mve {

class NoiseSchedule {
 public:
  /// alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2).
  static NoiseSchedule cosine(int timesteps = 1000, int tau = 200, double offset = 0.008);

  int timesteps() const { return timesteps_; }
  int tau() const { return tau_; }
  /// Cumulative signal fraction at integer step t in [0, T].
  double alpha_bar(int t) const;
  double operating_alpha_bar() const { return alpha_bar(tau_); }

 private:
  int timesteps_ = 1000;
  int tau_ = 200;
  std::vector<double> table_;
};

// Closed forms on raw buffers, parameterized directly by alpha_bar.
std::vector<double> add_noise(std::span<const double> z0, std::span<const double> eps, double alpha_bar);
std::vector<double> v_target(std::span<const double> z0, std::span<const double> eps, double alpha_bar);
/// z0 = sqrt(ab) * z_t - sqrt(1 - ab) * v
std::vector<double> z0_from_v(std::span<const double> zt, std::span<const double> v, double alpha_bar);
/// Noise implied by a pair (z_t, z0): (z_t - sqrt(ab) z0) / sqrt(1 - ab).
std::vector<double> eps_from(std::span<const double> zt, std::span<const double> z0, double alpha_bar);

// Schedule-indexed forms; t outside [0, T] is rejected.
std::vector<double> add_noise(const NoiseSchedule& s, std::span<const double> z0, std::span<const double> eps, int t);
std::vector<double> v_target(const NoiseSchedule& s, std::span<const double> z0, std::span<const double> eps, int t);

/// Differentiable z0 recovery used by the training pixel loss.
ag::Tensor z0_from_v(const ag::Tensor& zt, const ag::Tensor& v, double alpha_bar);

}  // namespace mve
