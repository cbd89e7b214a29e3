#include "mve/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "mve/error.hpp"

namespace mve {

NoiseSchedule NoiseSchedule::cosine(int timesteps, int tau, double offset) {
  if (timesteps < 1) throw ConfigError("schedule: timesteps must be >= 1");
  if (tau < 1 || tau > timesteps) throw ConfigError("schedule: tau must lie in [1, T]");
  NoiseSchedule s;
  s.timesteps_ = timesteps;
  s.tau_ = tau;
  auto f = [&](int t) {
    const double c = std::cos((static_cast<double>(t) / timesteps + offset) / (1.0 + offset) * std::numbers::pi / 2);
    return c * c;
  };
  const double f0 = f(0);
  s.table_.resize(timesteps + 1);
  for (int t = 0; t <= timesteps; ++t) s.table_[t] = std::clamp(f(t) / f0, 0.0, 1.0);
  s.table_[0] = 1.0;
  return s;
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > timesteps_)
    throw std::out_of_range("schedule: timestep " + std::to_string(t) + " outside [0, " + std::to_string(timesteps_) + "]");
  return table_[t];
}

namespace {

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("schedule: shape mismatch");
}

void check_ab(double ab) {
  if (!(ab >= 0.0 && ab <= 1.0)) throw std::invalid_argument("schedule: alpha_bar outside [0,1]");
}

}  // namespace

std::vector<double> add_noise(std::span<const double> z0, std::span<const double> eps, double alpha_bar) {
  check_pair(z0, eps);
  check_ab(alpha_bar);
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  std::vector<double> out(z0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

std::vector<double> v_target(std::span<const double> z0, std::span<const double> eps, double alpha_bar) {
  check_pair(z0, eps);
  check_ab(alpha_bar);
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  std::vector<double> out(z0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * eps[i] - b * z0[i];
  return out;
}

std::vector<double> z0_from_v(std::span<const double> zt, std::span<const double> v, double alpha_bar) {
  check_pair(zt, v);
  check_ab(alpha_bar);
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  std::vector<double> out(zt.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * zt[i] - b * v[i];
  return out;
}

std::vector<double> eps_from(std::span<const double> zt, std::span<const double> z0, double alpha_bar) {
  check_pair(zt, z0);
  check_ab(alpha_bar);
  if (alpha_bar >= 1.0) throw std::invalid_argument("schedule: noise is undefined at alpha_bar = 1");
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  std::vector<double> out(zt.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (zt[i] - a * z0[i]) / b;
  return out;
}

std::vector<double> add_noise(const NoiseSchedule& s, std::span<const double> z0, std::span<const double> eps, int t) {
  return add_noise(z0, eps, s.alpha_bar(t));
}

std::vector<double> v_target(const NoiseSchedule& s, std::span<const double> z0, std::span<const double> eps, int t) {
  return v_target(z0, eps, s.alpha_bar(t));
}

ag::Tensor z0_from_v(const ag::Tensor& zt, const ag::Tensor& v, double alpha_bar) {
  check_ab(alpha_bar);
  return ag::sub(ag::scale(zt, std::sqrt(alpha_bar)), ag::scale(v, std::sqrt(1.0 - alpha_bar)));
}

}  // namespace mve
