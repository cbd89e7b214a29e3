#pragma once

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include "mve/rng.hpp"
#include "mve/scene.hpp"
#include "mve/tensor.hpp"

namespace mve::test {

inline ag::Tensor random_tensor(const ag::Shape& shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(ag::numel_of(shape));
  for (auto& x : v) x = scale * rng.normal();
  return ag::Tensor::from(shape, std::move(v), requires_grad);
}

/// Largest relative disagreement between analytic and central-difference
/// gradients of `f` with respect to every entry of `inputs`.
inline double gradcheck(const std::function<ag::Tensor()>& f, std::vector<ag::Tensor> inputs, double h = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  f().backward();
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = t.data()[i];
      t.mutable_data()[i] = orig + h;
      const double lp = f().item();
      t.mutable_data()[i] = orig - h;
      const double lm = f().item();
      t.mutable_data()[i] = orig;
      const double num = (lp - lm) / (2 * h);
      const double err = std::abs(num - analytic[i]) / std::max({1e-6, std::abs(num), std::abs(analytic[i])});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("mve_unit_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline CameraView camera_at(const Vec3& eye, const Vec3& target, int w = 32, int h = 32, double fov = 0.9) {
  CameraView c;
  c.intrinsics = intrinsics_from_fov(w, h, fov);
  c.world_to_camera = look_at(eye, target);
  c.width = w;
  c.height = h;
  return c;
}

}  // namespace mve::test
