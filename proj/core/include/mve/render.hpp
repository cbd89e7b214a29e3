#pragma once

// Front-to-back splatting of Gaussian scenes into RGB images and C-maps.

#include <optional>
#include <span>

#include "mve/image.hpp"
#include "mve/scene.hpp"

namespace mve {

struct ScreenGaussian {
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();
  Mat2 inv_cov2d = Mat2::Identity();
  double depth = 0.0;
  double peak_opacity = 0.0;
  int source_index = 0;
  /// Condition number of cov2d exceeded kMaxCondition.
  bool singular = false;
};

inline constexpr double kNearPlane = 1e-2;
inline constexpr double kAlphaClamp = 0.999;
inline constexpr double kMaxCondition = 1e8;

/// EWA projection with the pinhole Jacobian at the center. Returns nullopt
/// when the center is at or in front of the near plane.
std::optional<ScreenGaussian> project_gaussian(const GaussianPrimitive& g, const CameraView& cam,
                                               int source_index = 0);

/// peak * exp(-0.5 d^T cov^-1 d), clamped to [0, kAlphaClamp].
double alpha_at(const ScreenGaussian& sg, const Vec2& pixel);

struct RaySample {
  double depth = 0.0;
  double alpha = 0.0;
  Vec3 payload = Vec3::Zero();
};

struct RayResult {
  Vec3 payload = Vec3::Zero();
  double accumulated = 0.0;
};

/// Weighted accumulation sum_i a_i prod_{j<i}(1 - a_j) payload_i. Throws
/// std::invalid_argument when samples are not in ascending depth order.
RayResult composite_ray(std::span<const RaySample> samples);

enum class RenderMode { rgb, cmap };

struct RenderOptions {
  Vec3 background = Vec3::Constant(0.1);
  /// Contributions with alpha below this are skipped.
  double alpha_cutoff = 1e-9;
  /// A ray stops once its transmittance falls below this.
  double transmittance_floor = 1e-9;
  int threads = 1;
};

struct RenderStats {
  int culled = 0;
  int singular = 0;
};

struct RenderOutput {
  RenderedImage rgb;  // filled in rgb mode
  CMap cmap;          // filled in cmap mode
  RenderStats stats;
};

RenderOutput render(const GaussianScene& scene, const CameraView& cam, RenderMode mode,
                    const RenderOptions& opts = {});
RenderedImage render_rgb(const GaussianScene& scene, const CameraView& cam, const RenderOptions& opts = {});
CMap render_cmap(const GaussianScene& scene, const CameraView& cam, const RenderOptions& opts = {});

/// Reference renderer: every pixel against every primitive, full sort, no
/// cutoffs, no early termination, transmittance recomputed from scratch.
RenderOutput brute_force_render(const GaussianScene& scene, const CameraView& cam, RenderMode mode,
                                const RenderOptions& opts = {});

}  // namespace mve
