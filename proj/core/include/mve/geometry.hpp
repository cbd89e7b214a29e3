#pragma once

// Pose normalization and dense ray/coordinate conditioning signals.

#include <vector>

#include "mve/image.hpp"
#include "mve/scene.hpp"

namespace mve {

struct NormalizedPoses {
  std::vector<CameraView> cameras;
  /// Maximum pairwise camera-center distance before normalization (1 when
  /// that distance is below 1e-9).
  double scale = 1.0;
  /// World -> anchor camera frame (before scaling).
  RigidTransform anchor_from_world;
};

/// Re-express every pose in the frame of cameras[anchor] and divide camera
/// centers by the maximum pairwise center distance.
NormalizedPoses normalize_poses(const std::vector<CameraView>& cams, std::size_t anchor);

/// Maximum pairwise distance between camera centers.
double max_pairwise_distance(const std::vector<CameraView>& cams);

/// Per-pixel Plücker coordinates (o x d, d), 6 channels: moment then direction.
using PluckerField = Image;

PluckerField plucker_field(const CameraView& cam, int height, int width);

/// World-space unit ray direction through pixel (row, col).
Vec3 pixel_ray(const CameraView& cam, int row, int col);

/// Map accumulated coordinates into the anchor frame: X' = (R X + a t) / s,
/// where a is the pixel's accumulated opacity. Fully covered pixels move as
/// points; empty pixels stay at the origin.
CMap transform_cmap(const CMap& cmap, const RigidTransform& anchor_transform, double scale);
/// Inverse of transform_cmap for the same (transform, scale).
CMap untransform_cmap(const CMap& cmap, const RigidTransform& anchor_transform, double scale);

/// Constant per-view indicator: 0 for references, 1 for targets, on the
/// latent grid (H/8 x W/8).
struct IndicatorMask {
  int height = 0;
  int width = 0;
  double value = 0.0;

  static IndicatorMask for_role(ViewRole role, int image_height, int image_width);
  Image grid() const;
};

}  // namespace mve
