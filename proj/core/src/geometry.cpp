#include "mve/geometry.hpp"

#include <stdexcept>

#include "mve/error.hpp"

namespace mve {

double max_pairwise_distance(const std::vector<CameraView>& cams) {
  double best = 0.0;
  for (std::size_t i = 0; i < cams.size(); ++i)
    for (std::size_t j = i + 1; j < cams.size(); ++j) best = std::max(best, (cams[i].center() - cams[j].center()).norm());
  return best;
}

NormalizedPoses normalize_poses(const std::vector<CameraView>& cams, std::size_t anchor) {
  if (cams.empty()) throw std::invalid_argument("normalize_poses: empty camera list");
  if (anchor >= cams.size()) throw std::out_of_range("normalize_poses: anchor index out of range");

  NormalizedPoses out;
  out.anchor_from_world = cams[anchor].world_to_camera;
  const RigidTransform world_from_anchor = out.anchor_from_world.inverse();
  const double d = max_pairwise_distance(cams);
  out.scale = d < 1e-9 ? 1.0 : d;

  out.cameras.reserve(cams.size());
  for (std::size_t i = 0; i < cams.size(); ++i) {
    CameraView c = cams[i];
    if (i == anchor) {
      c.world_to_camera = RigidTransform{};
    } else {
      // cam_from_anchor = cam_from_world * world_from_anchor, then scale the center.
      const RigidTransform rel = cams[i].world_to_camera * world_from_anchor;
      const Vec3 center = -(rel.rotation.transpose() * rel.translation) / out.scale;
      c.world_to_camera.rotation = rel.rotation;
      c.world_to_camera.translation = -(rel.rotation * center);
    }
    out.cameras.push_back(c);
  }
  return out;
}

Vec3 pixel_ray(const CameraView& cam, int row, int col) {
  const auto& k = cam.intrinsics;
  const Vec3 dir_cam((col - k.cx) / k.fx, (row - k.cy) / k.fy, 1.0);
  return (cam.world_to_camera.rotation.transpose() * dir_cam).normalized();
}

PluckerField plucker_field(const CameraView& cam, int height, int width) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("plucker_field: bad size");
  // Rays are taken on the camera's own pixel grid, rescaled when the field
  // is requested at a different resolution.
  CameraView c = cam;
  const double sx = static_cast<double>(width) / cam.width, sy = static_cast<double>(height) / cam.height;
  c.intrinsics = {cam.intrinsics.fx * sx, cam.intrinsics.fy * sy, cam.intrinsics.cx * sx, cam.intrinsics.cy * sy};
  c.width = width;
  c.height = height;

  const Vec3 o = c.center();
  PluckerField f(width, height, 6);
  for (int r = 0; r < height; ++r)
    for (int q = 0; q < width; ++q) {
      const Vec3 d = pixel_ray(c, r, q);
      const Vec3 m = o.cross(d);
      for (int k = 0; k < 3; ++k) {
        f.at(r, q, k) = m[k];
        f.at(r, q, 3 + k) = d[k];
      }
    }
  return f;
}

CMap transform_cmap(const CMap& cmap, const RigidTransform& t, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("transform_cmap: scale must be positive");
  CMap out = cmap;
  for (std::size_t p = 0; p < cmap.coords.pixel_count(); ++p) {
    const Vec3 x(cmap.coords.data[p * 3], cmap.coords.data[p * 3 + 1], cmap.coords.data[p * 3 + 2]);
    const double a = cmap.validity.data[p];
    const Vec3 y = (t.rotation * x + a * t.translation) / scale;
    for (int k = 0; k < 3; ++k) out.coords.data[p * 3 + k] = y[k];
  }
  return out;
}

CMap untransform_cmap(const CMap& cmap, const RigidTransform& t, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("untransform_cmap: scale must be positive");
  CMap out = cmap;
  const Mat3 rt = t.rotation.transpose();
  for (std::size_t p = 0; p < cmap.coords.pixel_count(); ++p) {
    const Vec3 y(cmap.coords.data[p * 3], cmap.coords.data[p * 3 + 1], cmap.coords.data[p * 3 + 2]);
    const double a = cmap.validity.data[p];
    const Vec3 x = rt * (scale * y - a * t.translation);
    for (int k = 0; k < 3; ++k) out.coords.data[p * 3 + k] = x[k];
  }
  return out;
}

IndicatorMask IndicatorMask::for_role(ViewRole role, int image_height, int image_width) {
  if (image_height % 8 != 0 || image_width % 8 != 0) throw DataError("image dimensions must be multiples of 8");
  return {image_height / 8, image_width / 8, role == ViewRole::target ? 1.0 : 0.0};
}

Image IndicatorMask::grid() const { return Image(width, height, 1, value); }

}  // namespace mve
