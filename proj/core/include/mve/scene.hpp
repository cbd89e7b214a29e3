#pragma once

// Procedural Gaussian scenes, camera trajectories and scene corruption.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mve {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Quat = Eigen::Quaterniond;

struct GaussianPrimitive {
  Vec3 center = Vec3::Zero();
  Vec3 scale = Vec3::Ones();
  Quat rotation = Quat::Identity();
  double opacity = 1.0;
  Vec3 color = Vec3::Zero();

  /// World-space covariance R S S^T R^T.
  Mat3 covariance() const;
  void validate() const;
  bool operator==(const GaussianPrimitive& o) const;
};

struct Aabb {
  Vec3 lo = Vec3::Constant(-1.0);
  Vec3 hi = Vec3::Constant(1.0);

  bool contains(const Vec3& p) const;
  double volume() const;
  Vec3 extent() const { return hi - lo; }
  Vec3 clamp(const Vec3& p) const;
  bool operator==(const Aabb& o) const { return lo == o.lo && hi == o.hi; }
};

struct GaussianScene {
  std::vector<GaussianPrimitive> primitives;
  Aabb bounds;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const GaussianScene& o) const = default;
};

/// Rigid map x -> R x + t.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  RigidTransform inverse() const;
  /// (this * other)(x) = this(other(x))
  RigidTransform operator*(const RigidTransform& other) const;
  Mat4 matrix() const;
  static RigidTransform from_matrix(const Mat4& m);
  bool operator==(const RigidTransform& o) const = default;
};

enum class ViewRole : std::uint8_t { reference = 0, target = 1 };

struct Intrinsics {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  bool operator==(const Intrinsics& o) const = default;
};

/// Pinhole camera. Camera frame is x right, y down, z forward; pixel (row i,
/// col j) sits at image coordinates (u, v) = (j, i).
struct CameraView {
  Intrinsics intrinsics;
  RigidTransform world_to_camera;
  int width = 0;
  int height = 0;
  ViewRole role = ViewRole::target;
  double timestamp = 0.0;

  Vec3 center() const;
  /// Unit optical axis in world coordinates.
  Vec3 forward() const;
  void validate() const;
  bool operator==(const CameraView& o) const = default;
};

/// Camera at `eye` looking at `target` with world +z as up.
RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());
Intrinsics intrinsics_from_fov(int width, int height, double fov_x_radians);

struct SceneSpec {
  int count = 16;
  Aabb bounds;
  std::vector<Vec3> palette;  // empty -> default_palette()
  std::uint64_t seed = 0;
  double min_scale = 0.2;
  double max_scale = 0.5;
  double min_opacity = 0.6;
  double max_opacity = 1.0;
};

const std::vector<Vec3>& default_palette();

GaussianScene generate_scene(const SceneSpec& spec);

enum class TrajectoryKind { ring, line };

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::ring;
  int n_views = 8;
  Vec3 look_at = Vec3::Zero();
  /// Ring radius, or spacing between consecutive line cameras.
  double radius_or_step = 4.0;
  /// Ring height above look_at.
  double elevation = 1.0;
  /// Phase of the first ring camera (radians).
  double start_angle = 0.0;
  /// First camera position for line trajectories.
  Vec3 line_origin = Vec3(0.0, -4.0, 1.0);
  /// Motion direction for line trajectories.
  Vec3 line_direction = Vec3::UnitX();
  int width = 64;
  int height = 64;
  double fov_x = 0.9;
  double t0 = 0.0;
  double dt = 1.0;
  ViewRole role = ViewRole::target;
};

std::vector<CameraView> sample_trajectory(const TrajectorySpec& spec);

struct CorruptionStats {
  int removed = 0;
  int floaters = 0;
};

/// Three coupled degradation channels driven by one severity knob:
/// primitive dropout, low-opacity floaters and center jitter. The random
/// draws do not depend on severity, so the damage at a higher severity
/// contains the damage at a lower one.
GaussianScene corrupt_scene(const GaussianScene& scene, double severity, std::uint64_t seed,
                            CorruptionStats* stats = nullptr);

// ---- files -----------------------------------------------------------------
void save_scene(const GaussianScene& scene, const std::filesystem::path& path);
GaussianScene load_scene(const std::filesystem::path& path);
void save_cameras(const std::vector<CameraView>& cams, const std::filesystem::path& path);
std::vector<CameraView> load_cameras(const std::filesystem::path& path);

}  // namespace mve
