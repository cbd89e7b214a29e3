#include "mve/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "mve/error.hpp"
#include "mve/rng.hpp"

namespace mve {

using nlohmann::json;

Mat3 GaussianPrimitive::covariance() const {
  const Mat3 r = rotation.normalized().toRotationMatrix();
  const Mat3 s = scale.asDiagonal();
  return r * s * s.transpose() * r.transpose();
}

void GaussianPrimitive::validate() const {
  if (!(opacity >= 0.0 && opacity <= 1.0)) throw DataError("primitive opacity outside [0,1]");
  if (!(scale.minCoeff() > 0.0)) throw DataError("primitive scale must be positive");
  if (std::abs(rotation.norm() - 1.0) > 1e-6) throw DataError("primitive rotation is not a unit quaternion");
  if (!center.allFinite()) throw DataError("primitive center is not finite");
}

bool GaussianPrimitive::operator==(const GaussianPrimitive& o) const {
  return center == o.center && scale == o.scale && rotation.coeffs() == o.rotation.coeffs() &&
         opacity == o.opacity && color == o.color;
}

bool Aabb::contains(const Vec3& p) const {
  return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

double Aabb::volume() const {
  const Vec3 e = (hi - lo).cwiseMax(0.0);
  return e.x() * e.y() * e.z();
}

Vec3 Aabb::clamp(const Vec3& p) const { return p.cwiseMax(lo).cwiseMin(hi); }

void GaussianScene::validate() const {
  if (primitives.empty()) throw DataError("scene has no primitives");
  for (const auto& p : primitives) {
    p.validate();
    if (!bounds.contains(p.center)) throw DataError("primitive center outside scene bounds");
  }
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

RigidTransform RigidTransform::operator*(const RigidTransform& other) const {
  RigidTransform out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  return out;
}

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

RigidTransform RigidTransform::from_matrix(const Mat4& m) {
  RigidTransform t;
  t.rotation = m.topLeftCorner<3, 3>();
  t.translation = m.topRightCorner<3, 1>();
  return t;
}

Vec3 CameraView::center() const { return -(world_to_camera.rotation.transpose() * world_to_camera.translation); }

Vec3 CameraView::forward() const { return world_to_camera.rotation.row(2).transpose(); }

void CameraView::validate() const {
  if (!(intrinsics.fx > 0.0 && intrinsics.fy > 0.0)) throw DataError("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw DataError("camera image size must be positive");
  const Mat3& r = world_to_camera.rotation;
  if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 || std::abs(r.determinant() - 1.0) > 1e-6)
    throw DataError("camera rotation is not orthonormal with det +1");
}

RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 f = (target - eye).normalized();
  Vec3 right = f.cross(up);
  if (right.norm() < 1e-9) right = f.cross(Vec3::UnitY());
  right.normalize();
  const Vec3 down = f.cross(right);
  RigidTransform t;
  t.rotation.row(0) = right.transpose();
  t.rotation.row(1) = down.transpose();
  t.rotation.row(2) = f.transpose();
  t.translation = -(t.rotation * eye);
  return t;
}

Intrinsics intrinsics_from_fov(int width, int height, double fov_x_radians) {
  Intrinsics k;
  k.fx = k.fy = 0.5 * width / std::tan(0.5 * fov_x_radians);
  k.cx = 0.5 * width;
  k.cy = 0.5 * height;
  return k;
}

const std::vector<Vec3>& default_palette() {
  static const std::vector<Vec3> palette = {
      {0.90, 0.20, 0.15}, {0.15, 0.65, 0.25}, {0.20, 0.35, 0.90},
      {0.95, 0.85, 0.20}, {0.85, 0.85, 0.85}, {0.60, 0.25, 0.75},
  };
  return palette;
}

namespace {

Quat random_rotation(Rng& rng) {
  // Shoemake's uniform quaternion.
  const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double t2 = 2.0 * std::numbers::pi * u2, t3 = 2.0 * std::numbers::pi * u3;
  Quat q(b * std::cos(t3), a * std::sin(t2), a * std::cos(t2), b * std::sin(t3));
  return q.normalized();
}

Vec3 random_point(const Aabb& box, Rng& rng) {
  return {rng.uniform(box.lo.x(), box.hi.x()), rng.uniform(box.lo.y(), box.hi.y()),
          rng.uniform(box.lo.z(), box.hi.z())};
}

}  // namespace

GaussianScene generate_scene(const SceneSpec& spec) {
  if (spec.count < 1) throw ConfigError("scene spec: count must be >= 1");
  if (!(spec.bounds.volume() > 0.0)) throw ConfigError("scene spec: bounds have zero volume");
  if (!(spec.min_scale > 0.0 && spec.max_scale >= spec.min_scale)) throw ConfigError("scene spec: bad scale range");
  if (!(spec.min_opacity >= 0.0 && spec.max_opacity <= 1.0 && spec.min_opacity <= spec.max_opacity))
    throw ConfigError("scene spec: bad opacity range");
  const auto& palette = spec.palette.empty() ? default_palette() : spec.palette;

  Rng rng(spec.seed);
  GaussianScene scene;
  scene.bounds = spec.bounds;
  scene.seed = spec.seed;
  scene.primitives.reserve(spec.count);
  const double log_lo = std::log(spec.min_scale), log_hi = std::log(spec.max_scale);
  for (int i = 0; i < spec.count; ++i) {
    GaussianPrimitive p;
    p.center = random_point(spec.bounds, rng);
    for (int a = 0; a < 3; ++a) p.scale[a] = std::exp(rng.uniform(log_lo, log_hi));
    p.rotation = random_rotation(rng);
    p.opacity = rng.uniform(spec.min_opacity, spec.max_opacity);
    p.color = palette[rng.below(palette.size())];
    scene.primitives.push_back(p);
  }
  return scene;
}

std::vector<CameraView> sample_trajectory(const TrajectorySpec& spec) {
  if (spec.n_views < 2) throw ConfigError("trajectory: n_views must be >= 2");
  if (spec.width <= 0 || spec.height <= 0) throw ConfigError("trajectory: image size must be positive");
  if (!(spec.dt > 0.0)) throw ConfigError("trajectory: dt must be positive");
  const Intrinsics k = intrinsics_from_fov(spec.width, spec.height, spec.fov_x);
  std::vector<CameraView> cams;
  cams.reserve(spec.n_views);
  for (int i = 0; i < spec.n_views; ++i) {
    CameraView cam;
    cam.intrinsics = k;
    cam.width = spec.width;
    cam.height = spec.height;
    cam.role = spec.role;
    cam.timestamp = spec.t0 + i * spec.dt;
    if (spec.kind == TrajectoryKind::ring) {
      const double theta = spec.start_angle + 2.0 * std::numbers::pi * i / spec.n_views;
      const Vec3 eye = spec.look_at + Vec3(spec.radius_or_step * std::cos(theta),
                                           spec.radius_or_step * std::sin(theta), spec.elevation);
      cam.world_to_camera = look_at(eye, spec.look_at);
    } else {
      const Vec3 dir = spec.line_direction.normalized();
      const Vec3 eye = spec.line_origin + i * spec.radius_or_step * dir;
      // Every camera shares the heading of the first one.
      RigidTransform heading = look_at(spec.line_origin, spec.look_at);
      heading.translation = -(heading.rotation * eye);
      cam.world_to_camera = heading;
    }
    cams.push_back(cam);
  }
  return cams;
}

GaussianScene corrupt_scene(const GaussianScene& scene, double severity, std::uint64_t seed, CorruptionStats* stats) {
  if (!(severity >= 0.0 && severity <= 1.0)) throw ConfigError("corrupt_scene: severity must lie in [0,1]");
  if (stats) *stats = {};
  if (severity == 0.0) return scene;

  constexpr double kFloaterRatio = 0.25;
  constexpr double kJitterFraction = 0.04;

  const std::size_t n = scene.primitives.size();
  Rng rng(seed);
  // Per-primitive draws, made in a fixed order independent of severity.
  std::vector<double> drop_key(n);
  std::vector<Vec3> jitter(n);
  for (std::size_t i = 0; i < n; ++i) {
    drop_key[i] = rng.uniform();
    jitter[i] = Vec3(rng.normal(), rng.normal(), rng.normal());
  }
  const std::size_t n_remove = static_cast<std::size_t>(std::lround(0.5 * severity * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return drop_key[a] < drop_key[b]; });
  std::vector<bool> removed(n, false);
  for (std::size_t k = 0; k < n_remove; ++k) removed[order[k]] = true;

  const double jitter_sigma = kJitterFraction * scene.bounds.extent().norm() * severity;
  GaussianScene out;
  out.bounds = scene.bounds;
  out.seed = scene.seed;
  for (std::size_t i = 0; i < n; ++i) {
    if (removed[i]) continue;
    GaussianPrimitive p = scene.primitives[i];
    p.center = scene.bounds.clamp(p.center + jitter_sigma * jitter[i]);
    out.primitives.push_back(p);
  }

  const std::size_t max_floaters = static_cast<std::size_t>(std::ceil(kFloaterRatio * static_cast<double>(n)));
  const std::size_t n_floaters = static_cast<std::size_t>(std::lround(kFloaterRatio * severity * static_cast<double>(n)));
  const double diag = scene.bounds.extent().norm();
  for (std::size_t f = 0; f < max_floaters; ++f) {
    GaussianPrimitive p;
    p.center = random_point(scene.bounds, rng);
    for (int a = 0; a < 3; ++a) p.scale[a] = diag * rng.uniform(0.01, 0.05);
    p.rotation = random_rotation(rng);
    p.opacity = rng.uniform(0.1, 0.4);
    p.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    if (f < n_floaters) out.primitives.push_back(p);
  }
  if (out.primitives.empty()) {
    // Keep the non-empty invariant: restore the primitive dropped last.
    out.primitives.push_back(scene.primitives[order[n_remove - 1]]);
  }
  if (stats) {
    stats->removed = static_cast<int>(n + n_floaters - out.primitives.size());
    stats->floaters = static_cast<int>(n_floaters);
  }
  return out;
}

// ---- files -----------------------------------------------------------------

namespace {

constexpr int kSceneVersion = 1;

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec(const json& j) {
  if (!j.is_array() || j.size() != 3) throw DataError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

json camera_json(const CameraView& c) {
  json pose = json::array();
  const Mat4 m = c.world_to_camera.matrix();
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < 4; ++k) pose.push_back(m(r, k));
  return {{"intrinsics", {c.intrinsics.fx, c.intrinsics.fy, c.intrinsics.cx, c.intrinsics.cy}},
          {"world_to_camera", pose},
          {"width", c.width},
          {"height", c.height},
          {"role", c.role == ViewRole::reference ? "reference" : "target"},
          {"timestamp", c.timestamp}};
}

CameraView json_camera(const json& j) {
  CameraView c;
  const auto& k = j.at("intrinsics");
  c.intrinsics = {k.at(0).get<double>(), k.at(1).get<double>(), k.at(2).get<double>(), k.at(3).get<double>()};
  const auto& p = j.at("world_to_camera");
  if (p.size() != 16) throw DataError("camera pose must have 16 entries");
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int q = 0; q < 4; ++q) m(r, q) = p[r * 4 + q].get<double>();
  c.world_to_camera = RigidTransform::from_matrix(m);
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  const auto role = j.at("role").get<std::string>();
  if (role != "reference" && role != "target") throw DataError("unknown camera role " + role);
  c.role = role == "reference" ? ViewRole::reference : ViewRole::target;
  c.timestamp = j.at("timestamp").get<double>();
  c.validate();
  return c;
}

}  // namespace

void save_scene(const GaussianScene& scene, const std::filesystem::path& path) {
  json prims = json::array();
  for (const auto& p : scene.primitives) {
    prims.push_back({{"center", vec_json(p.center)},
                     {"scale", vec_json(p.scale)},
                     {"rotation", {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z()}},
                     {"opacity", p.opacity},
                     {"color", vec_json(p.color)}});
  }
  json doc = {{"format", "mve-scene"},
              {"version", kSceneVersion},
              {"seed", scene.seed},
              {"bounds", {{"min", vec_json(scene.bounds.lo)}, {"max", vec_json(scene.bounds.hi)}}},
              {"primitives", prims}};
  write_text(path, doc.dump(1) + "\n");
}

GaussianScene load_scene(const std::filesystem::path& path) {
  const json doc = read_json(path);
  try {
    if (doc.at("format") != "mve-scene") throw DataError(path.string() + " is not a scene file");
    if (doc.at("version").get<int>() != kSceneVersion)
      throw DataError("unsupported scene file version " + doc.at("version").dump());
    GaussianScene scene;
    scene.seed = doc.at("seed").get<std::uint64_t>();
    scene.bounds.lo = json_vec(doc.at("bounds").at("min"));
    scene.bounds.hi = json_vec(doc.at("bounds").at("max"));
    for (const auto& j : doc.at("primitives")) {
      GaussianPrimitive p;
      p.center = json_vec(j.at("center"));
      p.scale = json_vec(j.at("scale"));
      const auto& q = j.at("rotation");
      p.rotation = Quat(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(), q.at(3).get<double>());
      p.opacity = j.at("opacity").get<double>();
      p.color = json_vec(j.at("color"));
      scene.primitives.push_back(p);
    }
    scene.validate();
    return scene;
  } catch (const json::exception& e) {
    throw DataError("malformed scene file " + path.string() + ": " + e.what());
  }
}

void save_cameras(const std::vector<CameraView>& cams, const std::filesystem::path& path) {
  json arr = json::array();
  for (const auto& c : cams) arr.push_back(camera_json(c));
  json doc = {{"format", "mve-cameras"}, {"version", 1}, {"cameras", arr}};
  write_text(path, doc.dump(1) + "\n");
}

std::vector<CameraView> load_cameras(const std::filesystem::path& path) {
  const json doc = read_json(path);
  try {
    if (doc.at("format") != "mve-cameras") throw DataError(path.string() + " is not a camera file");
    if (doc.at("version").get<int>() != 1) throw DataError("unsupported camera file version");
    std::vector<CameraView> cams;
    for (const auto& j : doc.at("cameras")) cams.push_back(json_camera(j));
    return cams;
  } catch (const json::exception& e) {
    throw DataError("malformed camera file " + path.string() + ": " + e.what());
  }
}

}  // namespace mve
