#include <Eigen/Eigenvalues>

#include "mve/error.hpp"
#include "mve/scene.hpp"
#include "support.hpp"

using namespace mve;

TEST_SUITE("scene_kit") {
  TEST_CASE("generated scenes respect the spec and are deterministic") {
    SceneSpec spec;
    spec.count = 40;
    spec.seed = 9;
    const GaussianScene a = generate_scene(spec), b = generate_scene(spec);
    CHECK(a == b);
    REQUIRE(a.primitives.size() == 40);
    for (const auto& p : a.primitives) {
      CHECK(spec.bounds.contains(p.center));
      CHECK(p.opacity >= spec.min_opacity);
      CHECK(p.opacity <= spec.max_opacity);
      for (int k = 0; k < 3; ++k) {
        CHECK(p.scale[k] >= spec.min_scale - 1e-12);
        CHECK(p.scale[k] <= spec.max_scale + 1e-12);
      }
      CHECK(p.rotation.norm() == doctest::Approx(1.0));
      const Mat3 cov = p.covariance();
      CHECK((cov - cov.transpose()).norm() < 1e-12);
      CHECK(Eigen::SelfAdjointEigenSolver<Mat3>(cov).eigenvalues().minCoeff() > 0.0);
    }
    spec.seed = 10;
    CHECK_FALSE(generate_scene(spec) == a);
  }

  TEST_CASE("invalid scene specs are rejected") {
    SceneSpec spec;
    spec.count = 0;
    CHECK_THROWS_AS(generate_scene(spec), ConfigError);
    spec = {};
    spec.min_opacity = 0.9;
    spec.max_opacity = 0.5;
    CHECK_THROWS_AS(generate_scene(spec), ConfigError);
  }

  TEST_CASE("look_at places the camera at the eye facing the target") {
    const Vec3 eye(3, -2, 1.5), target(0.2, 0.1, -0.3);
    const RigidTransform t = look_at(eye, target);
    CHECK((t.apply(eye)).norm() < 1e-12);
    const Vec3 in_cam = t.apply(target);
    CHECK(in_cam.head<2>().norm() < 1e-12);
    CHECK(in_cam.z() == doctest::Approx((target - eye).norm()));
    CHECK((t.rotation * t.rotation.transpose() - Mat3::Identity()).norm() < 1e-12);
    CHECK(t.rotation.determinant() == doctest::Approx(1.0));
    // World up projects to image up (negative camera y).
    CHECK((t.rotation * Vec3::UnitZ()).y() < 0.0);
  }

  TEST_CASE("rigid transforms compose and invert") {
    const RigidTransform a = look_at(Vec3(1, 2, 3), Vec3::Zero());
    const RigidTransform b = look_at(Vec3(-2, 0.5, 1), Vec3(0.3, 0, 0));
    const Vec3 x(0.4, -0.7, 2.0);
    CHECK(((a * b).apply(x) - a.apply(b.apply(x))).norm() < 1e-12);
    CHECK((a.inverse().apply(a.apply(x)) - x).norm() < 1e-12);
    CHECK((RigidTransform::from_matrix(a.matrix()).matrix() - a.matrix()).norm() == 0.0);
  }

  TEST_CASE("ring trajectories are evenly timed and circle the look-at point") {
    TrajectorySpec t;
    t.n_views = 6;
    t.radius_or_step = 3.0;
    t.elevation = 1.0;
    t.t0 = 2.0;
    t.dt = 0.5;
    const auto cams = sample_trajectory(t);
    REQUIRE(cams.size() == 6);
    for (int i = 0; i < 6; ++i) {
      CHECK(cams[i].timestamp == doctest::Approx(2.0 + 0.5 * i));
      CHECK(cams[i].center().head<2>().norm() == doctest::Approx(3.0));
      CHECK(cams[i].center().z() == doctest::Approx(1.0));
      CHECK((cams[i].forward() - (-cams[i].center()).normalized()).norm() < 1e-12);
    }
  }

  TEST_CASE("line trajectories translate with a fixed heading") {
    TrajectorySpec t;
    t.kind = TrajectoryKind::line;
    t.n_views = 4;
    t.radius_or_step = 0.5;
    const auto cams = sample_trajectory(t);
    for (int i = 1; i < 4; ++i) {
      CHECK((cams[i].center() - cams[i - 1].center()).norm() == doctest::Approx(0.5));
      CHECK((cams[i].world_to_camera.rotation - cams[0].world_to_camera.rotation).norm() == 0.0);
    }
  }

  TEST_CASE("corruption is monotone in severity") {
    SceneSpec spec;
    spec.count = 80;
    spec.seed = 4;
    const GaussianScene clean = generate_scene(spec);
    CHECK(corrupt_scene(clean, 0.0, 1) == clean);
    int prev_removed = -1, prev_floaters = -1;
    for (double s : {0.1, 0.3, 0.5, 0.7, 0.9, 1.0}) {
      CorruptionStats st;
      const GaussianScene d = corrupt_scene(clean, s, 1, &st);
      CHECK(st.removed >= prev_removed);
      CHECK(st.floaters >= prev_floaters);
      CHECK_FALSE(d.primitives.empty());
      for (const auto& p : d.primitives) CHECK(clean.bounds.contains(p.center));
      prev_removed = st.removed;
      prev_floaters = st.floaters;
    }
    CHECK(corrupt_scene(clean, 0.5, 1) == corrupt_scene(clean, 0.5, 1));
    CHECK_THROWS_AS(corrupt_scene(clean, 1.5, 1), ConfigError);
    CHECK_THROWS_AS(corrupt_scene(clean, -0.1, 1), ConfigError);
  }

  TEST_CASE("scene and camera files round-trip exactly") {
    const auto dir = mve::test::scratch_dir("scene_io");
    SceneSpec spec;
    spec.seed = 77;
    const GaussianScene s = generate_scene(spec);
    save_scene(s, dir / "s.json");
    CHECK(load_scene(dir / "s.json") == s);
    TrajectorySpec t;
    t.start_angle = 0.123456789;
    const auto cams = sample_trajectory(t);
    save_cameras(cams, dir / "c.json");
    CHECK(load_cameras(dir / "c.json") == cams);
    CHECK_THROWS_AS(load_scene(dir / "missing.json"), DataError);
  }
}
