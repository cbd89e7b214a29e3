#include <algorithm>

#include "mve/render.hpp"
#include "support.hpp"

using namespace mve;
using mve::test::camera_at;

namespace {

GaussianPrimitive iso(const Vec3& c, double s, double opacity, const Vec3& color = Vec3(1, 0, 0)) {
  GaussianPrimitive g;
  g.center = c;
  g.scale = Vec3::Constant(s);
  g.opacity = opacity;
  g.color = color;
  return g;
}

CameraView axis_camera(int w = 32, int h = 32) {
  CameraView c;
  c.intrinsics = {20.0, 20.0, 16.0, 16.0};
  c.width = w;
  c.height = h;
  return c;  // identity pose: camera at origin looking down +z
}

double max_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

GaussianScene random_scene(std::uint64_t seed, int count) {
  SceneSpec s;
  s.seed = seed;
  s.count = count;
  return generate_scene(s);
}

}  // namespace

TEST_SUITE("splat_render") {
  TEST_CASE("projection of an on-axis center lands on the principal point") {
    const auto sg = project_gaussian(iso(Vec3(0, 0, 2), 0.1, 0.8), axis_camera());
    REQUIRE(sg);
    CHECK(sg->mean2d.x() == doctest::Approx(16.0));
    CHECK(sg->mean2d.y() == doctest::Approx(16.0));
    CHECK(sg->depth == doctest::Approx(2.0));
  }

  TEST_CASE("doubling depth scales an isotropic footprint by 1/4") {
    const auto near = project_gaussian(iso(Vec3(0, 0, 2), 0.1, 0.8), axis_camera());
    const auto far = project_gaussian(iso(Vec3(0, 0, 4), 0.1, 0.8), axis_camera());
    REQUIRE(near);
    REQUIRE(far);
    CHECK((far->cov2d - near->cov2d / 4.0).norm() < 1e-12);
    // Closed form on the axis: (f s / z)^2.
    CHECK(near->cov2d(0, 0) == doctest::Approx(std::pow(20.0 * 0.1 / 2.0, 2)));
  }

  TEST_CASE("primitives behind the camera or at the near plane are culled") {
    CHECK_FALSE(project_gaussian(iso(Vec3(0, 0, -1), 0.1, 0.8), axis_camera()));
    CHECK_FALSE(project_gaussian(iso(Vec3(0, 0, kNearPlane), 0.1, 0.8), axis_camera()));
  }

  TEST_CASE("alpha_at evaluates the screen-space Gaussian") {
    ScreenGaussian sg;
    sg.mean2d = Vec2(10, 12);
    const double sigma = 2.0;
    sg.cov2d = Mat2::Identity() * sigma * sigma;
    sg.inv_cov2d = sg.cov2d.inverse();
    sg.peak_opacity = 0.8;
    CHECK(alpha_at(sg, Vec2(10, 12)) == 0.8);
    CHECK(alpha_at(sg, Vec2(10 + sigma, 12)) == doctest::Approx(0.8 * std::exp(-0.5)));
    CHECK(alpha_at(sg, Vec2(10, 12 + 10 * sigma)) < 1e-20);
    sg.peak_opacity = 1.0;
    CHECK(alpha_at(sg, sg.mean2d) == kAlphaClamp);
  }

  TEST_CASE("composite_ray worked examples") {
    const RaySample opaque{3.0, 1.0, Vec3(0, 0, 3)};
    const RayResult a = composite_ray(std::span<const RaySample>(&opaque, 1));
    CHECK(a.payload == Vec3(0, 0, 3));
    CHECK(a.accumulated == 1.0);

    const std::vector<RaySample> two{{1.0, 0.5, Vec3(0, 0, 1)}, {3.0, 1.0, Vec3(0, 0, 3)}};
    const RayResult b = composite_ray(two);
    CHECK(b.payload == Vec3(0, 0, 2));
    CHECK(b.accumulated == 1.0);

    const RayResult c = composite_ray({});
    CHECK(c.payload == Vec3::Zero());
    CHECK(c.accumulated == 0.0);
  }

  TEST_CASE("composite_ray rejects unsorted samples") {
    const std::vector<RaySample> bad{{3.0, 0.5, Vec3::Zero()}, {1.0, 0.5, Vec3::Zero()}};
    CHECK_THROWS_AS(composite_ray(bad), std::invalid_argument);
  }

  TEST_CASE("compositing weights sum into [0,1]") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<RaySample> s(1 + rng.below(8));
      double depth = 0.0;
      for (auto& x : s) {
        depth += rng.uniform(0.01, 1.0);
        x = {depth, rng.uniform(), Vec3::Ones()};
      }
      const RayResult r = composite_ray(s);
      CHECK(r.accumulated >= 0.0);
      CHECK(r.accumulated <= 1.0);
      // Constant payload 1 makes the payload equal the weight sum.
      CHECK(r.payload.x() == doctest::Approx(r.accumulated));
    }
  }

  TEST_CASE("empty scene renders background and zero validity") {
    GaussianScene empty;
    const CameraView cam = axis_camera();
    RenderOptions opts;
    const auto out = brute_force_render(empty, cam, RenderMode::rgb, opts);
    for (std::size_t q = 0; q < out.rgb.pixel_count(); ++q)
      for (int c = 0; c < 3; ++c) CHECK(out.rgb.data[q * 3 + c] == opts.background[c]);
    const auto fast = render(empty, cam, RenderMode::cmap, opts);
    for (double v : fast.cmap.validity.data) CHECK(v == 0.0);
    for (double v : fast.cmap.coords.data) CHECK(v == 0.0);
    CHECK(render(empty, cam, RenderMode::rgb, opts).rgb == out.rgb);
  }

  TEST_CASE("opaque axis-centered primitive maps the center pixel to its center") {
    GaussianScene s;
    s.primitives.push_back(iso(Vec3(0, 0, 2), 0.3, 1.0));
    s.bounds = Aabb{Vec3::Constant(-3), Vec3::Constant(3)};
    const CMap cm = render_cmap(s, axis_camera(33, 33));
    const double a = cm.validity.at(16, 16, 0);
    CHECK(a == doctest::Approx(kAlphaClamp));
    for (int k = 0; k < 3; ++k) CHECK(cm.coords.at(16, 16, k) / a == doctest::Approx(s.primitives[0].center[k]).epsilon(1e-5));
  }

  TEST_CASE("renderer agrees with the brute-force oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 12; ++trial) {
      const GaussianScene scene = random_scene(100 + trial, 1 + static_cast<int>(rng.below(100)));
      const CameraView cam = camera_at(Vec3(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(0.5, 3)), Vec3::Zero());
      for (RenderMode mode : {RenderMode::rgb, RenderMode::cmap}) {
        const auto a = render(scene, cam, mode), b = brute_force_render(scene, cam, mode);
        if (mode == RenderMode::rgb) {
          CHECK(max_diff(a.rgb, b.rgb) <= 1e-6);
        } else {
          CHECK(max_diff(a.cmap.coords, b.cmap.coords) <= 1e-6);
          CHECK(max_diff(a.cmap.validity, b.cmap.validity) <= 1e-6);
        }
      }
    }
  }

  TEST_CASE("output is invariant to primitive storage order") {
    GaussianScene scene = random_scene(5, 60);
    const CameraView cam = camera_at(Vec3(3, -2, 1.5), Vec3::Zero());
    const auto rgb = render_rgb(scene, cam);
    const auto cm = render_cmap(scene, cam);
    Rng rng(2);
    for (std::size_t i = scene.primitives.size() - 1; i > 0; --i) std::swap(scene.primitives[i], scene.primitives[rng.below(i + 1)]);
    CHECK(max_diff(render_rgb(scene, cam), rgb) <= 1e-12);
    CHECK(max_diff(render_cmap(scene, cam).validity, cm.validity) <= 1e-12);
  }

  TEST_CASE("RGB and C-map modes share compositing weights") {
    GaussianScene scene = random_scene(8, 40);
    for (auto& p : scene.primitives) p.color = Vec3::Ones();
    RenderOptions opts;
    opts.background = Vec3::Zero();
    const CameraView cam = camera_at(Vec3(0, -4, 1), Vec3::Zero());
    const auto rgb = render_rgb(scene, cam, opts);
    const auto cm = render_cmap(scene, cam, opts);
    for (std::size_t q = 0; q < rgb.pixel_count(); ++q) CHECK(rgb.data[q * 3] == doctest::Approx(cm.validity.data[q]).epsilon(1e-12));
  }

  TEST_CASE("rendered values satisfy the image and C-map invariants") {
    const GaussianScene scene = random_scene(21, 90);
    const CameraView cam = camera_at(Vec3(2, 3, 1), Vec3::Zero(), 48, 32);
    const auto rgb = render_rgb(scene, cam);
    CHECK(rgb.width == 48);
    CHECK(rgb.height == 32);
    for (double v : rgb.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    const auto cm = render_cmap(scene, cam);
    for (double v : cm.validity.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    for (double v : cm.coords.data) CHECK(std::isfinite(v));
  }

  TEST_CASE("threaded rendering equals single-threaded rendering") {
    const GaussianScene scene = random_scene(31, 64);
    const CameraView cam = camera_at(Vec3(-3, 2, 2), Vec3::Zero(), 64, 64);
    RenderOptions t4;
    t4.threads = 4;
    CHECK(render_rgb(scene, cam, t4) == render_rgb(scene, cam));
    CHECK(render_cmap(scene, cam, t4) == render_cmap(scene, cam));
  }
}
