#include "mve/render.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>
#include <tuple>

namespace mve {

std::optional<ScreenGaussian> project_gaussian(const GaussianPrimitive& g, const CameraView& cam, int source_index) {
  const Mat3& w = cam.world_to_camera.rotation;
  const Vec3 pc = cam.world_to_camera.apply(g.center);
  if (pc.z() <= kNearPlane) return std::nullopt;

  const double fx = cam.intrinsics.fx, fy = cam.intrinsics.fy;
  const double iz = 1.0 / pc.z();
  Eigen::Matrix<double, 2, 3> j;
  j << fx * iz, 0.0, -fx * pc.x() * iz * iz,  //
      0.0, fy * iz, -fy * pc.y() * iz * iz;
  const Mat3 cov_cam = w * g.covariance() * w.transpose();

  ScreenGaussian sg;
  sg.mean2d = Vec2(fx * pc.x() * iz + cam.intrinsics.cx, fy * pc.y() * iz + cam.intrinsics.cy);
  sg.cov2d = j * cov_cam * j.transpose();
  sg.cov2d = 0.5 * (sg.cov2d + sg.cov2d.transpose());
  sg.depth = pc.z();
  sg.peak_opacity = g.opacity;
  sg.source_index = source_index;

  Eigen::SelfAdjointEigenSolver<Mat2> eig(sg.cov2d, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues()(0), hi = eig.eigenvalues()(1);
  sg.singular = !(lo > 0.0) || hi / lo > kMaxCondition;
  if (!sg.singular) sg.inv_cov2d = sg.cov2d.inverse();
  return sg;
}

double alpha_at(const ScreenGaussian& sg, const Vec2& pixel) {
  const Vec2 d = pixel - sg.mean2d;
  const double power = -0.5 * d.dot(sg.inv_cov2d * d);
  const double a = sg.peak_opacity * std::exp(power);
  return std::clamp(a, 0.0, kAlphaClamp);
}

RayResult composite_ray(std::span<const RaySample> samples) {
  RayResult r;
  double transmittance = 1.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (i > 0 && s.depth < samples[i - 1].depth) throw std::invalid_argument("composite_ray: samples not depth-sorted");
    if (!(s.alpha >= 0.0 && s.alpha <= 1.0)) throw std::invalid_argument("composite_ray: alpha outside [0,1]");
    const double w = s.alpha * transmittance;
    r.payload += w * s.payload;
    r.accumulated += w;
    transmittance *= 1.0 - s.alpha;
  }
  return r;
}

namespace {

struct Fragment {
  double depth;
  int source;
  double alpha;
};

bool fragment_less(const Fragment& a, const Fragment& b) {
  return std::tie(a.depth, a.source) < std::tie(b.depth, b.source);
}

void allocate_output(RenderOutput& out, const CameraView& cam, RenderMode mode, const RenderOptions& opts) {
  if (mode == RenderMode::rgb) {
    out.rgb = Image(cam.width, cam.height, 3);
    for (std::size_t p = 0; p < out.rgb.pixel_count(); ++p)
      for (int c = 0; c < 3; ++c) out.rgb.data[p * 3 + c] = opts.background[c];
  } else {
    out.cmap = CMap{Image(cam.width, cam.height, 3), Image(cam.width, cam.height, 1)};
  }
}

void store_pixel(RenderOutput& out, RenderMode mode, const RenderOptions& opts, std::size_t p, const Vec3& payload,
                 double acc) {
  if (mode == RenderMode::rgb) {
    const Vec3 c = payload + (1.0 - acc) * opts.background;
    for (int k = 0; k < 3; ++k) out.rgb.data[p * 3 + k] = std::clamp(c[k], 0.0, 1.0);
  } else {
    for (int k = 0; k < 3; ++k) out.cmap.coords.data[p * 3 + k] = payload[k];
    out.cmap.validity.data[p] = std::clamp(acc, 0.0, 1.0);
  }
}

}  // namespace

RenderOutput render(const GaussianScene& scene, const CameraView& cam, RenderMode mode, const RenderOptions& opts) {
  cam.validate();
  RenderOutput out;
  allocate_output(out, cam, mode, opts);

  // Project and bin primitives into the pixels their cutoff ellipse covers.
  std::vector<std::vector<Fragment>> bins(static_cast<std::size_t>(cam.width) * cam.height);
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    auto sg = project_gaussian(scene.primitives[i], cam, static_cast<int>(i));
    if (!sg) {
      ++out.stats.culled;
      continue;
    }
    if (sg->singular) {
      ++out.stats.singular;
      continue;
    }
    if (sg->peak_opacity < opts.alpha_cutoff) continue;
    Eigen::SelfAdjointEigenSolver<Mat2> eig(sg->cov2d, Eigen::EigenvaluesOnly);
    const double radius = std::sqrt(2.0 * eig.eigenvalues()(1) * std::log(sg->peak_opacity / opts.alpha_cutoff)) + 1.0;
    const int j0 = std::max(0, static_cast<int>(std::floor(sg->mean2d.x() - radius)));
    const int j1 = std::min(cam.width - 1, static_cast<int>(std::ceil(sg->mean2d.x() + radius)));
    const int i0 = std::max(0, static_cast<int>(std::floor(sg->mean2d.y() - radius)));
    const int i1 = std::min(cam.height - 1, static_cast<int>(std::ceil(sg->mean2d.y() + radius)));
    for (int r = i0; r <= i1; ++r)
      for (int c = j0; c <= j1; ++c) {
        const double a = alpha_at(*sg, Vec2(c, r));
        if (a >= opts.alpha_cutoff)
          bins[static_cast<std::size_t>(r) * cam.width + c].push_back({sg->depth, sg->source_index, a});
      }
  }

  auto shade_rows = [&](int row_begin, int row_end) {
    std::vector<RaySample> samples;
    for (int r = row_begin; r < row_end; ++r)
      for (int c = 0; c < cam.width; ++c) {
        const std::size_t p = static_cast<std::size_t>(r) * cam.width + c;
        auto& frags = bins[p];
        std::sort(frags.begin(), frags.end(), fragment_less);
        samples.clear();
        double t = 1.0;
        for (const auto& f : frags) {
          const auto& prim = scene.primitives[f.source];
          samples.push_back({f.depth, f.alpha, mode == RenderMode::rgb ? prim.color : prim.center});
          t *= 1.0 - f.alpha;
          if (t < opts.transmittance_floor) break;
        }
        const RayResult ray = composite_ray(samples);
        store_pixel(out, mode, opts, p, ray.payload, ray.accumulated);
      }
  };

  const int threads = std::clamp(opts.threads, 1, cam.height);
  if (threads == 1) {
    shade_rows(0, cam.height);
  } else {
    std::vector<std::jthread> pool;
    const int chunk = (cam.height + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const int b = t * chunk, e = std::min(cam.height, b + chunk);
      if (b < e) pool.emplace_back(shade_rows, b, e);
    }
  }
  return out;
}

RenderedImage render_rgb(const GaussianScene& scene, const CameraView& cam, const RenderOptions& opts) {
  return render(scene, cam, RenderMode::rgb, opts).rgb;
}

CMap render_cmap(const GaussianScene& scene, const CameraView& cam, const RenderOptions& opts) {
  return render(scene, cam, RenderMode::cmap, opts).cmap;
}

RenderOutput brute_force_render(const GaussianScene& scene, const CameraView& cam, RenderMode mode,
                                const RenderOptions& opts) {
  cam.validate();
  RenderOutput out;
  allocate_output(out, cam, mode, opts);

  std::vector<std::optional<ScreenGaussian>> screen;
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    auto sg = project_gaussian(scene.primitives[i], cam, static_cast<int>(i));
    if (!sg) ++out.stats.culled;
    else if (sg->singular) ++out.stats.singular;
    screen.push_back(sg);
  }

  std::vector<Fragment> frags;
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c) {
      frags.clear();
      for (const auto& sg : screen)
        if (sg && !sg->singular) frags.push_back({sg->depth, sg->source_index, alpha_at(*sg, Vec2(c, r))});
      std::sort(frags.begin(), frags.end(), fragment_less);
      Vec3 payload = Vec3::Zero();
      double acc = 0.0;
      for (std::size_t i = 0; i < frags.size(); ++i) {
        double t = 1.0;
        for (std::size_t k = 0; k < i; ++k) t *= 1.0 - frags[k].alpha;
        const double w = frags[i].alpha * t;
        const auto& prim = scene.primitives[frags[i].source];
        payload += w * (mode == RenderMode::rgb ? prim.color : prim.center);
        acc += w;
      }
      store_pixel(out, mode, opts, static_cast<std::size_t>(r) * cam.width + c, payload, acc);
    }
  return out;
}

}  // namespace mve
