#include "mve/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>

#include "mve/denoiser.hpp"
#include "mve/geometry.hpp"
#include "mve/losses.hpp"
#include "mve/packet.hpp"
#include "mve/render.hpp"
#include "mve/schedule.hpp"
#include "mve/trainer.hpp"

namespace mve {

namespace {

std::string fmt(const char* f, double a) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

CheckResult timed(const std::string& name, const std::function<void(CheckResult&)>& body) {
  CheckResult r;
  r.name = name;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

CameraView ring_camera(Rng& rng, int size) {
  TrajectorySpec t;
  t.n_views = 2;
  t.radius_or_step = rng.uniform(3.5, 5.0);
  t.elevation = rng.uniform(-1.5, 2.5);
  t.start_angle = rng.uniform(0.0, 6.283185307179586);
  t.width = t.height = size;
  return sample_trajectory(t).front();
}

std::vector<double> normal_values(std::size_t n, Rng& rng, double sigma = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = sigma * rng.normal();
  return v;
}

EnhancerModel random_model(std::uint64_t seed) {
  EnhancerConfig cfg;
  cfg.seed = seed;
  cfg.denoiser.seed = seed + 1;
  cfg.codec.seed = seed + 2;
  return EnhancerModel::make(cfg, LatentCodec::make(cfg.codec));
}

}  // namespace

void perturb_params(const nn::ParamSet& params, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& it : params.items()) {
    ag::Tensor t = it.tensor;
    for (double& v : t.mutable_data()) v += sigma * rng.normal();
  }
}

CheckResult check_renderer_oracle(int scenes, std::uint64_t seed) {
  return timed("renderer matches brute-force oracle", [&](CheckResult& r) {
    Rng rng(seed);
    double worst = 0.0;
    for (int s = 0; s < scenes; ++s) {
      SceneSpec spec;
      spec.count = 1 + static_cast<int>(rng.below(100));
      spec.seed = rng.next_u64();
      const GaussianScene scene = generate_scene(spec);
      const CameraView cam = ring_camera(rng, 32);
      for (RenderMode mode : {RenderMode::rgb, RenderMode::cmap}) {
        const RenderOutput a = render(scene, cam, mode);
        const RenderOutput b = brute_force_render(scene, cam, mode);
        if (mode == RenderMode::rgb) {
          worst = std::max(worst, max_abs_diff(a.rgb.data, b.rgb.data));
        } else {
          worst = std::max(worst, max_abs_diff(a.cmap.coords.data, b.cmap.coords.data));
          worst = std::max(worst, max_abs_diff(a.cmap.validity.data, b.cmap.validity.data));
        }
      }
    }
    r.passed = worst <= 1e-6;
    r.detail = std::to_string(scenes) + " scenes x 2 modes, max |diff| = " + fmt("%.3e", worst) + " (tol 1e-6)";
  });
}

CheckResult check_composite_examples() {
  return timed("composite_ray worked examples", [](CheckResult& r) {
    const RaySample opaque{.depth = 1.0, .alpha = 1.0, .payload = Vec3(0, 0, 3)};
    const RayResult a = composite_ray(std::span<const RaySample>(&opaque, 1));
    const std::vector<RaySample> two{{.depth = 1.0, .alpha = 0.5, .payload = Vec3(0, 0, 1)},
                                     {.depth = 2.0, .alpha = 1.0, .payload = Vec3(0, 0, 3)}};
    const RayResult b = composite_ray(two);
    const RayResult c = composite_ray({});
    const bool ok_a = a.payload == Vec3(0, 0, 3) && a.accumulated == 1.0;
    const bool ok_b = b.payload == Vec3(0, 0, 2) && b.accumulated == 1.0;
    const bool ok_c = c.payload == Vec3(0, 0, 0) && c.accumulated == 0.0;
    r.passed = ok_a && ok_b && ok_c;
    r.detail = std::string("opaque ") + (ok_a ? "ok" : "FAIL") + ", two-sample " + (ok_b ? "ok" : "FAIL") + ", empty " +
               (ok_c ? "ok" : "FAIL");
  });
}

CheckResult check_scale_invariance(std::uint64_t seed) {
  return timed("scale invariance of normalized priors", [&](CheckResult& r) {
    SceneSpec spec;
    spec.count = 40;
    spec.seed = seed;
    const GaussianScene base = generate_scene(spec);
    TrajectorySpec traj;
    traj.n_views = 4;
    traj.width = traj.height = 32;
    traj.start_angle = 0.3;
    const std::vector<CameraView> cams = sample_trajectory(traj);

    auto signals = [&](double lambda) {
      GaussianScene scene = base;
      for (auto& p : scene.primitives) {
        p.center *= lambda;
        p.scale *= lambda;
      }
      scene.bounds.lo *= lambda;
      scene.bounds.hi *= lambda;
      std::vector<CameraView> scaled = cams;
      for (auto& c : scaled) c.world_to_camera.translation *= lambda;
      const NormalizedPoses norm = normalize_poses(scaled, 0);
      std::vector<double> out;
      for (std::size_t i = 0; i < scaled.size(); ++i) {
        const PluckerField pf = plucker_field(norm.cameras[i], 32, 32);
        const CMap cm = transform_cmap(render_cmap(scene, scaled[i]), norm.anchor_from_world, norm.scale);
        out.insert(out.end(), pf.data.begin(), pf.data.end());
        out.insert(out.end(), cm.coords.data.begin(), cm.coords.data.end());
        out.insert(out.end(), cm.validity.data.begin(), cm.validity.data.end());
      }
      return out;
    };
    const std::vector<double> ref = signals(1.0);
    double worst = 0.0;
    std::string per;
    for (double lambda : {0.1, 1.0, 10.0, 1000.0}) {
      const double d = max_abs_diff(ref, signals(lambda));
      worst = std::max(worst, d);
      per += fmt(" %g:", lambda) + fmt("%.2e", d);
    }
    r.passed = worst <= 1e-6;
    r.detail = "max |diff| by lambda" + per + " (tol 1e-6)";
  });
}

CheckResult check_overlap_table() {
  return timed("overlap score table and selection", [](CheckResult& r) {
    auto camera = [](const Mat3& rot, const Vec3& center) {
      CameraView c;
      c.width = c.height = 32;
      c.intrinsics = intrinsics_from_fov(32, 32, 0.9);
      c.world_to_camera.rotation = rot;
      c.world_to_camera.translation = -(rot * center);
      return c;
    };
    Mat3 side;
    side << 0, 1, 0, 0, 0, 1, 1, 0, 0;
    const Mat3 flip = Vec3(-1, 1, -1).asDiagonal();
    const CameraView a = camera(Mat3::Identity(), Vec3::Zero());
    const CameraView parallel = camera(Mat3::Identity(), Vec3(5, 0, 0));
    const CameraView ortho = camera(side, Vec3(2.5, 0, 0));
    const double s_same = view_overlap_score(a, a, 0.0);
    const double s_par = view_overlap_score(a, parallel, 5.0);
    const double s_orth = view_overlap_score(a, ortho, 5.0);
    const CameraView opposite = camera(flip, Vec3(0, 0, 5));
    const std::vector<int> pick = select_references({a}, {opposite, a}, 1);
    const bool table = s_same == 1.0 && s_par == 0.8 && s_orth == 0.1;
    const bool select = pick.size() == 1 && pick[0] == 1;
    r.passed = table && select;
    r.detail = fmt("scores %.15g", s_same) + fmt(" / %.15g", s_par) + fmt(" / %.15g", s_orth) +
               fmt("; opposite-facing scores %.3f", view_overlap_score(a, opposite, 5.0)) + "; selected pool index " +
               (pick.empty() ? std::string("none") : std::to_string(pick[0])) + " (expected 1)";
  });
}

CheckResult check_permutation_equivariance(int packets, std::uint64_t seed) {
  return timed("denoiser permutation equivariance", [&](CheckResult& r) {
    EnhancerModel model = random_model(seed);
    perturb_params(model.trainable_params(), 0.05, seed + 7);
    ag::NoGradGuard guard;
    Rng rng(seed);
    const int d = model.codec.latent_channels();
    double worst = 0.0;
    for (int p = 0; p < packets; ++p) {
      const int n = 2 + static_cast<int>(rng.below(11));
      std::vector<int> roles(n, 0);
      const int n_t = 1 + static_cast<int>(rng.below(n - 1));
      for (int i = 0; i < n_t; ++i) roles[i] = 1;
      for (int i = n - 1; i > 0; --i) std::swap(roles[i], roles[rng.below(i + 1)]);

      const std::vector<double> lat = normal_values(static_cast<std::size_t>(n) * d * 64, rng);
      const std::vector<double> stk = normal_values(static_cast<std::size_t>(n) * kConditionInputChannels * 64 * 64, rng);
      auto run = [&](const std::vector<int>& order) {
        std::vector<double> l, s, m;
        std::vector<int> targets;
        const std::size_t lat_n = static_cast<std::size_t>(d) * 64, stk_n = kConditionInputChannels * 64 * 64;
        for (std::size_t i = 0; i < order.size(); ++i) {
          const int src = order[i];
          l.insert(l.end(), lat.begin() + src * lat_n, lat.begin() + (src + 1) * lat_n);
          s.insert(s.end(), stk.begin() + src * stk_n, stk.begin() + (src + 1) * stk_n);
          m.insert(m.end(), 64, static_cast<double>(roles[src]));
        }
        // Targets listed in original-view order so outputs line up.
        for (int v = 0; v < n; ++v)
          if (roles[v]) targets.push_back(static_cast<int>(std::find(order.begin(), order.end(), v) - order.begin()));
        const ag::Tensor latents = ag::Tensor::from({n, d, 8, 8}, l);
        const ag::Tensor cond = condition_features(model, ag::Tensor::from({n, kConditionInputChannels, 64, 64}, s),
                                                   ag::Tensor::from({n, 1, 8, 8}, m));
        return denoise(model.unet, latents, cond, targets).values();
      };
      std::vector<int> identity(n), perm(n);
      std::iota(identity.begin(), identity.end(), 0);
      perm = identity;
      for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
      worst = std::max(worst, max_abs_diff(run(identity), run(perm)));
    }
    r.passed = worst <= 1e-5;
    r.detail = std::to_string(packets) + " packets (2-12 views), max |diff| = " + fmt("%.3e", worst) + " (tol 1e-5)";
  });
}

CheckResult check_v_algebra(int triples, std::uint64_t seed) {
  return timed("v-prediction algebra", [&](CheckResult& r) {
    const NoiseSchedule s = NoiseSchedule::cosine();
    Rng rng(seed);
    double worst = 0.0;
    for (int i = 0; i < triples; ++i) {
      const std::vector<double> z0 = normal_values(512, rng), eps = normal_values(512, rng);
      const int t = static_cast<int>(rng.below(s.timesteps() + 1));
      const std::vector<double> zt = add_noise(s, z0, eps, t);
      const std::vector<double> v = v_target(s, z0, eps, t);
      worst = std::max(worst, max_abs_diff(z0_from_v(zt, v, s.alpha_bar(t)), z0));
    }
    Rng r2(seed + 1);
    const std::vector<double> z0 = normal_values(512, r2), eps = normal_values(512, r2);
    const bool identity = add_noise(s, z0, eps, 0) == z0;
    r.passed = worst <= 1e-6 && identity;
    r.detail = std::to_string(triples) + " triples, max |z0 error| = " + fmt("%.3e", worst) +
               " (tol 1e-6); add_noise(t=0) identity " + (identity ? "exact" : "FAILED");
  });
}

namespace {

struct ProbeStats {
  int agree = 0;
  int total = 0;
  double worst = 0.0;
};

bool grads_agree(double analytic, double numeric, double* rel) {
  const double diff = std::abs(analytic - numeric);
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  *rel = scale > 0.0 ? diff / scale : 0.0;
  // Absolute agreement floor of 1e-9.
  return diff <= 1e-3 * scale || diff <= 1e-9;
}

}  // namespace

CheckResult check_gradients(int probes, std::uint64_t seed) {
  return timed("finite-difference gradient checks", [&](CheckResult& r) {
    constexpr double h = 1e-6;
    Rng rng(seed);

    // (a) composite pixel loss w.r.t. predicted pixels.
    ProbeStats a;
    {
      std::vector<double> pv(3 * 16 * 16), gv(pv.size());
      for (auto& x : pv) x = rng.uniform(0.1, 0.9);
      for (auto& x : gv) x = rng.uniform(0.1, 0.9);
      ag::Tensor pred = ag::Tensor::from({1, 3, 16, 16}, pv, true);
      const ag::Tensor gt = ag::Tensor::from({1, 3, 16, 16}, gv);
      pixel_loss(pred, gt).backward();
      const std::vector<double> grad(pred.grad().begin(), pred.grad().end());
      ag::NoGradGuard guard;
      for (int p = 0; p < probes; ++p) {
        const std::size_t i = rng.below(pv.size());
        const double orig = pred.data()[i];
        pred.mutable_data()[i] = orig + h;
        const double lp = pixel_loss(pred, gt).item();
        pred.mutable_data()[i] = orig - h;
        const double lm = pixel_loss(pred, gt).item();
        pred.mutable_data()[i] = orig;
        double rel = 0.0;
        a.agree += grads_agree(grad[i], (lp - lm) / (2 * h), &rel);
        a.worst = std::max(a.worst, rel);
        ++a.total;
      }
    }

    // (b) total training loss on a 2-view micro-packet w.r.t. trainable parameters.
    ProbeStats b;
    {
      SceneSpec spec;
      spec.count = 30;
      spec.seed = seed;
      const GaussianScene clean = generate_scene(spec);
      const GaussianScene degraded = corrupt_scene(clean, 0.5, seed + 3);
      TrajectorySpec traj;
      traj.n_views = 2;
      traj.width = traj.height = 32;
      std::vector<CameraView> cams = sample_trajectory(traj);
      cams[0].role = ViewRole::reference;
      cams[1].role = ViewRole::target;
      const Packet packet = assemble_packet({cams[0]}, {cams[1]}, {.clean = &clean, .degraded = &degraded, .render = {}});

      EnhancerModel model = random_model(seed);
      const nn::ParamSet params = model.trainable_params();
      perturb_params(params, 0.05, seed + 11);
      const PreparedPacket prepared = prepare_packet(model, packet);
      TrainConfig cfg;
      cfg.min_views = cfg.max_views = 2;
      cfg.decode_subset = 1;
      cfg.dropout = 0.0;
      const Rng step_rng(seed + 5);

      params.zero_grad();
      {
        Rng sr = step_rng;
        forward_step(model, prepared, cfg, sr).total.backward();
      }
      std::vector<std::size_t> offsets{0};
      for (const auto& it : params.items()) offsets.push_back(offsets.back() + it.tensor.numel());
      ag::NoGradGuard guard;
      auto loss = [&] {
        Rng sr = step_rng;
        return forward_step(model, prepared, cfg, sr).metrics.total_loss;
      };
      for (int p = 0; p < probes; ++p) {
        const std::size_t flat = rng.below(offsets.back());
        const std::size_t k = std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin() - 1;
        ag::Tensor t = params.items()[k].tensor;
        const std::size_t i = flat - offsets[k];
        const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
        const double orig = t.data()[i];
        t.mutable_data()[i] = orig + h;
        const double lp = loss();
        t.mutable_data()[i] = orig - h;
        const double lm = loss();
        t.mutable_data()[i] = orig;
        double rel = 0.0;
        b.agree += grads_agree(analytic, (lp - lm) / (2 * h), &rel);
        b.worst = std::max(b.worst, rel);
        ++b.total;
      }
      params.zero_grad();
    }
    const double fa = static_cast<double>(a.agree) / a.total, fb = static_cast<double>(b.agree) / b.total;
    r.passed = fa >= 0.95 && fb >= 0.95;
    r.detail = "pixel loss " + std::to_string(a.agree) + "/" + std::to_string(a.total) + " agree (worst rel " +
               fmt("%.2e", a.worst) + "); training loss " + std::to_string(b.agree) + "/" + std::to_string(b.total) +
               " agree (worst rel " + fmt("%.2e", b.worst) + "); need >= 95% within 1e-3";
  });
}

CheckResult check_condition_noop_and_cfg(std::uint64_t seed) {
  return timed("conditioning no-op at init and CFG collapse", [&](CheckResult& r) {
    EnhancerModel model = random_model(seed);
    {
      nn::ParamSet unet;
      model.unet.collect(unet, "unet");
      perturb_params(unet, 0.05, seed + 1);
    }
    ag::NoGradGuard guard;
    Rng rng(seed);
    const int n = 5, d = model.codec.latent_channels();
    const std::vector<int> targets{3, 4};
    const ag::Tensor lat = ag::Tensor::from({n, d, 8, 8}, normal_values(static_cast<std::size_t>(n) * d * 64, rng));
    std::vector<double> mv(n * 64, 0.0);
    std::fill(mv.begin() + 3 * 64, mv.end(), 1.0);
    const ag::Tensor masks = ag::Tensor::from({n, 1, 8, 8}, mv);
    const ag::Shape ss{n, kConditionInputChannels, 64, 64};
    const ag::Tensor s1 = ag::Tensor::from(ss, normal_values(ag::numel_of(ss), rng));
    const ag::Tensor s2 = ag::Tensor::from(ss, normal_values(ag::numel_of(ss), rng, 3.0));
    const auto o1 = denoise(model.unet, lat, condition_features(model, s1, masks), targets).values();
    const auto o2 = denoise(model.unet, lat, condition_features(model, s2, masks), targets).values();
    const auto o0 = denoise(model.unet, lat, ag::Tensor::zeros(lat.shape()), targets).values();
    const bool noop = o1 == o2 && o1 == o0;
    double mag = 0.0;
    for (double v : o1) mag = std::max(mag, std::abs(v));

    // Perturbed weights: conditions matter and CFG still collapses.
    perturb_params(model.trainable_params(), 0.05, seed + 2);
    const auto cond = denoise(model.unet, lat, condition_features(model, s1, masks), targets).values();
    const auto uncond = denoise(model.unet, lat, null_features(model, n, 8, 8), targets).values();
    const bool one = cfg_denoise(model, lat, s1, masks, targets, 1.0).values() == cond;
    const bool zero = cfg_denoise(model, lat, s1, masks, targets, 0.0).values() == uncond;
    const auto five = combine_guidance(ag::Tensor::full({4}, 3.0), ag::Tensor::full({4}, 1.0), 2.0).values();
    const bool formula = std::all_of(five.begin(), five.end(), [](double v) { return v == 5.0; });
    r.passed = noop && mag > 0.0 && one && zero && formula;
    r.detail = std::string("init outputs independent of conditions: ") + (noop ? "exact" : "NO") +
               fmt(" (max |out| %.3e)", mag) + "; scale=1 == denoise: " + (one ? "exact" : "NO") +
               "; scale=0 == uncond: " + (zero ? "exact" : "NO") + "; (c=3,u=1,s=2) -> 5: " + (formula ? "yes" : "NO");
  });
}

std::vector<CheckResult> run_selfcheck(const SelfCheckOptions& o) {
  return {check_renderer_oracle(o.render_scenes, o.seed),
          check_composite_examples(),
          check_scale_invariance(o.seed),
          check_overlap_table(),
          check_permutation_equivariance(o.permutation_packets, o.seed),
          check_v_algebra(o.v_triples, o.seed),
          check_gradients(o.gradient_probes, o.seed),
          check_condition_noop_and_cfg(o.seed)};
}

}  // namespace mve
