#include <numeric>

#include "mve/denoiser.hpp"
#include "mve/selfcheck.hpp"
#include "support.hpp"

using namespace mve;
using mve::test::random_tensor;

namespace {

EnhancerModel small_model(std::uint64_t seed, double perturb = 0.05) {
  EnhancerConfig cfg;
  cfg.seed = seed;
  cfg.denoiser.seed = seed + 1;
  cfg.codec.seed = seed + 2;
  EnhancerModel m = EnhancerModel::make(cfg, LatentCodec::make(cfg.codec));
  if (perturb > 0) perturb_params(m.trainable_params(), perturb, seed + 3);
  return m;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct Inputs {
  ag::Tensor latents, stacks, masks;
  std::vector<int> targets;
};

Inputs random_inputs(int n, int n_target, Rng& rng, int size = 32) {
  Inputs in;
  in.latents = random_tensor({n, 8, size / 8, size / 8}, rng, 1.0, false);
  in.stacks = random_tensor({n, kConditionInputChannels, size, size}, rng, 1.0, false);
  std::vector<double> m;
  for (int i = 0; i < n; ++i) {
    const bool target = i >= n - n_target;
    m.insert(m.end(), static_cast<std::size_t>(size / 8) * (size / 8), target ? 1.0 : 0.0);
    if (target) in.targets.push_back(i);
  }
  in.masks = ag::Tensor::from({n, 1, size / 8, size / 8}, m);
  return in;
}

}  // namespace

TEST_SUITE("mv_denoiser") {
  TEST_CASE("outputs permute with the views") {
    const EnhancerModel model = small_model(1);
    ag::NoGradGuard guard;
    Rng rng(2);
    for (int trial = 0; trial < 3; ++trial) {
      const int n = 2 + static_cast<int>(rng.below(5));
      const Inputs in = random_inputs(n, 1 + static_cast<int>(rng.below(n - 1)), rng);
      const ag::Tensor cond = condition_features(model, in.stacks, in.masks);
      const ag::Tensor base = denoise(model.unet, in.latents, cond, in.targets);
      std::vector<int> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
      std::vector<int> new_targets;
      for (int t : in.targets) new_targets.push_back(static_cast<int>(std::find(perm.begin(), perm.end(), t) - perm.begin()));
      const ag::Tensor out = denoise(model.unet, ag::select_batch(in.latents, perm), ag::select_batch(cond, perm), new_targets);
      CHECK(max_abs_diff(base.data(), out.data()) <= 1e-5);
    }
  }

  TEST_CASE("single target without references runs") {
    const EnhancerModel model = small_model(3);
    ag::NoGradGuard guard;
    Rng rng(4);
    const Inputs in = random_inputs(1, 1, rng);
    const ag::Tensor v = cfg_denoise(model, in.latents, in.stacks, in.masks, in.targets, 2.0);
    CHECK(v.shape() == ag::Shape{1, 8, 4, 4});
    for (double x : v.data()) CHECK(std::isfinite(x));
  }

  TEST_CASE("attention mixes information across views") {
    const EnhancerModel model = small_model(5);
    ag::NoGradGuard guard;
    Rng rng(6);
    Inputs in = random_inputs(3, 1, rng);
    const ag::Tensor cond = condition_features(model, in.stacks, in.masks);
    const ag::Tensor a = denoise(model.unet, in.latents, cond, in.targets);
    ag::Tensor changed = in.latents.clone();
    for (std::size_t i = 0; i < 8 * 16; ++i) changed.mutable_data()[i] += 1.0;  // reference view 0 only
    const ag::Tensor b = denoise(model.unet, changed, cond, in.targets);
    CHECK(max_abs_diff(a.data(), b.data()) > 1e-6);
  }

  TEST_CASE("duplicating a reference view moves the output by a bounded amount") {
    const EnhancerModel model = small_model(7);
    ag::NoGradGuard guard;
    Rng rng(8);
    const Inputs in = random_inputs(3, 1, rng);
    const ag::Tensor cond = condition_features(model, in.stacks, in.masks);
    const ag::Tensor a = denoise(model.unet, in.latents, cond, in.targets);
    const std::vector<int> dup{0, 0, 1, 2};
    const ag::Tensor b = denoise(model.unet, ag::select_batch(in.latents, dup), ag::select_batch(cond, dup), std::vector<int>{3});
    const double change = max_abs_diff(a.data(), b.data());
    MESSAGE("max |change| from duplicating a reference: " << change);
    CHECK(std::isfinite(change));
    CHECK(change < 10.0);
  }

  TEST_CASE("conditioning is a no-op at initialization") {
    const EnhancerModel model = small_model(9, 0.0);
    ag::NoGradGuard guard;
    Rng rng(10);
    const Inputs a = random_inputs(3, 2, rng);
    const ag::Tensor other = random_tensor(a.stacks.shape(), rng, 5.0, false);
    const auto out_a = denoise(model.unet, a.latents, condition_features(model, a.stacks, a.masks), a.targets);
    const auto out_b = denoise(model.unet, a.latents, condition_features(model, other, a.masks), a.targets);
    CHECK(out_a.values() == out_b.values());
  }

  TEST_CASE("guidance scale 1 and 0 select the single passes") {
    const EnhancerModel model = small_model(11);
    ag::NoGradGuard guard;
    Rng rng(12);
    const Inputs in = random_inputs(4, 2, rng);
    const int n = 4, h = 4, w = 4;
    const auto cond = denoise(model.unet, in.latents, condition_features(model, in.stacks, in.masks), in.targets);
    const auto uncond = denoise(model.unet, in.latents, null_features(model, n, h, w), in.targets);
    CHECK(cfg_denoise(model, in.latents, in.stacks, in.masks, in.targets, 1.0).values() == cond.values());
    CHECK(cfg_denoise(model, in.latents, in.stacks, in.masks, in.targets, 0.0).values() == uncond.values());
    const auto g2 = cfg_denoise(model, in.latents, in.stacks, in.masks, in.targets, 2.0);
    for (std::size_t i = 0; i < g2.numel(); ++i)
      CHECK(g2.data()[i] == doctest::Approx(uncond.data()[i] + 2.0 * (cond.data()[i] - uncond.data()[i])));
  }

  TEST_CASE("guidance combination on constant grids") {
    const auto c = ag::Tensor::full({1, 2, 2, 2}, 3.0), u = ag::Tensor::full({1, 2, 2, 2}, 1.0);
    const auto g = combine_guidance(c, u, 2.0);
    for (double v : g.data()) CHECK(v == 5.0);
  }

  TEST_CASE("models without conditions ignore the geometric inputs") {
    EnhancerConfig cfg;
    cfg.use_conditions = false;
    EnhancerModel model = EnhancerModel::make(cfg, LatentCodec::make(cfg.codec));
    perturb_params(model.trainable_params(), 0.05, 1);
    ag::NoGradGuard guard;
    Rng rng(13);
    const Inputs in = random_inputs(3, 1, rng);
    const ag::Tensor other = random_tensor(in.stacks.shape(), rng, 5.0, false);
    CHECK(cfg_denoise(model, in.latents, in.stacks, in.masks, in.targets, 2.0).values() ==
          cfg_denoise(model, in.latents, other, in.masks, in.targets, 2.0).values());
  }

  TEST_CASE("dropping conditions zeroes the matching channels") {
    Rng rng(14);
    const ag::Tensor s = random_tensor({2, kConditionInputChannels, 8, 8}, rng, 1.0, false);
    const ag::Tensor dc = drop_conditions(s, true, false), dp = drop_conditions(s, false, true);
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < kConditionInputChannels; ++c)
        for (int p = 0; p < 64; ++p) {
          const std::size_t i = (static_cast<std::size_t>(n) * kConditionInputChannels + c) * 64 + p;
          CHECK(dc.data()[i] == (c < 4 ? 0.0 : s.data()[i]));
          CHECK(dp.data()[i] == (c >= 4 ? 0.0 : s.data()[i]));
        }
  }

  TEST_CASE("mismatched condition shapes are rejected") {
    const EnhancerModel model = small_model(15);
    Rng rng(16);
    const Inputs in = random_inputs(2, 1, rng);
    CHECK_THROWS_AS(denoise(model.unet, in.latents, ag::Tensor::zeros({2, 8, 2, 2}), in.targets), std::invalid_argument);
    CHECK_THROWS_AS(denoise(model.unet, in.latents, ag::Tensor::zeros({3, 8, 4, 4}), in.targets), std::invalid_argument);
    CHECK_THROWS_AS(denoise(model.unet, in.latents, ag::Tensor::zeros({2, 8, 4, 4}), std::vector<int>{5}), std::invalid_argument);
  }

  TEST_CASE("enhance is deterministic and returns one image per target") {
    const EnhancerModel model = small_model(17);
    SceneSpec spec;
    spec.seed = 3;
    spec.count = 20;
    const GaussianScene clean = generate_scene(spec), degraded = corrupt_scene(clean, 0.6, 1);
    TrajectorySpec t;
    t.n_views = 3;
    t.width = t.height = 32;
    auto cams = sample_trajectory(t);
    const Packet p = assemble_packet({cams[0]}, {cams[1], cams[2]}, {.clean = &clean, .degraded = &degraded, .render = {}});
    const auto a = enhance(model, p), b = enhance(model, p);
    REQUIRE(a.size() == 2);
    CHECK(a == b);
    CHECK(a[0].width == 32);
    for (double v : a[0].data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}
