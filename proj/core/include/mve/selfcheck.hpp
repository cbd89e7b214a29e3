#pragma once

// Oracle and invariant harnesses shared by `mvenhance selftest` and the
// acceptance suite.

#include <cstdint>
#include <string>
#include <vector>

#include "mve/nn.hpp"

namespace mve {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Renderer vs brute-force oracle over random scenes (<= 100 primitives,
/// 32x32), RGB and C-map modes; tolerance 1e-6.
CheckResult check_renderer_oracle(int scenes, std::uint64_t seed);
/// The three worked composite_ray examples, exact.
CheckResult check_composite_examples();
/// Plücker fields and normalized C-maps under world scaling by lambda in
/// {0.1, 1, 10, 1000}; tolerance 1e-6.
CheckResult check_scale_invariance(std::uint64_t seed);
/// Worked overlap scores (1.0 / 0.8 / 0.1) exact, plus the co-located vs
/// opposite-facing selection.
CheckResult check_overlap_table();
/// Denoiser outputs permute with the views; tolerance 1e-5.
CheckResult check_permutation_equivariance(int packets, std::uint64_t seed);
/// z0 recovery from (z_t, v) over random triples (tolerance 1e-6) and
/// add_noise(t=0) identity.
CheckResult check_v_algebra(int triples, std::uint64_t seed);
/// Central finite differences vs analytic gradients of the composite pixel
/// loss and of the total training loss on a 2-view micro-packet; passes when
/// >= 95% of probes agree within 1e-3 relative.
CheckResult check_gradients(int probes, std::uint64_t seed);
/// Zero-initialized condition encoder makes outputs independent of the
/// geometric conditions, and cfg_denoise(scale=1) == denoise, both exact.
CheckResult check_condition_noop_and_cfg(std::uint64_t seed);

/// Add N(0, sigma^2) noise to every parameter value.
void perturb_params(const nn::ParamSet& params, double sigma, std::uint64_t seed);

struct SelfCheckOptions {
  int render_scenes = 50;
  int permutation_packets = 20;
  int v_triples = 1000;
  int gradient_probes = 32;
  std::uint64_t seed = 1;
};

std::vector<CheckResult> run_selfcheck(const SelfCheckOptions& opts);

}  // namespace mve
