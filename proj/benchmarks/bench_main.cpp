#include <benchmark/benchmark.h>

#include "mve/codec.hpp"
#include "mve/denoiser.hpp"
#include "mve/packet.hpp"
#include "mve/render.hpp"
#include "mve/scene.hpp"
#include "mve/selfcheck.hpp"
#include "mve/trainer.hpp"

using namespace mve;

namespace {

struct SceneFixture {
  GaussianScene clean, degraded;
  std::vector<CameraView> cams;

  explicit SceneFixture(int size, int views = 2) {
    SceneSpec spec;
    spec.seed = 3;
    clean = generate_scene(spec);
    degraded = corrupt_scene(clean, 0.6, 1);
    TrajectorySpec t;
    t.n_views = views;
    t.width = t.height = size;
    cams = sample_trajectory(t);
  }
};

void BM_RenderRgb(benchmark::State& state) {
  const SceneFixture f(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(render_rgb(f.clean, f.cams[0]));
}
BENCHMARK(BM_RenderRgb)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_RenderCmap(benchmark::State& state) {
  const SceneFixture f(64);
  for (auto _ : state) benchmark::DoNotOptimize(render_cmap(f.clean, f.cams[0]));
}
BENCHMARK(BM_RenderCmap)->Unit(benchmark::kMillisecond);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  Rng rng(1);
  std::vector<double> xv(static_cast<std::size_t>(4) * c * 32 * 32), wv(static_cast<std::size_t>(c) * c * 9);
  for (auto& v : xv) v = rng.normal();
  for (auto& v : wv) v = 0.1 * rng.normal();
  const auto x = ag::Tensor::from({4, c, 32, 32}, xv, true);
  const auto w = ag::Tensor::from({c, c, 3, 3}, wv, true);
  const auto b = ag::Tensor::zeros({c}, true);
  for (auto _ : state) {
    ag::sum(ag::conv2d(x, w, b, 1, 1)).backward();
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_CodecRoundTrip(benchmark::State& state) {
  const SceneFixture f(64);
  const LatentCodec codec = LatentCodec::make({});
  const Image im = render_rgb(f.clean, f.cams[0]);
  ag::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(codec.decode(codec.encode(im)));
}
BENCHMARK(BM_CodecRoundTrip)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const int views = static_cast<int>(state.range(0));
  const SceneFixture f(64, views);
  const std::vector<CameraView> refs(f.cams.begin(), f.cams.end() - 2), targets(f.cams.end() - 2, f.cams.end());
  const Packet p = assemble_packet(refs, targets, {.clean = &f.clean, .degraded = &f.degraded, .render = {}});
  EnhancerConfig cfg;
  EnhancerModel model = EnhancerModel::make(cfg, LatentCodec::make(cfg.codec));
  const PreparedPacket prepared = prepare_packet(model, p);
  TrainConfig tc;
  tc.min_views = tc.max_views = views;
  tc.lr = 1e-3;
  Trainer trainer(model, tc, "{}");
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step(prepared));
}
BENCHMARK(BM_TrainStep)->Arg(4)->Arg(12)->Unit(benchmark::kMillisecond);

void BM_Enhance(benchmark::State& state) {
  const SceneFixture f(64, 12);
  const std::vector<CameraView> refs(f.cams.begin(), f.cams.end() - 4), targets(f.cams.end() - 4, f.cams.end());
  const Packet p = assemble_packet(refs, targets, {.clean = &f.clean, .degraded = &f.degraded, .render = {}});
  EnhancerConfig cfg;
  const EnhancerModel model = EnhancerModel::make(cfg, LatentCodec::make(cfg.codec));
  for (auto _ : state) benchmark::DoNotOptimize(enhance(model, p));
}
BENCHMARK(BM_Enhance)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  ag::tune_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
