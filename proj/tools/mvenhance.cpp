// mvenhance: command-line front end for the enhancement pipeline.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <thread>

#include "mve/error.hpp"
#include "mve/pipeline.hpp"
#include "mve/selfcheck.hpp"
#include "mve/tensor.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::string checkpoint;
  std::string codec;
  bool allow_mismatch = false;
  bool resume = false;
  bool quiet = false;
};

mve::RunConfig resolve(const Flags& f, bool demo) {
  mve::RunConfig cfg = f.config.empty() ? (demo ? mve::demo_config() : mve::RunConfig{}) : mve::load_run_config(f.config);
  if (f.config.empty() && !demo) cfg.apply_seed(cfg.seed);
  if (f.seed) cfg.apply_seed(*f.seed);
  if (!f.out.empty()) cfg.out = f.out;
  if (f.threads < 1) throw mve::ConfigError("--threads must be >= 1");
  cfg.threads = f.threads;
  cfg.validate();
  return cfg;
}

mve::PipelineContext context(const Flags& f, const mve::RunConfig& cfg) {
  mve::PipelineContext ctx;
  ctx.out = cfg.out;
  ctx.log = f.quiet ? nullptr : &std::cout;
  if (!f.checkpoint.empty()) ctx.checkpoint = f.checkpoint;
  if (!f.codec.empty()) ctx.codec = f.codec;
  ctx.allow_config_mismatch = f.allow_mismatch;
  ctx.resume = f.resume;
  return ctx;
}

int run_selftest(bool full, std::uint64_t seed) {
  mve::SelfCheckOptions o;
  o.seed = seed;
  if (!full) {
    o.render_scenes = 10;
    o.permutation_packets = 3;
    o.v_triples = 200;
    o.gradient_probes = 20;
  }
  bool ok = true;
  for (const auto& r : mve::run_selfcheck(o)) {
    std::printf("%s %-28s %7.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds, r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  mve::ag::tune_allocator();
  CLI::App app{"Multi-view enhancement pipeline for degraded Gaussian-splat renders"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&](CLI::App* c) {
    c->add_option("--config", f.config, "Run config (JSON)")->check(CLI::ExistingFile);
    c->add_option("--seed", f.seed, "Global seed; overrides the config");
    c->add_option("--out", f.out, "Output directory; overrides the config");
    c->add_option("--threads", f.threads, "Worker threads for rendering");
    c->add_flag("--quiet", f.quiet, "Suppress progress output");
  };
  auto with_ckpt = [&](CLI::App* c) {
    c->add_option("--checkpoint", f.checkpoint, "Enhancer checkpoint path (default <out>/model.ckpt)");
    c->add_flag("--allow-config-mismatch", f.allow_mismatch, "Load checkpoints whose config echo differs");
  };
  auto with_codec = [&](CLI::App* c) {
    c->add_option("--codec", f.codec, "Pretrained codec checkpoint (default <out>/codec.ckpt)");
  };

  auto* gen = app.add_subcommand("gen", "Generate scene, degraded scenes and cameras");
  auto* render = app.add_subcommand("render", "Render clean and degraded RGB and C-maps");
  auto* pack = app.add_subcommand("pack", "Assemble multi-view packets");
  auto* trn = app.add_subcommand("train", "Train the enhancer on the packets");
  auto* enh = app.add_subcommand("enhance", "Enhance the target views of every packet");
  auto* evl = app.add_subcommand("eval", "Score enhanced and distorted views against ground truth");
  auto* demo = app.add_subcommand("demo", "Run gen, render, pack, train, enhance and eval");
  auto* self = app.add_subcommand("selftest", "Run the oracle and invariant suites");
  for (auto* c : {gen, render, pack, trn, enh, evl, demo}) common(c);
  for (auto* c : {trn, enh, demo}) with_ckpt(c);
  for (auto* c : {trn, demo}) with_codec(c);
  trn->add_flag("--resume", f.resume, "Continue from the checkpoint if it exists");
  bool full = false;
  std::uint64_t self_seed = 1;
  self->add_flag("--full", full, "Use the full sample counts");
  self->add_option("--seed", self_seed, "Seed for the randomized checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (self->parsed()) return run_selftest(full, self_seed);
    const mve::RunConfig cfg = resolve(f, demo->parsed());
    const mve::PipelineContext ctx = context(f, cfg);
    if (gen->parsed()) mve::cmd_gen(cfg, ctx);
    if (render->parsed()) mve::cmd_render(cfg, ctx);
    if (pack->parsed()) mve::cmd_pack(cfg, ctx);
    if (trn->parsed()) mve::cmd_train(cfg, ctx);
    if (enh->parsed()) mve::cmd_enhance(cfg, ctx);
    if (evl->parsed()) mve::cmd_eval(cfg, ctx);
    if (demo->parsed()) mve::run_demo(cfg, ctx);
  } catch (const mve::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mve::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const mve::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
