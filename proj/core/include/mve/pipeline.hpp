#pragma once

// Run configuration and the file-based pipeline stages behind the CLI:
// gen -> render -> pack -> train -> enhance -> eval.
//
// Output directory layout:
//   config.echo.json               canonical config of the last command
//   scene.json, degraded_<k>.json  clean scene, one degraded scene per severity
//   cameras_reference.json, cameras_target.json
//   renders/                       float images (.mveimg) and 8-bit previews (.ppm)
//   packets/packet_<k>.mvepkt
//   codec.ckpt, model.ckpt, train_metrics.csv
//   enhanced/                      enhanced target views
//   metrics.csv, metrics_table.txt, metrics_plot.svg

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mve/codec.hpp"
#include "mve/config.hpp"
#include "mve/metrics.hpp"
#include "mve/packet.hpp"
#include "mve/scene.hpp"

namespace mve {

struct CorpusConfig {
  int scenes = 16;
  int views_per_scene = 8;
  double max_severity = 0.8;
};

struct EvalConfig {
  int n_buckets = 0;     // 0: one bucket per severity
  double horizon = 0.0;  // 0: last target timestamp + target dt
};

enum class TargetLayout { split, traversals };

struct RunConfig {
  std::uint64_t seed = 1;
  /// Output directory; the CLI --out flag overrides it.
  std::string out = "mve_out";
  SceneSpec scene;
  TrajectorySpec reference;
  TrajectorySpec target;
/// split: the target trajectory is cut in time order into one contiguous
/// group per severity. traversals: the whole trajectory is revisited once per
/// severity, each pass later in time than the previous one.
  std::vector<double> severities{0.6};
  TargetLayout target_layout = TargetLayout::split;
  int n_ref = 8;
  PacketBounds bounds;
  CorpusConfig corpus;
  CodecTrainConfig codec_train;
  EnhancerConfig model;
  TrainConfig train;
  EvalConfig eval;
  /// Runtime only (not part of the echo).
  int threads = 1;

  /// Number of target views across all severity groups.
  int total_targets() const;
  /// Re-derive every component seed from `seed`.
  void apply_seed(std::uint64_t seed);
  void validate() const;
};

/// Parse a run config; unknown keys and per-section seeds are rejected.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& cfg);
/// Small end-to-end configuration used by `demo`.
RunConfig demo_config();

/// Echo stored in model checkpoints (model + train sections).
std::string model_echo(const RunConfig& cfg);

struct PipelineContext {
  std::filesystem::path out;
  std::ostream* log = nullptr;
  std::optional<std::filesystem::path> checkpoint;  // enhancer checkpoint path override
  std::optional<std::filesystem::path> codec;       // pretrained codec checkpoint
  bool allow_config_mismatch = false;
  bool resume = false;
};

void cmd_gen(const RunConfig& cfg, const PipelineContext& ctx);
void cmd_render(const RunConfig& cfg, const PipelineContext& ctx);
void cmd_pack(const RunConfig& cfg, const PipelineContext& ctx);

/// Load the codec from ctx.codec or <out>/codec.ckpt, pretraining and
/// saving it when absent. Throws NumericalError when the PSNR gate fails.
LatentCodec obtain_codec(const RunConfig& cfg, const PipelineContext& ctx, CodecTrainReport* report = nullptr);
/// Synthetic codec corpus: clean and degraded renders of generated scenes.
std::vector<RenderedImage> codec_corpus(const RunConfig& cfg);

struct TrainOutcome {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int iterations = 0;
  int skipped = 0;
};
TrainOutcome cmd_train(const RunConfig& cfg, const PipelineContext& ctx);
void cmd_enhance(const RunConfig& cfg, const PipelineContext& ctx);

struct EvalOutcome {
  std::vector<MetricRow> rows;
  double distorted_psnr = 0.0;  // mean over targets
  double enhanced_psnr = 0.0;
};
EvalOutcome cmd_eval(const RunConfig& cfg, const PipelineContext& ctx);

/// gen, render, pack, train, enhance, eval.
EvalOutcome run_demo(const RunConfig& cfg, const PipelineContext& ctx);

}  // namespace mve
