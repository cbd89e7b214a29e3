#pragma once

// End-to-end optimization of the condition encoder, null condition,
// denoiser and decoder adapters on prepared packets.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "mve/checkpoint.hpp"
#include "mve/denoiser.hpp"

namespace mve {

struct TrainConfig {
  int min_views = 8;
  int max_views = 12;
  int decode_subset = 2;
  double lr = 1e-4;
  double clip_norm = 1.0;
  int iterations = 2000;
  double dropout = 0.15;
  std::uint64_t seed = 0;
  int log_every = 1;
  int checkpoint_every = 0;  // 0: only at the end of train()

  void validate() const;
};

/// Packet tensors with cached latents; the encoder is frozen, so these stay
/// valid for the whole run.
struct PreparedPacket {
  ag::Tensor latents;      // [N,d,h,w]: clean references, distorted targets (z_tau)
  ag::Tensor stacks;       // [N,10,H,W]
  ag::Tensor masks;        // [N,1,h,w]
  ag::Tensor target_v;     // [n_target,d,h,w]
  ag::Tensor gt_images;    // [n_target,3,H,W]
  std::vector<int> refs;
  std::vector<int> targets;
};

/// Requires ground truth on every target.
PreparedPacket prepare_packet(const EnhancerModel& model, const Packet& packet);

/// k distinct indices drawn uniformly from [0, n), in draw order.
std::vector<int> sample_decode_subset(int n_targets, int k, Rng& rng);

struct StepMetrics {
  double latent_loss = 0.0;
  double pixel_loss = 0.0;
  double total_loss = 0.0;
  double grad_norm = 0.0;
  int views = 0;
  bool drop_cmap = false;
  bool drop_pose = false;
  bool skipped = false;
};

/// Forward pass and losses for one packet; consumes rng draws for the view
/// subset, dropout decisions and decode subset, in that order.
struct StepGraph {
  ag::Tensor latent_loss;
  ag::Tensor pixel_loss;
  ag::Tensor total;
  StepMetrics metrics;
};
StepGraph forward_step(const EnhancerModel& model, const PreparedPacket& packet, const TrainConfig& cfg, Rng& rng);

/// One optimization step. A non-finite loss skips the update.
StepMetrics train_step(const EnhancerModel& model, nn::Adam& opt, const PreparedPacket& packet, const TrainConfig& cfg,
                       Rng& rng);

class Trainer {
 public:
  /// `config_echo` is hashed into every checkpoint and checked on resume.
  Trainer(EnhancerModel& model, TrainConfig cfg, std::string config_echo);

  StepMetrics step(const PreparedPacket& packet);
  std::int64_t iteration() const { return iteration_; }
  const TrainConfig& config() const { return cfg_; }
  const Rng& rng() const { return rng_; }
  nn::Adam& optimizer() { return opt_; }
  const std::string& config_echo() const { return echo_; }

  /// Model, optimizer moments, rng state and iteration.
  Checkpoint checkpoint() const;
  /// Resume from a checkpoint written by a run with the same config echo.
  void restore(const Checkpoint& ckpt, bool allow_mismatch = false);

 private:
  EnhancerModel& model_;
  TrainConfig cfg_;
  std::string echo_;
  nn::Adam opt_;
  Rng rng_;
  std::int64_t iteration_ = 0;
};

struct TrainLog {
  std::optional<std::filesystem::path> metrics_csv;  // appended, flushed per row
  std::optional<std::filesystem::path> checkpoint;
  std::function<void(std::int64_t, const StepMetrics&)> on_step;
};

struct TrainSummary {
  std::vector<StepMetrics> history;
  int skipped = 0;
};

inline constexpr const char* kTrainCsvHeader = "iteration,latent_loss,pixel_loss,total_loss,grad_norm,wall_time_s";

/// Run until trainer.iteration() == config.iterations. Packet i % n is used
/// at iteration i.
TrainSummary train(Trainer& trainer, const std::vector<PreparedPacket>& dataset, const TrainLog& log = {});

}  // namespace mve
