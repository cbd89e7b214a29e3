#include "mve/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "mve/error.hpp"
#include "mve/losses.hpp"

namespace mve {

void TrainConfig::validate() const {
  if (min_views < 2 || max_views < min_views) throw ConfigError("train: need 2 <= min_views <= max_views");
  if (decode_subset < 1) throw ConfigError("train: decode_subset must be >= 1");
  if (!(dropout >= 0.0 && dropout <= 1.0)) throw ConfigError("train: dropout must lie in [0,1]");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (iterations < 0) throw ConfigError("train: iterations must be >= 0");
  if (log_every < 1) throw ConfigError("train: log_every must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
}

PreparedPacket prepare_packet(const EnhancerModel& model, const Packet& packet) {
  ag::NoGradGuard guard;
  PacketTensors t = packet_tensors(packet);
  if (!t.ground_truth) throw DataError("prepare_packet: every target needs a ground-truth render");
  PreparedPacket p;
  p.latents = model.codec.encode(t.rgb);
  p.stacks = t.stacks;
  p.masks = t.masks;
  p.refs = packet.reference_indices();
  p.targets = t.targets;
  p.gt_images = *t.ground_truth;
  const ag::Tensor z0 = model.codec.encode(p.gt_images);
  const ag::Tensor zt = ag::select_batch(p.latents, p.targets);
  const double ab = model.schedule.operating_alpha_bar();
  // The distorted latent plays z_tau; the implied noise gives the v target.
  const std::vector<double> eps = eps_from(zt.data(), z0.data(), ab);
  p.target_v = ag::Tensor::from(z0.shape(), v_target(z0.data(), eps, ab));
  return p;
}

std::vector<int> sample_decode_subset(int n_targets, int k, Rng& rng) {
  if (k < 1 || k > n_targets)
    throw std::invalid_argument("sample_decode_subset: need 1 <= k <= n_targets (k=" + std::to_string(k) +
                                ", n=" + std::to_string(n_targets) + ")");
  std::vector<int> idx(n_targets);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n_targets - i)]);
  idx.resize(k);
  return idx;
}

StepGraph forward_step(const EnhancerModel& model, const PreparedPacket& p, const TrainConfig& cfg, Rng& rng) {
  const int n_t = static_cast<int>(p.targets.size());
  const int n_r = static_cast<int>(p.refs.size());
  const int total = n_t + n_r;

  // View subset: all targets plus a random subset of references sized so the
  // packet falls in [min_views, max_views] where the packet allows.
  const int lo = std::min(cfg.min_views, total), hi = std::min(cfg.max_views, total);
  const int size = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
  const int keep_refs = std::clamp(size - n_t, std::min(1, n_r), n_r);
  std::vector<int> refs = p.refs;
  for (int i = 0; i < keep_refs; ++i) std::swap(refs[i], refs[i + rng.below(n_r - i)]);
  refs.resize(keep_refs);
  std::sort(refs.begin(), refs.end());

  std::vector<int> views = refs;
  views.insert(views.end(), p.targets.begin(), p.targets.end());
  std::vector<int> target_pos(n_t);
  std::iota(target_pos.begin(), target_pos.end(), keep_refs);

  StepGraph g;
  g.metrics.views = static_cast<int>(views.size());
  g.metrics.drop_cmap = rng.uniform() < cfg.dropout;
  g.metrics.drop_pose = rng.uniform() < cfg.dropout;

  const ag::Tensor latents = ag::select_batch(p.latents, views);
  const int n = latents.dim(0), h = latents.dim(2), w = latents.dim(3);
  ag::Tensor cond;
  if (!model.config.use_conditions || (g.metrics.drop_cmap && g.metrics.drop_pose)) {
    cond = null_features(model, n, h, w);
  } else {
    const ag::Tensor stacks = drop_conditions(ag::select_batch(p.stacks, views), g.metrics.drop_cmap, g.metrics.drop_pose);
    cond = condition_features(model, stacks, ag::select_batch(p.masks, views));
  }
  const ag::Tensor v_pred = denoise(model.unet, latents, cond, target_pos);
  g.latent_loss = latent_loss(v_pred, p.target_v);

  const std::vector<int> subset = sample_decode_subset(n_t, std::min(cfg.decode_subset, n_t), rng);
  std::vector<int> subset_views(subset.size());
  for (std::size_t i = 0; i < subset.size(); ++i) subset_views[i] = p.targets[subset[i]];
  const ag::Tensor z0 = z0_from_v(ag::select_batch(p.latents, subset_views), ag::select_batch(v_pred, subset),
                                  model.schedule.operating_alpha_bar());
  const ag::Tensor decoded = model.codec.decode(z0, &model.adapters);
  g.pixel_loss = pixel_loss(decoded, ag::select_batch(p.gt_images, subset));
  g.total = ag::add(g.latent_loss, g.pixel_loss);

  g.metrics.latent_loss = g.latent_loss.item();
  g.metrics.pixel_loss = g.pixel_loss.item();
  g.metrics.total_loss = g.total.item();
  return g;
}

StepMetrics train_step(const EnhancerModel& model, nn::Adam& opt, const PreparedPacket& packet, const TrainConfig& cfg,
                       Rng& rng) {
  opt.zero_grad();
  StepGraph g = forward_step(model, packet, cfg, rng);
  if (!std::isfinite(g.metrics.total_loss)) {
    g.metrics.skipped = true;
    return g.metrics;
  }
  g.total.backward();
  const double norm = opt.grad_norm();
  if (!std::isfinite(norm)) {
    opt.zero_grad();
    g.metrics.skipped = true;
    g.metrics.grad_norm = norm;
    return g.metrics;
  }
  g.metrics.grad_norm = opt.step();
  opt.zero_grad();
  return g.metrics;
}

Trainer::Trainer(EnhancerModel& model, TrainConfig cfg, std::string config_echo)
    : model_(model),
      cfg_(cfg),
      echo_(std::move(config_echo)),
      opt_(model.trainable_params(), {.lr = cfg.lr, .clip_norm = cfg.clip_norm}),
      rng_(cfg.seed) {
  cfg_.validate();
}

StepMetrics Trainer::step(const PreparedPacket& packet) {
  const StepMetrics m = train_step(model_, opt_, packet, cfg_, rng_);
  ++iteration_;
  return m;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c = enhancer_checkpoint(model_, echo_, iteration_);
  nn::ParamSet moments = opt_.state();
  c.add(moments);
  c.meta["adam.steps"] = std::to_string(opt_.steps());
  c.meta["rng"] = rng_.serialize();
  return c;
}

void Trainer::restore(const Checkpoint& ckpt, bool allow_mismatch) {
  if (ckpt.kind != "enhancer") throw DataError("resume: checkpoint kind '" + ckpt.kind + "' is not an enhancer checkpoint");
  check_config(ckpt, echo_, allow_mismatch);
  if (!ckpt.meta.count("rng") || !ckpt.meta.count("adam.steps"))
    throw DataError("resume: checkpoint has no optimizer/rng state");
  ckpt.load_into(model_.all_params());
  model_.codec.set_latent_scale(ckpt.get("codec.latent_scale").values.at(0));
  const nn::ParamSet moments = opt_.state();
  ckpt.load_into(moments);
  opt_.load_state(moments, std::stoll(ckpt.meta.at("adam.steps")));
  rng_.deserialize(ckpt.meta.at("rng"));
  iteration_ = ckpt.step;
}

TrainSummary train(Trainer& trainer, const std::vector<PreparedPacket>& dataset, const TrainLog& log) {
  if (dataset.empty()) throw DataError("train: empty dataset");
  const TrainConfig& cfg = trainer.config();
  std::ofstream csv;
  if (log.metrics_csv) {
    const bool fresh = !std::filesystem::exists(*log.metrics_csv) || trainer.iteration() == 0;
    csv.open(*log.metrics_csv, fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw DataError("cannot write metrics log " + log.metrics_csv->string());
    if (fresh) csv << kTrainCsvHeader << '\n' << std::flush;
    csv << std::setprecision(9);
  }
  const auto start = std::chrono::steady_clock::now();
  TrainSummary summary;
  while (trainer.iteration() < cfg.iterations) {
    const std::int64_t it = trainer.iteration();
    const StepMetrics m = trainer.step(dataset[static_cast<std::size_t>(it) % dataset.size()]);
    summary.history.push_back(m);
    if (m.skipped) ++summary.skipped;
    if (log.on_step) log.on_step(it, m);
    if (csv.is_open() && (it + 1) % cfg.log_every == 0) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      csv << it + 1 << ',' << m.latent_loss << ',' << m.pixel_loss << ',' << m.total_loss << ',' << m.grad_norm << ','
          << wall << '\n'
          << std::flush;
    }
    if (log.checkpoint && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0)
      write_checkpoint(trainer.checkpoint(), *log.checkpoint);
  }
  if (log.checkpoint) write_checkpoint(trainer.checkpoint(), *log.checkpoint);
  return summary;
}

}  // namespace mve
