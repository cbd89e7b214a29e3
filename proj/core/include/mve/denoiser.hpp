#pragma once

// Multi-view single-step denoiser: a small U-Net over the latent grids of all
// packet views, with self-attention across every view's spatial tokens
// jointly, additive geometric conditions, and classifier-free guidance.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mve/codec.hpp"
#include "mve/condition.hpp"
#include "mve/packet.hpp"
#include "mve/schedule.hpp"

namespace mve {

struct DenoiserConfig {
  int latent_channels = 8;
  std::array<int, 3> widths{32, 64, 128};
  int groups = 8;
  int heads = 4;
  std::uint64_t seed = 11;
};

struct ResBlock {
  nn::GroupNorm norm1, norm2;
  nn::Conv2d conv1, conv2;
  std::optional<nn::Conv2d> skip;

  static ResBlock make(int cin, int cout, int groups, Rng& rng);
  ag::Tensor operator()(const ag::Tensor& x) const;
  void collect(nn::ParamSet& ps, const std::string& prefix) const;
};

/// Self-attention over the tokens of all views at one resolution level.
/// A 2D positional code, identical for every view, is added to the queries
/// and keys input; there is no per-view index.
struct JointAttention {
  nn::GroupNorm norm;
  nn::Linear q, k, v, out;
  int heads = 4;

  static JointAttention make(int channels, int groups, int heads, Rng& rng);
  ag::Tensor operator()(const ag::Tensor& x) const;
  void collect(nn::ParamSet& ps, const std::string& prefix) const;
};

class MultiViewUNet {
 public:
  static MultiViewUNet make(const DenoiserConfig& cfg);
  /// x [N,d,h,w] -> [N,d,h,w]; h and w must be multiples of 4.
  ag::Tensor operator()(const ag::Tensor& x) const;
  void collect(nn::ParamSet& ps, const std::string& prefix) const;
  const DenoiserConfig& config() const { return cfg_; }

 private:
  DenoiserConfig cfg_;
  nn::Conv2d conv_in_;
  ResBlock enc0_, enc1_, mid0_, mid1_, dec1_, dec0_;
  JointAttention attn1_, attn_mid_, attn_dec1_;
  nn::Conv2d down0_, down1_, up1_, up0_;
  nn::GroupNorm norm_out_;
  nn::Conv2d conv_out_;
};

struct EnhancerConfig {
  CodecConfig codec;
  DenoiserConfig denoiser;
  int timesteps = 1000;
  int tau = 200;
  double cfg_scale = 2.0;
  /// false: ablation that never feeds geometric conditions (null features
  /// in training and at inference).
  bool use_conditions = true;
  std::uint64_t seed = 3;
};

/// Everything the enhance pipeline needs: codec (+ adapters), condition
/// encoder, learned null condition, denoiser and schedule.
struct EnhancerModel {
  EnhancerConfig config;
  LatentCodec codec;
  DecoderAdapters adapters;
  ConditionEncoder psi;
  ag::Tensor null_condition;  // [d]
  MultiViewUNet unet;
  NoiseSchedule schedule;

  /// `codec` must already be pretrained; its encoder is frozen here.
  static EnhancerModel make(const EnhancerConfig& cfg, LatentCodec codec);
  /// Condition encoder, null condition, denoiser and decoder adapters.
  nn::ParamSet trainable_params() const;
  /// trainable_params plus codec encoder/decoder weights.
  nn::ParamSet all_params() const;
};

/// Packet views as batched tensors, in packet order.
struct PacketTensors {
  ag::Tensor rgb;     // [N,3,H,W]
  ag::Tensor stacks;  // [N,10,H,W]
  ag::Tensor masks;   // [N,1,H/8,W/8]
  std::vector<int> targets;
  std::optional<ag::Tensor> ground_truth;  // [n_target,3,H,W] when every target has one
};

PacketTensors packet_tensors(const Packet& packet);

/// Zero the C-map (x,y,z,validity) and/or Plücker channels of a stack.
ag::Tensor drop_conditions(const ag::Tensor& stacks, bool drop_cmap, bool drop_pose);

/// Condition features [N,d,h,w]: the encoder output, or the null vector
/// broadcast to every view.
ag::Tensor condition_features(const EnhancerModel& model, const ag::Tensor& stacks, const ag::Tensor& masks);
ag::Tensor null_features(const EnhancerModel& model, int n, int h, int w);

/// Add conditions to latents, run the denoiser over all views jointly and
/// return the predictions at `targets` in the given order.
ag::Tensor denoise(const MultiViewUNet& unet, const ag::Tensor& latents, const ag::Tensor& conditions,
                   std::span<const int> targets);

/// uncond + scale * (cond - uncond)
ag::Tensor combine_guidance(const ag::Tensor& cond, const ag::Tensor& uncond, double scale);

/// Guided prediction. scale 1 returns the conditional pass and scale 0 the
/// unconditional pass without evaluating the other branch. Models without
/// conditions always return the unconditional pass.
ag::Tensor cfg_denoise(const EnhancerModel& model, const ag::Tensor& latents, const ag::Tensor& stacks,
                       const ag::Tensor& masks, std::span<const int> targets, double scale);

/// Single-step enhancement of every target view: encode, treat distorted
/// target latents as z_tau, guided v prediction, recover z0, decode with
/// adapters. Returns images in target order.
std::vector<RenderedImage> enhance(const EnhancerModel& model, const Packet& packet,
                                   std::optional<double> cfg_scale = std::nullopt);

}  // namespace mve
