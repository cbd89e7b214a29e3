#pragma once

// Tiny convolutional VAE mapping H x W x 3 images to H/8 x W/8 x d latents.
// The encoder is frozen after pretraining; the decoder can carry trainable
// low-rank adapters on every convolution.

#include <cstdint>
#include <span>
#include <vector>

#include "mve/image.hpp"
#include "mve/nn.hpp"

namespace mve {

struct CodecConfig {
  int latent_channels = 8;
  int adapter_rank = 4;
  double adapter_alpha = 4.0;
  std::uint64_t seed = 1;
};

/// Latent grid, channel-major (d x h x w).
struct Latent {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  ag::Tensor tensor() const;  // [1,d,h,w]
  static Latent from_tensor(const ag::Tensor& t, int index = 0);
  bool operator==(const Latent& o) const = default;
};

/// [N,3,H,W] tensor from HWC images.
ag::Tensor images_to_tensor(std::span<const Image> images);
ag::Tensor image_to_tensor(const Image& image);
/// Image `index` of an [N,C,H,W] tensor.
Image tensor_to_image(const ag::Tensor& t, int index = 0);

class LatentCodec;

class DecoderAdapters {
 public:
  /// Rank is capped per layer at min(out channels, in channels * k * k).
  static DecoderAdapters make(const LatentCodec& codec, int rank, double alpha, std::uint64_t seed);
  const std::vector<nn::LowRankAdapter>& layers() const { return layers_; }
  void collect(nn::ParamSet& ps, const std::string& prefix) const;
  nn::ParamSet params() const;

 private:
  std::vector<nn::LowRankAdapter> layers_;
};

class LatentCodec {
 public:
  static LatentCodec make(const CodecConfig& cfg);

  /// Raw encoder output [N, 2d, H/8, W/8]: mean then log-variance.
  ag::Tensor encode_moments(const ag::Tensor& images) const;
  /// Deterministic (mean) latent, multiplied by latent_scale.
  ag::Tensor encode(const ag::Tensor& images) const;
  ag::Tensor decode(const ag::Tensor& latents, const DecoderAdapters* adapters = nullptr) const;

  Latent encode(const Image& image) const;
  Image decode(const Latent& latent, const DecoderAdapters* adapters = nullptr) const;

  const CodecConfig& config() const { return cfg_; }
  int latent_channels() const { return cfg_.latent_channels; }
  double latent_scale() const { return latent_scale_; }
  void set_latent_scale(double s) { latent_scale_ = s; }

  nn::ParamSet encoder_params() const;
  nn::ParamSet decoder_params() const;
  /// Stop gradient flow into the encoder weights.
  void freeze_encoder();
  /// Stop gradient flow into the decoder base weights (adapters stay trainable).
  void freeze_decoder();

  const std::vector<nn::Conv2d>& decoder_layers() const { return decoder_; }

 private:
  static void check_dims(int h, int w);

  CodecConfig cfg_;
  std::vector<nn::Conv2d> encoder_;
  std::vector<nn::Conv2d> decoder_;
  double latent_scale_ = 1.0;
};

struct CodecTrainConfig {
  int iterations = 1500;
  int batch = 8;
  double lr = 2e-3;
  double kl_weight = 1e-6;
  double holdout_fraction = 0.1;
  double min_psnr = 28.0;
  std::uint64_t seed = 7;
};

struct CodecTrainReport {
  double heldout_psnr = 0.0;
  double final_loss = 0.0;
  int iterations = 0;
  int train_images = 0;
  int heldout_images = 0;
  /// Held-out PSNR reached min_psnr.
  bool converged = false;
};

/// Train encoder and decoder as a VAE on `corpus` (>= 100 images), then
/// calibrate latent_scale to unit latent variance and freeze the encoder.
CodecTrainReport pretrain_codec(std::span<const Image> corpus, const CodecTrainConfig& cfg, LatentCodec& codec);

}  // namespace mve
