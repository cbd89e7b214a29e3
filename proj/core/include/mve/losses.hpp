#pragma once

// Differentiable image losses: windowed SSIM, the random-feature perceptual
// proxy and the composite pixel loss, plus the latent v-prediction loss.

#include <array>
#include <cstdint>

#include "mve/nn.hpp"

namespace mve {

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
/// Luminance weights for grayscale conversion.
inline constexpr std::array<double, 3> kLumaWeights{0.299, 0.587, 0.114};
inline constexpr std::uint64_t kPerceptualSeed = 20240611;

/// Normalized 11x11 Gaussian window, row-major.
std::array<double, kSsimWindow * kSsimWindow> ssim_window();

/// [N,3,H,W] -> [N,1,H,W]
ag::Tensor to_gray(const ag::Tensor& rgb);
/// Per-window SSIM on grayscale [N,1,H,W] inputs, valid windows only:
/// [N,1,H-10,W-10].
ag::Tensor ssim_map(const ag::Tensor& gray_a, const ag::Tensor& gray_b);
/// Mean SSIM over windows and batch of two [N,3,H,W] images.
ag::Tensor ssim(const ag::Tensor& a, const ag::Tensor& b);

/// Frozen random convolutional features; distance is the mean squared
/// feature difference, averaged over layers.
class PerceptualProxy {
 public:
  static PerceptualProxy make(std::uint64_t seed);
  /// Shared instance seeded with kPerceptualSeed.
  static const PerceptualProxy& standard();

  std::vector<ag::Tensor> features(const ag::Tensor& x) const;
  ag::Tensor distance(const ag::Tensor& a, const ag::Tensor& b) const;

 private:
  std::vector<nn::Conv2d> layers_;
};

/// Mean squared error over all target latent grids.
ag::Tensor latent_loss(const ag::Tensor& pred_v, const ag::Tensor& target_v);

struct PixelLossTerms {
  ag::Tensor mse;
  ag::Tensor ssim;
  ag::Tensor perceptual;
  ag::Tensor total;  // (mse + (1 - ssim) + perceptual) / 3
};

/// Composite loss on [N,3,H,W] batches; each term is a batch mean, so the
/// total equals the mean of per-image losses.
PixelLossTerms pixel_loss_terms(const ag::Tensor& pred, const ag::Tensor& gt);
ag::Tensor pixel_loss(const ag::Tensor& pred, const ag::Tensor& gt);

}  // namespace mve
