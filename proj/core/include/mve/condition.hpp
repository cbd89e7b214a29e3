#pragma once

// Conditioning encoder: C-map + validity + Plücker rays (10 channels) down to
// the latent grid, with the reference/target indicator joined at the
// bottleneck.

#include "mve/geometry.hpp"
#include "mve/nn.hpp"

namespace mve {

inline constexpr int kConditionInputChannels = 10;

/// Stack [x,y,z,validity, m(3), d(3)] into a [1,10,H,W] tensor. Dropped
/// groups are zero-filled.
ag::Tensor condition_stack(const CMap& cmap, const PluckerField& plucker, bool drop_cmap = false,
                           bool drop_pose = false);
/// [1,1,h,w] constant tensor from an indicator mask.
ag::Tensor mask_tensor(const IndicatorMask& mask);

class ConditionEncoder {
 public:
  ConditionEncoder() = default;
  static ConditionEncoder make(int latent_channels, Rng& rng);

  /// stack [N,10,H,W], mask [N,1,H/8,W/8] -> [N,d,H/8,W/8]
  ag::Tensor operator()(const ag::Tensor& stack, const ag::Tensor& mask) const;
  /// Single-view convenience form.
  ag::Tensor encode(const CMap& cmap, const PluckerField& plucker, const IndicatorMask& mask) const;

  void collect(nn::ParamSet& ps, const std::string& prefix) const;
  int latent_channels() const { return out_.out_channels(); }

 private:
  nn::Conv2d down1_, down2_, down3_, out_;
};

}  // namespace mve
