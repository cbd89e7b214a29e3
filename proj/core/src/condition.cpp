#include "mve/condition.hpp"

#include <stdexcept>

namespace mve {

ag::Tensor condition_stack(const CMap& cmap, const PluckerField& plucker, bool drop_cmap, bool drop_pose) {
  const int h = cmap.height(), w = cmap.width();
  if (plucker.width != w || plucker.height != h || plucker.channels != 6 || cmap.validity.width != w ||
      cmap.validity.height != h)
    throw std::invalid_argument("condition_stack: C-map and Plücker field are not aligned");
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<double> v(kConditionInputChannels * hw, 0.0);
  for (std::size_t p = 0; p < hw; ++p) {
    if (!drop_cmap) {
      for (int k = 0; k < 3; ++k) v[k * hw + p] = cmap.coords.data[p * 3 + k];
      v[3 * hw + p] = cmap.validity.data[p];
    }
    if (!drop_pose)
      for (int k = 0; k < 6; ++k) v[(4 + k) * hw + p] = plucker.data[p * 6 + k];
  }
  return ag::Tensor::from({1, kConditionInputChannels, h, w}, std::move(v));
}

ag::Tensor mask_tensor(const IndicatorMask& mask) { return ag::Tensor::full({1, 1, mask.height, mask.width}, mask.value); }

ConditionEncoder ConditionEncoder::make(int latent_channels, Rng& rng) {
  ConditionEncoder e;
  e.down1_ = nn::Conv2d::make(kConditionInputChannels, 16, 3, 2, 1, rng);
  e.down2_ = nn::Conv2d::make(16, 32, 3, 2, 1, rng);
  e.down3_ = nn::Conv2d::make(32, latent_channels, 3, 2, 1, rng);
  e.out_ = nn::Conv2d::make(latent_channels + 1, latent_channels, 1, 1, 0, rng, /*zero_init=*/true);
  return e;
}

ag::Tensor ConditionEncoder::operator()(const ag::Tensor& stack, const ag::Tensor& mask) const {
  if (stack.rank() != 4 || stack.dim(1) != kConditionInputChannels)
    throw std::invalid_argument("ConditionEncoder: expected [N,10,H,W], got " + ag::shape_str(stack.shape()));
  if (stack.dim(2) % 8 != 0 || stack.dim(3) % 8 != 0)
    throw std::invalid_argument("ConditionEncoder: spatial size must be a multiple of 8");
  const ag::Shape want{stack.dim(0), 1, stack.dim(2) / 8, stack.dim(3) / 8};
  if (mask.shape() != want)
    throw std::invalid_argument("ConditionEncoder: mask shape " + ag::shape_str(mask.shape()) + " != " +
                                ag::shape_str(want));
  ag::Tensor x = ag::silu(down1_(stack));
  x = ag::silu(down2_(x));
  x = ag::silu(down3_(x));
  return out_(ag::concat_channels({x, mask}));
}

ag::Tensor ConditionEncoder::encode(const CMap& cmap, const PluckerField& plucker, const IndicatorMask& mask) const {
  return (*this)(condition_stack(cmap, plucker), mask_tensor(mask));
}

void ConditionEncoder::collect(nn::ParamSet& ps, const std::string& prefix) const {
  down1_.collect(ps, prefix + ".down1");
  down2_.collect(ps, prefix + ".down2");
  down3_.collect(ps, prefix + ".down3");
  out_.collect(ps, prefix + ".out");
}

}  // namespace mve
