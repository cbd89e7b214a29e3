#include "mve/denoiser.hpp"

#include <stdexcept>

#include "mve/error.hpp"

namespace mve {

ResBlock ResBlock::make(int cin, int cout, int groups, Rng& rng) {
  ResBlock b;
  b.norm1 = nn::GroupNorm::make(cin, std::min(groups, cin));
  b.conv1 = nn::Conv2d::make(cin, cout, 3, 1, 1, rng);
  b.norm2 = nn::GroupNorm::make(cout, std::min(groups, cout));
  b.conv2 = nn::Conv2d::make(cout, cout, 3, 1, 1, rng);
  if (cin != cout) b.skip = nn::Conv2d::make(cin, cout, 1, 1, 0, rng);
  return b;
}

ag::Tensor ResBlock::operator()(const ag::Tensor& x) const {
  ag::Tensor h = conv1(ag::silu(norm1(x)));
  h = conv2(ag::silu(norm2(h)));
  return ag::add(skip ? (*skip)(x) : x, h);
}

void ResBlock::collect(nn::ParamSet& ps, const std::string& prefix) const {
  norm1.collect(ps, prefix + ".norm1");
  conv1.collect(ps, prefix + ".conv1");
  norm2.collect(ps, prefix + ".norm2");
  conv2.collect(ps, prefix + ".conv2");
  if (skip) skip->collect(ps, prefix + ".skip");
}

JointAttention JointAttention::make(int channels, int groups, int heads, Rng& rng) {
  JointAttention a;
  a.norm = nn::GroupNorm::make(channels, std::min(groups, channels));
  a.q = nn::Linear::make(channels, channels, rng);
  a.k = nn::Linear::make(channels, channels, rng);
  a.v = nn::Linear::make(channels, channels, rng);
  a.out = nn::Linear::make(channels, channels, rng);
  a.heads = heads;
  return a;
}

ag::Tensor JointAttention::operator()(const ag::Tensor& x) const {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const ag::Tensor normed = norm(x);
  const ag::Tensor posed = ag::to_tokens(ag::add(normed, nn::positional_encoding_2d(n, c, h, w)));
  const ag::Tensor values = ag::to_tokens(normed);
  const ag::Tensor att = ag::attention(q(posed), k(posed), v(values), heads);
  return ag::add(x, ag::from_tokens(out(att), n, h, w));
}

void JointAttention::collect(nn::ParamSet& ps, const std::string& prefix) const {
  norm.collect(ps, prefix + ".norm");
  q.collect(ps, prefix + ".q");
  k.collect(ps, prefix + ".k");
  v.collect(ps, prefix + ".v");
  out.collect(ps, prefix + ".out");
}

MultiViewUNet MultiViewUNet::make(const DenoiserConfig& cfg) {
  const auto [w0, w1, w2] = cfg.widths;
  if (cfg.latent_channels < 1 || w0 < 1 || w1 < 1 || w2 < 1) throw ConfigError("denoiser: invalid widths");
  if (w0 % cfg.groups || w1 % cfg.groups || w2 % cfg.groups) throw ConfigError("denoiser: widths must divide into groups");
  if (w1 % cfg.heads || w2 % cfg.heads) throw ConfigError("denoiser: attention widths must divide into heads");
  MultiViewUNet u;
  u.cfg_ = cfg;
  Rng rng(cfg.seed);
  const int d = cfg.latent_channels, g = cfg.groups;
  u.conv_in_ = nn::Conv2d::make(d, w0, 3, 1, 1, rng);
  u.enc0_ = ResBlock::make(w0, w0, g, rng);
  u.down0_ = nn::Conv2d::make(w0, w1, 3, 2, 1, rng);
  u.enc1_ = ResBlock::make(w1, w1, g, rng);
  u.attn1_ = JointAttention::make(w1, g, cfg.heads, rng);
  u.down1_ = nn::Conv2d::make(w1, w2, 3, 2, 1, rng);
  u.mid0_ = ResBlock::make(w2, w2, g, rng);
  u.attn_mid_ = JointAttention::make(w2, g, cfg.heads, rng);
  u.mid1_ = ResBlock::make(w2, w2, g, rng);
  u.up1_ = nn::Conv2d::make(w2, w1, 3, 1, 1, rng);
  u.dec1_ = ResBlock::make(2 * w1, w1, g, rng);
  u.attn_dec1_ = JointAttention::make(w1, g, cfg.heads, rng);
  u.up0_ = nn::Conv2d::make(w1, w0, 3, 1, 1, rng);
  u.dec0_ = ResBlock::make(2 * w0, w0, g, rng);
  u.norm_out_ = nn::GroupNorm::make(w0, std::min(g, w0));
  u.conv_out_ = nn::Conv2d::make(w0, d, 3, 1, 1, rng, /*zero_init=*/true);
  return u;
}

ag::Tensor MultiViewUNet::operator()(const ag::Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != cfg_.latent_channels)
    throw std::invalid_argument("denoiser: expected [N," + std::to_string(cfg_.latent_channels) + ",h,w], got " +
                                ag::shape_str(x.shape()));
  if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) throw std::invalid_argument("denoiser: latent grid must be a multiple of 4");
  const ag::Tensor s0 = enc0_(conv_in_(x));
  const ag::Tensor s1 = attn1_(enc1_(down0_(s0)));
  ag::Tensor h = mid1_(attn_mid_(mid0_(down1_(s1))));
  h = up1_(ag::upsample_nearest2x(h));
  h = attn_dec1_(dec1_(ag::concat_channels({h, s1})));
  h = up0_(ag::upsample_nearest2x(h));
  h = dec0_(ag::concat_channels({h, s0}));
  return conv_out_(ag::silu(norm_out_(h)));
}

void MultiViewUNet::collect(nn::ParamSet& ps, const std::string& prefix) const {
  conv_in_.collect(ps, prefix + ".conv_in");
  enc0_.collect(ps, prefix + ".enc0");
  down0_.collect(ps, prefix + ".down0");
  enc1_.collect(ps, prefix + ".enc1");
  attn1_.collect(ps, prefix + ".attn1");
  down1_.collect(ps, prefix + ".down1");
  mid0_.collect(ps, prefix + ".mid0");
  attn_mid_.collect(ps, prefix + ".attn_mid");
  mid1_.collect(ps, prefix + ".mid1");
  up1_.collect(ps, prefix + ".up1");
  dec1_.collect(ps, prefix + ".dec1");
  attn_dec1_.collect(ps, prefix + ".attn_dec1");
  up0_.collect(ps, prefix + ".up0");
  dec0_.collect(ps, prefix + ".dec0");
  norm_out_.collect(ps, prefix + ".norm_out");
  conv_out_.collect(ps, prefix + ".conv_out");
}

EnhancerModel EnhancerModel::make(const EnhancerConfig& cfg, LatentCodec codec) {
  if (cfg.denoiser.latent_channels != codec.latent_channels())
    throw ConfigError("enhancer: denoiser and codec latent channels differ");
  if (cfg.codec.latent_channels != codec.latent_channels()) throw ConfigError("enhancer: codec config mismatch");
  EnhancerModel m{.config = cfg,
                  .codec = std::move(codec),
                  .adapters = {},
                  .psi = {},
                  .null_condition = {},
                  .unet = MultiViewUNet::make(cfg.denoiser),
                  .schedule = NoiseSchedule::cosine(cfg.timesteps, cfg.tau)};
  m.codec.freeze_encoder();
  m.codec.freeze_decoder();
  m.adapters = DecoderAdapters::make(m.codec, cfg.codec.adapter_rank, cfg.codec.adapter_alpha, cfg.seed + 101);
  Rng rng(cfg.seed);
  m.psi = ConditionEncoder::make(m.codec.latent_channels(), rng);
  m.null_condition = ag::Tensor::zeros({m.codec.latent_channels()}, true);
  return m;
}

nn::ParamSet EnhancerModel::trainable_params() const {
  nn::ParamSet ps;
  psi.collect(ps, "psi");
  ps.add("null_condition", null_condition);
  unet.collect(ps, "unet");
  adapters.collect(ps, "adapter");
  return ps;
}

nn::ParamSet EnhancerModel::all_params() const {
  nn::ParamSet ps = trainable_params();
  ps.append(codec.encoder_params());
  ps.append(codec.decoder_params());
  return ps;
}

PacketTensors packet_tensors(const Packet& packet) {
  packet.validate();
  PacketTensors t;
  std::vector<Image> rgb;
  std::vector<ag::Tensor> stacks, masks;
  for (const auto& v : packet.views) {
    rgb.push_back(v.rgb);
    stacks.push_back(condition_stack(v.cmap, v.plucker));
    masks.push_back(mask_tensor(v.mask));
  }
  t.rgb = images_to_tensor(rgb);
  t.stacks = ag::concat_batch(stacks);
  t.masks = ag::concat_batch(masks);
  t.targets = packet.target_indices();
  std::vector<Image> gt;
  for (int i : t.targets)
    if (packet.views[i].ground_truth) gt.push_back(*packet.views[i].ground_truth);
  if (!gt.empty() && gt.size() == t.targets.size()) t.ground_truth = images_to_tensor(gt);
  return t;
}

ag::Tensor drop_conditions(const ag::Tensor& stacks, bool drop_cmap, bool drop_pose) {
  if (stacks.rank() != 4 || stacks.dim(1) != kConditionInputChannels)
    throw std::invalid_argument("drop_conditions: expected [N,10,H,W]");
  if (!drop_cmap && !drop_pose) return stacks;
  std::vector<double> v = stacks.values();
  const int n = stacks.dim(0);
  const std::size_t hw = static_cast<std::size_t>(stacks.dim(2)) * stacks.dim(3);
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < kConditionInputChannels; ++c) {
      const bool is_cmap = c < 4;
      if ((is_cmap && drop_cmap) || (!is_cmap && drop_pose)) {
        double* p = v.data() + (static_cast<std::size_t>(s) * kConditionInputChannels + c) * hw;
        std::fill(p, p + hw, 0.0);
      }
    }
  return ag::Tensor::from(stacks.shape(), std::move(v));
}

ag::Tensor condition_features(const EnhancerModel& model, const ag::Tensor& stacks, const ag::Tensor& masks) {
  return model.psi(stacks, masks);
}

ag::Tensor null_features(const EnhancerModel& model, int n, int h, int w) {
  return ag::broadcast_channels(model.null_condition, n, h, w);
}

ag::Tensor denoise(const MultiViewUNet& unet, const ag::Tensor& latents, const ag::Tensor& conditions,
                   std::span<const int> targets) {
  if (latents.shape() != conditions.shape())
    throw std::invalid_argument("denoise: condition shape " + ag::shape_str(conditions.shape()) +
                                " does not match latent shape " + ag::shape_str(latents.shape()));
  if (targets.empty()) throw std::invalid_argument("denoise: no target views");
  for (int t : targets)
    if (t < 0 || t >= latents.dim(0)) throw std::invalid_argument("denoise: target index out of range");
  return ag::select_batch(unet(ag::add(latents, conditions)), targets);
}

ag::Tensor combine_guidance(const ag::Tensor& cond, const ag::Tensor& uncond, double scale) {
  return ag::add(uncond, ag::scale(ag::sub(cond, uncond), scale));
}

ag::Tensor cfg_denoise(const EnhancerModel& model, const ag::Tensor& latents, const ag::Tensor& stacks,
                       const ag::Tensor& masks, std::span<const int> targets, double scale) {
  const int n = latents.dim(0), h = latents.dim(2), w = latents.dim(3);
  if (scale == 0.0 || !model.config.use_conditions) return denoise(model.unet, latents, null_features(model, n, h, w), targets);
  const ag::Tensor cond = denoise(model.unet, latents, condition_features(model, stacks, masks), targets);
  if (scale == 1.0) return cond;
  const ag::Tensor uncond = denoise(model.unet, latents, null_features(model, n, h, w), targets);
  return combine_guidance(cond, uncond, scale);
}

std::vector<RenderedImage> enhance(const EnhancerModel& model, const Packet& packet, std::optional<double> cfg_scale) {
  if (packet.width % 8 != 0 || packet.height % 8 != 0) throw DataError("enhance: packet dimensions must be multiples of 8");
  ag::NoGradGuard guard;
  const PacketTensors t = packet_tensors(packet);
  const ag::Tensor latents = model.codec.encode(t.rgb);
  const ag::Tensor v = cfg_denoise(model, latents, t.stacks, t.masks, t.targets, cfg_scale.value_or(model.config.cfg_scale));
  const ag::Tensor z0 = z0_from_v(ag::select_batch(latents, t.targets), v, model.schedule.operating_alpha_bar());
  const ag::Tensor images = model.codec.decode(z0, &model.adapters);
  std::vector<RenderedImage> out;
  for (std::size_t i = 0; i < t.targets.size(); ++i) out.push_back(tensor_to_image(images, static_cast<int>(i)));
  return out;
}

}  // namespace mve
