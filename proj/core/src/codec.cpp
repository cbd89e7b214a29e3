#include "mve/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "mve/error.hpp"

namespace mve {

ag::Tensor Latent::tensor() const { return ag::Tensor::from({1, channels, height, width}, data); }

Latent Latent::from_tensor(const ag::Tensor& t, int index) {
  Latent l;
  l.channels = t.dim(1);
  l.height = t.dim(2);
  l.width = t.dim(3);
  const std::size_t n = static_cast<std::size_t>(l.channels) * l.height * l.width;
  l.data.assign(t.data().begin() + index * n, t.data().begin() + (index + 1) * n);
  return l;
}

ag::Tensor images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("images_to_tensor: no images");
  const int h = images[0].height, w = images[0].width, c = images[0].channels;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<double> v(images.size() * c * hw);
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (!images[n].same_dims(images[0])) throw std::invalid_argument("images_to_tensor: mixed dimensions");
    for (std::size_t p = 0; p < hw; ++p)
      for (int k = 0; k < c; ++k) v[(n * c + k) * hw + p] = images[n].data[p * c + k];
  }
  return ag::Tensor::from({static_cast<int>(images.size()), c, h, w}, std::move(v));
}

ag::Tensor image_to_tensor(const Image& image) { return images_to_tensor(std::span<const Image>(&image, 1)); }

Image tensor_to_image(const ag::Tensor& t, int index) {
  const int c = t.dim(1), h = t.dim(2), w = t.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Image img(w, h, c);
  const double* src = t.data().data() + static_cast<std::size_t>(index) * c * hw;
  for (std::size_t p = 0; p < hw; ++p)
    for (int k = 0; k < c; ++k) img.data[p * c + k] = src[k * hw + p];
  return img;
}

DecoderAdapters DecoderAdapters::make(const LatentCodec& codec, int rank, double alpha, std::uint64_t seed) {
  DecoderAdapters a;
  Rng rng(seed);
  for (const auto& conv : codec.decoder_layers()) {
    const int r = std::min({rank, conv.out_channels(), conv.in_channels() * conv.kernel() * conv.kernel()});
    a.layers_.push_back(nn::LowRankAdapter::make(conv, r, alpha, rng));
  }
  return a;
}

void DecoderAdapters::collect(nn::ParamSet& ps, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(ps, prefix + "." + std::to_string(i));
}

nn::ParamSet DecoderAdapters::params() const {
  nn::ParamSet ps;
  collect(ps, "adapter");
  return ps;
}

namespace {
constexpr double kInitialLogVar = -8.0;
}  // namespace

LatentCodec LatentCodec::make(const CodecConfig& cfg) {
  if (cfg.latent_channels < 1) throw ConfigError("codec: latent_channels must be >= 1");
  LatentCodec c;
  c.cfg_ = cfg;
  Rng rng(cfg.seed);
  const int d = cfg.latent_channels;
  c.encoder_ = {
      nn::Conv2d::make(3, 16, 3, 1, 1, rng),  nn::Conv2d::make(16, 32, 3, 2, 1, rng),
      nn::Conv2d::make(32, 64, 3, 2, 1, rng), nn::Conv2d::make(64, 64, 3, 2, 1, rng),
      nn::Conv2d::make(64, 2 * d, 1, 1, 0, rng),
  };
  {
    // Log-variance head starts near a narrow posterior.
    nn::Conv2d& head = c.encoder_.back();
    auto w = head.weight.mutable_data();
    std::fill(w.begin() + static_cast<std::ptrdiff_t>(d) * 64, w.end(), 0.0);
    auto b = head.bias.mutable_data();
    std::fill(b.begin() + d, b.end(), kInitialLogVar);
  }
  c.decoder_ = {
      nn::Conv2d::make(d, 64, 3, 1, 1, rng),   nn::Conv2d::make(64, 64, 3, 1, 1, rng),
      nn::Conv2d::make(64, 128, 3, 1, 1, rng), nn::Conv2d::make(32, 64, 3, 1, 1, rng),
      nn::Conv2d::make(16, 64, 3, 1, 1, rng),  nn::Conv2d::make(16, 3, 3, 1, 1, rng),
  };
  return c;
}

void LatentCodec::check_dims(int h, int w) {
  if (h % 8 != 0 || w % 8 != 0) throw DataError("codec: image dimensions must be multiples of 8");
}

ag::Tensor LatentCodec::encode_moments(const ag::Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != 3) throw std::invalid_argument("codec: expected [N,3,H,W] images");
  check_dims(images.dim(2), images.dim(3));
  ag::Tensor x = ag::add_scalar(ag::scale(images, 2.0), -1.0);
  for (std::size_t i = 0; i + 1 < encoder_.size(); ++i) x = ag::silu(encoder_[i](x));
  return encoder_.back()(x);
}

ag::Tensor LatentCodec::encode(const ag::Tensor& images) const {
  const ag::Tensor m = encode_moments(images);
  const int n = m.dim(0), d = cfg_.latent_channels, h = m.dim(2), w = m.dim(3);
  // The mean occupies the first d channels of every sample.
  std::vector<double> v(static_cast<std::size_t>(n) * d * h * w);
  const std::size_t per = static_cast<std::size_t>(d) * h * w;
  for (int s = 0; s < n; ++s)
    std::transform(m.data().begin() + s * 2 * per, m.data().begin() + s * 2 * per + per, v.begin() + s * per,
                   [this](double x) { return x * latent_scale_; });
  return ag::Tensor::from({n, d, h, w}, std::move(v));
}

ag::Tensor LatentCodec::decode(const ag::Tensor& latents, const DecoderAdapters* adapters) const {
  if (latents.rank() != 4 || latents.dim(1) != cfg_.latent_channels)
    throw std::invalid_argument("codec: latent shape " + ag::shape_str(latents.shape()));
  if (adapters && adapters->layers().size() != decoder_.size())
    throw std::invalid_argument("codec: adapter count does not match decoder");
  auto layer = [&](std::size_t i, const ag::Tensor& x) {
    return adapters ? adapters->layers()[i].apply(decoder_[i], x) : decoder_[i](x);
  };
  ag::Tensor x = ag::scale(latents, 1.0 / latent_scale_);
  x = ag::silu(layer(0, x));
  x = ag::silu(layer(1, x));
  x = ag::silu(ag::pixel_shuffle(layer(2, x), 2));
  x = ag::silu(ag::pixel_shuffle(layer(3, x), 2));
  x = ag::silu(ag::pixel_shuffle(layer(4, x), 2));
  return ag::sigmoid(layer(5, x));
}

Latent LatentCodec::encode(const Image& image) const {
  ag::NoGradGuard guard;
  return Latent::from_tensor(encode(image_to_tensor(image)));
}

Image LatentCodec::decode(const Latent& latent, const DecoderAdapters* adapters) const {
  ag::NoGradGuard guard;
  return tensor_to_image(decode(latent.tensor(), adapters));
}

nn::ParamSet LatentCodec::encoder_params() const {
  nn::ParamSet ps;
  for (std::size_t i = 0; i < encoder_.size(); ++i) encoder_[i].collect(ps, "codec.encoder." + std::to_string(i));
  return ps;
}

nn::ParamSet LatentCodec::decoder_params() const {
  nn::ParamSet ps;
  for (std::size_t i = 0; i < decoder_.size(); ++i) decoder_[i].collect(ps, "codec.decoder." + std::to_string(i));
  return ps;
}

void LatentCodec::freeze_encoder() {
  for (const auto& it : encoder_params().items()) {
    ag::Tensor t = it.tensor;
    t.set_requires_grad(false);
    t.zero_grad();
  }
}

void LatentCodec::freeze_decoder() {
  for (const auto& it : decoder_params().items()) {
    ag::Tensor t = it.tensor;
    t.set_requires_grad(false);
    t.zero_grad();
  }
}

CodecTrainReport pretrain_codec(std::span<const Image> corpus, const CodecTrainConfig& cfg, LatentCodec& codec) {
  if (corpus.size() < 100) throw ConfigError("pretrain_codec: corpus needs at least 100 images");
  if (cfg.batch < 1 || cfg.iterations < 1) throw ConfigError("pretrain_codec: bad batch/iterations");

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  const std::size_t n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.holdout_fraction * corpus.size()));
  const std::vector<std::size_t> holdout(order.begin(), order.begin() + n_hold);
  const std::vector<std::size_t> train(order.begin() + n_hold, order.end());

  codec.set_latent_scale(1.0);
  nn::ParamSet params = codec.encoder_params();
  params.append(codec.decoder_params());
  for (const auto& it : params.items()) {
    ag::Tensor t = it.tensor;
    t.set_requires_grad(true);
  }
  nn::Adam opt(params, {.lr = cfg.lr, .clip_norm = 1.0});
  const int d = codec.latent_channels();

  CodecTrainReport report;
  report.train_images = static_cast<int>(train.size());
  report.heldout_images = static_cast<int>(holdout.size());
  for (int it = 0; it < cfg.iterations; ++it) {
    // Cosine decay to 5% of the base rate.
    const double progress = static_cast<double>(it) / cfg.iterations;
    opt.set_lr(cfg.lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))));

    std::vector<Image> batch;
    for (int b = 0; b < cfg.batch; ++b) batch.push_back(corpus[train[rng.below(train.size())]]);
    const ag::Tensor x = images_to_tensor(batch);
    const ag::Tensor moments = codec.encode_moments(x);
    const int n = moments.dim(0), h = moments.dim(2), w = moments.dim(3);
    std::vector<int> mean_idx, logvar_idx;
    // Split channels via a reshape to [N*2, d, h, w] and batch selection.
    const ag::Tensor split = ag::reshape(moments, {n * 2, d, h, w});
    for (int s = 0; s < n; ++s) {
      mean_idx.push_back(2 * s);
      logvar_idx.push_back(2 * s + 1);
    }
    const ag::Tensor mu = ag::select_batch(split, mean_idx);
    const ag::Tensor logvar = ag::select_batch(split, logvar_idx);
    std::vector<double> eps(mu.numel());
    for (auto& e : eps) e = rng.normal();
    const ag::Tensor z = ag::add(mu, ag::mul(ag::exp(ag::scale(logvar, 0.5)), ag::Tensor::from(mu.shape(), eps)));
    const ag::Tensor recon = codec.decode(z);
    const ag::Tensor rec_loss = ag::mse(recon, x);
    // KL(q || N(0,1)) per latent element, averaged.
    const ag::Tensor kl = ag::scale(
        ag::mean(ag::sub(ag::add(ag::square(mu), ag::exp(logvar)), ag::add_scalar(logvar, 1.0))), 0.5);
    const ag::Tensor loss = ag::add(rec_loss, ag::scale(kl, cfg.kl_weight));
    if (!std::isfinite(loss.item())) throw NumericalError("pretrain_codec: non-finite loss at iteration " + std::to_string(it));
    opt.zero_grad();
    loss.backward();
    opt.step();
    report.final_loss = rec_loss.item();
    ++report.iterations;
  }
  opt.zero_grad();

  // Calibrate the latent scale to unit variance over the training images.
  {
    ag::NoGradGuard guard;
    double sum = 0.0, sum2 = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < train.size(); i += 16) {
      std::vector<Image> batch;
      for (std::size_t k = i; k < std::min(train.size(), i + 16); ++k) batch.push_back(corpus[train[k]]);
      const ag::Tensor z = codec.encode(images_to_tensor(batch));
      for (double v : z.data()) {
        sum += v;
        sum2 += v * v;
        ++count;
      }
    }
    const double mean = sum / count;
    const double var = sum2 / count - mean * mean;
    codec.set_latent_scale(1.0 / std::sqrt(std::max(var, 1e-12)));

    double psnr_sum = 0.0;
    for (std::size_t idx : holdout) {
      const Image rec = codec.decode(codec.encode(corpus[idx]));
      double mse = 0.0;
      for (std::size_t k = 0; k < rec.data.size(); ++k) {
        const double diff = rec.data[k] - corpus[idx].data[k];
        mse += diff * diff;
      }
      mse /= static_cast<double>(rec.data.size());
      psnr_sum += 10.0 * std::log10(1.0 / std::max(mse, 1e-12));
    }
    report.heldout_psnr = psnr_sum / static_cast<double>(holdout.size());
  }
  report.converged = report.heldout_psnr >= cfg.min_psnr;
  codec.freeze_encoder();
  return report;
}

}  // namespace mve
