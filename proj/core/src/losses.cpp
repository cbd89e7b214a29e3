#include "mve/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace mve {

std::array<double, kSsimWindow * kSsimWindow> ssim_window() {
  std::array<double, kSsimWindow> g{};
  double total = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    g[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  std::array<double, kSsimWindow * kSsimWindow> w{};
  for (int i = 0; i < kSsimWindow; ++i)
    for (int j = 0; j < kSsimWindow; ++j) w[i * kSsimWindow + j] = g[i] * g[j];
  return w;
}

namespace {

const ag::Tensor& window_kernel() {
  static const ag::Tensor k = [] {
    const auto w = ssim_window();
    return ag::Tensor::from({1, 1, kSsimWindow, kSsimWindow}, std::vector<double>(w.begin(), w.end()));
  }();
  return k;
}

ag::Tensor blur(const ag::Tensor& x) { return ag::conv2d(x, window_kernel(), ag::Tensor(), 1, 0); }

void check_images(const ag::Tensor& a, const ag::Tensor& b, const char* what) {
  if (a.shape() != b.shape()) throw std::invalid_argument(std::string(what) + ": shape mismatch");
  if (a.rank() != 4) throw std::invalid_argument(std::string(what) + ": expected [N,C,H,W]");
}

}  // namespace

ag::Tensor to_gray(const ag::Tensor& rgb) {
  if (rgb.rank() != 4 || rgb.dim(1) != 3) throw std::invalid_argument("to_gray: expected [N,3,H,W]");
  static const ag::Tensor w =
      ag::Tensor::from({1, 3, 1, 1}, {kLumaWeights[0], kLumaWeights[1], kLumaWeights[2]});
  return ag::conv2d(rgb, w, ag::Tensor(), 1, 0);
}

ag::Tensor ssim_map(const ag::Tensor& a, const ag::Tensor& b) {
  check_images(a, b, "ssim");
  if (a.dim(1) != 1) throw std::invalid_argument("ssim_map: expected grayscale input");
  if (a.dim(2) < kSsimWindow || a.dim(3) < kSsimWindow)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  const ag::Tensor mu_a = blur(a), mu_b = blur(b);
  const ag::Tensor mu_aa = ag::mul(mu_a, mu_a), mu_bb = ag::mul(mu_b, mu_b), mu_ab = ag::mul(mu_a, mu_b);
  const ag::Tensor var_a = ag::sub(blur(ag::mul(a, a)), mu_aa);
  const ag::Tensor var_b = ag::sub(blur(ag::mul(b, b)), mu_bb);
  const ag::Tensor cov = ag::sub(blur(ag::mul(a, b)), mu_ab);
  const ag::Tensor num = ag::mul(ag::add_scalar(ag::add(mu_ab, mu_ab), kSsimC1), ag::add_scalar(ag::add(cov, cov), kSsimC2));
  const ag::Tensor den = ag::mul(ag::add_scalar(ag::add(mu_aa, mu_bb), kSsimC1), ag::add_scalar(ag::add(var_a, var_b), kSsimC2));
  return ag::div(num, den);
}

ag::Tensor ssim(const ag::Tensor& a, const ag::Tensor& b) {
  check_images(a, b, "ssim");
  return ag::mean(ssim_map(to_gray(a), to_gray(b)));
}

PerceptualProxy PerceptualProxy::make(std::uint64_t seed) {
  PerceptualProxy p;
  Rng rng(seed);
  p.layers_ = {nn::Conv2d::make(3, 8, 3, 1, 1, rng), nn::Conv2d::make(8, 16, 3, 2, 1, rng)};
  for (auto& l : p.layers_) {
    l.weight.set_requires_grad(false);
    l.bias.set_requires_grad(false);
  }
  return p;
}

const PerceptualProxy& PerceptualProxy::standard() {
  static const PerceptualProxy p = make(kPerceptualSeed);
  return p;
}

std::vector<ag::Tensor> PerceptualProxy::features(const ag::Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != 3) throw std::invalid_argument("perceptual: expected [N,3,H,W]");
  std::vector<ag::Tensor> out;
  ag::Tensor h = x;
  for (const auto& l : layers_) {
    h = ag::silu(l(h));
    out.push_back(h);
  }
  return out;
}

ag::Tensor PerceptualProxy::distance(const ag::Tensor& a, const ag::Tensor& b) const {
  check_images(a, b, "perceptual");
  const auto fa = features(a), fb = features(b);
  ag::Tensor total = ag::mse(fa[0], fb[0]);
  for (std::size_t i = 1; i < fa.size(); ++i) total = ag::add(total, ag::mse(fa[i], fb[i]));
  return ag::scale(total, 1.0 / static_cast<double>(fa.size()));
}

ag::Tensor latent_loss(const ag::Tensor& pred_v, const ag::Tensor& target_v) {
  if (pred_v.shape() != target_v.shape()) throw std::invalid_argument("latent_loss: shape mismatch");
  return ag::mse(pred_v, target_v);
}

PixelLossTerms pixel_loss_terms(const ag::Tensor& pred, const ag::Tensor& gt) {
  check_images(pred, gt, "pixel_loss");
  PixelLossTerms t;
  t.mse = ag::mse(pred, gt);
  t.ssim = ssim(pred, gt);
  t.perceptual = PerceptualProxy::standard().distance(pred, gt);
  const ag::Tensor dissim = ag::add_scalar(ag::scale(t.ssim, -1.0), 1.0);
  t.total = ag::scale(ag::add(ag::add(t.mse, dissim), t.perceptual), 1.0 / 3.0);
  return t;
}

ag::Tensor pixel_loss(const ag::Tensor& pred, const ag::Tensor& gt) { return pixel_loss_terms(pred, gt).total; }

}  // namespace mve
