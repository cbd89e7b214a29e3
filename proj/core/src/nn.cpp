#include "mve/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace mve::nn {

void ParamSet::add(std::string name, ag::Tensor t) {
  for (const auto& it : items_)
    if (it.name == name) throw std::logic_error("duplicate parameter name: " + name);
  items_.push_back({std::move(name), std::move(t)});
}

void ParamSet::append(const ParamSet& other) {
  for (const auto& it : other.items_) add(it.name, it.tensor);
}

std::vector<ag::Tensor> ParamSet::tensors() const {
  std::vector<ag::Tensor> out;
  out.reserve(items_.size());
  for (const auto& it : items_) out.push_back(it.tensor);
  return out;
}

const ag::Tensor& ParamSet::get(const std::string& name) const {
  for (const auto& it : items_)
    if (it.name == name) return it.tensor;
  throw std::out_of_range("no parameter named " + name);
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& it : items_) n += it.tensor.numel();
  return n;
}

void ParamSet::zero_grad() const {
  for (auto& it : items_) {
    ag::Tensor t = it.tensor;
    t.zero_grad();
  }
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& it : items_) {
    mix(it.name.data(), it.name.size());
    for (int d : it.tensor.shape()) mix(&d, sizeof d);
    mix(it.tensor.data().data(), it.tensor.numel() * sizeof(double));
  }
  return h;
}

void ParamSet::copy_from(const ParamSet& other) {
  if (other.items_.size() != items_.size()) throw std::invalid_argument("copy_from: parameter count mismatch");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& src = other.items_[i];
    auto& dst = items_[i];
    if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape())
      throw std::invalid_argument("copy_from: mismatch at " + dst.name);
    auto d = dst.tensor.mutable_data();
    std::copy(src.tensor.data().begin(), src.tensor.data().end(), d.begin());
  }
}

ag::Tensor uniform_init(const ag::Shape& shape, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(ag::numel_of(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return ag::Tensor::from(shape, std::move(v), true);
}

Conv2d Conv2d::make(int cin, int cout, int k, int stride, int pad, Rng& rng, bool zero_init) {
  Conv2d c;
  if (zero_init) {
    c.weight = ag::Tensor::zeros({cout, cin, k, k}, true);
    c.bias = ag::Tensor::zeros({cout}, true);
  } else {
    c.weight = uniform_init({cout, cin, k, k}, cin * k * k, rng);
    c.bias = uniform_init({cout}, cin * k * k, rng);
  }
  c.stride = stride;
  c.pad = pad;
  return c;
}

ag::Tensor Conv2d::operator()(const ag::Tensor& x) const { return ag::conv2d(x, weight, bias, stride, pad); }

void Conv2d::collect(ParamSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".weight", weight);
  ps.add(prefix + ".bias", bias);
}

GroupNorm GroupNorm::make(int channels, int groups) {
  GroupNorm g;
  g.gamma = ag::Tensor::full({channels}, 1.0, true);
  g.beta = ag::Tensor::zeros({channels}, true);
  g.groups = groups;
  return g;
}

ag::Tensor GroupNorm::operator()(const ag::Tensor& x) const { return ag::group_norm(x, gamma, beta, groups); }

void GroupNorm::collect(ParamSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".gamma", gamma);
  ps.add(prefix + ".beta", beta);
}

Linear Linear::make(int in, int out, Rng& rng) {
  Linear l;
  l.weight = uniform_init({in, out}, in, rng);
  l.bias = uniform_init({out}, in, rng);
  return l;
}

ag::Tensor Linear::operator()(const ag::Tensor& x) const { return ag::add_row(ag::matmul(x, weight), bias); }

void Linear::collect(ParamSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".weight", weight);
  ps.add(prefix + ".bias", bias);
}

LowRankAdapter LowRankAdapter::make(const Conv2d& conv, int rank, double alpha, Rng& rng) {
  const int cout = conv.out_channels();
  const int kdim = conv.in_channels() * conv.kernel() * conv.kernel();
  if (rank < 1 || rank > std::min(cout, kdim))
    throw std::invalid_argument("adapter rank " + std::to_string(rank) + " outside [1, min(layer dims)]");
  LowRankAdapter a;
  a.down = uniform_init({rank, kdim}, kdim, rng);
  a.up = ag::Tensor::zeros({cout, rank}, true);
  a.scaling = alpha / rank;
  return a;
}

ag::Tensor LowRankAdapter::apply(const Conv2d& conv, const ag::Tensor& x) const {
  ag::Tensor delta = ag::reshape(ag::scale(ag::matmul(up, down), scaling), conv.weight.shape());
  return ag::conv2d(x, ag::add(conv.weight, delta), conv.bias, conv.stride, conv.pad);
}

void LowRankAdapter::collect(ParamSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".down", down);
  ps.add(prefix + ".up", up);
}

ag::Tensor positional_encoding_2d(int n, int c, int h, int w) {
  // Half the channels encode rows, half columns, each with sin/cos pairs.
  std::vector<double> pe(static_cast<std::size_t>(c) * h * w, 0.0);
  const int half = c / 2;
  for (int ch = 0; ch < c; ++ch) {
    const bool row_axis = ch < half;
    const int local = row_axis ? ch : ch - half;
    const int span = row_axis ? half : c - half;
    const int freq_idx = local / 2;
    const double freq = 1.0 / std::pow(100.0, 2.0 * freq_idx / std::max(span, 1));
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const double pos = row_axis ? i : j;
        pe[(static_cast<std::size_t>(ch) * h + i) * w + j] = (local % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
      }
  }
  std::vector<double> out;
  out.reserve(pe.size() * n);
  for (int s = 0; s < n; ++s) out.insert(out.end(), pe.begin(), pe.end());
  return ag::Tensor::from({n, c, h, w}, std::move(out));
}

Adam::Adam(ParamSet params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& it : params_.items()) {
    m_.push_back(ag::Tensor::zeros(it.tensor.shape()));
    v_.push_back(ag::Tensor::zeros(it.tensor.shape()));
  }
}

double Adam::grad_norm() const {
  double s = 0.0;
  for (const auto& it : params_.items())
    if (it.tensor.has_grad())
      for (double g : it.tensor.grad()) s += g * g;
  return std::sqrt(s);
}

double Adam::step() {
  const double norm = grad_norm();
  const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto& items = params_.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    ag::Tensor p = items[i].tensor;
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto m = m_[i].mutable_data();
    auto v = v_[i].mutable_data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] * clip;
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
      w[k] -= cfg_.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
    }
  }
  return norm;
}

ParamSet Adam::state() const {
  ParamSet s;
  const auto& items = params_.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    s.add("adam.m." + items[i].name, m_[i]);
    s.add("adam.v." + items[i].name, v_[i]);
  }
  return s;
}

void Adam::load_state(const ParamSet& state, std::int64_t steps) {
  ParamSet mine = this->state();
  mine.copy_from(state);
  t_ = steps;
}

}  // namespace mve::nn
