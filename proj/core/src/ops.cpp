#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mve/tensor.hpp"

namespace mve::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

void check_rank(const Tensor& a, std::size_t r, const char* op) {
  if (a.rank() != r)
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                                shape_str(a.shape()));
}

// Accumulate g into parent i when it wants a gradient.
inline Buffer* grad_of(Node& out, std::size_t i) {
  Node& p = *out.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D dfdx) {
  const auto& x = a.values();
  Buffer y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_result(a.shape(), std::move(y), {a}, [dfdx](Node& out) {
    auto* ga = grad_of(out, 0);
    if (!ga) return;
    const auto& x = out.parents[0]->value;
    for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += out.grad[i] * dfdx(x[i], out.value[i]);
  });
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same(a, b, "add");
  Buffer y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, [](Node& out) {
    for (std::size_t p = 0; p < 2; ++p)
      if (auto* g = grad_of(out, p))
        for (std::size_t i = 0; i < out.grad.size(); ++i) (*g)[i] += out.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same(a, b, "sub");
  Buffer y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, [](Node& out) {
    if (auto* g = grad_of(out, 0))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*g)[i] += out.grad[i];
    if (auto* g = grad_of(out, 1))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*g)[i] -= out.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same(a, b, "mul");
  Buffer y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, [](Node& out) {
    const auto& av = out.parents[0]->value;
    const auto& bv = out.parents[1]->value;
    if (auto* g = grad_of(out, 0))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*g)[i] += out.grad[i] * bv[i];
    if (auto* g = grad_of(out, 1))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*g)[i] += out.grad[i] * av[i];
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same(a, b, "div");
  Buffer y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] / b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, [](Node& out) {
    const auto& bv = out.parents[1]->value;
    if (auto* g = grad_of(out, 0))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*g)[i] += out.grad[i] / bv[i];
    if (auto* g = grad_of(out, 1))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*g)[i] -= out.grad[i] * out.value[i] / bv[i];
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({1}, {s}, {a}, [](Node& out) {
    if (auto* g = grad_of(out, 0))
      for (auto& v : *g) v += out.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mse(const Tensor& a, const Tensor& b) {
  check_same(a, b, "mse");
  const double inv_n = 1.0 / static_cast<double>(a.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return make_result({1}, {s * inv_n}, {a, b}, [inv_n](Node& out) {
    const auto& av = out.parents[0]->value;
    const auto& bv = out.parents[1]->value;
    const double g0 = out.grad[0] * 2.0 * inv_n;
    if (auto* g = grad_of(out, 0))
      for (std::size_t i = 0; i < av.size(); ++i) (*g)[i] += g0 * (av[i] - bv[i]);
    if (auto* g = grad_of(out, 1))
      for (std::size_t i = 0; i < av.size(); ++i) (*g)[i] -= g0 * (av[i] - bv[i]);
  });
}

// ---- shape & layout --------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (numel_of(shape) != a.numel())
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  return make_result(shape, a.node()->value, {a}, [](Node& out) {
    if (auto* g = grad_of(out, 0))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*g)[i] += out.grad[i];
  });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  for (const auto& p : parts) check_rank(p, 4, "concat_channels");
  const int n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  int c_total = 0;
  std::vector<int> offsets;
  for (const auto& p : parts) {
    if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w)
      throw std::invalid_argument("concat_channels: incompatible " + shape_str(p.shape()));
    offsets.push_back(c_total);
    c_total += p.dim(1);
  }
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Buffer y(static_cast<std::size_t>(n) * c_total * hw);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const int c = parts[k].dim(1);
    for (int b = 0; b < n; ++b)
      std::copy_n(parts[k].data().data() + static_cast<std::size_t>(b) * c * hw, c * hw,
                  y.data() + (static_cast<std::size_t>(b) * c_total + offsets[k]) * hw);
  }
  return make_result({n, c_total, h, w}, std::move(y), parts, [offsets, n, c_total, hw](Node& out) {
    for (std::size_t k = 0; k < out.parents.size(); ++k) {
      auto* g = grad_of(out, k);
      if (!g) continue;
      const int c = out.parents[k]->shape[1];
      for (int b = 0; b < n; ++b) {
        const double* src = out.grad.data() + (static_cast<std::size_t>(b) * c_total + offsets[k]) * hw;
        double* dst = g->data() + static_cast<std::size_t>(b) * c * hw;
        for (std::size_t i = 0; i < c * hw; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_batch: no inputs");
  Shape shape = parts[0].shape();
  int lead = 0;
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape tail_a(p.shape().begin() + 1, p.shape().end());
    Shape tail_b(shape.begin() + 1, shape.end());
    if (tail_a != tail_b) throw std::invalid_argument("concat_batch: incompatible " + shape_str(p.shape()));
    lead += p.dim(0);
    offsets.push_back(total);
    total += p.numel();
  }
  shape[0] = lead;
  Buffer y;
  y.reserve(total);
  for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
  return make_result(shape, std::move(y), parts, [offsets](Node& out) {
    for (std::size_t k = 0; k < out.parents.size(); ++k) {
      auto* g = grad_of(out, k);
      if (!g) continue;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[offsets[k] + i];
    }
  });
}

Tensor select_batch(const Tensor& a, std::span<const int> indices) {
  const std::size_t stride = a.numel() / static_cast<std::size_t>(a.dim(0));
  Shape shape = a.shape();
  shape[0] = static_cast<int>(indices.size());
  Buffer y(indices.size() * stride);
  std::vector<int> idx(indices.begin(), indices.end());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= a.dim(0)) throw std::out_of_range("select_batch: index out of range");
    std::copy_n(a.data().data() + idx[k] * stride, stride, y.data() + k * stride);
  }
  return make_result(shape, std::move(y), {a}, [idx, stride](Node& out) {
    auto* g = grad_of(out, 0);
    if (!g) return;
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t i = 0; i < stride; ++i) (*g)[idx[k] * stride + i] += out.grad[k * stride + i];
  });
}

Tensor to_tokens(const Tensor& x) {
  check_rank(x, 4, "to_tokens");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Buffer y(x.numel());
  const double* src = x.data().data();
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) y[(b * hw + p) * c + ch] = src[(static_cast<std::size_t>(b) * c + ch) * hw + p];
  return make_result({static_cast<int>(n * hw), c}, std::move(y), {x}, [n, c, hw](Node& out) {
    auto* g = grad_of(out, 0);
    if (!g) return;
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < hw; ++p)
          (*g)[(static_cast<std::size_t>(b) * c + ch) * hw + p] += out.grad[(b * hw + p) * c + ch];
  });
}

Tensor from_tokens(const Tensor& t, int n, int h, int w) {
  check_rank(t, 2, "from_tokens");
  const int c = t.dim(1);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  if (static_cast<std::size_t>(t.dim(0)) != n * hw) throw std::invalid_argument("from_tokens: token count mismatch");
  Buffer y(t.numel());
  const double* src = t.data().data();
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) y[(static_cast<std::size_t>(b) * c + ch) * hw + p] = src[(b * hw + p) * c + ch];
  return make_result({n, c, h, w}, std::move(y), {t}, [n, c, hw](Node& out) {
    auto* g = grad_of(out, 0);
    if (!g) return;
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < hw; ++p)
          (*g)[(b * hw + p) * c + ch] += out.grad[(static_cast<std::size_t>(b) * c + ch) * hw + p];
  });
}

Tensor upsample_nearest2x(const Tensor& x) {
  check_rank(x, 4, "upsample_nearest2x");
  const int nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Buffer y(x.numel() * 4);
  const double* src = x.data().data();
  for (int p = 0; p < nc; ++p)
    for (int i = 0; i < 2 * h; ++i)
      for (int j = 0; j < 2 * w; ++j)
        y[(static_cast<std::size_t>(p) * 2 * h + i) * 2 * w + j] = src[(static_cast<std::size_t>(p) * h + i / 2) * w + j / 2];
  return make_result({x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(y), {x}, [nc, h, w](Node& out) {
    auto* g = grad_of(out, 0);
    if (!g) return;
    for (int p = 0; p < nc; ++p)
      for (int i = 0; i < 2 * h; ++i)
        for (int j = 0; j < 2 * w; ++j)
          (*g)[(static_cast<std::size_t>(p) * h + i / 2) * w + j / 2] +=
              out.grad[(static_cast<std::size_t>(p) * 2 * h + i) * 2 * w + j];
  });
}

Tensor pixel_shuffle(const Tensor& x, int r) {
  check_rank(x, 4, "pixel_shuffle");
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (cin % (r * r) != 0) throw std::invalid_argument("pixel_shuffle: channels not divisible by r^2");
  const int c = cin / (r * r);
  const int ho = h * r, wo = w * r;
  // out[b, ch, i*r+di, j*r+dj] = in[b, ch*r*r + di*r + dj, i, j]
  std::vector<std::size_t> map(x.numel());
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int oi = 0; oi < ho; ++oi)
        for (int oj = 0; oj < wo; ++oj) {
          const int i = oi / r, di = oi % r, j = oj / r, dj = oj % r;
          const std::size_t o = ((static_cast<std::size_t>(b) * c + ch) * ho + oi) * wo + oj;
          map[o] = ((static_cast<std::size_t>(b) * cin + ch * r * r + di * r + dj) * h + i) * w + j;
        }
  Buffer y(x.numel());
  for (std::size_t o = 0; o < y.size(); ++o) y[o] = x.data()[map[o]];
  return make_result({n, c, ho, wo}, std::move(y), {x}, [map = std::move(map)](Node& out) {
    auto* g = grad_of(out, 0);
    if (!g) return;
    for (std::size_t o = 0; o < map.size(); ++o) (*g)[map[o]] += out.grad[o];
  });
}

// ---- broadcasting ----------------------------------------------------------

Tensor add_channel(const Tensor& x, const Tensor& b) {
  check_rank(x, 4, "add_channel");
  const int n = x.dim(0), c = x.dim(1);
  if (b.numel() != static_cast<std::size_t>(c)) throw std::invalid_argument("add_channel: bias size mismatch");
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Buffer y(x.node()->value);
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch) {
      double* p = y.data() + (static_cast<std::size_t>(s) * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] += b.data()[ch];
    }
  return make_result(x.shape(), std::move(y), {x, b}, [n, c, hw](Node& out) {
    if (auto* g = grad_of(out, 0))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*g)[i] += out.grad[i];
    if (auto* g = grad_of(out, 1))
      for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch) {
          const double* p = out.grad.data() + (static_cast<std::size_t>(s) * c + ch) * hw;
          double acc = 0.0;
          for (std::size_t i = 0; i < hw; ++i) acc += p[i];
          (*g)[ch] += acc;
        }
  });
}

Tensor add_row(const Tensor& x, const Tensor& b) {
  check_rank(x, 2, "add_row");
  const int t = x.dim(0), c = x.dim(1);
  if (b.numel() != static_cast<std::size_t>(c)) throw std::invalid_argument("add_row: bias size mismatch");
  Buffer y(x.node()->value);
  for (int i = 0; i < t; ++i)
    for (int ch = 0; ch < c; ++ch) y[static_cast<std::size_t>(i) * c + ch] += b.data()[ch];
  return make_result(x.shape(), std::move(y), {x, b}, [t, c](Node& out) {
    if (auto* g = grad_of(out, 0))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*g)[i] += out.grad[i];
    if (auto* g = grad_of(out, 1))
      for (int i = 0; i < t; ++i)
        for (int ch = 0; ch < c; ++ch) (*g)[ch] += out.grad[static_cast<std::size_t>(i) * c + ch];
  });
}

Tensor broadcast_channels(const Tensor& v, int n, int h, int w) {
  const int c = static_cast<int>(v.numel());
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Buffer y(static_cast<std::size_t>(n) * c * hw);
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      std::fill_n(y.data() + (static_cast<std::size_t>(s) * c + ch) * hw, hw, v.data()[ch]);
  return make_result({n, c, h, w}, std::move(y), {v}, [n, c, hw](Node& out) {
    auto* g = grad_of(out, 0);
    if (!g) return;
    for (int s = 0; s < n; ++s)
      for (int ch = 0; ch < c; ++ch) {
        const double* p = out.grad.data() + (static_cast<std::size_t>(s) * c + ch) * hw;
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += p[i];
        (*g)[ch] += acc;
      }
  });
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw std::invalid_argument("matmul: " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  Buffer y(static_cast<std::size_t>(m) * n);
  MapMat(y.data(), m, n).noalias() = CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);
  return make_result({m, n}, std::move(y), {a, b}, [m, k, n](Node& out) {
    CMapMat gy(out.grad.data(), m, n);
    if (auto* g = grad_of(out, 0))
      MapMat(g->data(), m, k).noalias() += gy * CMapMat(out.parents[1]->value.data(), k, n).transpose();
    if (auto* g = grad_of(out, 1))
      MapMat(g->data(), k, n).noalias() += CMapMat(out.parents[0]->value.data(), m, k).transpose() * gy;
  });
}

namespace {

struct ConvGeom {
  int n, cin, h, w, cout, k, stride, pad, ho, wo;
  std::size_t kdim() const { return static_cast<std::size_t>(cin) * k * k; }
  std::size_t out_hw() const { return static_cast<std::size_t>(ho) * wo; }
};

// cols is [cin*k*k, ho*wo] for one sample.
void im2col(const ConvGeom& g, const double* x, double* cols) {
  for (int c = 0; c < g.cin; ++c)
    for (int ki = 0; ki < g.k; ++ki)
      for (int kj = 0; kj < g.k; ++kj) {
        double* row = cols + ((static_cast<std::size_t>(c) * g.k + ki) * g.k + kj) * g.out_hw();
        for (int oi = 0; oi < g.ho; ++oi) {
          const int i = oi * g.stride - g.pad + ki;
          double* dst = row + static_cast<std::size_t>(oi) * g.wo;
          if (i < 0 || i >= g.h) {
            std::fill_n(dst, g.wo, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(c) * g.h + i) * g.w;
          for (int oj = 0; oj < g.wo; ++oj) {
            const int j = oj * g.stride - g.pad + kj;
            dst[oj] = (j >= 0 && j < g.w) ? src[j] : 0.0;
          }
        }
      }
}

void col2im(const ConvGeom& g, const double* cols, double* dx) {
  for (int c = 0; c < g.cin; ++c)
    for (int ki = 0; ki < g.k; ++ki)
      for (int kj = 0; kj < g.k; ++kj) {
        const double* row = cols + ((static_cast<std::size_t>(c) * g.k + ki) * g.k + kj) * g.out_hw();
        for (int oi = 0; oi < g.ho; ++oi) {
          const int i = oi * g.stride - g.pad + ki;
          if (i < 0 || i >= g.h) continue;
          double* dst = dx + (static_cast<std::size_t>(c) * g.h + i) * g.w;
          const double* src = row + static_cast<std::size_t>(oi) * g.wo;
          for (int oj = 0; oj < g.wo; ++oj) {
            const int j = oj * g.stride - g.pad + kj;
            if (j >= 0 && j < g.w) dst[j] += src[oj];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  check_rank(x, 4, "conv2d");
  check_rank(w, 4, "conv2d");
  ConvGeom g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = w.dim(0);
  g.k = w.dim(2);
  g.stride = stride;
  g.pad = pad;
  if (w.dim(1) != g.cin || w.dim(3) != g.k)
    throw std::invalid_argument("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                                shape_str(x.shape()));
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw std::invalid_argument("conv2d: empty output");
  const bool has_bias = b.defined();
  if (has_bias && b.numel() != static_cast<std::size_t>(g.cout)) throw std::invalid_argument("conv2d: bias size");

  const std::size_t kd = g.kdim(), ohw = g.out_hw();
  const bool pointwise = g.k == 1 && stride == 1 && pad == 0;
  const bool record = grad_enabled() && (x.requires_grad() || w.requires_grad() || (has_bias && b.requires_grad()));

  auto cols = std::make_shared<Buffer>();
  Buffer scratch;
  if (!pointwise) {
    if (record)
      cols->resize(static_cast<std::size_t>(g.n) * kd * ohw);
    else
      scratch.resize(kd * ohw);
  }

  Buffer y(static_cast<std::size_t>(g.n) * g.cout * ohw);
  CMapMat wm(w.data().data(), g.cout, kd);
  for (int s = 0; s < g.n; ++s) {
    const double* xs = x.data().data() + static_cast<std::size_t>(s) * g.cin * g.h * g.w;
    const double* col;
    if (pointwise) {
      col = xs;
    } else {
      double* dst = record ? cols->data() + static_cast<std::size_t>(s) * kd * ohw : scratch.data();
      im2col(g, xs, dst);
      col = dst;
    }
    MapMat ym(y.data() + static_cast<std::size_t>(s) * g.cout * ohw, g.cout, ohw);
    ym.noalias() = wm * CMapMat(col, kd, ohw);
    if (has_bias)
      for (int c = 0; c < g.cout; ++c) ym.row(c).array() += b.data()[c];
  }

  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_result({g.n, g.cout, g.ho, g.wo}, std::move(y), inputs, [g, cols, has_bias, pointwise](Node& out) {
    const std::size_t kd = g.kdim(), ohw = g.out_hw();
    const auto& xv = out.parents[0]->value;
    const auto& wv = out.parents[1]->value;
    auto* gx = grad_of(out, 0);
    auto* gw = grad_of(out, 1);
    auto* gb = has_bias ? grad_of(out, 2) : nullptr;
    CMapMat wm(wv.data(), g.cout, kd);
    Buffer dcols(pointwise ? 0 : kd * ohw);
    for (int s = 0; s < g.n; ++s) {
      CMapMat gy(out.grad.data() + static_cast<std::size_t>(s) * g.cout * ohw, g.cout, ohw);
      const double* col = pointwise ? xv.data() + static_cast<std::size_t>(s) * g.cin * g.h * g.w
                                    : cols->data() + static_cast<std::size_t>(s) * kd * ohw;
      if (gw) MapMat(gw->data(), g.cout, kd).noalias() += gy * CMapMat(col, kd, ohw).transpose();
      if (gb)
        for (int c = 0; c < g.cout; ++c) (*gb)[c] += gy.row(c).sum();
      if (gx) {
        double* dxs = gx->data() + static_cast<std::size_t>(s) * g.cin * g.h * g.w;
        if (pointwise) {
          MapMat(dxs, kd, ohw).noalias() += wm.transpose() * gy;
        } else {
          MapMat(dcols.data(), kd, ohw).noalias() = wm.transpose() * gy;
          col2im(g, dcols.data(), dxs);
        }
      }
    }
  });
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, double eps) {
  check_rank(x, 4, "group_norm");
  const int n = x.dim(0), c = x.dim(1);
  if (c % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const int cpg = c / groups;
  const std::size_t gsize = static_cast<std::size_t>(cpg) * hw;

  Buffer xhat(x.numel()), y(x.numel());
  Buffer inv_std(static_cast<std::size_t>(n) * groups);
  for (int s = 0; s < n; ++s)
    for (int gi = 0; gi < groups; ++gi) {
      const std::size_t base = (static_cast<std::size_t>(s) * c + gi * cpg) * hw;
      double m = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) m += x.data()[base + i];
      m /= static_cast<double>(gsize);
      double var = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) {
        const double d = x.data()[base + i] - m;
        var += d * d;
      }
      var /= static_cast<double>(gsize);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(s) * groups + gi] = is;
      for (std::size_t i = 0; i < gsize; ++i) {
        const std::size_t idx = base + i;
        const int ch = gi * cpg + static_cast<int>(i / hw);
        xhat[idx] = (x.data()[idx] - m) * is;
        y[idx] = xhat[idx] * gamma.data()[ch] + beta.data()[ch];
      }
    }

  return make_result(x.shape(), std::move(y), {x, gamma, beta},
                     [n, c, groups, cpg, hw, gsize, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& out) {
                       const auto& gam = out.parents[1]->value;
                       auto* gx = grad_of(out, 0);
                       auto* gg = grad_of(out, 1);
                       auto* gbeta = grad_of(out, 2);
                       for (int s = 0; s < n; ++s)
                         for (int gi = 0; gi < groups; ++gi) {
                           const std::size_t base = (static_cast<std::size_t>(s) * c + gi * cpg) * hw;
                           double mean_d = 0.0, mean_dx = 0.0;
                           for (std::size_t i = 0; i < gsize; ++i) {
                             const std::size_t idx = base + i;
                             const int ch = gi * cpg + static_cast<int>(i / hw);
                             const double gy = out.grad[idx];
                             if (gg) (*gg)[ch] += gy * xhat[idx];
                             if (gbeta) (*gbeta)[ch] += gy;
                             const double d = gy * gam[ch];
                             mean_d += d;
                             mean_dx += d * xhat[idx];
                           }
                           if (!gx) continue;
                           mean_d /= static_cast<double>(gsize);
                           mean_dx /= static_cast<double>(gsize);
                           const double is = inv_std[static_cast<std::size_t>(s) * groups + gi];
                           for (std::size_t i = 0; i < gsize; ++i) {
                             const std::size_t idx = base + i;
                             const int ch = gi * cpg + static_cast<int>(i / hw);
                             const double d = out.grad[idx] * gam[ch];
                             (*gx)[idx] += is * (d - mean_d - xhat[idx] * mean_dx);
                           }
                         }
                     });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
  check_rank(q, 2, "attention");
  check_same(q, k, "attention");
  check_same(q, v, "attention");
  const int t = q.dim(0), c = q.dim(1);
  if (c % heads != 0) throw std::invalid_argument("attention: channels not divisible by heads");
  const int dh = c / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  using OuterStride = Eigen::OuterStride<>;
  using Block = Eigen::Map<const RowMat, 0, OuterStride>;
  using MBlock = Eigen::Map<RowMat, 0, OuterStride>;

  auto probs = std::make_shared<std::vector<RowMat>>(heads);
  Buffer y(static_cast<std::size_t>(t) * c);
  for (int hd = 0; hd < heads; ++hd) {
    Block qh(q.data().data() + hd * dh, t, dh, OuterStride(c));
    Block kh(k.data().data() + hd * dh, t, dh, OuterStride(c));
    Block vh(v.data().data() + hd * dh, t, dh, OuterStride(c));
    RowMat s = (qh * kh.transpose()) * sc;
    for (int i = 0; i < t; ++i) {
      const double mx = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - mx).exp();
      s.row(i) /= s.row(i).sum();
    }
    MBlock(y.data() + hd * dh, t, dh, OuterStride(c)).noalias() = s * vh;
    (*probs)[hd] = std::move(s);
  }

  return make_result({t, c}, std::move(y), {q, k, v}, [t, c, heads, dh, sc, probs](Node& out) {
    auto* gq = grad_of(out, 0);
    auto* gk = grad_of(out, 1);
    auto* gv = grad_of(out, 2);
    for (int hd = 0; hd < heads; ++hd) {
      const RowMat& p = (*probs)[hd];
      Block go(out.grad.data() + hd * dh, t, dh, OuterStride(c));
      Block qh(out.parents[0]->value.data() + hd * dh, t, dh, OuterStride(c));
      Block kh(out.parents[1]->value.data() + hd * dh, t, dh, OuterStride(c));
      Block vh(out.parents[2]->value.data() + hd * dh, t, dh, OuterStride(c));
      if (gv) MBlock(gv->data() + hd * dh, t, dh, OuterStride(c)).noalias() += p.transpose() * go;
      if (!gq && !gk) continue;
      RowMat dp = go * vh.transpose();
      // softmax backward: ds = p * (dp - rowsum(dp * p))
      Eigen::VectorXd rs = (dp.array() * p.array()).rowwise().sum();
      RowMat ds = p.array() * (dp.array().colwise() - rs.array());
      ds *= sc;
      if (gq) MBlock(gq->data() + hd * dh, t, dh, OuterStride(c)).noalias() += ds * kh;
      if (gk) MBlock(gk->data() + hd * dh, t, dh, OuterStride(c)).noalias() += ds.transpose() * qh;
    }
  });
}

}  // namespace mve::ag
