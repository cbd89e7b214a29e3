#pragma once

// Small layer library on top of the autograd tensors.

#include <cstdint>
#include <string>
#include <vector>

#include "mve/rng.hpp"
#include "mve/tensor.hpp"

namespace mve::nn {

struct NamedTensor {
  std::string name;
  ag::Tensor tensor;
};

/// Ordered collection of named parameter handles. Handles share storage with
/// the owning module, so updating a tensor here updates the module.
class ParamSet {
 public:
  void add(std::string name, ag::Tensor t);
  void append(const ParamSet& other);
  const std::vector<NamedTensor>& items() const { return items_; }
  std::vector<ag::Tensor> tensors() const;
  const ag::Tensor& get(const std::string& name) const;
  std::size_t count() const;  // total scalar count
  void zero_grad() const;
  /// FNV-1a over names, shapes and value bits.
  std::uint64_t checksum() const;
  /// Copy values from a set with identical names and shapes.
  void copy_from(const ParamSet& other);

 private:
  std::vector<NamedTensor> items_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialised tensor.
ag::Tensor uniform_init(const ag::Shape& shape, int fan_in, Rng& rng);

struct Conv2d {
  ag::Tensor weight;  // [cout, cin, k, k]
  ag::Tensor bias;    // [cout]
  int stride = 1;
  int pad = 0;

  static Conv2d make(int cin, int cout, int k, int stride, int pad, Rng& rng, bool zero_init = false);
  ag::Tensor operator()(const ag::Tensor& x) const;
  void collect(ParamSet& ps, const std::string& prefix) const;
  int in_channels() const { return weight.dim(1); }
  int out_channels() const { return weight.dim(0); }
  int kernel() const { return weight.dim(2); }
};

struct GroupNorm {
  ag::Tensor gamma, beta;
  int groups = 1;

  static GroupNorm make(int channels, int groups);
  ag::Tensor operator()(const ag::Tensor& x) const;
  void collect(ParamSet& ps, const std::string& prefix) const;
};

/// Token-wise affine map, x[T,in] -> [T,out].
struct Linear {
  ag::Tensor weight;  // [in, out]
  ag::Tensor bias;    // [out]

  static Linear make(int in, int out, Rng& rng);
  ag::Tensor operator()(const ag::Tensor& x) const;
  void collect(ParamSet& ps, const std::string& prefix) const;
};

/// Low-rank additive delta on a convolution weight:
/// W' = W + scaling * reshape(up @ down).
struct LowRankAdapter {
  ag::Tensor down;  // [rank, cin*k*k]
  ag::Tensor up;    // [cout, rank], zero at init
  double scaling = 1.0;

  static LowRankAdapter make(const Conv2d& conv, int rank, double alpha, Rng& rng);
  int rank() const { return down.dim(0); }
  ag::Tensor apply(const Conv2d& conv, const ag::Tensor& x) const;
  void collect(ParamSet& ps, const std::string& prefix) const;
};

/// Fixed 2D sinusoidal position code [C,H,W] broadcast to [N,C,H,W].
ag::Tensor positional_encoding_2d(int n, int c, int h, int w);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

class Adam {
 public:
  Adam(ParamSet params, AdamConfig cfg);

  /// Apply one update from the accumulated gradients; returns the global
  /// gradient norm before clipping.
  double step();
  /// Global L2 norm of accumulated gradients.
  double grad_norm() const;
  void zero_grad() { params_.zero_grad(); }

  const ParamSet& params() const { return params_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::int64_t steps() const { return t_; }

  /// Moment buffers as named tensors for checkpointing.
  ParamSet state() const;
  void load_state(const ParamSet& state, std::int64_t steps);

 private:
  ParamSet params_;
  AdamConfig cfg_;
  std::vector<ag::Tensor> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace mve::nn
