#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Tensor is a shared handle to a graph node. Operations record their
// inputs and a backward closure while gradient recording is enabled; calling
// backward() on a scalar result accumulates d(result)/d(leaf) into every leaf
// that requires a gradient. Image-like tensors use NCHW layout, token
// sequences use [tokens, channels].

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace mve::ag {

using Shape = std::vector<int>;

/// 64-byte aligned allocation for tensor storage.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t numel_of(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Buffer& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double v, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v) { return full({1}, v); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  std::vector<double> values() const { return {node_->value.begin(), node_->value.end()}; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.clear(); }

  double item() const;
  /// Backpropagate from this scalar; gradients accumulate into leaves.
  void backward() const;
  /// Same values, no history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Keep large freed buffers inside the process heap (glibc mmap and trim
/// thresholds). No-op on other C libraries.
void tune_allocator();

/// Thread-local switch for graph recording.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Helper used by op implementations: builds the result node and wires
// history when any input needs a gradient.
Tensor make_result(Shape shape, Buffer value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward);

// ---- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// ---- reductions ------------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// mean((a - b)^2)
Tensor mse(const Tensor& a, const Tensor& b);

// ---- shape & layout --------------------------------------------------------
Tensor reshape(const Tensor& a, const Shape& shape);
/// Concatenate NCHW tensors along channels.
Tensor concat_channels(const std::vector<Tensor>& parts);
/// Concatenate tensors along the leading axis.
Tensor concat_batch(const std::vector<Tensor>& parts);
/// Gather entries of the leading axis.
Tensor select_batch(const Tensor& a, std::span<const int> indices);
/// [N,C,H,W] -> [N*H*W, C]
Tensor to_tokens(const Tensor& x);
/// [N*H*W, C] -> [N,C,H,W]
Tensor from_tokens(const Tensor& t, int n, int h, int w);
Tensor upsample_nearest2x(const Tensor& x);
/// [N, C*r*r, H, W] -> [N, C, H*r, W*r]
Tensor pixel_shuffle(const Tensor& x, int r);

// ---- broadcasting ----------------------------------------------------------
/// x[N,C,H,W] + b[C]
Tensor add_channel(const Tensor& x, const Tensor& b);
/// x[T,C] + b[C]
Tensor add_row(const Tensor& x, const Tensor& b);
/// v[C] -> [N,C,H,W]
Tensor broadcast_channels(const Tensor& v, int n, int h, int w);

// ---- linear algebra & layers -----------------------------------------------
/// a[M,K] @ b[K,N]
Tensor matmul(const Tensor& a, const Tensor& b);
/// 2D convolution, x[N,Cin,H,W], w[Cout,Cin,k,k], optional b[Cout].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  double eps = 1e-5);
/// Multi-head scaled dot-product self-attention over q,k,v [T,C].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

}  // namespace mve::ag
