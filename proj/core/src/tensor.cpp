#include "mve/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mve::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

std::size_t numel_of(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value.assign(numel_of(shape), v);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != numel_of(shape))
    throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value.assign(values.begin(), values.end());
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

double Tensor::item() const {
  if (numel() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->value = node_->value;
  return Tensor(std::move(n));
}

void Tensor::backward() const {
  if (numel() != 1) throw std::logic_error("backward() requires a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS yields a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Release interior gradients.
  for (Node* n : order)
    if (n->backward) n->grad.clear();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor make_result(Shape shape, Buffer value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (auto& t : inputs) n->parents.push_back(t.node_ptr());
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

}  // namespace mve::ag
