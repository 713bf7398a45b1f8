#include "skunet/tensor.hpp"

#include <chrono>
#include <cstdlib>
#include <cstdio>
#include <cstring>
#include <cmath>
#include <map>
#include <limits>
#include <sstream>
#include <stdexcept>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace skunet {

namespace {
thread_local GradTape* g_active_tape = nullptr;

// Activation buffers are multi-megabyte and short-lived; keep them in the
// arena instead of round-tripping through mmap on every op.
#ifdef __GLIBC__
const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
  return true;
}();
#endif
}

size_t Tensor::shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor shape has non-positive dimension " + std::to_string(d));
    n *= static_cast<size_t>(d);
  }
  return n;
}

std::string Tensor::shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  Tensor t;
  t.node_ = std::make_shared<Node>();
  size_t n = shape_numel(shape);
  t.node_->shape = std::move(shape);
  t.node_->data.assign(n, scalar(0));
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(std::vector<int> shape, scalar value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.node_->data) v = value;
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<scalar> data, bool requires_grad) {
  size_t n = shape_numel(shape);
  if (n != data.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = std::move(shape);
  t.node_->data = std::move(data);
  t.node_->requires_grad = requires_grad;
  return t;
}

std::vector<scalar>& Tensor::grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), scalar(0));
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), scalar(0));
}

Tensor Tensor::clone(bool requires_grad) const {
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = node_->shape;
  t.node_->data = node_->data;
  t.node_->requires_grad = requires_grad;
  return t;
}

void Tensor::ensure_finite(const char* op) const {
#ifdef SKUNET_SCALAR_F64
  using bits_t = uint64_t;
  constexpr bits_t exp_mask = 0x7ff0000000000000ULL;
#else
  using bits_t = uint32_t;
  constexpr bits_t exp_mask = 0x7f800000u;
#endif
  // NaN and Inf are exactly the values with all exponent bits set; the OR
  // reduction vectorizes and is order-independent
  const scalar* p = node_->data.data();
  const size_t n = node_->data.size();
  bits_t seen = 0;
  for (size_t i = 0; i < n; ++i) {
    bits_t b;
    std::memcpy(&b, &p[i], sizeof(b));
    seen |= static_cast<bits_t>((b & exp_mask) == exp_mask);
  }
  if (seen) {
    for (size_t i = 0; i < n; ++i) {
      if (!(std::fabs(p[i]) <= std::numeric_limits<scalar>::max())) {
        throw std::runtime_error(std::string(op) + ": non-finite value at flat index " +
                                 std::to_string(i));
      }
    }
  }
}

GradTape::GradTape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

GradTape::~GradTape() { g_active_tape = prev_; }

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record(const char* op, std::function<void()> backward_fn) {
  entries_.push_back(Entry{op, std::move(backward_fn)});
}

void GradTape::backward(Tensor loss) {
  if (consumed_) throw std::runtime_error("GradTape::backward called twice without reset");
  if (entries_.empty()) throw std::runtime_error("GradTape::backward on empty tape");
  if (loss.size() != 1) {
    throw std::invalid_argument("GradTape::backward requires a scalar loss, got shape " +
                                Tensor::shape_str(loss.shape()));
  }
  loss.grad()[0] += scalar(1);
  if (std::getenv("SKUNET_TAPE_PROFILE")) {
    std::map<std::string, double> totals;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      const auto t0 = std::chrono::steady_clock::now();
      it->fn();
      totals[it->op] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    for (const auto& [op, secs] : totals) {
      std::fprintf(stderr, "tape %-18s %8.2f ms\n", op.c_str(), secs * 1e3);
    }
  } else {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->fn();
  }
  consumed_ = true;
}

void GradTape::reset() {
  entries_.clear();
  consumed_ = false;
}

NoGradScope::NoGradScope() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = saved_; }

void backward(Tensor loss) {
  GradTape* t = GradTape::active();
  if (!t) throw std::runtime_error("backward: no active GradTape");
  t->backward(std::move(loss));
}

}  // namespace skunet
