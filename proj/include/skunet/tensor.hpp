#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace skunet {

#ifdef SKUNET_SCALAR_F64
using scalar = double;  // widened mode, used to tighten gradient-check tolerances
#else
using scalar = float;
#endif

// Dense row-major tensor. Activations use [batch, channel, height, width].
// A Tensor is a shared handle: copies alias the same buffer. The gradient
// buffer has the same shape and is allocated on first accumulation.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, scalar value, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<scalar> data,
                          bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }

  const std::vector<int>& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  size_t size() const { return node_->data.size(); }

  scalar* data() { return node_->data.data(); }
  const scalar* data() const { return node_->data.data(); }
  std::vector<scalar>& values() { return node_->data; }
  const std::vector<scalar>& values() const { return node_->data; }

  scalar& operator[](size_t i) { return node_->data[i]; }
  scalar operator[](size_t i) const { return node_->data[i]; }

  // 4-D convenience accessor for [N,C,H,W] tensors.
  scalar& at(int n, int c, int y, int x) {
    const auto& s = node_->shape;
    return node_->data[((static_cast<size_t>(n) * s[1] + c) * s[2] + y) * s[3] + x];
  }
  scalar at(int n, int c, int y, int x) const {
    const auto& s = node_->shape;
    return node_->data[((static_cast<size_t>(n) * s[1] + c) * s[2] + y) * s[3] + x];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Grad buffer, zero-initialized on first access. Same shape as data.
  std::vector<scalar>& grad();
  const std::vector<scalar>& grad() const { return node_->grad; }
  void zero_grad();

  // Deep copy of values (gradient buffer not copied).
  Tensor clone(bool requires_grad = false) const;

  // Throws if any value is non-finite; `op` names the producing operation.
  void ensure_finite(const char* op) const;

  bool same_shape(const Tensor& other) const { return node_->shape == other.node_->shape; }
  bool aliases(const Tensor& other) const { return node_ == other.node_; }

  static size_t shape_numel(const std::vector<int>& shape);
  static std::string shape_str(const std::vector<int>& shape);

 private:
  struct Node {
    std::vector<int> shape;
    std::vector<scalar> data;
    std::vector<scalar> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;
};

// Ordered record of executed operations. Constructing a GradTape makes it the
// active tape for the current thread; ops involving grad-tracked tensors append
// a backward closure. Replaying in reverse visits each recorded node once and
// accumulates (sums) into grads. Single-owner: do not share across threads.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();

  void record(const char* op, std::function<void()> backward_fn);

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. `loss` must be
  // scalar ([1]) and the tape nonempty. Calling twice without reset() throws.
  void backward(Tensor loss);

  void reset();
  size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Entry {
    const char* op;
    std::function<void()> fn;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
  GradTape* prev_ = nullptr;
};

// Temporarily disables recording (used by finite-difference probes).
struct NoGradScope {
  NoGradScope();
  ~NoGradScope();

 private:
  GradTape* saved_;
};

// Free-function form: runs backward on the active tape.
void backward(Tensor loss);

}  // namespace skunet
