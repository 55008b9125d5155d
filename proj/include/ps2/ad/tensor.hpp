#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ps2/common/error.hpp"

namespace ps2::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient flows in
  bool requires_grad = false;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Dense row-major tensor. Copies are shallow handles onto the same node, the
// way parameters are shared between a store and the layers that use them.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value) { return Tensor(Shape{}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }

  T item() const;
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  // Copy of the data with no gradient history.
  Tensor detached() const { return Tensor(shape(), node_->value, false); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Records backward closures for operations executed while it is active on
// this thread. Tapes nest; destruction restores the previous one.
template <typename T>
class Tape {
 public:
  Tape() : previous_(active_) { active_ = this; }
  ~Tape() { active_ = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::shared_ptr<Node<T>> out, std::function<void()> backward) {
    entries_.push_back({std::move(out), std::move(backward)});
  }

  // Zeroes every intermediate gradient on this tape, seeds d(loss) = 1 and
  // runs the closures in reverse order. Leaf gradients accumulate.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::shared_ptr<Node<T>> out;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
  Tape* previous_;
  inline static thread_local Tape* active_ = nullptr;
  friend class NoGradScope;
};

// Suspends recording for both element types (inference, optimizer updates).
class NoGradScope {
 public:
  NoGradScope()
      : saved_f_(Tape<float>::active_), saved_d_(Tape<double>::active_) {
    Tape<float>::active_ = nullptr;
    Tape<double>::active_ = nullptr;
  }
  ~NoGradScope() {
    Tape<float>::active_ = saved_f_;
    Tape<double>::active_ = saved_d_;
  }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<float>* saved_f_;
  Tape<double>* saved_d_;
};

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) fail(ErrorKind::kUsage, "backward needs a scalar loss");
  Tape* saved = active_;
  active_ = nullptr;
  for (auto& e : entries_) {
    if (!e.out->grad.empty()) std::fill(e.out->grad.begin(), e.out->grad.end(), T(0));
  }
  loss.node()->ensure_grad()[0] = T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->out->grad.empty()) it->backward();
  }
  active_ = saved;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  if (values.size() != ad::numel(shape)) {
    fail(ErrorKind::kUsage, "tensor values (" + std::to_string(values.size()) +
                                ") do not match shape " + ad::to_string(shape));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) fail(ErrorKind::kUsage, "item() on non-scalar " + ad::to_string(shape()));
  return node_->value[0];
}

}  // namespace ps2::ad
