#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tdl/common.hpp"

namespace tdl {

// Dense row-major tensor storage. Gradients live next to the data; the grad
// buffer is allocated lazily and, when present, always matches the data size.
template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (numel_of(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError(strcat_msg("tensor: shape ", shape_str(shape), " needs ",
                                  numel_of(shape), " elements, got ", data.size()));
    impl_ = std::make_shared<TensorImpl<T>>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    std::vector<T> d(static_cast<size_t>(numel_of(shape)), value);
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }
  // Rank-0 scalar.
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t rank() const { return static_cast<int64_t>(impl_->shape.size()); }
  int64_t dim(int64_t axis) const { return impl_->shape[static_cast<size_t>(axis)]; }
  int64_t numel() const { return impl_->numel(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad() {
    if (!impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  }

  T item() const {
    if (numel() != 1)
      throw ShapeError(strcat_msg("item: tensor ", shape_str(shape()), " is not scalar"));
    return impl_->data[0];
  }

  T at(std::initializer_list<int64_t> idx) const {
    const auto st = strides_of(impl_->shape);
    int64_t flat = 0;
    size_t k = 0;
    for (int64_t i : idx) flat += i * st[k++];
    return impl_->data[static_cast<size_t>(flat)];
  }

  template <typename U>
  Tensor<U> astype() const {
    std::vector<U> d(impl_->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<U>(impl_->data[i]);
    return Tensor<U>(impl_->shape, std::move(d), false);
  }

  // Deep copy of values (no tape linkage).
  Tensor clone_detached() const {
    return Tensor(impl_->shape, impl_->data, false);
  }

  const ImplPtr<T>& impl() const { return impl_; }

 private:
  ImplPtr<T> impl_;
};

// One recorded operation: inputs, output and the rule that folds the output
// gradient back into the input gradients.
template <typename T>
struct TapeNode {
  const char* op;
  std::vector<ImplPtr<T>> inputs;
  ImplPtr<T> output;
  std::function<void()> backward;
};

// Reverse-mode tape. Constructing one makes it the active tape for the
// current thread (ops record onto it); it is rebuilt per forward pass.
// Records are appended in execution order, which is a topological order of
// the computation graph, so walking them once in reverse propagates
// gradients with each node visited exactly once.
template <typename T>
class Tape {
 public:
  Tape() { stack().push_back(this); }
  ~Tape() { stack().pop_back(); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return stack().empty() ? nullptr : stack().back(); }

  void record(const char* op, std::vector<ImplPtr<T>> inputs, ImplPtr<T> output,
              std::function<void()> backward) {
    nodes_.push_back(TapeNode<T>{op, std::move(inputs), std::move(output),
                                 std::move(backward)});
  }

  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw ShapeError(strcat_msg("backward: loss must be scalar, got ",
                                  shape_str(loss.shape())));
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->output->grad.empty()) continue;  // not on a path to the loss
      it->backward();
    }
  }

  size_t size() const { return nodes_.size(); }
  const std::vector<TapeNode<T>>& nodes() const { return nodes_; }

 private:
  static std::vector<Tape*>& stack() {
    thread_local std::vector<Tape*> s;
    return s;
  }
  std::vector<TapeNode<T>> nodes_;
};

namespace debug {
// Test hook: when set, matmul's backward rule is deliberately corrupted so
// verification suites can prove they detect a broken gradient.
inline bool corrupt_matmul_backward = false;
}  // namespace debug

}  // namespace tdl
