#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ictd {

using Shape = std::vector<std::size_t>;

// Shape/channel incompatibility between operands.
class dimension_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. backward() on a non-scalar.
class contract_error : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A forward op produced NaN/Inf from finite inputs.
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first gradient contribution
  bool requires_grad = false;
  bool is_leaf = true;
};

/// Dense row-major tensor handle.
///
/// Copies share storage (like a reference-counted array); use clone() for a
/// deep copy. Data is treated as immutable once an op has consumed it; only
/// the gradient buffer is mutated by backward passes.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl<T>>()) {
    if (shape_numel(shape) != data.size()) {
      throw dimension_error("tensor data size " + std::to_string(data.size()) +
                            " does not match shape " + shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return BasicTensor(Shape{}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(impl_); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  // Mutable access for initialisers, optimisers and tests. Ops never call it
  // on their inputs.
  std::span<T> mutable_data() { return impl_->data; }

  T item() const {
    if (numel() != 1) throw contract_error("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool is_leaf() const { return impl_->is_leaf; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  BasicTensor clone() const {
    BasicTensor out(impl_->shape, impl_->data, impl_->requires_grad);
    return out;
  }

  // Same values, new leaf that is cut from any graph.
  BasicTensor detach() const { return BasicTensor(impl_->shape, impl_->data, false); }

  BasicTensor reshaped_copy(Shape s) const { return BasicTensor(std::move(s), impl_->data); }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
  bool same_storage(const BasicTensor& o) const { return impl_ == o.impl_; }

  // Internal: used by ops to build outputs.
  static BasicTensor from_impl(std::shared_ptr<TensorImpl<T>> p) {
    BasicTensor t;
    t.impl_ = std::move(p);
    return t;
  }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

namespace detail {

template <class T>
void accumulate_grad(TensorImpl<T>& t, std::span<const T> g) {
  if (!t.requires_grad) return;
  if (t.grad.empty()) {
    t.grad.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) t.grad[i] += g[i];
}

template <class T>
void check_finite(std::span<const T> v, const char* op) {
  for (const T x : v) {
    if (!std::isfinite(x)) {
      throw numeric_error(std::string("non-finite value produced by ") + op);
    }
  }
}

}  // namespace detail

}  // namespace ictd
