#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "ictd/tensor.hpp"

namespace ictd {

/// Records differentiable operations in execution order.
///
/// Every op that consumes at least one grad-requiring input appends one
/// entry, so an entry's inputs always precede it. A tape built with
/// recording disabled (inference) never stores anything.
template <class T>
class BasicTape {
 public:
  using BackwardFn = std::function<void(std::span<const T> out_grad)>;

  explicit BasicTape(bool recording = true) : recording_(recording) {}

  static BasicTape inference() { return BasicTape(false); }

  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;
  BasicTape(BasicTape&&) = default;
  BasicTape& operator=(BasicTape&&) = default;

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }

  void record(const BasicTensor<T>& out, BackwardFn fn) {
    entries_.push_back({out.impl(), std::move(fn)});
  }

  bool contains(const BasicTensor<T>& t) const {
    for (const auto& e : entries_) {
      if (e.output == t.impl()) return true;
    }
    return false;
  }

  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::shared_ptr<TensorImpl<T>> output;
    BackwardFn backward;
  };

  template <class U>
  friend void backward(const BasicTensor<U>& loss, BasicTape<U>& tape);

  std::vector<Entry> entries_;
  bool recording_ = true;
};

using Tape = BasicTape<float>;
using Tape64 = BasicTape<double>;

/// Reverse pass from a scalar loss. Leaf gradients accumulate across calls;
/// intermediate gradients are reset at the start of each pass.
template <class T>
void backward(const BasicTensor<T>& loss, BasicTape<T>& tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw contract_error("backward() requires a scalar loss");
  }
  std::size_t last = tape.entries_.size();
  while (last > 0 && tape.entries_[last - 1].output != loss.impl()) --last;
  if (last == 0) throw contract_error("backward(): loss was not recorded on this tape");

  for (std::size_t i = 0; i < last; ++i) tape.entries_[i].output->grad.clear();
  loss.impl()->grad.assign(1, T(1));

  for (std::size_t i = last; i-- > 0;) {
    auto& e = tape.entries_[i];
    if (e.output->grad.empty()) continue;
    e.backward(e.output->grad);
  }
}

}  // namespace ictd
