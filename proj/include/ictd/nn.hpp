#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ictd/ops.hpp"
#include "ictd/rng.hpp"
#include "ictd/tensor.hpp"

namespace ictd {

/// Ordered, named collection of trainable tensors. Order is registration
/// order and defines the checkpoint layout.
template <class T>
class ParameterSet {
 public:
  BasicTensor<T> add(std::string name, BasicTensor<T> t) {
    t.set_requires_grad(true);
    names_.push_back(std::move(name));
    tensors_.push_back(t);
    return t;
  }

  std::size_t size() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<BasicTensor<T>>& tensors() { return tensors_; }
  const std::vector<BasicTensor<T>>& tensors() const { return tensors_; }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

  // Disabling gradients lets a frozen network pass gradients through to its
  // input without paying for weight gradients.
  void set_requires_grad(bool on) {
    for (auto& t : tensors_) t.set_requires_grad(on);
  }

 private:
  std::vector<std::string> names_;
  std::vector<BasicTensor<T>> tensors_;
};

template <class T>
BasicTensor<T> normal_init(Shape shape, Rng& rng, double stddev) {
  auto t = BasicTensor<T>::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

inline constexpr double kInitStd = 0.02;

template <class T>
struct Conv2dLayer {
  BasicTensor<T> weight, bias;
  std::size_t stride = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(ParameterSet<T>& ps, const std::string& name, std::size_t cin, std::size_t cout,
              std::size_t k, std::size_t stride_, std::size_t pad_, Rng& rng)
      : stride(stride_), pad(pad_) {
    weight = ps.add(name + ".weight", normal_init<T>({cout, cin, k, k}, rng, kInitStd));
    bias = ps.add(name + ".bias", BasicTensor<T>::zeros({cout}));
  }

  BasicTensor<T> operator()(BasicTape<T>& tape, const BasicTensor<T>& x) const {
    return conv2d(tape, x, weight, bias, stride, pad);
  }
};

template <class T>
struct ConvTranspose2dLayer {
  BasicTensor<T> weight, bias;
  std::size_t stride = 1, pad = 0;

  ConvTranspose2dLayer() = default;
  ConvTranspose2dLayer(ParameterSet<T>& ps, const std::string& name, std::size_t cin,
                       std::size_t cout, std::size_t k, std::size_t stride_, std::size_t pad_,
                       Rng& rng)
      : stride(stride_), pad(pad_) {
    weight = ps.add(name + ".weight", normal_init<T>({cin, cout, k, k}, rng, kInitStd));
    bias = ps.add(name + ".bias", BasicTensor<T>::zeros({cout}));
  }

  BasicTensor<T> operator()(BasicTape<T>& tape, const BasicTensor<T>& x) const {
    return conv_transpose2d(tape, x, weight, bias, stride, pad);
  }
};

template <class T>
struct InstanceNormLayer {
  BasicTensor<T> gamma, beta;
  T eps = T(1e-5);

  InstanceNormLayer() = default;
  InstanceNormLayer(ParameterSet<T>& ps, const std::string& name, std::size_t channels) {
    gamma = ps.add(name + ".gamma", BasicTensor<T>::full({channels}, T(1)));
    beta = ps.add(name + ".beta", BasicTensor<T>::zeros({channels}));
  }

  BasicTensor<T> operator()(BasicTape<T>& tape, const BasicTensor<T>& x) const {
    return instance_norm(tape, x, gamma, beta, eps);
  }
};

template <class T>
struct LinearLayer {
  BasicTensor<T> weight, bias;

  LinearLayer() = default;
  LinearLayer(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out,
              Rng& rng, double stddev)
      : weight(ps.add(name + ".weight", normal_init<T>({out, in}, rng, stddev))),
        bias(ps.add(name + ".bias", BasicTensor<T>::zeros({out}))) {}

  BasicTensor<T> operator()(BasicTape<T>& tape, const BasicTensor<T>& x) const {
    return linear(tape, x, weight, bias);
  }
};

/// Inverted dropout: zeroes each element with probability rate and scales
/// survivors by 1/(1-rate). Identity when !training or rate == 0.
template <class T>
BasicTensor<T> dropout(BasicTape<T>& tape, const BasicTensor<T>& x, double rate, bool training,
                       Rng* rng) {
  if (!training || rate <= 0.0) return x;
  if (rng == nullptr) throw contract_error("dropout: training mode requires an rng");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng->bernoulli(rate) ? T(0) : keep_scale;
  return mul_constant(tape, x, std::span<const T>(mask));
}

}  // namespace ictd
