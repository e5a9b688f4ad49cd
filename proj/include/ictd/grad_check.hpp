#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ictd/tape.hpp"
#include "ictd/tensor.hpp"

namespace ictd {

template <class T>
using ScalarFn = std::function<BasicTensor<T>(BasicTape<T>&, const std::vector<BasicTensor<T>>&)>;

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Returns the maximum over all input coordinates of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <class T>
double grad_check(const ScalarFn<T>& f, const std::vector<BasicTensor<T>>& inputs, double eps) {
  std::vector<BasicTensor<T>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& x : inputs) leaves.push_back(BasicTensor<T>(x.shape(), {x.data().begin(), x.data().end()}, true));

  {
    BasicTape<T> tape;
    auto loss = f(tape, leaves);
    backward(loss, tape);
  }

  auto eval = [&](const std::vector<BasicTensor<T>>& xs) {
    auto tape = BasicTape<T>::inference();
    return static_cast<double>(f(tape, xs).item());
  };

  double worst = 0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    std::vector<BasicTensor<T>> probe;
    for (const auto& l : leaves) probe.push_back(l.detach());
    auto data = probe[i].mutable_data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const T orig = data[k];
      data[k] = static_cast<T>(orig + eps);
      const double fp = eval(probe);
      data[k] = static_cast<T>(orig - eps);
      const double fm = eval(probe);
      data[k] = orig;
      const double numeric = (fp - fm) / (2 * eps);
      const double analytic = leaves[i].has_grad() ? static_cast<double>(leaves[i].grad()[k]) : 0.0;
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

/// Checks the single-precision backward pass: analytic gradients come from
/// f32 evaluated in float, the central-difference reference from f64 (the
/// same function) evaluated in double. Same error measure as grad_check.
inline double grad_check_mixed(const ScalarFn<float>& f32, const ScalarFn<double>& f64,
                               const std::vector<Tensor64>& inputs, double eps) {
  std::vector<Tensor> leaves;
  for (const auto& x : inputs) {
    leaves.emplace_back(x.shape(), std::vector<float>(x.data().begin(), x.data().end()), true);
  }
  {
    Tape tape;
    auto loss = f32(tape, leaves);
    backward(loss, tape);
  }
  auto eval = [&](const std::vector<Tensor64>& xs) {
    auto tape = Tape64::inference();
    return f64(tape, xs).item();
  };
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<Tensor64> probe;
    for (const auto& x : inputs) probe.push_back(x.clone());
    auto data = probe[i].mutable_data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double orig = data[k];
      data[k] = orig + eps;
      const double fp = eval(probe);
      data[k] = orig - eps;
      const double fm = eval(probe);
      data[k] = orig;
      const double numeric = (fp - fm) / (2 * eps);
      const double analytic = leaves[i].has_grad() ? static_cast<double>(leaves[i].grad()[k]) : 0.0;
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace ictd
