#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ictd/tensor.hpp"

namespace ictd {

struct AdamHyper {
  double alpha = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  AdamHyper hyper;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t t = 0;

  AdamState() = default;
  explicit AdamState(AdamHyper h) : hyper(h) {}
};

/// One Adam update over params using their accumulated gradients. A param
/// without a gradient buffer is treated as having a zero gradient.
template <class T>
void adam_step(std::span<BasicTensor<T>> params, AdamState<T>& st) {
  if (st.m.empty()) {
    st.m.resize(params.size());
    st.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      st.m[i].assign(params[i].numel(), T(0));
      st.v[i].assign(params[i].numel(), T(0));
    }
  }
  if (st.m.size() != params.size()) throw dimension_error("adam_step: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (st.m[i].size() != params[i].numel() ||
        (params[i].has_grad() && params[i].grad().size() != params[i].numel())) {
      throw dimension_error("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
  }

  st.t += 1;
  const double b1 = st.hyper.beta1, b2 = st.hyper.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  const T alpha = static_cast<T>(st.hyper.alpha);
  const T eps = static_cast<T>(st.hyper.epsilon);
  const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
  const T ib1 = static_cast<T>(1.0 / bc1), ib2 = static_cast<T>(1.0 / bc2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto g = params[i].grad();
    auto& m = st.m[i];
    auto& v = st.v[i];
    const bool zero = g.empty();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const T gk = zero ? T(0) : g[k];
      m[k] = tb1 * m[k] + (T(1) - tb1) * gk;
      v[k] = tb2 * v[k] + (T(1) - tb2) * gk * gk;
      const T mh = m[k] * ib1;
      const T vh = v[k] * ib2;
      p[k] -= alpha * mh / (std::sqrt(vh) + eps);
    }
  }
}

template <class T>
void adam_step(std::vector<BasicTensor<T>>& params, AdamState<T>& st) {
  adam_step(std::span<BasicTensor<T>>(params), st);
}

}  // namespace ictd
