#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <type_traits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ictd/tape.hpp"
#include "ictd/tensor.hpp"

namespace ictd {

enum class Reduction { mean, sum };

inline const char* to_string(Reduction r) { return r == Reduction::mean ? "mean" : "sum"; }

namespace detail {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapRM = Eigen::Map<MatRM<T>>;
template <class T>
using CMapRM = Eigen::Map<const MatRM<T>>;

template <class T, class... Ts>
bool needs_grad(const BasicTape<T>& tape, const Ts&... xs) {
  if (!tape.recording()) return false;
  return ((xs.defined() && xs.requires_grad()) || ...);
}

template <class T>
BasicTensor<T> make_output(Shape shape, std::vector<T> data, bool grad, const char* op) {
  check_finite<T>(data, op);
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = grad;
  impl->is_leaf = !grad;
  return BasicTensor<T>::from_impl(std::move(impl));
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw dimension_error(msg);
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

struct ConvGeom {
  std::size_t n, c, h, w;      // image being unfolded
  std::size_t kh, kw;
  std::size_t stride, pad;
  std::size_t oh, ow;          // number of kernel positions
  std::size_t rows() const { return c * kh * kw; }
  std::size_t cols() const { return n * oh * ow; }
};

// Unfold NCHW image patches into a (C*kh*kw) x (N*oh*ow) row-major matrix.
template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t P = g.cols();
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(g.h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* dst = cols + ((c * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* src = x + (n * g.c + c) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            T* row = dst + (n * g.oh + oy) * g.ow;
            if (iy < 0 || iy >= H) {
              std::fill(row, row + g.ow, T(0));
              continue;
            }
            const T* srow = src + iy * W;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              row[ox] = (ix < 0 || ix >= W) ? T(0) : srow[ix];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into an NCHW image.
template <class T>
void col2im(const T* cols, const ConvGeom& g, T* x) {
  const std::size_t P = g.cols();
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(g.h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* src = cols + ((c * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t n = 0; n < g.n; ++n) {
          T* dst = x + (n * g.c + c) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= H) continue;
            const T* row = src + (n * g.oh + oy) * g.ow;
            T* drow = dst + iy * W;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (ix >= 0 && ix < W) drow[ix] += row[ox];
            }
          }
        }
      }
    }
  }
}

// NCHW <-> C x (N*HW) channel-major layout used by the GEMM formulation.
template <class T>
void nchw_to_cm(const T* x, std::size_t n, std::size_t c, std::size_t hw, T* out) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(x + (i * c + ch) * hw, hw, out + ch * n * hw + i * hw);
}

template <class T>
void cm_to_nchw(const T* x, std::size_t n, std::size_t c, std::size_t hw, T* out) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(x + ch * n * hw + i * hw, hw, out + (i * c + ch) * hw);
}

template <class T>
void add_channel_bias(std::vector<T>& y, std::span<const T> bias, std::size_t n, std::size_t c,
                      std::size_t hw) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* p = y.data() + (i * c + ch) * hw;
      const T b = bias[ch];
      for (std::size_t k = 0; k < hw; ++k) p[k] += b;
    }
}

template <class T>
std::vector<T> channel_sums(std::span<const T> g, std::size_t n, std::size_t c, std::size_t hw) {
  std::vector<T> out(c, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* p = g.data() + (i * c + ch) * hw;
      T s = 0;
      for (std::size_t k = 0; k < hw; ++k) s += p[k];
      out[ch] += s;
    }
  return out;
}

template <class T>
void check_bias(const BasicTensor<T>& bias, std::size_t cout, const char* op) {
  if (!bias.defined()) return;
  require(bias.rank() == 1 && bias.dim(0) == cout,
          std::string(op) + ": bias shape " + shape_str(bias.shape()) + " expected (" +
              std::to_string(cout) + ")");
}

}  // namespace detail

/// 2-D convolution with zero padding. weight is (Cout, Cin, kH, kW); bias may
/// be an undefined tensor.
template <class T>
BasicTensor<T> conv2d(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, std::size_t stride, std::size_t padding) {
  using namespace detail;
  require(x.rank() == 4, "conv2d: input must be NCHW, got " + shape_str(x.shape()));
  require(weight.rank() == 4, "conv2d: weight must be (Cout,Cin,kH,kW)");
  require(stride > 0, "conv2d: stride must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t CO = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
  require(weight.dim(1) == C, "conv2d: input has " + std::to_string(C) +
                                  " channels but weight expects " + std::to_string(weight.dim(1)));
  require(KH <= H + 2 * padding && KW <= W + 2 * padding, "conv2d: kernel larger than padded input");
  check_bias(bias, CO, "conv2d");

  ConvGeom g{N, C, H, W, KH, KW, stride, padding, (H + 2 * padding - KH) / stride + 1,
             (W + 2 * padding - KW) / stride + 1};
  const std::size_t HW = g.oh * g.ow;
  std::vector<T> cols(g.rows() * g.cols());
  im2col(x.data().data(), g, cols.data());

  std::vector<T> ycm(CO * g.cols());
  {
    CMapRM<T> wm(weight.data().data(), CO, g.rows());
    CMapRM<T> cm(cols.data(), g.rows(), g.cols());
    MapRM<T> ym(ycm.data(), CO, g.cols());
    ym.noalias() = wm * cm;
  }
  std::vector<T> y(N * CO * HW);
  cm_to_nchw(ycm.data(), N, CO, HW, y.data());
  if (bias.defined()) add_channel_bias<T>(y, bias.data(), N, CO, HW);

  const bool grad = needs_grad(tape, x, weight, bias);
  auto out = make_output<T>({N, CO, g.oh, g.ow}, std::move(y), grad, "conv2d");
  if (grad) {
    tape.record(out, [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), g,
                      CO](std::span<const T> gy) {
      const std::size_t HW = g.oh * g.ow;
      std::vector<T> gcm(CO * g.cols());
      nchw_to_cm(gy.data(), g.n, CO, HW, gcm.data());
      CMapRM<T> gm(gcm.data(), CO, g.cols());
      if (bi && bi->requires_grad) {
        auto db = channel_sums<T>(gy, g.n, CO, HW);
        accumulate_grad<T>(*bi, db);
      }
      if (wi->requires_grad) {
        std::vector<T> cols(g.rows() * g.cols());
        im2col(xi->data.data(), g, cols.data());
        std::vector<T> dw(CO * g.rows());
        MapRM<T> dwm(dw.data(), CO, g.rows());
        CMapRM<T> cm(cols.data(), g.rows(), g.cols());
        dwm.noalias() = gm * cm.transpose();
        accumulate_grad<T>(*wi, dw);
      }
      if (xi->requires_grad) {
        std::vector<T> dcols(g.rows() * g.cols());
        MapRM<T> dcm(dcols.data(), g.rows(), g.cols());
        CMapRM<T> wm(wi->data.data(), CO, g.rows());
        dcm.noalias() = wm.transpose() * gm;
        std::vector<T> dx(xi->data.size(), T(0));
        col2im(dcols.data(), g, dx.data());
        accumulate_grad<T>(*xi, dx);
      }
    });
  }
  return out;
}

/// Transposed convolution (adjoint of conv2d w.r.t. its input). weight is
/// (Cin, Cout, kH, kW); output spatial size is (H-1)*stride - 2*padding + kH.
template <class T>
BasicTensor<T> conv_transpose2d(BasicTape<T>& tape, const BasicTensor<T>& x,
                                const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                                std::size_t stride, std::size_t padding) {
  using namespace detail;
  require(x.rank() == 4, "conv_transpose2d: input must be NCHW, got " + shape_str(x.shape()));
  require(weight.rank() == 4, "conv_transpose2d: weight must be (Cin,Cout,kH,kW)");
  require(stride > 0, "conv_transpose2d: stride must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t CO = weight.dim(1), KH = weight.dim(2), KW = weight.dim(3);
  require(weight.dim(0) == C, "conv_transpose2d: input has " + std::to_string(C) +
                                  " channels but weight expects " + std::to_string(weight.dim(0)));
  const std::ptrdiff_t oh = static_cast<std::ptrdiff_t>((H - 1) * stride + KH) -
                            static_cast<std::ptrdiff_t>(2 * padding);
  const std::ptrdiff_t ow = static_cast<std::ptrdiff_t>((W - 1) * stride + KW) -
                            static_cast<std::ptrdiff_t>(2 * padding);
  require(oh > 0 && ow > 0, "conv_transpose2d: non-positive output size");
  check_bias(bias, CO, "conv_transpose2d");

  // Geometry of the equivalent forward convolution on the output image.
  ConvGeom g{N, CO, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), KH, KW, stride,
             padding, H, W};
  const std::size_t HWin = H * W;
  const std::size_t HWout = g.h * g.w;

  std::vector<T> xcm(C * N * HWin);
  nchw_to_cm(x.data().data(), N, C, HWin, xcm.data());
  std::vector<T> cols(g.rows() * g.cols());
  {
    CMapRM<T> wm(weight.data().data(), C, g.rows());
    CMapRM<T> xm(xcm.data(), C, g.cols());
    MapRM<T> cm(cols.data(), g.rows(), g.cols());
    cm.noalias() = wm.transpose() * xm;
  }
  std::vector<T> y(N * CO * HWout, T(0));
  col2im(cols.data(), g, y.data());
  if (bias.defined()) add_channel_bias<T>(y, bias.data(), N, CO, HWout);

  const bool grad = needs_grad(tape, x, weight, bias);
  auto out = make_output<T>({N, CO, g.h, g.w}, std::move(y), grad, "conv_transpose2d");
  if (grad) {
    tape.record(out, [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), g, C,
                      HWin, HWout](std::span<const T> gy) {
      std::vector<T> gcols(g.rows() * g.cols());
      im2col(gy.data(), g, gcols.data());
      CMapRM<T> gc(gcols.data(), g.rows(), g.cols());
      if (bi && bi->requires_grad) {
        auto db = channel_sums<T>(gy, g.n, g.c, HWout);
        accumulate_grad<T>(*bi, db);
      }
      if (wi->requires_grad) {
        std::vector<T> xcm(C * g.cols());
        nchw_to_cm(xi->data.data(), g.n, C, HWin, xcm.data());
        CMapRM<T> xm(xcm.data(), C, g.cols());
        std::vector<T> dw(C * g.rows());
        MapRM<T> dwm(dw.data(), C, g.rows());
        dwm.noalias() = xm * gc.transpose();
        accumulate_grad<T>(*wi, dw);
      }
      if (xi->requires_grad) {
        std::vector<T> dxcm(C * g.cols());
        MapRM<T> dxm(dxcm.data(), C, g.cols());
        CMapRM<T> wm(wi->data.data(), C, g.rows());
        dxm.noalias() = wm * gc;
        std::vector<T> dx(xi->data.size());
        cm_to_nchw(dxcm.data(), g.n, C, HWin, dx.data());
        accumulate_grad<T>(*xi, dx);
      }
    });
  }
  return out;
}

/// Per-(sample, channel) normalisation over H*W with population variance.
template <class T>
BasicTensor<T> instance_norm(BasicTape<T>& tape, const BasicTensor<T>& x,
                             const BasicTensor<T>& gamma, const BasicTensor<T>& beta, T eps) {
  using namespace detail;
  require(x.rank() == 4, "instance_norm: input must be NCHW");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  require(HW >= 1, "instance_norm: empty spatial extent");
  require(gamma.rank() == 1 && gamma.dim(0) == C && beta.rank() == 1 && beta.dim(0) == C,
          "instance_norm: gamma/beta must have shape (" + std::to_string(C) + ")");

  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(N * C);
  std::vector<T> y(x.numel());
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* p = xd.data() + nc * HW;
    double mean = 0;
    for (std::size_t k = 0; k < HW; ++k) mean += p[k];
    mean /= static_cast<double>(HW);
    double var = 0;
    for (std::size_t k = 0; k < HW; ++k) {
      const double d = p[k] - mean;
      var += d * d;
    }
    var /= static_cast<double>(HW);
    const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    inv_std[nc] = is;
    const std::size_t c = nc % C;
    for (std::size_t k = 0; k < HW; ++k) {
      const T h = static_cast<T>(p[k] - mean) * is;
      xhat[nc * HW + k] = h;
      y[nc * HW + k] = gd[c] * h + bd[c];
    }
  }

  const bool grad = needs_grad(tape, x, gamma, beta);
  auto out = make_output<T>(x.shape(), std::move(y), grad, "instance_norm");
  if (grad) {
    tape.record(out, [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), xhat = std::move(xhat),
                      inv_std = std::move(inv_std), N, C, HW](std::span<const T> gy) {
      std::vector<T> dg(C, T(0)), db(C, T(0));
      std::vector<T> dx(xhat.size());
      const T m = static_cast<T>(HW);
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        const std::size_t c = nc % C;
        const T* g = gy.data() + nc * HW;
        const T* h = xhat.data() + nc * HW;
        T sum_g = 0, sum_gh = 0;
        for (std::size_t k = 0; k < HW; ++k) {
          sum_g += g[k];
          sum_gh += g[k] * h[k];
        }
        dg[c] += sum_gh;
        db[c] += sum_g;
        const T gam = gi->data[c];
        const T scale = gam * inv_std[nc] / m;
        for (std::size_t k = 0; k < HW; ++k) {
          dx[nc * HW + k] = scale * (m * g[k] - sum_g - h[k] * sum_gh);
        }
      }
      accumulate_grad<T>(*gi, dg);
      accumulate_grad<T>(*bi, db);
      accumulate_grad<T>(*xi, dx);
    });
  }
  return out;
}

namespace detail {

// Shared scaffolding for unary pointwise ops: f gives the value, df the
// derivative in terms of (input, output).
template <class T, class F, class DF>
BasicTensor<T> unary(BasicTape<T>& tape, const BasicTensor<T>& x, const char* name, F f, DF df) {
  const auto xd = x.data();
  std::vector<T> y(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) y[i] = f(xd[i]);
  const bool grad = needs_grad(tape, x);
  auto out = make_output<T>(x.shape(), std::move(y), grad, name);
  if (grad) {
    tape.record(out, [xi = x.impl(), oi = std::weak_ptr<TensorImpl<T>>(out.impl()),
                      df](std::span<const T> gy) {
      auto o = oi.lock();
      std::vector<T> dx(gy.size());
      for (std::size_t i = 0; i < gy.size(); ++i) dx[i] = gy[i] * df(xi->data[i], o->data[i]);
      accumulate_grad<T>(*xi, dx);
    });
  }
  return out;
}

}  // namespace detail

template <class T>
BasicTensor<T> relu(BasicTape<T>& tape, const BasicTensor<T>& x) {
  return detail::unary(
      tape, x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
BasicTensor<T> leaky_relu(BasicTape<T>& tape, const BasicTensor<T>& x, T slope) {
  return detail::unary(
      tape, x, "leaky_relu", [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

/// tanh whose output is kept strictly inside (-1, 1) even when the float
/// result would round to +-1.
template <class T>
BasicTensor<T> tanh(BasicTape<T>& tape, const BasicTensor<T>& x) {
  constexpr T lim = T(1) - std::numeric_limits<T>::epsilon();
  return detail::unary(
      tape, x, "tanh", [lim](T v) { return std::clamp(std::tanh(v), -lim, lim); },
      [](T, T y) { return T(1) - y * y; });
}

/// |x| with subgradient 0 at exactly 0.
template <class T>
BasicTensor<T> abs(BasicTape<T>& tape, const BasicTensor<T>& x) {
  return detail::unary(
      tape, x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
BasicTensor<T> scalar_mul(BasicTape<T>& tape, const BasicTensor<T>& x, T c) {
  return detail::unary(
      tape, x, "scalar_mul", [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <class T>
BasicTensor<T> add_scalar(BasicTape<T>& tape, const BasicTensor<T>& x, T c) {
  return detail::unary(
      tape, x, "add_scalar", [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <class T>
BasicTensor<T> square(BasicTape<T>& tape, const BasicTensor<T>& x) {
  return detail::unary(
      tape, x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

namespace detail {

template <class T, class F>
BasicTensor<T> binary(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b,
                      const char* name, F f, T da_sign, T db_sign, bool is_mul) {
  require_same_shape(a.shape(), b.shape(), name);
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<T> y(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) y[i] = f(ad[i], bd[i]);
  const bool grad = needs_grad(tape, a, b);
  auto out = make_output<T>(a.shape(), std::move(y), grad, name);
  if (grad) {
    tape.record(out, [ai = a.impl(), bi = b.impl(), da_sign, db_sign,
                      is_mul](std::span<const T> gy) {
      std::vector<T> d(gy.size());
      if (ai->requires_grad) {
        for (std::size_t i = 0; i < gy.size(); ++i)
          d[i] = is_mul ? gy[i] * bi->data[i] : da_sign * gy[i];
        accumulate_grad<T>(*ai, d);
      }
      if (bi->requires_grad) {
        for (std::size_t i = 0; i < gy.size(); ++i)
          d[i] = is_mul ? gy[i] * ai->data[i] : db_sign * gy[i];
        accumulate_grad<T>(*bi, d);
      }
    });
  }
  return out;
}

}  // namespace detail

template <class T>
BasicTensor<T> add(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary(
      tape, a, b, "add", [](T x, T y) { return x + y; }, T(1), T(1), false);
}

template <class T>
BasicTensor<T> sub(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary(
      tape, a, b, "sub", [](T x, T y) { return x - y; }, T(1), T(-1), false);
}

template <class T>
BasicTensor<T> mul(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary(
      tape, a, b, "mul", [](T x, T y) { return x * y; }, T(0), T(0), true);
}

/// Scalar reduction. Summation runs left to right in double precision.
template <class T>
BasicTensor<T> reduce(BasicTape<T>& tape, const BasicTensor<T>& x, Reduction kind) {
  if (x.numel() == 0) throw std::domain_error("reduce: empty tensor");
  double s = 0;
  for (const T v : x.data()) s += static_cast<double>(v);
  const std::size_t n = x.numel();
  const T value = kind == Reduction::sum ? static_cast<T>(s) : static_cast<T>(s / static_cast<double>(n));
  const bool grad = detail::needs_grad(tape, x);
  auto out = detail::make_output<T>({}, {value}, grad, "reduce");
  if (grad) {
    tape.record(out, [xi = x.impl(), kind, n](std::span<const T> gy) {
      const T g = kind == Reduction::sum ? gy[0] : gy[0] / static_cast<T>(n);
      std::vector<T> dx(n, g);
      detail::accumulate_grad<T>(*xi, dx);
    });
  }
  return out;
}

template <class T>
BasicTensor<T> sum(BasicTape<T>& tape, const BasicTensor<T>& x) {
  return reduce(tape, x, Reduction::sum);
}

template <class T>
BasicTensor<T> mean(BasicTape<T>& tape, const BasicTensor<T>& x) {
  return reduce(tape, x, Reduction::mean);
}

/// Same data viewed under a new shape of equal element count.
template <class T>
BasicTensor<T> reshape(BasicTape<T>& tape, const BasicTensor<T>& x, Shape shape) {
  detail::require(shape_numel(shape) == x.numel(),
                  "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<T> y(x.data().begin(), x.data().end());
  const bool grad = detail::needs_grad(tape, x);
  auto out = detail::make_output<T>(std::move(shape), std::move(y), grad, "reshape");
  if (grad) {
    tape.record(out, [xi = x.impl()](std::span<const T> gy) { detail::accumulate_grad<T>(*xi, gy); });
  }
  return out;
}

/// Concatenate two NCHW tensors along the channel axis.
template <class T>
BasicTensor<T> concat_channels(BasicTape<T>& tape, const BasicTensor<T>& a,
                               const BasicTensor<T>& b) {
  detail::require(a.rank() == 4 && b.rank() == 4 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) &&
                      a.dim(3) == b.dim(3),
                  "concat_channels: incompatible " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  const std::size_t N = a.dim(0), CA = a.dim(1), CB = b.dim(1), HW = a.dim(2) * a.dim(3);
  std::vector<T> y(N * (CA + CB) * HW);
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a.data().data() + n * CA * HW, CA * HW, y.data() + n * (CA + CB) * HW);
    std::copy_n(b.data().data() + n * CB * HW, CB * HW, y.data() + (n * (CA + CB) + CA) * HW);
  }
  const bool grad = detail::needs_grad(tape, a, b);
  auto out = detail::make_output<T>({N, CA + CB, a.dim(2), a.dim(3)}, std::move(y), grad,
                                    "concat_channels");
  if (grad) {
    tape.record(out, [ai = a.impl(), bi = b.impl(), N, CA, CB, HW](std::span<const T> gy) {
      if (ai->requires_grad) {
        std::vector<T> da(N * CA * HW);
        for (std::size_t n = 0; n < N; ++n)
          std::copy_n(gy.data() + n * (CA + CB) * HW, CA * HW, da.data() + n * CA * HW);
        detail::accumulate_grad<T>(*ai, da);
      }
      if (bi->requires_grad) {
        std::vector<T> db(N * CB * HW);
        for (std::size_t n = 0; n < N; ++n)
          std::copy_n(gy.data() + (n * (CA + CB) + CA) * HW, CB * HW, db.data() + n * CB * HW);
        detail::accumulate_grad<T>(*bi, db);
      }
    });
  }
  return out;
}

/// Global average pool: (N,C,H,W) -> (N,C).
template <class T>
BasicTensor<T> spatial_mean(BasicTape<T>& tape, const BasicTensor<T>& x) {
  detail::require(x.rank() == 4, "spatial_mean: input must be NCHW");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<T> y(N * C);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double s = 0;
    for (std::size_t k = 0; k < HW; ++k) s += x.data()[nc * HW + k];
    y[nc] = static_cast<T>(s / static_cast<double>(HW));
  }
  const bool grad = detail::needs_grad(tape, x);
  auto out = detail::make_output<T>({N, C}, std::move(y), grad, "spatial_mean");
  if (grad) {
    tape.record(out, [xi = x.impl(), N, C, HW](std::span<const T> gy) {
      std::vector<T> dx(N * C * HW);
      for (std::size_t nc = 0; nc < N * C; ++nc)
        std::fill_n(dx.data() + nc * HW, HW, gy[nc] / static_cast<T>(HW));
      detail::accumulate_grad<T>(*xi, dx);
    });
  }
  return out;
}

/// Affine map: x (N,in) * weight(out,in)^T + bias(out).
template <class T>
BasicTensor<T> linear(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  using namespace detail;
  require(x.rank() == 2 && weight.rank() == 2 && weight.dim(1) == x.dim(1),
          "linear: input " + shape_str(x.shape()) + " incompatible with weight " +
              shape_str(weight.shape()));
  const std::size_t N = x.dim(0), IN = x.dim(1), OUT = weight.dim(0);
  check_bias(bias, OUT, "linear");
  std::vector<T> y(N * OUT);
  {
    CMapRM<T> xm(x.data().data(), N, IN);
    CMapRM<T> wm(weight.data().data(), OUT, IN);
    MapRM<T> ym(y.data(), N, OUT);
    ym.noalias() = xm * wm.transpose();
  }
  if (bias.defined()) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < OUT; ++o) y[n * OUT + o] += bias.data()[o];
  }
  const bool grad = needs_grad(tape, x, weight, bias);
  auto out = make_output<T>({N, OUT}, std::move(y), grad, "linear");
  if (grad) {
    tape.record(out, [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), N, IN,
                      OUT](std::span<const T> gy) {
      CMapRM<T> gm(gy.data(), N, OUT);
      if (bi && bi->requires_grad) {
        std::vector<T> db(OUT, T(0));
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t o = 0; o < OUT; ++o) db[o] += gy[n * OUT + o];
        accumulate_grad<T>(*bi, db);
      }
      if (wi->requires_grad) {
        std::vector<T> dw(OUT * IN);
        MapRM<T> dwm(dw.data(), OUT, IN);
        dwm.noalias() = gm.transpose() * CMapRM<T>(xi->data.data(), N, IN);
        accumulate_grad<T>(*wi, dw);
      }
      if (xi->requires_grad) {
        std::vector<T> dx(N * IN);
        MapRM<T> dxm(dx.data(), N, IN);
        dxm.noalias() = gm * CMapRM<T>(wi->data.data(), OUT, IN);
        accumulate_grad<T>(*xi, dx);
      }
    });
  }
  return out;
}

/// Row-wise softmax of an (N,K) matrix, computed stably. Not differentiable;
/// used for reporting probabilities.
template <class T>
std::vector<T> softmax_rows(std::span<const T> logits, std::size_t n, std::size_t k) {
  std::vector<T> p(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.data() + i * k;
    const T mx = *std::max_element(z, z + k);
    double s = 0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(z[j] - mx));
    for (std::size_t j = 0; j < k; ++j)
      p[i * k + j] = static_cast<T>(std::exp(static_cast<double>(z[j] - mx)) / s);
  }
  return p;
}

/// Softmax cross-entropy over (N,K) logits. With sample weights w the result
/// is sum(w_i * CE_i) / sum(w_i); an empty weight span means all ones.
template <class T>
BasicTensor<T> softmax_cross_entropy(BasicTape<T>& tape, const BasicTensor<T>& logits,
                                     std::span<const int> labels,
                                     std::type_identity_t<std::span<const T>> sample_weights = {}) {
  using namespace detail;
  require(logits.rank() == 2, "softmax_cross_entropy: logits must be (N,K)");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  require(labels.size() == N, "softmax_cross_entropy: label count mismatch");
  require(sample_weights.empty() || sample_weights.size() == N,
          "softmax_cross_entropy: weight count mismatch");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= K)
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(l) +
                              " out of range for K=" + std::to_string(K));
  }
  auto p = softmax_rows<T>(logits.data(), N, K);
  double total = 0, wsum = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const T* z = logits.data().data() + i * K;
    const double mx = *std::max_element(z, z + K);
    double s = 0;
    for (std::size_t j = 0; j < K; ++j) s += std::exp(static_cast<double>(z[j]) - mx);
    const double ce = -(static_cast<double>(z[labels[i]]) - mx - std::log(s));
    const double w = sample_weights.empty() ? 1.0 : static_cast<double>(sample_weights[i]);
    total += w * ce;
    wsum += w;
  }
  if (!(wsum > 0)) throw std::domain_error("softmax_cross_entropy: weights sum to zero");
  const bool grad = needs_grad(tape, logits);
  auto out = make_output<T>({}, {static_cast<T>(total / wsum)}, grad, "softmax_cross_entropy");
  if (grad) {
    std::vector<int> lab(labels.begin(), labels.end());
    std::vector<T> w(sample_weights.begin(), sample_weights.end());
    tape.record(out, [li = logits.impl(), p = std::move(p), lab = std::move(lab), w = std::move(w),
                      wsum, N, K](std::span<const T> gy) {
      std::vector<T> d(N * K);
      for (std::size_t i = 0; i < N; ++i) {
        const T wi = w.empty() ? T(1) : w[i];
        const T scale = gy[0] * wi / static_cast<T>(wsum);
        for (std::size_t j = 0; j < K; ++j) {
          const T t = static_cast<int>(j) == lab[i] ? T(1) : T(0);
          d[i * K + j] = scale * (p[i * K + j] - t);
        }
      }
      accumulate_grad<T>(*li, d);
    });
  }
  return out;
}

/// Elementwise product with a constant mask; used for dropout.
template <class T>
BasicTensor<T> mul_constant(BasicTape<T>& tape, const BasicTensor<T>& x,
                            std::type_identity_t<std::span<const T>> mask) {
  detail::require(mask.size() == x.numel(), "mul_constant: mask size mismatch");
  std::vector<T> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.data()[i] * mask[i];
  const bool grad = detail::needs_grad(tape, x);
  auto out = detail::make_output<T>(x.shape(), std::move(y), grad, "mul_constant");
  if (grad) {
    tape.record(out, [xi = x.impl(), m = std::vector<T>(mask.begin(), mask.end())](
                         std::span<const T> gy) {
      std::vector<T> dx(gy.size());
      for (std::size_t i = 0; i < gy.size(); ++i) dx[i] = gy[i] * m[i];
      detail::accumulate_grad<T>(*xi, dx);
    });
  }
  return out;
}

}  // namespace ictd
