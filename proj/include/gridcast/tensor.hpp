// Dense rank-4 tensors (batch, channel, height, width) with the forward and
// backward kernels the recurrent cells and attention are composed from.
// Storage is row-major with the width index minor. Everything is scalar-type
// templated: float is the runtime type, double backs the tight-tolerance
// gradient checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "gridcast/common.hpp"

namespace gridcast {

template <typename T>
struct Tensor4 {
  int b = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int b_, int c_, int h_, int w_)
      : b(b_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(b_) * c_ * h_ * w_, T(0)) {
    detail::require(b_ >= 0 && c_ >= 0 && h_ >= 0 && w_ >= 0,
                    "Tensor4: negative dimension");
  }

  static Tensor4 full(int b, int c, int h, int w, T v) {
    Tensor4 t(b, c, h, w);
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor4 uniform(int b, int c, int h, int w, SeededRng& rng,
                         double lo = -1.0, double hi = 1.0) {
    Tensor4 t(b, c, h, w);
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  std::size_t size() const { return data.size(); }

  std::size_t index(int bi, int ci, int hi, int wi) const {
    return ((static_cast<std::size_t>(bi) * c + ci) * h + hi) * w + wi;
  }

  T& at(int bi, int ci, int hi, int wi) { return data[index(bi, ci, hi, wi)]; }
  T at(int bi, int ci, int hi, int wi) const { return data[index(bi, ci, hi, wi)]; }

  T* plane(int bi, int ci) { return data.data() + (static_cast<std::size_t>(bi) * c + ci) * h * w; }
  const T* plane(int bi, int ci) const {
    return data.data() + (static_cast<std::size_t>(bi) * c + ci) * h * w;
  }

  bool same_shape(const Tensor4& o) const {
    return b == o.b && c == o.c && h == o.h && w == o.w;
  }

  bool finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    return detail::cat("(", b, ",", c, ",", h, ",", w, ")");
  }
};

// Convolution weights in (out_channel, in_channel, kh, kw) order plus an
// optional per-output-channel bias (empty vector = no bias term).
template <typename T>
struct ConvKernel {
  int oc = 0, ic = 0, kh = 0, kw = 0;
  std::vector<T> data;
  std::vector<T> bias;

  ConvKernel() = default;
  ConvKernel(int oc_, int ic_, int kh_, int kw_, bool with_bias = true)
      : oc(oc_), ic(ic_), kh(kh_), kw(kw_),
        data(static_cast<std::size_t>(oc_) * ic_ * kh_ * kw_, T(0)),
        bias(with_bias ? static_cast<std::size_t>(oc_) : 0, T(0)) {}

  std::size_t index(int o, int i, int y, int x) const {
    return ((static_cast<std::size_t>(o) * ic + i) * kh + y) * kw + x;
  }
  T& at(int o, int i, int y, int x) { return data[index(o, i, y, x)]; }
  T at(int o, int i, int y, int x) const { return data[index(o, i, y, x)]; }

  // Fan-in scaled uniform init, k = 1/sqrt(ic*kh*kw).
  static ConvKernel init(int oc, int ic, int kh, int kw, SeededRng& rng,
                         bool with_bias = true) {
    ConvKernel k(oc, ic, kh, kw, with_bias);
    double bound = 1.0 / std::sqrt(static_cast<double>(ic) * kh * kw);
    for (auto& v : k.data) v = static_cast<T>(rng.uniform(-bound, bound));
    for (auto& v : k.bias) v = static_cast<T>(rng.uniform(-bound, bound));
    return k;
  }

  std::string shape_str() const {
    return detail::cat("(", oc, ",", ic, ",", kh, ",", kw, ")");
  }
};

// Small dense matrix, row-major; used for the attention score weights and
// the vector-form LSTM reference cell.
template <typename T>
struct Mat {
  int rows = 0, cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, T(0)) {}

  static Mat uniform(int r, int c, SeededRng& rng, double lo, double hi) {
    Mat m(r, c);
    for (auto& v : m.data) v = static_cast<T>(rng.uniform(lo, hi));
    return m;
  }

  T& at(int r, int c_) { return data[static_cast<std::size_t>(r) * cols + c_]; }
  T at(int r, int c_) const { return data[static_cast<std::size_t>(r) * cols + c_]; }
  const T* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  T* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
};

template <typename T>
std::vector<T> matvec(const Mat<T>& m, const std::vector<T>& v) {
  detail::require(static_cast<std::size_t>(m.cols) == v.size(),
                  detail::cat("matvec: dim mismatch ", m.cols, " vs ", v.size()));
  std::vector<T> out(m.rows, T(0));
  for (int r = 0; r < m.rows; ++r) {
    T acc = T(0);
    const T* mr = m.row(r);
    for (int c = 0; c < m.cols; ++c) acc += mr[c] * v[c];
    out[r] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution, "same" spatial size via zero padding of (k-1)/2 per side.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_conv_shapes(const Tensor4<T>& x, const ConvKernel<T>& k) {
  require(k.kh % 2 == 1 && k.kw % 2 == 1,
          cat("conv2d: kernel dims must be odd, got ", k.shape_str()));
  require(x.c == k.ic, cat("conv2d: input channels ", x.shape_str(),
                           " do not match kernel ", k.shape_str()));
}

}  // namespace detail

// out += conv(x, k)  (bias not applied here; see conv2d below)
// Width-3 kernels take a fused row sweep (all three column taps per pass);
// other widths fall back to the generic tap-by-tap loop.
template <typename T>
void conv2d_acc(const Tensor4<T>& x, const ConvKernel<T>& k, Tensor4<T>& out) {
  detail::check_conv_shapes(x, k);
  detail::require(out.b == x.b && out.c == k.oc && out.h == x.h && out.w == x.w,
                  detail::cat("conv2d_acc: bad output shape ", out.shape_str()));
  const int H = x.h, W = x.w, ph = k.kh / 2, pw = k.kw / 2;
  const bool fast3 = (k.kw == 3 && W >= 2);
  for (int bi = 0; bi < x.b; ++bi) {
    for (int co = 0; co < k.oc; ++co) {
      T* op = out.plane(bi, co);
      for (int ci = 0; ci < x.c; ++ci) {
        const T* xp = x.plane(bi, ci);
        for (int kh = 0; kh < k.kh; ++kh) {
          const int dh = kh - ph;
          const int h0 = dh < 0 ? -dh : 0;
          const int h1 = dh > 0 ? H - dh : H;
          if (fast3) {
            const T k0 = k.at(co, ci, kh, 0);
            const T k1 = k.at(co, ci, kh, 1);
            const T k2 = k.at(co, ci, kh, 2);
            for (int hi = h0; hi < h1; ++hi) {
              const T* xr = xp + (hi + dh) * W;
              T* orow = op + hi * W;
              orow[0] += k1 * xr[0] + k2 * xr[1];
              for (int wi = 1; wi < W - 1; ++wi)
                orow[wi] += k0 * xr[wi - 1] + k1 * xr[wi] + k2 * xr[wi + 1];
              orow[W - 1] += k0 * xr[W - 2] + k1 * xr[W - 1];
            }
            continue;
          }
          for (int kw = 0; kw < k.kw; ++kw) {
            const T kv = k.at(co, ci, kh, kw);
            const int dw = kw - pw;
            const int w0 = dw < 0 ? -dw : 0;
            const int w1 = dw > 0 ? W - dw : W;
            for (int hi = h0; hi < h1; ++hi) {
              const T* xr = xp + (hi + dh) * W + dw;
              T* orow = op + hi * W;
              for (int wi = w0; wi < w1; ++wi) orow[wi] += kv * xr[wi];
            }
          }
        }
      }
    }
  }
}

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const ConvKernel<T>& k) {
  detail::check_conv_shapes(x, k);
  Tensor4<T> out(x.b, k.oc, x.h, x.w);
  conv2d_acc(x, k, out);
  if (!k.bias.empty()) {
    for (int bi = 0; bi < out.b; ++bi)
      for (int co = 0; co < out.c; ++co) {
        T* op = out.plane(bi, co);
        const T bv = k.bias[co];
        for (int i = 0; i < out.h * out.w; ++i) op[i] += bv;
      }
  }
  return out;
}

// grad_x += correlation of grad_out with k (the transpose of the forward map).
template <typename T>
void conv2d_backward_input_acc(const ConvKernel<T>& k, const Tensor4<T>& grad_out,
                               Tensor4<T>& grad_x) {
  const int H = grad_out.h, W = grad_out.w, ph = k.kh / 2, pw = k.kw / 2;
  detail::require(grad_out.c == k.oc && grad_x.c == k.ic &&
                      grad_x.b == grad_out.b && grad_x.h == H && grad_x.w == W,
                  "conv2d_backward: shape mismatch");
  const bool fast3 = (k.kw == 3 && W >= 2);
  for (int bi = 0; bi < grad_out.b; ++bi) {
    for (int co = 0; co < k.oc; ++co) {
      const T* gp = grad_out.plane(bi, co);
      for (int ci = 0; ci < k.ic; ++ci) {
        T* xp = grad_x.plane(bi, ci);
        for (int kh = 0; kh < k.kh; ++kh) {
          // x[h] contributes to out[h - dh]; walk the valid band.
          const int dh = kh - ph;
          const int h0 = dh > 0 ? dh : 0;  // h - dh in [0, H)
          const int h1 = dh < 0 ? H + dh : H;
          if (fast3) {
            const T k0 = k.at(co, ci, kh, 0);
            const T k1 = k.at(co, ci, kh, 1);
            const T k2 = k.at(co, ci, kh, 2);
            for (int hi = h0; hi < h1; ++hi) {
              const T* gr = gp + (hi - dh) * W;
              T* xr = xp + hi * W;
              xr[0] += k0 * gr[1] + k1 * gr[0];
              for (int wi = 1; wi < W - 1; ++wi)
                xr[wi] += k0 * gr[wi + 1] + k1 * gr[wi] + k2 * gr[wi - 1];
              xr[W - 1] += k1 * gr[W - 1] + k2 * gr[W - 2];
            }
            continue;
          }
          for (int kw = 0; kw < k.kw; ++kw) {
            const T kv = k.at(co, ci, kh, kw);
            const int dw = kw - pw;
            const int w0 = dw > 0 ? dw : 0;
            const int w1 = dw < 0 ? W + dw : W;
            for (int hi = h0; hi < h1; ++hi) {
              const T* gr = gp + (hi - dh) * W - dw;
              T* xr = xp + hi * W;
              for (int wi = w0; wi < w1; ++wi) xr[wi] += kv * gr[wi];
            }
          }
        }
      }
    }
  }
}

// grad_k += x (*) grad_out ; grad_bias += per-channel sums of grad_out.
template <typename T>
void conv2d_backward_params_acc(const Tensor4<T>& x, const Tensor4<T>& grad_out,
                                ConvKernel<T>& grad_k) {
  const int H = x.h, W = x.w, ph = grad_k.kh / 2, pw = grad_k.kw / 2;
  detail::require(x.c == grad_k.ic && grad_out.c == grad_k.oc &&
                      x.b == grad_out.b && grad_out.h == H && grad_out.w == W,
                  "conv2d_backward: shape mismatch");
  const bool fast3 = (grad_k.kw == 3 && W >= 2);
  for (int bi = 0; bi < x.b; ++bi) {
    for (int co = 0; co < grad_k.oc; ++co) {
      const T* gp = grad_out.plane(bi, co);
      for (int ci = 0; ci < grad_k.ic; ++ci) {
        const T* xp = x.plane(bi, ci);
        for (int kh = 0; kh < grad_k.kh; ++kh) {
          const int dh = kh - ph;
          const int h0 = dh < 0 ? -dh : 0;
          const int h1 = dh > 0 ? H - dh : H;
          if (fast3) {
            // One sweep accumulates all three column taps.
            T a0 = T(0), a1 = T(0), a2 = T(0);
            for (int hi = h0; hi < h1; ++hi) {
              const T* xr = xp + (hi + dh) * W;
              const T* gr = gp + hi * W;
              a1 += gr[0] * xr[0];
              a2 += gr[0] * xr[1];
              for (int wi = 1; wi < W - 1; ++wi) {
                const T g = gr[wi];
                a0 += g * xr[wi - 1];
                a1 += g * xr[wi];
                a2 += g * xr[wi + 1];
              }
              a0 += gr[W - 1] * xr[W - 2];
              a1 += gr[W - 1] * xr[W - 1];
            }
            grad_k.at(co, ci, kh, 0) += a0;
            grad_k.at(co, ci, kh, 1) += a1;
            grad_k.at(co, ci, kh, 2) += a2;
            continue;
          }
          for (int kw = 0; kw < grad_k.kw; ++kw) {
            const int dw = kw - pw;
            const int w0 = dw < 0 ? -dw : 0;
            const int w1 = dw > 0 ? W - dw : W;
            T acc = T(0);
            for (int hi = h0; hi < h1; ++hi) {
              const T* xr = xp + (hi + dh) * W + dw;
              const T* gr = gp + hi * W;
              for (int wi = w0; wi < w1; ++wi) acc += xr[wi] * gr[wi];
            }
            grad_k.at(co, ci, kh, kw) += acc;
          }
        }
      }
    }
  }
  if (!grad_k.bias.empty()) {
    for (int bi = 0; bi < grad_out.b; ++bi)
      for (int co = 0; co < grad_out.c; ++co) {
        const T* gp = grad_out.plane(bi, co);
        T acc = T(0);
        for (int i = 0; i < H * W; ++i) acc += gp[i];
        grad_k.bias[co] += acc;
      }
  }
}

template <typename T>
struct Conv2dGrads {
  Tensor4<T> grad_x;
  ConvKernel<T> grad_k;  // grad_k.bias holds the bias gradient
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor4<T>& x, const ConvKernel<T>& k,
                               const Tensor4<T>& grad_out) {
  detail::check_conv_shapes(x, k);
  detail::require(grad_out.b == x.b && grad_out.c == k.oc &&
                      grad_out.h == x.h && grad_out.w == x.w,
                  detail::cat("conv2d_backward: grad_out ", grad_out.shape_str(),
                              " inconsistent with x ", x.shape_str(), " and k ",
                              k.shape_str()));
  Conv2dGrads<T> g;
  g.grad_x = Tensor4<T>(x.b, x.c, x.h, x.w);
  g.grad_k = ConvKernel<T>(k.oc, k.ic, k.kh, k.kw, !k.bias.empty());
  conv2d_backward_input_acc(k, grad_out, g.grad_x);
  conv2d_backward_params_acc(x, grad_out, g.grad_k);
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise maps and arithmetic.
// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
  Tensor4<T> y(x.b, x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.size(); ++i)
    y.data[i] = T(1) / (T(1) + std::exp(-x.data[i]));
  return y;
}

// dx from the forward output y = sigmoid(x).
template <typename T>
Tensor4<T> sigmoid_backward(const Tensor4<T>& y, const Tensor4<T>& grad_y) {
  detail::require(y.same_shape(grad_y), "sigmoid_backward: shape mismatch");
  Tensor4<T> gx(y.b, y.c, y.h, y.w);
  for (std::size_t i = 0; i < y.size(); ++i)
    gx.data[i] = grad_y.data[i] * y.data[i] * (T(1) - y.data[i]);
  return gx;
}

template <typename T>
Tensor4<T> tanh(const Tensor4<T>& x) {
  Tensor4<T> y(x.b, x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = std::tanh(x.data[i]);
  return y;
}

template <typename T>
Tensor4<T> tanh_backward(const Tensor4<T>& y, const Tensor4<T>& grad_y) {
  detail::require(y.same_shape(grad_y), "tanh_backward: shape mismatch");
  Tensor4<T> gx(y.b, y.c, y.h, y.w);
  for (std::size_t i = 0; i < y.size(); ++i)
    gx.data[i] = grad_y.data[i] * (T(1) - y.data[i] * y.data[i]);
  return gx;
}

namespace detail {
template <typename T>
void check_same(const Tensor4<T>& x, const Tensor4<T>& y, const char* op) {
  require(x.same_shape(y),
          cat(op, ": shape mismatch ", x.shape_str(), " vs ", y.shape_str()));
}
}  // namespace detail

template <typename T>
Tensor4<T> hadamard(const Tensor4<T>& x, const Tensor4<T>& y) {
  detail::check_same(x, y, "hadamard");
  Tensor4<T> out(x.b, x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] * y.data[i];
  return out;
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& x, const Tensor4<T>& y) {
  detail::check_same(x, y, "add");
  Tensor4<T> out(x.b, x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] + y.data[i];
  return out;
}

template <typename T>
Tensor4<T> sub(const Tensor4<T>& x, const Tensor4<T>& y) {
  detail::check_same(x, y, "sub");
  Tensor4<T> out(x.b, x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] - y.data[i];
  return out;
}

template <typename T>
void add_inplace(Tensor4<T>& x, const Tensor4<T>& y) {
  detail::check_same(x, y, "add_inplace");
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += y.data[i];
}

// x += a .* b, the recurring accumulate pattern of backward passes.
template <typename T>
void add_hadamard_inplace(Tensor4<T>& x, const Tensor4<T>& a, const Tensor4<T>& b) {
  detail::check_same(x, a, "add_hadamard_inplace");
  detail::check_same(x, b, "add_hadamard_inplace");
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += a.data[i] * b.data[i];
}

template <typename T>
void scale_inplace(Tensor4<T>& x, T s) {
  for (auto& v : x.data) v *= s;
}

template <typename T>
void add_channel_bias_inplace(Tensor4<T>& x, const std::vector<T>& bias) {
  detail::require(bias.size() == static_cast<std::size_t>(x.c),
                  detail::cat("bias length ", bias.size(), " vs channels ", x.c));
  for (int bi = 0; bi < x.b; ++bi)
    for (int ci = 0; ci < x.c; ++ci) {
      T* p = x.plane(bi, ci);
      const T bv = bias[ci];
      for (int i = 0; i < x.h * x.w; ++i) p[i] += bv;
    }
}

// bias_grad[c] += sum over (b, h, w) of g.
template <typename T>
void sum_bhw_acc(const Tensor4<T>& g, std::vector<T>& bias_grad) {
  detail::require(bias_grad.size() == static_cast<std::size_t>(g.c),
                  "sum_bhw_acc: channel mismatch");
  for (int bi = 0; bi < g.b; ++bi)
    for (int ci = 0; ci < g.c; ++ci) {
      const T* p = g.plane(bi, ci);
      T acc = T(0);
      for (int i = 0; i < g.h * g.w; ++i) acc += p[i];
      bias_grad[ci] += acc;
    }
}

// ---------------------------------------------------------------------------
// Channel concatenation / slicing.
// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& x, const Tensor4<T>& y) {
  detail::require(x.b == y.b && x.h == y.h && x.w == y.w,
                  detail::cat("concat_channels: spatial mismatch ", x.shape_str(),
                              " vs ", y.shape_str()));
  Tensor4<T> out(x.b, x.c + y.c, x.h, x.w);
  const int hw = x.h * x.w;
  for (int bi = 0; bi < x.b; ++bi) {
    for (int ci = 0; ci < x.c; ++ci)
      std::copy_n(x.plane(bi, ci), hw, out.plane(bi, ci));
    for (int ci = 0; ci < y.c; ++ci)
      std::copy_n(y.plane(bi, ci), hw, out.plane(bi, x.c + ci));
  }
  return out;
}

// Single sample b of a batch as a (1, C, H, W) tensor.
template <typename T>
Tensor4<T> slice_batch(const Tensor4<T>& x, int b) {
  detail::require(0 <= b && b < x.b,
                  detail::cat("slice_batch: index ", b, " out of ", x.b));
  Tensor4<T> out(1, x.c, x.h, x.w);
  const std::size_t plane = static_cast<std::size_t>(x.c) * x.h * x.w;
  std::copy_n(x.data.data() + b * plane, plane, out.data.data());
  return out;
}

// Channels [c0, c1) of x.
template <typename T>
Tensor4<T> slice_channels(const Tensor4<T>& x, int c0, int c1) {
  detail::require(0 <= c0 && c0 <= c1 && c1 <= x.c,
                  detail::cat("slice_channels: bad range [", c0, ",", c1, ") of ", x.c));
  Tensor4<T> out(x.b, c1 - c0, x.h, x.w);
  const int hw = x.h * x.w;
  for (int bi = 0; bi < x.b; ++bi)
    for (int ci = c0; ci < c1; ++ci)
      std::copy_n(x.plane(bi, ci), hw, out.plane(bi, ci - c0));
  return out;
}

// ---------------------------------------------------------------------------
// Global average pooling: (B, C, H, W) -> per-sample channel vectors (B x C).
// ---------------------------------------------------------------------------

template <typename T>
Mat<T> global_avg_pool(const Tensor4<T>& x) {
  detail::require(x.h > 0 && x.w > 0,
                  detail::cat("global_avg_pool: empty spatial dims ", x.shape_str()));
  Mat<T> out(x.b, x.c);
  const T inv = T(1) / static_cast<T>(x.h * x.w);
  for (int bi = 0; bi < x.b; ++bi)
    for (int ci = 0; ci < x.c; ++ci) {
      const T* p = x.plane(bi, ci);
      T acc = T(0);
      for (int i = 0; i < x.h * x.w; ++i) acc += p[i];
      out.at(bi, ci) = acc * inv;
    }
  return out;
}

// Spread pooled gradients back over the spatial extent.
template <typename T>
void global_avg_pool_backward_acc(const Mat<T>& grad_pooled, Tensor4<T>& grad_x) {
  detail::require(grad_pooled.rows == grad_x.b && grad_pooled.cols == grad_x.c,
                  "global_avg_pool_backward: shape mismatch");
  const T inv = T(1) / static_cast<T>(grad_x.h * grad_x.w);
  for (int bi = 0; bi < grad_x.b; ++bi)
    for (int ci = 0; ci < grad_x.c; ++ci) {
      T* p = grad_x.plane(bi, ci);
      const T g = grad_pooled.at(bi, ci) * inv;
      for (int i = 0; i < grad_x.h * grad_x.w; ++i) p[i] += g;
    }
}

// ---------------------------------------------------------------------------
// Softmax over a score vector, max-subtracted for stability.
// ---------------------------------------------------------------------------

template <typename T>
std::vector<T> softmax(const std::vector<T>& scores) {
  detail::require(!scores.empty(), "softmax: empty input");
  T mx = scores[0];
  for (const T& s : scores) mx = std::max(mx, s);
  std::vector<T> out(scores.size());
  T sum = T(0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - mx);
    sum += out[i];
  }
  const T inv = T(1) / sum;
  for (auto& v : out) v *= inv;
  return out;
}

// d(scores) given the softmax output a and upstream d(a):
// ds_i = a_i * (da_i - sum_j da_j a_j).
template <typename T>
std::vector<T> softmax_backward(const std::vector<T>& a, const std::vector<T>& grad_a) {
  detail::require(a.size() == grad_a.size(), "softmax_backward: size mismatch");
  T dot = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) dot += grad_a[i] * a[i];
  std::vector<T> gs(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) gs[i] = a[i] * (grad_a[i] - dot);
  return gs;
}

}  // namespace gridcast
