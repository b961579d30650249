// Recurrent cells: the vector-form LSTM reference, the convolutional LSTM,
// and the cascaded-memory cell that replaces the forget path with a
// non-stationary module N (driven by the difference of consecutive
// lower-layer hidden maps) feeding a stationary module S (which mixes that
// differential signal with the outer temporal memory).
//
// Every step is a pure function: inputs are never mutated, new states are
// returned together with a cache holding exactly the activations the
// matching *_backward needs. Backward functions accumulate into caller
// buffers so BPTT can sum contributions across time steps and layers.
#pragma once

#include <vector>

#include "gridcast/tensor.hpp"

namespace gridcast {

enum class CellFlavor { convlstm, cascaded };

// One gate's parameters: W maps the gate's input stream, U maps the
// recurrent/memory stream, plus a per-channel bias.
template <typename T>
struct GateParams {
  ConvKernel<T> input_kernel;
  ConvKernel<T> state_kernel;
  std::vector<T> bias;

  static GateParams init(int in_ch, int state_ch, int hidden, int kernel,
                         SeededRng& rng) {
    GateParams p;
    p.input_kernel = ConvKernel<T>::init(hidden, in_ch, kernel, kernel, rng, false);
    p.state_kernel = ConvKernel<T>::init(hidden, state_ch, kernel, kernel, rng, false);
    p.bias.assign(hidden, T(0));
    double bound = 1.0 / std::sqrt(static_cast<double>(in_ch) * kernel * kernel);
    for (auto& b : p.bias) b = static_cast<T>(rng.uniform(-bound, bound));
    return p;
  }

  GateParams zeros_like() const {
    GateParams g;
    g.input_kernel = ConvKernel<T>(input_kernel.oc, input_kernel.ic,
                                   input_kernel.kh, input_kernel.kw, false);
    g.state_kernel = ConvKernel<T>(state_kernel.oc, state_kernel.ic,
                                   state_kernel.kh, state_kernel.kw, false);
    g.bias.assign(bias.size(), T(0));
    return g;
  }
};

template <typename T>
struct GateSet {
  GateParams<T> u, i, f, o;

  static GateSet init(int in_ch, int state_ch, int hidden, int kernel,
                      SeededRng& rng) {
    GateSet s;
    s.u = GateParams<T>::init(in_ch, state_ch, hidden, kernel, rng);
    s.i = GateParams<T>::init(in_ch, state_ch, hidden, kernel, rng);
    s.f = GateParams<T>::init(in_ch, state_ch, hidden, kernel, rng);
    s.o = GateParams<T>::init(in_ch, state_ch, hidden, kernel, rng);
    return s;
  }

  GateSet zeros_like() const {
    GateSet s;
    s.u = u.zeros_like();
    s.i = i.zeros_like();
    s.f = f.zeros_like();
    s.o = o.zeros_like();
    return s;
  }
};

// Full parameter block of one layer. convlstm populates the outer set only;
// cascaded adds the two inner memory modules. The outer forget gate is kept
// in the struct for layout uniformity but the cascaded step never reads it.
template <typename T>
struct CellParams {
  CellFlavor flavor = CellFlavor::cascaded;
  int in_channels = 0, hidden = 0, kernel = 3;
  GateSet<T> outer;
  GateSet<T> n_module;
  GateSet<T> s_module;

  static CellParams init(CellFlavor flavor, int in_ch, int hidden, int kernel,
                         SeededRng& rng) {
    CellParams p;
    p.flavor = flavor;
    p.in_channels = in_ch;
    p.hidden = hidden;
    p.kernel = kernel;
    p.outer = GateSet<T>::init(in_ch, hidden, hidden, kernel, rng);
    if (flavor == CellFlavor::cascaded) {
      p.n_module = GateSet<T>::init(in_ch, hidden, hidden, kernel, rng);
      p.s_module = GateSet<T>::init(hidden, hidden, hidden, kernel, rng);
    }
    return p;
  }

  CellParams zeros_like() const {
    CellParams p;
    p.flavor = flavor;
    p.in_channels = in_channels;
    p.hidden = hidden;
    p.kernel = kernel;
    p.outer = outer.zeros_like();
    if (flavor == CellFlavor::cascaded) {
      p.n_module = n_module.zeros_like();
      p.s_module = s_module.zeros_like();
    }
    return p;
  }
};

template <typename T>
struct ConvLstmState {
  Tensor4<T> h, c;

  static ConvLstmState zeros(int b, int d, int hh, int ww) {
    return {Tensor4<T>(b, d, hh, ww), Tensor4<T>(b, d, hh, ww)};
  }
};

// Per-layer recurrent state of the cascaded cell. prev_input retains the
// previous step's input stream (frame or lower-layer hidden map) so the next
// step can form the difference; the same structure doubles as the cotangent
// container during BPTT.
template <typename T>
struct CascadedState {
  Tensor4<T> h, c, n, s, prev_input;

  static CascadedState zeros(int b, int d, int hh, int ww, int in_ch) {
    return {Tensor4<T>(b, d, hh, ww), Tensor4<T>(b, d, hh, ww),
            Tensor4<T>(b, d, hh, ww), Tensor4<T>(b, d, hh, ww),
            Tensor4<T>(b, in_ch, hh, ww)};
  }
};

// ---------------------------------------------------------------------------
// Shared conv gate machinery.
// ---------------------------------------------------------------------------

enum class Act { sigmoid, tanh };

namespace detail {

// act(W * x + U * r + b)
template <typename T>
Tensor4<T> conv_gate_forward(const Tensor4<T>& x, const Tensor4<T>& r,
                             const GateParams<T>& gp, Act act) {
  Tensor4<T> pre(x.b, gp.input_kernel.oc, x.h, x.w);
  conv2d_acc(x, gp.input_kernel, pre);
  conv2d_acc(r, gp.state_kernel, pre);
  add_channel_bias_inplace(pre, gp.bias);
  return act == Act::sigmoid ? sigmoid(pre) : gridcast::tanh(pre);
}

// Accumulates d(input stream), d(recurrent stream) and parameter gradients
// from the upstream gradient on the gate output y.
template <typename T>
void conv_gate_backward(const Tensor4<T>& grad_y, const Tensor4<T>& y, Act act,
                        const Tensor4<T>& x, const Tensor4<T>& r,
                        const GateParams<T>& gp, Tensor4<T>& dx, Tensor4<T>& dr,
                        GateParams<T>& dgp) {
  Tensor4<T> dpre = act == Act::sigmoid ? sigmoid_backward(y, grad_y)
                                        : tanh_backward(y, grad_y);
  conv2d_backward_input_acc(gp.input_kernel, dpre, dx);
  conv2d_backward_params_acc(x, dpre, dgp.input_kernel);
  conv2d_backward_input_acc(gp.state_kernel, dpre, dr);
  conv2d_backward_params_acc(r, dpre, dgp.state_kernel);
  sum_bhw_acc(dpre, dgp.bias);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Vector-form LSTM (the per-pixel reference the conv cells reduce to).
//   u = tanh(W_u x + U_u h + b_u)      i, f, o = sigmoid gates
//   c' = i .* u + f .* c               h' = o .* tanh(c')
// ---------------------------------------------------------------------------

template <typename T>
struct VanillaGate {
  Mat<T> w;  // hidden x input_dim
  Mat<T> u;  // hidden x hidden
  std::vector<T> b;

  static VanillaGate init(int input_dim, int hidden, SeededRng& rng) {
    double bw = 1.0 / std::sqrt(static_cast<double>(input_dim));
    double bu = 1.0 / std::sqrt(static_cast<double>(hidden));
    VanillaGate g;
    g.w = Mat<T>::uniform(hidden, input_dim, rng, -bw, bw);
    g.u = Mat<T>::uniform(hidden, hidden, rng, -bu, bu);
    g.b.assign(hidden, T(0));
    for (auto& v : g.b) v = static_cast<T>(rng.uniform(-bw, bw));
    return g;
  }

  VanillaGate zeros_like() const {
    VanillaGate g;
    g.w = Mat<T>(w.rows, w.cols);
    g.u = Mat<T>(u.rows, u.cols);
    g.b.assign(b.size(), T(0));
    return g;
  }
};

template <typename T>
struct VanillaLstmParams {
  int input_dim = 0, hidden = 0;
  VanillaGate<T> u, i, f, o;

  static VanillaLstmParams init(int input_dim, int hidden, SeededRng& rng) {
    VanillaLstmParams p;
    p.input_dim = input_dim;
    p.hidden = hidden;
    p.u = VanillaGate<T>::init(input_dim, hidden, rng);
    p.i = VanillaGate<T>::init(input_dim, hidden, rng);
    p.f = VanillaGate<T>::init(input_dim, hidden, rng);
    p.o = VanillaGate<T>::init(input_dim, hidden, rng);
    return p;
  }

  VanillaLstmParams zeros_like() const {
    VanillaLstmParams p;
    p.input_dim = input_dim;
    p.hidden = hidden;
    p.u = u.zeros_like();
    p.i = i.zeros_like();
    p.f = f.zeros_like();
    p.o = o.zeros_like();
    return p;
  }
};

template <typename T>
struct VanillaLstmCache {
  std::vector<T> x, h_prev, c_prev;
  std::vector<T> gu, gi, gf, go;  // gate outputs
  std::vector<T> c_new, tanh_c;
};

template <typename T>
struct VanillaLstmOut {
  std::vector<T> h, c;
  VanillaLstmCache<T> cache;
};

namespace detail {

template <typename T>
std::vector<T> vanilla_gate(const std::vector<T>& x, const std::vector<T>& h,
                            const VanillaGate<T>& g, Act act) {
  std::vector<T> pre = matvec(g.w, x);
  std::vector<T> uh = matvec(g.u, h);
  for (std::size_t k = 0; k < pre.size(); ++k) pre[k] += uh[k] + g.b[k];
  for (auto& v : pre)
    v = act == Act::sigmoid ? T(1) / (T(1) + std::exp(-v)) : std::tanh(v);
  return pre;
}

// dm += g ⊗ v
template <typename T>
void outer_acc(Mat<T>& dm, const std::vector<T>& g, const std::vector<T>& v) {
  for (int r = 0; r < dm.rows; ++r) {
    T* row = dm.row(r);
    const T gr = g[r];
    for (int c = 0; c < dm.cols; ++c) row[c] += gr * v[c];
  }
}

// out += M^T g
template <typename T>
void matvec_t_acc(const Mat<T>& m, const std::vector<T>& g, std::vector<T>& out) {
  for (int r = 0; r < m.rows; ++r) {
    const T* row = m.row(r);
    const T gr = g[r];
    for (int c = 0; c < m.cols; ++c) out[c] += gr * row[c];
  }
}

template <typename T>
void vanilla_gate_backward(const std::vector<T>& dg, const std::vector<T>& y,
                           Act act, const std::vector<T>& x, const std::vector<T>& h,
                           const VanillaGate<T>& g, std::vector<T>& dx,
                           std::vector<T>& dh, VanillaGate<T>& dgp) {
  std::vector<T> dpre(dg.size());
  for (std::size_t k = 0; k < dg.size(); ++k)
    dpre[k] = act == Act::sigmoid ? dg[k] * y[k] * (T(1) - y[k])
                                  : dg[k] * (T(1) - y[k] * y[k]);
  outer_acc(dgp.w, dpre, x);
  outer_acc(dgp.u, dpre, h);
  matvec_t_acc(g.w, dpre, dx);
  matvec_t_acc(g.u, dpre, dh);
  for (std::size_t k = 0; k < dpre.size(); ++k) dgp.b[k] += dpre[k];
}

}  // namespace detail

template <typename T>
VanillaLstmOut<T> vanilla_lstm_step(const std::vector<T>& x,
                                    const std::vector<T>& h_prev,
                                    const std::vector<T>& c_prev,
                                    const VanillaLstmParams<T>& p) {
  detail::require(x.size() == static_cast<std::size_t>(p.input_dim),
                  detail::cat("vanilla_lstm_step: input dim ", x.size(), " vs ",
                              p.input_dim));
  detail::require(h_prev.size() == static_cast<std::size_t>(p.hidden) &&
                      c_prev.size() == h_prev.size(),
                  "vanilla_lstm_step: state dim mismatch");
  VanillaLstmOut<T> out;
  auto& cc = out.cache;
  cc.x = x;
  cc.h_prev = h_prev;
  cc.c_prev = c_prev;
  cc.gu = detail::vanilla_gate(x, h_prev, p.u, Act::tanh);
  cc.gi = detail::vanilla_gate(x, h_prev, p.i, Act::sigmoid);
  cc.gf = detail::vanilla_gate(x, h_prev, p.f, Act::sigmoid);
  cc.go = detail::vanilla_gate(x, h_prev, p.o, Act::sigmoid);
  cc.c_new.resize(h_prev.size());
  cc.tanh_c.resize(h_prev.size());
  out.h.resize(h_prev.size());
  for (std::size_t k = 0; k < h_prev.size(); ++k) {
    cc.c_new[k] = cc.gi[k] * cc.gu[k] + cc.gf[k] * c_prev[k];
    cc.tanh_c[k] = std::tanh(cc.c_new[k]);
    out.h[k] = cc.go[k] * cc.tanh_c[k];
  }
  out.c = cc.c_new;
  return out;
}

template <typename T>
void vanilla_lstm_backward(const VanillaLstmCache<T>& cc,
                           const VanillaLstmParams<T>& p,
                           const std::vector<T>& dh_new,
                           const std::vector<T>& dc_new, std::vector<T>& dx,
                           std::vector<T>& dh_prev, std::vector<T>& dc_prev,
                           VanillaLstmParams<T>& dp) {
  const std::size_t d = cc.c_new.size();
  std::vector<T> dc(d), du(d), di(d), df(d), dout(d);
  for (std::size_t k = 0; k < d; ++k) {
    dc[k] = dc_new[k] + dh_new[k] * cc.go[k] * (T(1) - cc.tanh_c[k] * cc.tanh_c[k]);
    dout[k] = dh_new[k] * cc.tanh_c[k];
    du[k] = dc[k] * cc.gi[k];
    di[k] = dc[k] * cc.gu[k];
    df[k] = dc[k] * cc.c_prev[k];
    dc_prev[k] += dc[k] * cc.gf[k];
  }
  detail::vanilla_gate_backward(du, cc.gu, Act::tanh, cc.x, cc.h_prev, p.u, dx, dh_prev, dp.u);
  detail::vanilla_gate_backward(di, cc.gi, Act::sigmoid, cc.x, cc.h_prev, p.i, dx, dh_prev, dp.i);
  detail::vanilla_gate_backward(df, cc.gf, Act::sigmoid, cc.x, cc.h_prev, p.f, dx, dh_prev, dp.f);
  detail::vanilla_gate_backward(dout, cc.go, Act::sigmoid, cc.x, cc.h_prev, p.o, dx, dh_prev, dp.o);
}

// ---------------------------------------------------------------------------
// ConvLSTM: the same transitions with 2D convolutions in place of the
// matrix-vector products.
// ---------------------------------------------------------------------------

template <typename T>
struct ConvLstmCache {
  Tensor4<T> x, h_prev, c_prev;
  Tensor4<T> gu, gi, gf, go;
  Tensor4<T> c_new, tanh_c;
};

template <typename T>
struct ConvLstmOut {
  ConvLstmState<T> state;
  ConvLstmCache<T> cache;
};

template <typename T>
ConvLstmOut<T> convlstm_step(const Tensor4<T>& x, const ConvLstmState<T>& st,
                             const CellParams<T>& p) {
  detail::require(p.flavor == CellFlavor::convlstm, "convlstm_step: wrong flavor");
  detail::require(x.c == p.in_channels,
                  detail::cat("convlstm_step: input channels ", x.shape_str(),
                              " vs params ", p.in_channels));
  detail::require(st.h.b == x.b && st.h.h == x.h && st.h.w == x.w,
                  detail::cat("convlstm_step: state ", st.h.shape_str(),
                              " vs input ", x.shape_str()));
  ConvLstmOut<T> out;
  auto& cc = out.cache;
  cc.x = x;
  cc.h_prev = st.h;
  cc.c_prev = st.c;
  cc.gu = detail::conv_gate_forward(x, st.h, p.outer.u, Act::tanh);
  cc.gi = detail::conv_gate_forward(x, st.h, p.outer.i, Act::sigmoid);
  cc.gf = detail::conv_gate_forward(x, st.h, p.outer.f, Act::sigmoid);
  cc.go = detail::conv_gate_forward(x, st.h, p.outer.o, Act::sigmoid);
  cc.c_new = add(hadamard(cc.gi, cc.gu), hadamard(cc.gf, st.c));
  cc.tanh_c = gridcast::tanh(cc.c_new);
  out.state.h = hadamard(cc.go, cc.tanh_c);
  out.state.c = cc.c_new;
  return out;
}

template <typename T>
void convlstm_backward(const ConvLstmCache<T>& cc, const CellParams<T>& p,
                       const Tensor4<T>& dh_new, const Tensor4<T>& dc_new,
                       Tensor4<T>& dx, Tensor4<T>& dh_prev, Tensor4<T>& dc_prev,
                       CellParams<T>& dp) {
  Tensor4<T> dc = dc_new;
  // h' = o .* tanh(c')
  for (std::size_t k = 0; k < dc.size(); ++k)
    dc.data[k] += dh_new.data[k] * cc.go.data[k] *
                  (T(1) - cc.tanh_c.data[k] * cc.tanh_c.data[k]);
  Tensor4<T> dgo = hadamard(dh_new, cc.tanh_c);
  Tensor4<T> dgu = hadamard(dc, cc.gi);
  Tensor4<T> dgi = hadamard(dc, cc.gu);
  Tensor4<T> dgf = hadamard(dc, cc.c_prev);
  add_hadamard_inplace(dc_prev, dc, cc.gf);
  detail::conv_gate_backward(dgu, cc.gu, Act::tanh, cc.x, cc.h_prev, p.outer.u, dx, dh_prev, dp.outer.u);
  detail::conv_gate_backward(dgi, cc.gi, Act::sigmoid, cc.x, cc.h_prev, p.outer.i, dx, dh_prev, dp.outer.i);
  detail::conv_gate_backward(dgf, cc.gf, Act::sigmoid, cc.x, cc.h_prev, p.outer.f, dx, dh_prev, dp.outer.f);
  detail::conv_gate_backward(dgo, cc.go, Act::sigmoid, cc.x, cc.h_prev, p.outer.o, dx, dh_prev, dp.outer.o);
}

// ---------------------------------------------------------------------------
// Non-stationary module: gates driven by the difference of consecutive
// lower-layer hidden maps, recurring over its own memory N.
//   N' = f .* N + i .* u        diff_out = o .* tanh(N')
// ---------------------------------------------------------------------------

template <typename T>
struct NonstationaryCache {
  Tensor4<T> gate_in;  // h_below_now - h_below_prev
  Tensor4<T> n_prev;
  Tensor4<T> gu, gi, gf, go;
  Tensor4<T> n_new, tanh_n;
};

template <typename T>
struct NonstationaryOut {
  Tensor4<T> diff_out, n_new;
  NonstationaryCache<T> cache;
};

template <typename T>
NonstationaryOut<T> nonstationary_step(const Tensor4<T>& h_below_now,
                                       const Tensor4<T>& h_below_prev,
                                       const Tensor4<T>& n_prev,
                                       const GateSet<T>& g) {
  detail::check_same(h_below_now, h_below_prev, "nonstationary_step");
  NonstationaryOut<T> out;
  auto& cc = out.cache;
  cc.gate_in = sub(h_below_now, h_below_prev);
  cc.n_prev = n_prev;
  cc.gu = detail::conv_gate_forward(cc.gate_in, n_prev, g.u, Act::tanh);
  cc.gi = detail::conv_gate_forward(cc.gate_in, n_prev, g.i, Act::sigmoid);
  cc.gf = detail::conv_gate_forward(cc.gate_in, n_prev, g.f, Act::sigmoid);
  cc.go = detail::conv_gate_forward(cc.gate_in, n_prev, g.o, Act::sigmoid);
  cc.n_new = add(hadamard(cc.gf, n_prev), hadamard(cc.gi, cc.gu));
  cc.tanh_n = gridcast::tanh(cc.n_new);
  out.diff_out = hadamard(cc.go, cc.tanh_n);
  out.n_new = cc.n_new;
  return out;
}

// Accumulates d(gate_in) rather than splitting it; the caller routes it to
// d(h_below_now) with a plus sign and d(h_below_prev) with a minus sign.
template <typename T>
void nonstationary_backward(const NonstationaryCache<T>& cc, const GateSet<T>& g,
                            const Tensor4<T>& ddiff_out, const Tensor4<T>& dn_new,
                            Tensor4<T>& dgate_in, Tensor4<T>& dn_prev,
                            GateSet<T>& dg) {
  Tensor4<T> dn = dn_new;
  for (std::size_t k = 0; k < dn.size(); ++k)
    dn.data[k] += ddiff_out.data[k] * cc.go.data[k] *
                  (T(1) - cc.tanh_n.data[k] * cc.tanh_n.data[k]);
  Tensor4<T> dgo = hadamard(ddiff_out, cc.tanh_n);
  Tensor4<T> dgu = hadamard(dn, cc.gi);
  Tensor4<T> dgi = hadamard(dn, cc.gu);
  Tensor4<T> dgf = hadamard(dn, cc.n_prev);
  add_hadamard_inplace(dn_prev, dn, cc.gf);
  detail::conv_gate_backward(dgu, cc.gu, Act::tanh, cc.gate_in, cc.n_prev, g.u, dgate_in, dn_prev, dg.u);
  detail::conv_gate_backward(dgi, cc.gi, Act::sigmoid, cc.gate_in, cc.n_prev, g.i, dgate_in, dn_prev, dg.i);
  detail::conv_gate_backward(dgf, cc.gf, Act::sigmoid, cc.gate_in, cc.n_prev, g.f, dgate_in, dn_prev, dg.f);
  detail::conv_gate_backward(dgo, cc.go, Act::sigmoid, cc.gate_in, cc.n_prev, g.o, dgate_in, dn_prev, dg.o);
}

// ---------------------------------------------------------------------------
// Stationary module: gates read the differential signal against the outer
// temporal memory c, recurring over its own memory S.
//   S' = f .* S + i .* u        t_out = o .* tanh(S')
// ---------------------------------------------------------------------------

template <typename T>
struct StationaryCache {
  Tensor4<T> diff, c_prev, s_prev;
  Tensor4<T> gu, gi, gf, go;
  Tensor4<T> s_new, tanh_s;
};

template <typename T>
struct StationaryOut {
  Tensor4<T> t_out, s_new;
  StationaryCache<T> cache;
};

template <typename T>
StationaryOut<T> stationary_step(const Tensor4<T>& diff, const Tensor4<T>& c_prev,
                                 const Tensor4<T>& s_prev, const GateSet<T>& g) {
  detail::check_same(c_prev, s_prev, "stationary_step");
  StationaryOut<T> out;
  auto& cc = out.cache;
  cc.diff = diff;
  cc.c_prev = c_prev;
  cc.s_prev = s_prev;
  cc.gu = detail::conv_gate_forward(diff, c_prev, g.u, Act::tanh);
  cc.gi = detail::conv_gate_forward(diff, c_prev, g.i, Act::sigmoid);
  cc.gf = detail::conv_gate_forward(diff, c_prev, g.f, Act::sigmoid);
  cc.go = detail::conv_gate_forward(diff, c_prev, g.o, Act::sigmoid);
  cc.s_new = add(hadamard(cc.gf, s_prev), hadamard(cc.gi, cc.gu));
  cc.tanh_s = gridcast::tanh(cc.s_new);
  out.t_out = hadamard(cc.go, cc.tanh_s);
  out.s_new = cc.s_new;
  return out;
}

template <typename T>
void stationary_backward(const StationaryCache<T>& cc, const GateSet<T>& g,
                         const Tensor4<T>& dt_out, const Tensor4<T>& ds_new,
                         Tensor4<T>& ddiff, Tensor4<T>& dc_prev,
                         Tensor4<T>& ds_prev, GateSet<T>& dg) {
  Tensor4<T> ds = ds_new;
  for (std::size_t k = 0; k < ds.size(); ++k)
    ds.data[k] += dt_out.data[k] * cc.go.data[k] *
                  (T(1) - cc.tanh_s.data[k] * cc.tanh_s.data[k]);
  Tensor4<T> dgo = hadamard(dt_out, cc.tanh_s);
  Tensor4<T> dgu = hadamard(ds, cc.gi);
  Tensor4<T> dgi = hadamard(ds, cc.gu);
  Tensor4<T> dgf = hadamard(ds, cc.s_prev);
  add_hadamard_inplace(ds_prev, ds, cc.gf);
  detail::conv_gate_backward(dgu, cc.gu, Act::tanh, cc.diff, cc.c_prev, g.u, ddiff, dc_prev, dg.u);
  detail::conv_gate_backward(dgi, cc.gi, Act::sigmoid, cc.diff, cc.c_prev, g.i, ddiff, dc_prev, dg.i);
  detail::conv_gate_backward(dgf, cc.gf, Act::sigmoid, cc.diff, cc.c_prev, g.f, ddiff, dc_prev, dg.f);
  detail::conv_gate_backward(dgo, cc.go, Act::sigmoid, cc.diff, cc.c_prev, g.o, ddiff, dc_prev, dg.o);
}

// ---------------------------------------------------------------------------
// Cascaded cell: outer u/i/o as in ConvLSTM, with the forget path replaced
// by the chained N -> S modules.
//   c' = t_out + i .* u          h' = o .* tanh(c')
// ---------------------------------------------------------------------------

template <typename T>
struct CascadedCellCache {
  Tensor4<T> x, h_prev;
  Tensor4<T> gu, gi, go;  // outer gates
  NonstationaryCache<T> nsc;
  StationaryCache<T> ssc;
  Tensor4<T> c_new, tanh_c;
};

template <typename T>
struct CascadedCellOut {
  CascadedState<T> state;
  CascadedCellCache<T> cache;
};

template <typename T>
CascadedCellOut<T> cascaded_cell_step(const Tensor4<T>& x,
                                      const Tensor4<T>& h_below_prev,
                                      const CascadedState<T>& st,
                                      const CellParams<T>& p) {
  detail::require(p.flavor == CellFlavor::cascaded, "cascaded_cell_step: wrong flavor");
  detail::require(x.c == p.in_channels,
                  detail::cat("cascaded_cell_step: input channels ", x.shape_str(),
                              " vs params ", p.in_channels));
  detail::require(st.h.b == x.b && st.h.h == x.h && st.h.w == x.w,
                  detail::cat("cascaded_cell_step: state ", st.h.shape_str(),
                              " vs input ", x.shape_str()));
  CascadedCellOut<T> out;
  auto& cc = out.cache;
  cc.x = x;
  cc.h_prev = st.h;
  cc.gu = detail::conv_gate_forward(x, st.h, p.outer.u, Act::tanh);
  cc.gi = detail::conv_gate_forward(x, st.h, p.outer.i, Act::sigmoid);
  cc.go = detail::conv_gate_forward(x, st.h, p.outer.o, Act::sigmoid);

  auto ns = nonstationary_step(x, h_below_prev, st.n, p.n_module);
  cc.nsc = std::move(ns.cache);
  auto ss = stationary_step(ns.diff_out, st.c, st.s, p.s_module);
  cc.ssc = std::move(ss.cache);

  cc.c_new = add(ss.t_out, hadamard(cc.gi, cc.gu));
  cc.tanh_c = gridcast::tanh(cc.c_new);
  out.state.h = hadamard(cc.go, cc.tanh_c);
  out.state.c = cc.c_new;
  out.state.n = ns.n_new;
  out.state.s = ss.s_new;
  out.state.prev_input = x;
  return out;
}

// dnew carries the cotangents of the produced state (h', c', n', s',
// prev_input'). Gradients flow back into dx, the previous lower-layer input,
// and the previous state; parameter gradients accumulate into dp.
template <typename T>
void cascaded_cell_backward(const CascadedCellCache<T>& cc, const CellParams<T>& p,
                            const CascadedState<T>& dnew, Tensor4<T>& dx,
                            Tensor4<T>& dh_below_prev, CascadedState<T>& dprev,
                            CellParams<T>& dp) {
  Tensor4<T> dc = dnew.c;
  for (std::size_t k = 0; k < dc.size(); ++k)
    dc.data[k] += dnew.h.data[k] * cc.go.data[k] *
                  (T(1) - cc.tanh_c.data[k] * cc.tanh_c.data[k]);
  Tensor4<T> dgo = hadamard(dnew.h, cc.tanh_c);
  Tensor4<T> dgu = hadamard(dc, cc.gi);
  Tensor4<T> dgi = hadamard(dc, cc.gu);
  // c' = t_out + i .* u, so dc flows to the stationary output unchanged.
  Tensor4<T> ddiff_out(cc.nsc.gate_in.b, p.hidden, cc.nsc.gate_in.h, cc.nsc.gate_in.w);
  stationary_backward(cc.ssc, p.s_module, dc, dnew.s, ddiff_out, dprev.c, dprev.s,
                      dp.s_module);
  Tensor4<T> dgate_in(cc.nsc.gate_in.b, cc.nsc.gate_in.c, cc.nsc.gate_in.h,
                      cc.nsc.gate_in.w);
  nonstationary_backward(cc.nsc, p.n_module, ddiff_out, dnew.n, dgate_in, dprev.n,
                         dp.n_module);
  // gate_in = x - h_below_prev
  add_inplace(dx, dgate_in);
  for (std::size_t k = 0; k < dgate_in.size(); ++k)
    dh_below_prev.data[k] -= dgate_in.data[k];
  // prev_input' = x
  add_inplace(dx, dnew.prev_input);

  detail::conv_gate_backward(dgu, cc.gu, Act::tanh, cc.x, cc.h_prev, p.outer.u, dx, dprev.h, dp.outer.u);
  detail::conv_gate_backward(dgi, cc.gi, Act::sigmoid, cc.x, cc.h_prev, p.outer.i, dx, dprev.h, dp.outer.i);
  detail::conv_gate_backward(dgo, cc.go, Act::sigmoid, cc.x, cc.h_prev, p.outer.o, dx, dprev.h, dp.outer.o);
}

// ---------------------------------------------------------------------------
// Parameter traversal. One fixed order shared by the optimizer, the
// checkpoint format and the gradient checks; fn(name, data_vector, dims).
// ---------------------------------------------------------------------------

template <typename GP, typename F>
void visit_gate_params(GP& g, const std::string& prefix, F&& fn) {
  fn(prefix + ".Wx", g.input_kernel.data,
     std::vector<int>{g.input_kernel.oc, g.input_kernel.ic, g.input_kernel.kh,
                      g.input_kernel.kw});
  fn(prefix + ".Uh", g.state_kernel.data,
     std::vector<int>{g.state_kernel.oc, g.state_kernel.ic, g.state_kernel.kh,
                      g.state_kernel.kw});
  fn(prefix + ".b", g.bias, std::vector<int>{static_cast<int>(g.bias.size())});
}

template <typename GS, typename F>
void visit_gate_set(GS& s, const std::string& prefix, F&& fn) {
  visit_gate_params(s.u, prefix + ".u", fn);
  visit_gate_params(s.i, prefix + ".i", fn);
  visit_gate_params(s.f, prefix + ".f", fn);
  visit_gate_params(s.o, prefix + ".o", fn);
}

template <typename CP, typename F>
void visit_cell_params(CP& p, const std::string& prefix, F&& fn) {
  visit_gate_set(p.outer, prefix + ".outer", fn);
  if (p.flavor == CellFlavor::cascaded) {
    visit_gate_set(p.n_module, prefix + ".nmod", fn);
    visit_gate_set(p.s_module, prefix + ".smod", fn);
  }
}

template <typename VP, typename F>
void visit_vanilla_params(VP& p, const std::string& prefix, F&& fn) {
  auto gate = [&](auto& g, const std::string& gp) {
    fn(gp + ".W", g.w.data, std::vector<int>{g.w.rows, g.w.cols});
    fn(gp + ".U", g.u.data, std::vector<int>{g.u.rows, g.u.cols});
    fn(gp + ".b", g.b, std::vector<int>{static_cast<int>(g.b.size())});
  };
  gate(p.u, prefix + ".u");
  gate(p.i, prefix + ".i");
  gate(p.f, prefix + ".f");
  gate(p.o, prefix + ".o");
}

}  // namespace gridcast
