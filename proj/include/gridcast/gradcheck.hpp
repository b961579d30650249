// Finite-difference verification of every analytic backward path, grouped
// the way the check-grads command reports them: one row per (group,
// precision) with the worst relative error found.
//
// Per-operation groups compare span by span. The full unrolled model is one
// group: its error is normalized by the scale of the whole gradient vector,
// since 32-bit forward noise swamps the ratio on spans whose true gradient
// is near zero (the 64-bit pass still pins those tightly).
#pragma once

#include <string>
#include <vector>

#include "gridcast/cells.hpp"
#include "gridcast/finite_diff.hpp"
#include "gridcast/model.hpp"

namespace gridcast {

struct GradCheckRow {
  std::string group;
  std::string precision;  // "f32" or "f64"
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

namespace gradcheck_detail {

template <typename T>
T weighted(const Tensor4<T>& x, const Tensor4<T>& w) {
  T acc = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) acc += x.data[i] * w.data[i];
  return acc;
}

template <typename T>
T weighted(const std::vector<T>& x, const std::vector<T>& w) {
  T acc = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * w[i];
  return acc;
}

struct SpanRef {
  std::string name;
  void* data = nullptr;
  std::size_t size = 0;
};

// Worst per-span relative error across parameter spans plus named extras.
template <typename T, typename P, typename LossFn>
double per_span_error(P& params, P& grads, LossFn&& loss,
                      std::vector<std::tuple<T*, std::size_t, const T*>> extras,
                      T eps) {
  std::vector<std::vector<T>*> ps, gs;
  auto collect_p = [&](const std::string&, std::vector<T>& v, const std::vector<int>&) {
    ps.push_back(&v);
  };
  auto collect_g = [&](const std::string&, std::vector<T>& v, const std::vector<int>&) {
    gs.push_back(&v);
  };
  if constexpr (requires { params.outer; }) {
    visit_cell_params(params, "p", collect_p);
    visit_cell_params(grads, "g", collect_g);
  } else {
    visit_vanilla_params(params, "p", collect_p);
    visit_vanilla_params(grads, "g", collect_g);
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto fd = finite_diff_span(loss, ps[k]->data(), ps[k]->size(), eps);
    worst = std::max(worst, max_rel_error(*gs[k], fd));
  }
  for (auto& [p, n, g] : extras) {
    auto fd = finite_diff_span(loss, p, n, eps);
    std::vector<T> analytic(g, g + n);
    worst = std::max(worst, max_rel_error(analytic, fd));
  }
  return worst;
}

template <typename T>
double check_vanilla(T eps) {
  SeededRng rng(101);
  VanillaLstmParams<T> p = VanillaLstmParams<T>::init(3, 4, rng);
  std::vector<T> x(3), h(4), c(4), wh(4), wc(4);
  for (auto& v : x) v = static_cast<T>(rng.uniform(-1, 1));
  for (auto& v : h) v = static_cast<T>(rng.uniform(-0.9, 0.9));
  for (auto& v : c) v = static_cast<T>(rng.uniform(-1, 1));
  for (auto& v : wh) v = static_cast<T>(rng.uniform(-1, 1));
  for (auto& v : wc) v = static_cast<T>(rng.uniform(-1, 1));

  auto loss = [&] {
    auto out = vanilla_lstm_step(x, h, c, p);
    return weighted(out.h, wh) + weighted(out.c, wc);
  };
  auto out = vanilla_lstm_step(x, h, c, p);
  VanillaLstmParams<T> grads = p.zeros_like();
  std::vector<T> dx(3, T(0)), dh(4, T(0)), dc(4, T(0));
  vanilla_lstm_backward(out.cache, p, wh, wc, dx, dh, dc, grads);

  return per_span_error<T>(p, grads, loss,
                           {{x.data(), x.size(), dx.data()},
                            {h.data(), h.size(), dh.data()},
                            {c.data(), c.size(), dc.data()}},
                           eps);
}

template <typename T>
double check_convlstm(T eps) {
  SeededRng rng(102);
  CellParams<T> p = CellParams<T>::init(CellFlavor::convlstm, 3, 4, 3, rng);
  Tensor4<T> x = Tensor4<T>::uniform(2, 3, 5, 5, rng);
  ConvLstmState<T> st;
  st.h = Tensor4<T>::uniform(2, 4, 5, 5, rng, -0.9, 0.9);
  st.c = Tensor4<T>::uniform(2, 4, 5, 5, rng);
  Tensor4<T> wh = Tensor4<T>::uniform(2, 4, 5, 5, rng);
  Tensor4<T> wc = Tensor4<T>::uniform(2, 4, 5, 5, rng);

  auto loss = [&] {
    auto out = convlstm_step(x, st, p);
    return weighted(out.state.h, wh) + weighted(out.state.c, wc);
  };
  auto out = convlstm_step(x, st, p);
  CellParams<T> grads = p.zeros_like();
  Tensor4<T> dx(2, 3, 5, 5), dh(2, 4, 5, 5), dc(2, 4, 5, 5);
  convlstm_backward(out.cache, p, wh, wc, dx, dh, dc, grads);

  return per_span_error<T>(p, grads, loss,
                           {{x.data.data(), x.size(), dx.data.data()},
                            {st.h.data.data(), st.h.size(), dh.data.data()},
                            {st.c.data.data(), st.c.size(), dc.data.data()}},
                           eps);
}

template <typename T>
double check_nonstationary(T eps) {
  SeededRng rng(103);
  CellParams<T> wrap, gwrap;
  wrap.flavor = gwrap.flavor = CellFlavor::convlstm;
  wrap.outer = GateSet<T>::init(3, 4, 4, 3, rng);
  Tensor4<T> h_now = Tensor4<T>::uniform(1, 3, 4, 4, rng);
  Tensor4<T> h_prev = Tensor4<T>::uniform(1, 3, 4, 4, rng);
  Tensor4<T> n_prev = Tensor4<T>::uniform(1, 4, 4, 4, rng);
  Tensor4<T> wd = Tensor4<T>::uniform(1, 4, 4, 4, rng);
  Tensor4<T> wn = Tensor4<T>::uniform(1, 4, 4, 4, rng);

  auto loss = [&] {
    auto o = nonstationary_step(h_now, h_prev, n_prev, wrap.outer);
    return weighted(o.diff_out, wd) + weighted(o.n_new, wn);
  };
  auto out = nonstationary_step(h_now, h_prev, n_prev, wrap.outer);
  gwrap.outer = wrap.outer.zeros_like();
  Tensor4<T> dgate_in(1, 3, 4, 4), dn_prev(1, 4, 4, 4);
  nonstationary_backward(out.cache, wrap.outer, wd, wn, dgate_in, dn_prev,
                         gwrap.outer);
  std::vector<T> dh_now = dgate_in.data;
  std::vector<T> dh_prev(dgate_in.size());
  for (std::size_t i = 0; i < dh_prev.size(); ++i) dh_prev[i] = -dgate_in.data[i];

  return per_span_error<T>(wrap, gwrap, loss,
                           {{h_now.data.data(), h_now.size(), dh_now.data()},
                            {h_prev.data.data(), h_prev.size(), dh_prev.data()},
                            {n_prev.data.data(), n_prev.size(), dn_prev.data.data()}},
                           eps);
}

template <typename T>
double check_stationary(T eps) {
  SeededRng rng(104);
  CellParams<T> wrap, gwrap;
  wrap.flavor = gwrap.flavor = CellFlavor::convlstm;
  wrap.outer = GateSet<T>::init(4, 4, 4, 3, rng);
  Tensor4<T> diff = Tensor4<T>::uniform(1, 4, 4, 4, rng);
  Tensor4<T> c_prev = Tensor4<T>::uniform(1, 4, 4, 4, rng);
  Tensor4<T> s_prev = Tensor4<T>::uniform(1, 4, 4, 4, rng);
  Tensor4<T> wt = Tensor4<T>::uniform(1, 4, 4, 4, rng);
  Tensor4<T> ws = Tensor4<T>::uniform(1, 4, 4, 4, rng);

  auto loss = [&] {
    auto o = stationary_step(diff, c_prev, s_prev, wrap.outer);
    return weighted(o.t_out, wt) + weighted(o.s_new, ws);
  };
  auto out = stationary_step(diff, c_prev, s_prev, wrap.outer);
  gwrap.outer = wrap.outer.zeros_like();
  Tensor4<T> ddiff(1, 4, 4, 4), dc_prev(1, 4, 4, 4), ds_prev(1, 4, 4, 4);
  stationary_backward(out.cache, wrap.outer, wt, ws, ddiff, dc_prev, ds_prev,
                      gwrap.outer);

  return per_span_error<T>(wrap, gwrap, loss,
                           {{diff.data.data(), diff.size(), ddiff.data.data()},
                            {c_prev.data.data(), c_prev.size(), dc_prev.data.data()},
                            {s_prev.data.data(), s_prev.size(), ds_prev.data.data()}},
                           eps);
}

template <typename T>
double check_cascaded(T eps, bool corrupt) {
  SeededRng rng(105);
  CellParams<T> p = CellParams<T>::init(CellFlavor::cascaded, 3, 2, 3, rng);
  Tensor4<T> x = Tensor4<T>::uniform(1, 3, 4, 4, rng);
  Tensor4<T> hbp = Tensor4<T>::uniform(1, 3, 4, 4, rng);
  CascadedState<T> st;
  st.h = Tensor4<T>::uniform(1, 2, 4, 4, rng, -0.9, 0.9);
  st.c = Tensor4<T>::uniform(1, 2, 4, 4, rng);
  st.n = Tensor4<T>::uniform(1, 2, 4, 4, rng);
  st.s = Tensor4<T>::uniform(1, 2, 4, 4, rng);
  st.prev_input = Tensor4<T>::uniform(1, 3, 4, 4, rng);
  CascadedState<T> w;
  w.h = Tensor4<T>::uniform(1, 2, 4, 4, rng);
  w.c = Tensor4<T>::uniform(1, 2, 4, 4, rng);
  w.n = Tensor4<T>::uniform(1, 2, 4, 4, rng);
  w.s = Tensor4<T>::uniform(1, 2, 4, 4, rng);
  w.prev_input = Tensor4<T>::uniform(1, 3, 4, 4, rng);

  auto loss = [&] {
    auto out = cascaded_cell_step(x, hbp, st, p);
    return weighted(out.state.h, w.h) + weighted(out.state.c, w.c) +
           weighted(out.state.n, w.n) + weighted(out.state.s, w.s) +
           weighted(out.state.prev_input, w.prev_input);
  };
  auto out = cascaded_cell_step(x, hbp, st, p);
  CellParams<T> grads = p.zeros_like();
  Tensor4<T> dx(1, 3, 4, 4), dhbp(1, 3, 4, 4);
  CascadedState<T> dprev = CascadedState<T>::zeros(1, 2, 4, 4, 3);
  cascaded_cell_backward(out.cache, p, w, dx, dhbp, dprev, grads);

  if (corrupt) {
    // Test hook: break one analytic value so the harness must flag it.
    grads.n_module.u.bias[0] += T(1);
  }

  return per_span_error<T>(p, grads, loss,
                           {{x.data.data(), x.size(), dx.data.data()},
                            {hbp.data.data(), hbp.size(), dhbp.data.data()},
                            {st.h.data.data(), st.h.size(), dprev.h.data.data()},
                            {st.c.data.data(), st.c.size(), dprev.c.data.data()},
                            {st.n.data.data(), st.n.size(), dprev.n.data.data()},
                            {st.s.data.data(), st.s.size(), dprev.s.data.data()}},
                           eps);
}

// Full-model check at a given config; returns {attention-only, whole-model}
// errors. Whole-model spans are concatenated before normalization. The loss
// fed to the differencer stays in double so the comparison is limited by the
// forward pass, not by rounding of the loss value itself; parameters are
// scaled up after init so the attention path carries measurable signal.
template <typename T>
std::pair<double, double> check_model(T eps) {
  StackConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_channels = 2;
  cfg.in_len = 2;
  cfg.out_len = 1;
  auto net = CascadeNetwork<T>::init(cfg, 106);
  visit_network_params(net, [](const std::string&, std::vector<T>& v,
                               const std::vector<int>&) {
    for (auto& x : v) x *= T(3);
  });
  SeededRng rng(107);
  std::vector<Tensor4<T>> frames, targets;
  for (int i = 0; i < cfg.in_len; ++i)
    frames.push_back(Tensor4<T>::uniform(1, 3, 4, 4, rng, 0, 1));
  targets.push_back(Tensor4<T>::uniform(1, 3, 4, 4, rng, 0, 1));

  auto loss = [&] { return rollout<T>(net, frames, targets, {}, 1, false).loss; };
  auto r = rollout<T>(net, frames, targets, {}, 1, true);
  CascadeNetwork<T> grads = net.zeros_like();
  std::vector<Tensor4<T>> frame_grads;
  backward_train<T>(net, r.cache, targets, grads, &frame_grads);

  std::vector<std::pair<std::string, std::vector<T>*>> ps, gs;
  visit_network_params(net, [&](const std::string& n, std::vector<T>& v,
                                const std::vector<int>&) { ps.emplace_back(n, &v); });
  visit_network_params(grads, [&](const std::string& n, std::vector<T>& v,
                                  const std::vector<int>&) { gs.emplace_back(n, &v); });

  double attn_err = 0.0;
  std::vector<T> all_a, all_fd;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto fd = finite_diff_span(loss, ps[k].second->data(), ps[k].second->size(), eps);
    if (ps[k].first.rfind("attn.", 0) == 0) {
      attn_err = std::max(attn_err, max_rel_error(*gs[k].second, fd));
    }
    all_fd.insert(all_fd.end(), fd.begin(), fd.end());
    all_a.insert(all_a.end(), gs[k].second->begin(), gs[k].second->end());
  }
  for (std::size_t t = 0; t < frames.size(); ++t) {
    auto fd = finite_diff_span(loss, frames[t].data.data(), frames[t].size(), eps);
    all_fd.insert(all_fd.end(), fd.begin(), fd.end());
    all_a.insert(all_a.end(), frame_grads[t].data.begin(), frame_grads[t].data.end());
  }
  return {attn_err, max_rel_error(all_a, all_fd)};
}

}  // namespace gradcheck_detail

template <typename T>
std::vector<GradCheckRow> run_grad_checks_for(double tol, bool corrupt) {
  using namespace gradcheck_detail;
  const char* prec = std::is_same_v<T, float> ? "f32" : "f64";
  const T eps = T(1e-3);
  std::vector<GradCheckRow> rows;
  auto add = [&](const std::string& group, double err) {
    rows.push_back({group, prec, err, tol, err < tol});
  };
  add("vanilla-lstm", check_vanilla<T>(eps));
  add("convlstm", check_convlstm<T>(eps));
  add("nonstationary-module", check_nonstationary<T>(eps));
  add("stationary-module", check_stationary<T>(eps));
  add("cascaded-cell", check_cascaded<T>(eps, corrupt));
  // The unrolled model squeezes tiny gradients through many float ops; a
  // larger displacement keeps the 32-bit difference above the forward noise
  // (truncation error stays orders of magnitude under the tolerance).
  const T model_eps = std::is_same_v<T, float> ? T(1e-2) : eps;
  auto [attn, full] = check_model<T>(model_eps);
  add("attention", attn);
  add("full-model", full);
  return rows;
}

// Both precisions back to back: 1e-2 in 32-bit, 1e-5 in 64-bit.
inline std::vector<GradCheckRow> run_grad_checks(bool corrupt = false) {
  std::vector<GradCheckRow> rows = run_grad_checks_for<float>(1e-2, corrupt);
  auto f64 = run_grad_checks_for<double>(1e-5, corrupt);
  rows.insert(rows.end(), f64.begin(), f64.end());
  return rows;
}

}  // namespace gridcast
