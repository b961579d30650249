// Stacked cascaded-memory encoder-decoder with cross-frame additive
// attention and a sigmoid-bounded 1x1 output head.
//
// Attention operates on globally average-pooled hidden maps: both states are
// reduced to per-sample channel vectors, concatenated, pushed through
// v' tanh(W [p_enc; p_dec]) to a scalar alignment score per encoder step,
// and the softmax-normalized weights mix the full encoder hidden maps into
// the context.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "gridcast/cells.hpp"
#include "gridcast/tensor.hpp"

namespace gridcast {

struct StackConfig {
  int num_layers = 2;
  int hidden_channels = 16;
  int kernel_size = 3;
  int input_channels = 3;
  int in_len = 12;
  int out_len = 3;
};

inline void validate(const StackConfig& c, std::vector<std::string>& problems) {
  if (c.num_layers < 1) problems.push_back("num_layers must be >= 1");
  if (c.hidden_channels < 1) problems.push_back("hidden_channels must be >= 1");
  if (c.kernel_size < 1 || c.kernel_size % 2 == 0)
    problems.push_back("kernel_size must be odd and positive");
  if (c.input_channels < 1) problems.push_back("input_channels must be >= 1");
  if (c.in_len < 1) problems.push_back("in_len must be >= 1");
  if (c.out_len < 1) problems.push_back("out_len must be >= 1");
}

struct TeacherForcingSchedule {
  enum class Mode { always, inverse_sigmoid, linear };
  Mode mode = Mode::inverse_sigmoid;
  double k = 200.0;
  double floor = 0.0;

  // Probability of feeding ground truth at a given global training step.
  // Non-increasing in the step and clamped to [floor, 1].
  double probability(std::uint64_t step) const {
    switch (mode) {
      case Mode::always:
        return 1.0;
      case Mode::inverse_sigmoid: {
        const double z = static_cast<double>(step) / k;
        const double p = z > 500.0 ? 0.0 : k / (k + std::exp(z));
        return std::max(floor, p);
      }
      case Mode::linear:
        return std::max(floor, 1.0 - static_cast<double>(step) / k);
    }
    return 1.0;
  }
};

template <typename T>
struct AttentionParams {
  Mat<T> w;          // score_dim x 2*hidden
  std::vector<T> v;  // score_dim

  static AttentionParams init(int hidden, SeededRng& rng) {
    AttentionParams p;
    const int a = hidden;
    const double bw = 1.0 / std::sqrt(2.0 * hidden);
    p.w = Mat<T>::uniform(a, 2 * hidden, rng, -bw, bw);
    const double bv = 1.0 / std::sqrt(static_cast<double>(a));
    p.v.resize(a);
    for (auto& x : p.v) x = static_cast<T>(rng.uniform(-bv, bv));
    return p;
  }
};

// ---------------------------------------------------------------------------
// Network: parameters only; all state is threaded through the call sites.
// The same struct doubles as the gradient accumulator.
// ---------------------------------------------------------------------------

template <typename T>
struct CascadeNetwork {
  StackConfig cfg;
  std::vector<CellParams<T>> encoder;
  std::vector<CellParams<T>> decoder;
  AttentionParams<T> attention;
  ConvKernel<T> head;  // (channels out, 2*hidden, 1, 1) + bias

  static CascadeNetwork init(const StackConfig& cfg, std::uint64_t seed) {
    std::vector<std::string> problems;
    validate(cfg, problems);
    if (!problems.empty()) {
      std::string msg = "invalid stack config:";
      for (const auto& p : problems) msg += " " + p + ";";
      throw config_error(msg);
    }
    SeededRng rng(seed);
    CascadeNetwork net;
    net.cfg = cfg;
    for (int l = 0; l < cfg.num_layers; ++l) {
      const int in_ch = l == 0 ? cfg.input_channels : cfg.hidden_channels;
      net.encoder.push_back(CellParams<T>::init(CellFlavor::cascaded, in_ch,
                                                cfg.hidden_channels,
                                                cfg.kernel_size, rng));
      net.decoder.push_back(CellParams<T>::init(CellFlavor::cascaded, in_ch,
                                                cfg.hidden_channels,
                                                cfg.kernel_size, rng));
    }
    net.attention = AttentionParams<T>::init(cfg.hidden_channels, rng);
    net.head = ConvKernel<T>::init(cfg.input_channels, 2 * cfg.hidden_channels,
                                   1, 1, rng, true);
    return net;
  }

  CascadeNetwork zeros_like() const {
    CascadeNetwork g;
    g.cfg = cfg;
    for (const auto& p : encoder) g.encoder.push_back(p.zeros_like());
    for (const auto& p : decoder) g.decoder.push_back(p.zeros_like());
    g.attention.w = Mat<T>(attention.w.rows, attention.w.cols);
    g.attention.v.assign(attention.v.size(), T(0));
    g.head = ConvKernel<T>(head.oc, head.ic, head.kh, head.kw, true);
    return g;
  }

  int layer_in_channels(int l) const {
    return l == 0 ? cfg.input_channels : cfg.hidden_channels;
  }
};

template <typename NET, typename F>
void visit_network_params(NET& net, F&& fn) {
  for (std::size_t l = 0; l < net.encoder.size(); ++l)
    visit_cell_params(net.encoder[l], "enc.l" + std::to_string(l), fn);
  for (std::size_t l = 0; l < net.decoder.size(); ++l)
    visit_cell_params(net.decoder[l], "dec.l" + std::to_string(l), fn);
  fn("attn.W", net.attention.w.data,
     std::vector<int>{net.attention.w.rows, net.attention.w.cols});
  fn("attn.v", net.attention.v,
     std::vector<int>{static_cast<int>(net.attention.v.size())});
  fn("head.W", net.head.data,
     std::vector<int>{net.head.oc, net.head.ic, net.head.kh, net.head.kw});
  fn("head.b", net.head.bias,
     std::vector<int>{static_cast<int>(net.head.bias.size())});
}

// ---------------------------------------------------------------------------
// Attention scoring.
// ---------------------------------------------------------------------------

namespace detail {

// Scores for a batch of pooled rows; records tanh(W z) for the backward pass.
template <typename T>
void attention_score_rows(const Mat<T>& enc_pooled, const Mat<T>& dec_pooled,
                          const AttentionParams<T>& ap, Mat<T>& tanh_e,
                          std::vector<T>& scores) {
  const int B = enc_pooled.rows, d = enc_pooled.cols;
  const int a = static_cast<int>(ap.v.size());
  require(ap.w.cols == 2 * d, "attention: W width does not match 2*hidden");
  tanh_e = Mat<T>(B, a);
  scores.assign(B, T(0));
  for (int b = 0; b < B; ++b) {
    const T* p1 = enc_pooled.row(b);
    const T* p2 = dec_pooled.row(b);
    T s = T(0);
    for (int r = 0; r < a; ++r) {
      const T* wr = ap.w.row(r);
      T e = T(0);
      for (int c = 0; c < d; ++c) e += wr[c] * p1[c];
      for (int c = 0; c < d; ++c) e += wr[d + c] * p2[c];
      const T te = std::tanh(e);
      tanh_e.at(b, r) = te;
      s += ap.v[r] * te;
    }
    scores[b] = s;
  }
}

}  // namespace detail

// Alignment score per sample between one encoder hidden map and the decoder
// target state: v' tanh(W [pool(h_t); pool(d_state)]).
template <typename T>
std::vector<T> attention_score(const Tensor4<T>& h_t, const Tensor4<T>& d_state,
                               const AttentionParams<T>& ap) {
  detail::check_same(h_t, d_state, "attention_score");
  Mat<T> p1 = global_avg_pool(h_t);
  Mat<T> p2 = global_avg_pool(d_state);
  Mat<T> te;
  std::vector<T> s;
  detail::attention_score_rows(p1, p2, ap, te, s);
  return s;
}

template <typename T>
struct AttentionContextResult {
  Tensor4<T> context;
  Mat<T> alpha;  // B x num_encoder_steps
};

// Softmax-weighted sum of encoder hidden maps; weights are per sample.
template <typename T>
AttentionContextResult<T> attention_context(std::span<const Tensor4<T>> enc_hs,
                                            const Tensor4<T>& d_state,
                                            const AttentionParams<T>& ap) {
  detail::require(!enc_hs.empty(), "attention_context: no encoder states");
  const int B = d_state.b;
  const int steps = static_cast<int>(enc_hs.size());
  Mat<T> scores(B, steps);
  for (int t = 0; t < steps; ++t) {
    std::vector<T> s = attention_score(enc_hs[t], d_state, ap);
    for (int b = 0; b < B; ++b) scores.at(b, t) = s[b];
  }
  AttentionContextResult<T> out;
  out.alpha = Mat<T>(B, steps);
  out.context = Tensor4<T>(B, d_state.c, d_state.h, d_state.w);
  const std::size_t plane = static_cast<std::size_t>(d_state.c) * d_state.h * d_state.w;
  for (int b = 0; b < B; ++b) {
    std::vector<T> row(scores.row(b), scores.row(b) + steps);
    std::vector<T> al = softmax(row);
    for (int t = 0; t < steps; ++t) {
      out.alpha.at(b, t) = al[t];
      const T* src = enc_hs[t].data.data() + b * plane;
      T* dst = out.context.data.data() + b * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += al[t] * src[i];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward pass with optional cache for BPTT.
// ---------------------------------------------------------------------------

template <typename T>
struct StepAttnCache {
  Mat<T> dec_pooled;
  std::vector<Mat<T>> tanh_scores;  // one B x a matrix per encoder step
  Mat<T> alpha;                     // B x T_in
  Tensor4<T> comb;                  // concat(h_top, context)
  Tensor4<T> pred;
};

template <typename T>
struct ForwardCache {
  std::vector<std::vector<CascadedCellCache<T>>> enc;  // [T_in][layer]
  std::vector<Tensor4<T>> enc_top;
  std::vector<Mat<T>> enc_pooled;
  std::vector<std::vector<CascadedCellCache<T>>> dec;  // [T_out][layer]
  std::vector<StepAttnCache<T>> attn;
};

namespace detail {

template <typename T>
std::vector<CascadedState<T>> initial_states(const CascadeNetwork<T>& net, int B,
                                             int H, int W) {
  std::vector<CascadedState<T>> states;
  for (int l = 0; l < net.cfg.num_layers; ++l)
    states.push_back(CascadedState<T>::zeros(B, net.cfg.hidden_channels, H, W,
                                             net.layer_in_channels(l)));
  return states;
}

// One time step through the whole stack. first_step selects the zero
// difference convention (the retained previous input is the input itself).
template <typename T>
void stack_step(const std::vector<CellParams<T>>& layers,
                std::vector<CascadedState<T>>& states, const Tensor4<T>& input,
                bool first_step, std::vector<CascadedCellCache<T>>* caches) {
  const Tensor4<T>* below = &input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Tensor4<T>& hbp = first_step ? *below : states[l].prev_input;
    auto out = cascaded_cell_step(*below, hbp, states[l], layers[l]);
    states[l] = std::move(out.state);
    if (caches) (*caches)[l] = std::move(out.cache);
    below = &states[l].h;
  }
}

template <typename T>
void encode_impl(const CascadeNetwork<T>& net, std::span<const Tensor4<T>> frames,
                 std::vector<CascadedState<T>>& states,
                 std::vector<Tensor4<T>>& top_h, ForwardCache<T>* cache) {
  require(!frames.empty(), "encode: empty frame sequence");
  const Tensor4<T>& f0 = frames[0];
  require(f0.c == net.cfg.input_channels,
          cat("encode: frame channels ", f0.shape_str(), " vs config ",
              net.cfg.input_channels));
  for (const auto& f : frames)
    require(f.same_shape(f0), cat("encode: inconsistent frame dims ",
                                  f.shape_str(), " vs ", f0.shape_str()));
  states = initial_states(net, f0.b, f0.h, f0.w);
  top_h.clear();
  for (std::size_t t = 0; t < frames.size(); ++t) {
    std::vector<CascadedCellCache<T>> step_caches;
    if (cache) step_caches.resize(net.cfg.num_layers);
    stack_step(net.encoder, states, frames[t], t == 0,
               cache ? &step_caches : nullptr);
    top_h.push_back(states.back().h);
    if (cache) {
      cache->enc.push_back(std::move(step_caches));
      cache->enc_pooled.push_back(global_avg_pool(states.back().h));
    }
  }
  if (cache) cache->enc_top = top_h;
}

template <typename T>
Tensor4<T> decode_step_impl(const CascadeNetwork<T>& net,
                            const Tensor4<T>& prev_frame,
                            std::vector<CascadedState<T>>& states,
                            std::span<const Tensor4<T>> enc_top,
                            std::span<const Mat<T>> enc_pooled,
                            std::vector<CascadedCellCache<T>>* cell_caches,
                            StepAttnCache<T>* ac) {
  stack_step(net.decoder, states, prev_frame, false, cell_caches);
  const Tensor4<T>& h_top = states.back().h;
  const int B = h_top.b;
  const int steps = static_cast<int>(enc_top.size());

  Mat<T> dec_pooled = global_avg_pool(h_top);
  Mat<T> scores(B, steps);
  std::vector<Mat<T>> tanh_scores(steps);
  for (int t = 0; t < steps; ++t) {
    std::vector<T> s;
    attention_score_rows(enc_pooled[t], dec_pooled, net.attention, tanh_scores[t], s);
    for (int b = 0; b < B; ++b) scores.at(b, t) = s[b];
  }

  Mat<T> alpha(B, steps);
  Tensor4<T> context(B, h_top.c, h_top.h, h_top.w);
  const std::size_t plane = static_cast<std::size_t>(h_top.c) * h_top.h * h_top.w;
  for (int b = 0; b < B; ++b) {
    std::vector<T> row(scores.row(b), scores.row(b) + steps);
    std::vector<T> al = softmax(row);
    for (int t = 0; t < steps; ++t) {
      alpha.at(b, t) = al[t];
      const T* src = enc_top[t].data.data() + b * plane;
      T* dst = context.data.data() + b * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += al[t] * src[i];
    }
  }

  Tensor4<T> comb = concat_channels(h_top, context);
  Tensor4<T> pred = sigmoid(conv2d(comb, net.head));
  if (ac) {
    ac->dec_pooled = std::move(dec_pooled);
    ac->tanh_scores = std::move(tanh_scores);
    ac->alpha = std::move(alpha);
    ac->comb = std::move(comb);
    ac->pred = pred;
  }
  return pred;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public sequence operations.
// ---------------------------------------------------------------------------

template <typename T>
struct EncodeResult {
  std::vector<Tensor4<T>> top_h;
  std::vector<CascadedState<T>> final_states;
};

template <typename T>
EncodeResult<T> encode(const CascadeNetwork<T>& net,
                       std::span<const Tensor4<T>> frames) {
  EncodeResult<T> out;
  detail::encode_impl<T>(net, frames, out.final_states, out.top_h, nullptr);
  return out;
}

template <typename T>
struct DecodeStepResult {
  Tensor4<T> pred;
  std::vector<CascadedState<T>> states;
};

template <typename T>
DecodeStepResult<T> decode_step(const CascadeNetwork<T>& net,
                                const Tensor4<T>& prev_frame,
                                std::vector<CascadedState<T>> states,
                                std::span<const Tensor4<T>> enc_top) {
  std::vector<Mat<T>> pooled;
  pooled.reserve(enc_top.size());
  for (const auto& h : enc_top) pooled.push_back(global_avg_pool(h));
  DecodeStepResult<T> out;
  out.pred = detail::decode_step_impl<T>(net, prev_frame, states, enc_top, pooled,
                                      nullptr, nullptr);
  out.states = std::move(states);
  return out;
}

template <typename T>
double mse_loss(std::span<const Tensor4<T>> preds,
                std::span<const Tensor4<T>> targets) {
  detail::require(preds.size() == targets.size(), "mse_loss: length mismatch");
  double acc = 0.0;
  double count = 0.0;
  for (std::size_t t = 0; t < preds.size(); ++t) {
    detail::check_same(preds[t], targets[t], "mse_loss");
    for (std::size_t i = 0; i < preds[t].size(); ++i) {
      const double d = static_cast<double>(preds[t].data[i]) -
                       static_cast<double>(targets[t].data[i]);
      acc += d * d;
      count += 1.0;
    }
  }
  return count == 0.0 ? 0.0 : acc / count;
}

template <typename T>
struct Rollout {
  std::vector<Tensor4<T>> preds;
  double loss = 0.0;
  ForwardCache<T> cache;
};

// Shared encoder-decoder unroll. `forced[j]` selects ground truth as the
// decoder input at step j (index 0 is ignored: the first decoder input is
// always the last encoder frame). Without targets the rollout is closed
// loop: each step consumes the previous prediction. Gradients never flow
// through a fed-back prediction; it enters the next step as a constant.
template <typename T>
Rollout<T> rollout(const CascadeNetwork<T>& net,
                   std::span<const Tensor4<T>> frames_in,
                   std::span<const Tensor4<T>> targets,
                   const std::vector<char>& forced, int decode_steps,
                   bool keep_cache) {
  detail::require(static_cast<int>(frames_in.size()) == net.cfg.in_len,
                  detail::cat("rollout: got ", frames_in.size(),
                              " input frames, config expects ", net.cfg.in_len));
  if (!targets.empty())
    detail::require(static_cast<int>(targets.size()) == decode_steps,
                    detail::cat("rollout: got ", targets.size(),
                                " target frames, expected ", decode_steps));

  Rollout<T> out;
  ForwardCache<T>* cache = keep_cache ? &out.cache : nullptr;
  std::vector<CascadedState<T>> states;
  std::vector<Tensor4<T>> enc_top;
  detail::encode_impl(net, frames_in, states, enc_top, cache);

  std::vector<Mat<T>> pooled;
  if (!keep_cache) {
    pooled.reserve(enc_top.size());
    for (const auto& h : enc_top) pooled.push_back(global_avg_pool(h));
  }
  std::span<const Mat<T>> pooled_view =
      keep_cache ? std::span<const Mat<T>>(out.cache.enc_pooled)
                 : std::span<const Mat<T>>(pooled);

  for (int j = 0; j < decode_steps; ++j) {
    const bool use_truth = j > 0 && !targets.empty() &&
                           j < static_cast<int>(forced.size()) && forced[j];
    const Tensor4<T>& input = j == 0 ? frames_in.back()
                              : use_truth ? targets[j - 1]
                                          : out.preds[j - 1];
    std::vector<CascadedCellCache<T>> step_caches;
    StepAttnCache<T> ac;
    if (cache) step_caches.resize(net.cfg.num_layers);
    Tensor4<T> pred = detail::decode_step_impl<T>(
        net, input, states, enc_top, pooled_view,
        cache ? &step_caches : nullptr, cache ? &ac : nullptr);
    if (cache) {
      cache->dec.push_back(std::move(step_caches));
      cache->attn.push_back(std::move(ac));
    }
    out.preds.push_back(std::move(pred));
  }
  if (!targets.empty()) out.loss = mse_loss<T>(out.preds, targets);
  return out;
}

// Teacher-forced training pass; the forcing coin for each decode step is
// drawn once per call at the schedule's probability for this training step.
template <typename T>
Rollout<T> forward_train(const CascadeNetwork<T>& net,
                         std::span<const Tensor4<T>> batch_in,
                         std::span<const Tensor4<T>> batch_target,
                         const TeacherForcingSchedule& schedule,
                         std::uint64_t train_step, SeededRng& rng,
                         bool keep_cache = true) {
  detail::require(static_cast<int>(batch_target.size()) == net.cfg.out_len,
                  detail::cat("forward_train: got ", batch_target.size(),
                              " targets, config expects ", net.cfg.out_len));
  const double p = schedule.probability(train_step);
  std::vector<char> forced(batch_target.size(), 0);
  for (std::size_t j = 1; j < forced.size(); ++j)
    forced[j] = rng.bernoulli(p) ? 1 : 0;
  return rollout(net, batch_in, batch_target, forced, net.cfg.out_len, keep_cache);
}

// Closed-loop prediction; outputs stay in [0,1] through the sigmoid head.
template <typename T>
std::vector<Tensor4<T>> predict(const CascadeNetwork<T>& net,
                                std::span<const Tensor4<T>> frames_in) {
  Rollout<T> r = rollout(net, frames_in, std::span<const Tensor4<T>>{}, {},
                         net.cfg.out_len, false);
  return std::move(r.preds);
}

// ---------------------------------------------------------------------------
// Backward pass (BPTT over the full unroll).
// ---------------------------------------------------------------------------

// Accumulates parameter gradients of the mean-squared training loss into
// `grads`. When frame_grads is non-null it receives d(loss)/d(input frame)
// per encoder step (used by the gradient checks).
template <typename T>
void backward_train(const CascadeNetwork<T>& net, const ForwardCache<T>& cache,
                    std::span<const Tensor4<T>> targets, CascadeNetwork<T>& grads,
                    std::vector<Tensor4<T>>* frame_grads = nullptr) {
  const int L = net.cfg.num_layers;
  const int t_in = static_cast<int>(cache.enc.size());
  const int t_out = static_cast<int>(cache.dec.size());
  detail::require(static_cast<int>(targets.size()) == t_out,
                  "backward_train: target count does not match cache");
  const Tensor4<T>& pred0 = cache.attn[0].pred;
  const int B = pred0.b, H = pred0.h, W = pred0.w;
  const int d = net.cfg.hidden_channels;
  const int a = static_cast<int>(net.attention.v.size());
  const std::size_t plane = static_cast<std::size_t>(d) * H * W;

  const double n_total =
      static_cast<double>(t_out) * B * net.cfg.input_channels * H * W;

  if (frame_grads) {
    frame_grads->assign(t_in, Tensor4<T>(B, net.cfg.input_channels, H, W));
  }

  auto zero_states = [&] {
    std::vector<CascadedState<T>> s;
    for (int l = 0; l < L; ++l)
      s.push_back(CascadedState<T>::zeros(B, d, H, W, net.layer_in_channels(l)));
    return s;
  };

  std::vector<CascadedState<T>> dstate = zero_states();
  std::vector<Tensor4<T>> denc_top(t_in, Tensor4<T>(B, d, H, W));

  // Walks one stack step backwards; returns d(input) while updating the
  // per-layer state cotangents in place.
  auto stack_backward = [&](const std::vector<CellParams<T>>& layers,
                            std::vector<CellParams<T>>& layer_grads,
                            const std::vector<CascadedCellCache<T>>& caches,
                            bool first_step) {
    Tensor4<T> dx_out;
    for (int l = L - 1; l >= 0; --l) {
      const int in_ch = net.layer_in_channels(l);
      Tensor4<T> dx(B, in_ch, H, W), dhbp(B, in_ch, H, W);
      CascadedState<T> dprev = CascadedState<T>::zeros(B, d, H, W, in_ch);
      cascaded_cell_backward(caches[l], layers[l], dstate[l], dx, dhbp, dprev,
                             layer_grads[l]);
      if (first_step) {
        // The retained previous input was the input itself.
        add_inplace(dx, dhbp);
      } else {
        dprev.prev_input = std::move(dhbp);
      }
      dstate[l] = std::move(dprev);
      if (l > 0)
        add_inplace(dstate[l - 1].h, dx);
      else
        dx_out = std::move(dx);
    }
    return dx_out;
  };

  // ---- decoder, newest step first ----
  for (int j = t_out - 1; j >= 0; --j) {
    const StepAttnCache<T>& ac = cache.attn[j];

    // d(loss)/d(pred) for the mean over every predicted value.
    Tensor4<T> dpred(B, net.cfg.input_channels, H, W);
    for (std::size_t i = 0; i < dpred.size(); ++i)
      dpred.data[i] = static_cast<T>(
          2.0 / n_total *
          (static_cast<double>(ac.pred.data[i]) -
           static_cast<double>(targets[j].data[i])));

    // Output head.
    Tensor4<T> dpre = sigmoid_backward(ac.pred, dpred);
    Tensor4<T> dcomb(B, 2 * d, H, W);
    conv2d_backward_input_acc(net.head, dpre, dcomb);
    conv2d_backward_params_acc(ac.comb, dpre, grads.head);
    Tensor4<T> dh_top = slice_channels(dcomb, 0, d);
    Tensor4<T> dcontext = slice_channels(dcomb, d, 2 * d);

    // Attention: context = sum_t alpha(b,t) * enc_top[t].
    Mat<T> dalpha(B, t_in);
    for (int t = 0; t < t_in; ++t) {
      for (int b = 0; b < B; ++b) {
        const T* ctx_g = dcontext.data.data() + b * plane;
        const T* src = cache.enc_top[t].data.data() + b * plane;
        T acc = T(0);
        for (std::size_t i = 0; i < plane; ++i) acc += ctx_g[i] * src[i];
        dalpha.at(b, t) = acc;
        T* dst = denc_top[t].data.data() + b * plane;
        const T al = ac.alpha.at(b, t);
        for (std::size_t i = 0; i < plane; ++i) dst[i] += al * ctx_g[i];
      }
    }

    // Softmax, then the score network.
    Mat<T> dec_pooled_grad(B, d);
    for (int b = 0; b < B; ++b) {
      std::vector<T> arow(ac.alpha.row(b), ac.alpha.row(b) + t_in);
      std::vector<T> garow(dalpha.row(b), dalpha.row(b) + t_in);
      std::vector<T> ds = softmax_backward(arow, garow);
      for (int t = 0; t < t_in; ++t) {
        const T dscore = ds[t];
        if (dscore == T(0)) continue;
        const Mat<T>& te = ac.tanh_scores[t];
        const T* p1 = cache.enc_pooled[t].row(b);
        const T* p2 = ac.dec_pooled.row(b);
        Mat<T> denc_pooled_row(1, d);
        for (int r = 0; r < a; ++r) {
          const T tev = te.at(b, r);
          grads.attention.v[r] += dscore * tev;
          const T de = dscore * net.attention.v[r] * (T(1) - tev * tev);
          T* gw = grads.attention.w.row(r);
          const T* wr = net.attention.w.row(r);
          for (int c = 0; c < d; ++c) {
            gw[c] += de * p1[c];
            gw[d + c] += de * p2[c];
            denc_pooled_row.at(0, c) += de * wr[c];
            dec_pooled_grad.at(b, c) += de * wr[d + c];
          }
        }
        // Pooled encoder row gradient spreads uniformly over the map.
        const T inv = T(1) / static_cast<T>(H * W);
        T* dst = denc_top[t].data.data() + b * plane;
        for (int c = 0; c < d; ++c) {
          const T g = denc_pooled_row.at(0, c) * inv;
          T* chan = dst + static_cast<std::size_t>(c) * H * W;
          for (int i = 0; i < H * W; ++i) chan[i] += g;
        }
      }
    }
    global_avg_pool_backward_acc(dec_pooled_grad, dh_top);

    add_inplace(dstate[L - 1].h, dh_top);

    Tensor4<T> dinput = stack_backward(net.decoder, grads.decoder, cache.dec[j],
                                       /*first_step=*/false);
    // Decoder inputs: step 0 consumes the last encoder frame; later steps
    // consume ground truth or a detached prediction, so their gradient stops.
    if (j == 0 && frame_grads) add_inplace((*frame_grads)[t_in - 1], dinput);
  }

  // ---- encoder, newest step first; dstate carries the decoder handoff ----
  for (int t = t_in - 1; t >= 0; --t) {
    add_inplace(dstate[L - 1].h, denc_top[t]);
    Tensor4<T> dinput =
        stack_backward(net.encoder, grads.encoder, cache.enc[t], t == 0);
    if (frame_grads) add_inplace((*frame_grads)[t], dinput);
  }
}

}  // namespace gridcast
