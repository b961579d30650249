#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "gridcast/finite_diff.hpp"
#include "gridcast/model.hpp"

using namespace gridcast;

namespace {

template <typename T>
void zero_all_params(CascadeNetwork<T>& net) {
  visit_network_params(net, [](const std::string&, auto& data, const std::vector<int>&) {
    std::fill(data.begin(), data.end(), 0);
  });
}

template <typename T>
std::vector<Tensor4<T>> random_frames(int count, int b, int c, int h, int w,
                                      SeededRng& rng, double lo = 0.0,
                                      double hi = 1.0) {
  std::vector<Tensor4<T>> out;
  for (int i = 0; i < count; ++i)
    out.push_back(Tensor4<T>::uniform(b, c, h, w, rng, lo, hi));
  return out;
}

// Independent scalar evaluation of the alignment score.
template <typename T>
double score_ref(const Tensor4<T>& h_t, const Tensor4<T>& d_state,
                 const AttentionParams<T>& ap, int sample) {
  const int d = h_t.c;
  std::vector<double> z(2 * d, 0.0);
  for (int c = 0; c < d; ++c) {
    double acc1 = 0.0, acc2 = 0.0;
    for (int y = 0; y < h_t.h; ++y)
      for (int x = 0; x < h_t.w; ++x) {
        acc1 += h_t.at(sample, c, y, x);
        acc2 += d_state.at(sample, c, y, x);
      }
    z[c] = acc1 / (h_t.h * h_t.w);
    z[d + c] = acc2 / (h_t.h * h_t.w);
  }
  double s = 0.0;
  for (std::size_t r = 0; r < ap.v.size(); ++r) {
    double e = 0.0;
    for (int c = 0; c < 2 * d; ++c) e += static_cast<double>(ap.w.at(r, c)) * z[c];
    s += static_cast<double>(ap.v[r]) * std::tanh(e);
  }
  return s;
}

}  // namespace

TEST_CASE("encode: single frame gives one hidden state equal to the final state") {
  StackConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_channels = 4;
  cfg.in_len = 1;
  cfg.out_len = 1;
  auto net = CascadeNetwork<float>::init(cfg, 42);
  SeededRng rng(1);
  std::vector<Tensor4<float>> frames = random_frames<float>(1, 1, 3, 5, 5, rng);
  auto enc = encode<float>(net, frames);
  REQUIRE(enc.top_h.size() == 1);
  REQUIRE(enc.top_h[0].data == enc.final_states.back().h.data);
}

TEST_CASE("encode: zero frames and zero parameters yield zero hidden states") {
  StackConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_channels = 4;
  cfg.in_len = 3;
  auto net = CascadeNetwork<float>::init(cfg, 42);
  zero_all_params(net);
  std::vector<Tensor4<float>> frames(3, Tensor4<float>(1, 3, 5, 5));
  auto enc = encode<float>(net, frames);
  for (const auto& h : enc.top_h)
    for (float v : h.data) REQUIRE(v == 0.0f);
}

TEST_CASE("encode: tile-sized shapes thread through the stack") {
  StackConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_channels = 16;
  cfg.in_len = 12;
  auto net = CascadeNetwork<float>::init(cfg, 7);
  SeededRng rng(2);
  std::vector<Tensor4<float>> frames = random_frames<float>(12, 2, 3, 62, 73, rng);
  auto enc = encode<float>(net, frames);
  REQUIRE(enc.top_h.size() == 12);
  for (const auto& h : enc.top_h) {
    REQUIRE(h.b == 2);
    REQUIRE(h.c == 16);
    REQUIRE(h.h == 62);
    REQUIRE(h.w == 73);
  }
}

TEST_CASE("encode: inconsistent frame dims are rejected") {
  StackConfig cfg;
  cfg.num_layers = 1;
  cfg.hidden_channels = 4;
  auto net = CascadeNetwork<float>::init(cfg, 42);
  SeededRng rng(3);
  std::vector<Tensor4<float>> frames = random_frames<float>(2, 1, 3, 5, 5, rng);
  frames.push_back(Tensor4<float>(1, 3, 6, 5));
  REQUIRE_THROWS_AS(encode<float>(net, frames), shape_error);
}

TEST_CASE("attention_score: zero v vanishes, antisymmetric rows cancel") {
  SeededRng rng(4);
  const int d = 3;
  AttentionParams<float> ap = AttentionParams<float>::init(d, rng);
  Tensor4<float> h = Tensor4<float>::uniform(2, d, 4, 4, rng);
  Tensor4<float> s = Tensor4<float>::uniform(2, d, 4, 4, rng);

  std::fill(ap.v.begin(), ap.v.end(), 0.0f);
  for (float x : attention_score(h, s, ap)) REQUIRE(x == 0.0f);

  // Rows whose second half negates the first cancel when both inputs match.
  AttentionParams<float> anti = AttentionParams<float>::init(d, rng);
  for (int r = 0; r < anti.w.rows; ++r)
    for (int c = 0; c < d; ++c) anti.w.at(r, d + c) = -anti.w.at(r, c);
  for (float x : attention_score(h, h, anti))
    REQUIRE(x == Catch::Approx(0.0).margin(1e-6));
}

TEST_CASE("attention_score matches the scalar-loop reference") {
  SeededRng rng(5);
  const int d = 4;
  AttentionParams<float> ap = AttentionParams<float>::init(d, rng);
  Tensor4<float> h = Tensor4<float>::uniform(3, d, 5, 6, rng);
  Tensor4<float> s = Tensor4<float>::uniform(3, d, 5, 6, rng);
  std::vector<float> got = attention_score(h, s, ap);
  for (int b = 0; b < 3; ++b)
    REQUIRE(got[b] == Catch::Approx(score_ref(h, s, ap, b)).margin(1e-5));
}

TEST_CASE("attention_context: uniform weights give the mean, singleton passes through") {
  SeededRng rng(6);
  const int d = 3;
  AttentionParams<float> ap = AttentionParams<float>::init(d, rng);
  std::fill(ap.v.begin(), ap.v.end(), 0.0f);  // all scores 0 -> uniform alpha

  std::vector<Tensor4<float>> enc = random_frames<float>(4, 2, d, 4, 4, rng, -1, 1);
  Tensor4<float> dstate = Tensor4<float>::uniform(2, d, 4, 4, rng);

  auto res = attention_context<float>(enc, dstate, ap);
  for (int b = 0; b < 2; ++b) {
    float rowsum = 0.0f;
    for (int t = 0; t < 4; ++t) rowsum += res.alpha.at(b, t);
    REQUIRE(rowsum == Catch::Approx(1.0).margin(1e-6));
  }
  for (std::size_t i = 0; i < res.context.size(); ++i) {
    float mean = 0.0f;
    for (int t = 0; t < 4; ++t) mean += enc[t].data[i];
    mean /= 4.0f;
    REQUIRE(res.context.data[i] == Catch::Approx(mean).margin(1e-6));
  }

  AttentionParams<float> ap2 = AttentionParams<float>::init(d, rng);
  std::vector<Tensor4<float>> single(1, enc[0]);
  auto res1 = attention_context<float>(single, dstate, ap2);
  REQUIRE(res1.context.data == enc[0].data);

  REQUIRE_THROWS_AS(
      attention_context<float>(std::span<const Tensor4<float>>{}, dstate, ap2),
      shape_error);
}

TEST_CASE("attention_context: weights are a distribution on random inputs") {
  SeededRng rng(7);
  const int d = 4;
  AttentionParams<float> ap = AttentionParams<float>::init(d, rng);
  std::vector<Tensor4<float>> enc = random_frames<float>(6, 3, d, 4, 5, rng, -1, 1);
  Tensor4<float> dstate = Tensor4<float>::uniform(3, d, 4, 5, rng, -1, 1);
  auto res = attention_context<float>(enc, dstate, ap);
  for (int b = 0; b < 3; ++b) {
    float sum = 0.0f;
    for (int t = 0; t < 6; ++t) {
      REQUIRE(res.alpha.at(b, t) >= 0.0f);
      sum += res.alpha.at(b, t);
    }
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("decode_step: zero parameters emit the sigmoid midpoint") {
  StackConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_channels = 4;
  cfg.in_len = 2;
  auto net = CascadeNetwork<float>::init(cfg, 9);
  zero_all_params(net);
  SeededRng rng(8);
  std::vector<Tensor4<float>> frames = random_frames<float>(2, 1, 3, 5, 5, rng);
  auto enc = encode<float>(net, frames);
  auto step = decode_step<float>(net, frames.back(), enc.final_states, enc.top_h);
  for (float v : step.pred.data) REQUIRE(v == 0.5f);
}

TEST_CASE("decode_step: shape contract and output range on tile-sized input") {
  StackConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_channels = 8;
  cfg.in_len = 3;
  auto net = CascadeNetwork<float>::init(cfg, 10);
  SeededRng rng(9);
  std::vector<Tensor4<float>> frames = random_frames<float>(3, 2, 3, 62, 73, rng);
  auto enc = encode<float>(net, frames);
  auto step = decode_step<float>(net, frames.back(), enc.final_states, enc.top_h);
  REQUIRE(step.pred.b == 2);
  REQUIRE(step.pred.c == 3);
  REQUIRE(step.pred.h == 62);
  REQUIRE(step.pred.w == 73);
  for (float v : step.pred.data) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }
}

TEST_CASE("forward_train under always-forcing equals a manual ground-truth unroll") {
  StackConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_channels = 4;
  cfg.in_len = 3;
  cfg.out_len = 3;
  auto net = CascadeNetwork<float>::init(cfg, 11);
  SeededRng rng(10);
  std::vector<Tensor4<float>> frames = random_frames<float>(3, 2, 3, 6, 6, rng);
  std::vector<Tensor4<float>> targets = random_frames<float>(3, 2, 3, 6, 6, rng);

  TeacherForcingSchedule always{TeacherForcingSchedule::Mode::always, 200.0, 0.0};
  SeededRng coin(0);
  auto r = forward_train<float>(net, frames, targets, always, 0, coin, false);

  auto enc = encode<float>(net, frames);
  std::vector<CascadedState<float>> st = enc.final_states;
  std::vector<Tensor4<float>> manual;
  for (int j = 0; j < 3; ++j) {
    const Tensor4<float>& in = j == 0 ? frames.back() : targets[j - 1];
    auto step = decode_step<float>(net, in, std::move(st), enc.top_h);
    st = std::move(step.states);
    manual.push_back(step.pred);
  }
  for (int j = 0; j < 3; ++j) REQUIRE(r.preds[j].data == manual[j].data);

  REQUIRE(mse_loss<float>(r.preds, r.preds) == 0.0);
}

TEST_CASE("predict: bounded outputs, default horizon, determinism, batch independence") {
  StackConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_channels = 4;
  cfg.in_len = 4;
  cfg.out_len = 3;
  auto net = CascadeNetwork<float>::init(cfg, 12);
  SeededRng rng(11);
  std::vector<Tensor4<float>> frames = random_frames<float>(4, 2, 3, 6, 6, rng);

  auto preds = predict<float>(net, frames);
  REQUIRE(preds.size() == 3);
  for (const auto& p : preds)
    for (float v : p.data) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
    }

  auto preds2 = predict<float>(net, frames);
  for (int j = 0; j < 3; ++j) REQUIRE(preds[j].data == preds2[j].data);

  // Each sample's prediction depends only on its own frames.
  std::vector<Tensor4<float>> solo;
  for (const auto& f : frames) {
    Tensor4<float> one(1, 3, 6, 6);
    std::copy_n(f.data.data(), one.size(), one.data.data());
    solo.push_back(std::move(one));
  }
  auto preds_solo = predict<float>(net, solo);
  for (int j = 0; j < 3; ++j) {
    for (std::size_t i = 0; i < preds_solo[j].size(); ++i)
      REQUIRE(preds_solo[j].data[i] == preds[j].data[i]);
  }

  std::vector<Tensor4<float>> wrong = frames;
  wrong.pop_back();
  REQUIRE_THROWS_AS(predict<float>(net, wrong), shape_error);
}

TEST_CASE("teacher forcing schedule: bounded and non-increasing") {
  for (auto mode : {TeacherForcingSchedule::Mode::always,
                    TeacherForcingSchedule::Mode::inverse_sigmoid,
                    TeacherForcingSchedule::Mode::linear}) {
    TeacherForcingSchedule s{mode, 150.0, 0.05};
    double prev = 1.0;
    for (std::uint64_t step = 0; step < 3000; step += 7) {
      const double p = s.probability(step);
      REQUIRE(p >= s.floor);
      REQUIRE(p <= 1.0);
      REQUIRE(p <= prev + 1e-12);
      prev = p;
    }
  }
  TeacherForcingSchedule a{TeacherForcingSchedule::Mode::always, 1.0, 0.0};
  REQUIRE(a.probability(123456) == 1.0);
}

TEMPLATE_TEST_CASE("full unrolled model gradient check", "", float, double) {
  using T = TestType;
  const double tol = std::is_same_v<T, float> ? 1e-2 : 1e-5;
  StackConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_channels = 2;
  cfg.in_len = 2;
  cfg.out_len = 1;
  auto net = CascadeNetwork<T>::init(cfg, 33);
  SeededRng rng(12);
  std::vector<Tensor4<T>> frames = random_frames<T>(2, 1, 3, 4, 4, rng);
  std::vector<Tensor4<T>> targets = random_frames<T>(1, 1, 3, 4, 4, rng);

  // Keep the loss in double so float finite differences are limited by the
  // float forward pass, not by rounding of the loss value.
  auto loss_fn = [&] { return rollout<T>(net, frames, targets, {}, 1, false).loss; };

  auto r = rollout<T>(net, frames, targets, {}, 1, true);
  CascadeNetwork<T> grads = net.zeros_like();
  std::vector<Tensor4<T>> frame_grads;
  backward_train<T>(net, r.cache, targets, grads, &frame_grads);

  std::vector<std::pair<std::string, std::vector<T>*>> param_spans, grad_spans;
  visit_network_params(net, [&](const std::string& n, std::vector<T>& v,
                                const std::vector<int>&) {
    param_spans.emplace_back(n, &v);
  });
  visit_network_params(grads, [&](const std::string& n, std::vector<T>& v,
                                  const std::vector<int>&) {
    grad_spans.emplace_back(n, &v);
  });
  REQUIRE(param_spans.size() == grad_spans.size());

  // The model is one check group: the error is normalized by the gradient
  // scale of the whole parameter vector. In 32 bits the per-span ratio is
  // meaningless for spans whose true gradient sits below the forward-pass
  // rounding noise; the 64-bit run still pins every span individually.
  std::vector<T> all_analytic, all_fd;
  for (std::size_t k = 0; k < param_spans.size(); ++k) {
    auto fd = finite_diff_span(loss_fn, param_spans[k].second->data(),
                               param_spans[k].second->size(), T(1e-3));
    if constexpr (std::is_same_v<T, double>) {
      INFO("parameter " << param_spans[k].first);
      REQUIRE(max_rel_error(*grad_spans[k].second, fd) < tol);
    }
    all_fd.insert(all_fd.end(), fd.begin(), fd.end());
    all_analytic.insert(all_analytic.end(), grad_spans[k].second->begin(),
                        grad_spans[k].second->end());
  }
  for (int t = 0; t < 2; ++t) {
    auto fd = finite_diff_span(loss_fn, frames[t].data.data(), frames[t].size(),
                               T(1e-3));
    if constexpr (std::is_same_v<T, double>) {
      INFO("input frame " << t);
      REQUIRE(max_rel_error(frame_grads[t].data, fd) < tol);
    }
    all_fd.insert(all_fd.end(), fd.begin(), fd.end());
    all_analytic.insert(all_analytic.end(), frame_grads[t].data.begin(),
                        frame_grads[t].data.end());
  }
  REQUIRE(max_rel_error(all_analytic, all_fd) < tol);
}
