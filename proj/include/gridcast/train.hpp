// Mini-batch training loop: same-tile batches, scheduled teacher forcing,
// SGD/Adam updates, seeded end to end.
//
// Each batch is processed sample by sample into per-sample gradient buffers,
// optionally on worker threads; the reduction always runs in sample order,
// so results are bit-identical for any thread count.
#pragma once

#include <cmath>
#include <functional>
#include <thread>
#include <vector>

#include "gridcast/data.hpp"
#include "gridcast/model.hpp"

namespace gridcast {

struct TrainConfig {
  enum class Optimizer { sgd, adam };
  Optimizer optimizer = Optimizer::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 4;
  int max_steps = 2000;
  int log_every = 50;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = pick from the hardware
};

inline void validate(const TrainConfig& c, std::vector<std::string>& problems) {
  if (!(c.learning_rate > 0)) problems.push_back("learning_rate must be > 0");
  if (c.beta1 < 0 || c.beta1 >= 1) problems.push_back("beta1 must be in [0,1)");
  if (c.beta2 < 0 || c.beta2 >= 1) problems.push_back("beta2 must be in [0,1)");
  if (!(c.epsilon > 0)) problems.push_back("epsilon must be > 0");
  if (c.batch_size < 1) problems.push_back("batch_size must be >= 1");
  if (c.max_steps < 1) problems.push_back("max_steps must be >= 1");
  if (c.log_every < 1) problems.push_back("log_every must be >= 1");
  if (c.threads < 0) problems.push_back("threads must be >= 0");
}

namespace detail {

template <typename T>
std::vector<std::vector<T>*> collect_spans(CascadeNetwork<T>& net) {
  std::vector<std::vector<T>*> spans;
  visit_network_params(net, [&](const std::string&, std::vector<T>& v,
                                const std::vector<int>&) { spans.push_back(&v); });
  return spans;
}

}  // namespace detail

// Bias-corrected Adam (and plain SGD) over the network's parameter spans.
template <typename T>
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, CascadeNetwork<T>& model) : cfg_(cfg) {
    auto spans = detail::collect_spans(model);
    if (cfg_.optimizer == TrainConfig::Optimizer::adam) {
      for (auto* s : spans) {
        m_.emplace_back(s->size(), T(0));
        v_.emplace_back(s->size(), T(0));
      }
    }
  }

  void step(CascadeNetwork<T>& model, CascadeNetwork<T>& grads) {
    auto ps = detail::collect_spans(model);
    auto gs = detail::collect_spans(grads);
    if (cfg_.optimizer == TrainConfig::Optimizer::sgd) {
      const T lr = static_cast<T>(cfg_.learning_rate);
      for (std::size_t k = 0; k < ps.size(); ++k)
        for (std::size_t i = 0; i < ps[k]->size(); ++i)
          (*ps[k])[i] -= lr * (*gs[k])[i];
      return;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    for (std::size_t k = 0; k < ps.size(); ++k) {
      auto& m = m_[k];
      auto& v = v_[k];
      auto& p = *ps[k];
      auto& g = *gs[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        const double mhat = static_cast<double>(m[i]) / bc1;
        const double vhat = static_cast<double>(v[i]) / bc2;
        p[i] -= static_cast<T>(cfg_.learning_rate * mhat /
                               (std::sqrt(vhat) + cfg_.epsilon));
      }
    }
  }

 private:
  TrainConfig cfg_;
  int t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

struct LossTraceRow {
  int step = 0;
  double loss = 0.0;
  double forcing_p = 0.0;
};

struct TrainResult {
  std::vector<LossTraceRow> trace;
  double final_loss = 0.0;
};

// One optimizer step over a single materialized batch. Exposed separately so
// overfit checks and the CLI resume path reuse the exact training-step math.
inline double train_step(CascadeNetwork<float>& model, Optimizer<float>& opt,
                         const SampleBatch& batch, const std::vector<char>& forced,
                         int threads, std::vector<CascadeNetwork<float>>& sample_grads,
                         CascadeNetwork<float>& grads) {
  const int B = batch.inputs.empty() ? 0 : batch.inputs[0].b;
  detail::require(B > 0, "train_step: empty batch");
  for (int s = static_cast<int>(sample_grads.size()); s < B; ++s)
    sample_grads.push_back(model.zeros_like());

  std::vector<double> losses(B, 0.0);
  auto worker = [&](int first) {
    for (int s = first; s < B; s += threads) {
      std::vector<Tensor4<float>> ins, tgts;
      for (const auto& t : batch.inputs) ins.push_back(slice_batch(t, s));
      for (const auto& t : batch.targets) tgts.push_back(slice_batch(t, s));
      auto zero = [](const std::string&, auto& v, const std::vector<int>&) {
        std::fill(v.begin(), v.end(), 0.0f);
      };
      visit_network_params(sample_grads[s], zero);
      Rollout<float> r = rollout<float>(model, ins, tgts, forced,
                                        model.cfg.out_len, true);
      backward_train<float>(model, r.cache, tgts, sample_grads[s]);
      losses[s] = r.loss;
    }
  };

  if (threads <= 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int k = 1; k < threads; ++k) pool.emplace_back(worker, k);
    worker(0);
    for (auto& th : pool) th.join();
  }

  // Fixed-order reduction: batch gradient = mean of per-sample gradients.
  auto gspans = detail::collect_spans(grads);
  for (auto* g : gspans) std::fill(g->begin(), g->end(), 0.0f);
  const float inv_b = 1.0f / static_cast<float>(B);
  for (int s = 0; s < B; ++s) {
    auto sspans = detail::collect_spans(sample_grads[s]);
    for (std::size_t k = 0; k < gspans.size(); ++k)
      for (std::size_t i = 0; i < gspans[k]->size(); ++i)
        (*gspans[k])[i] += inv_b * (*sspans[k])[i];
  }

  double loss = 0.0;
  for (int s = 0; s < B; ++s) loss += losses[s];
  loss /= B;

  opt.step(model, grads);
  return loss;
}

// Full training run over same-tile batches drawn from `data`.
// Non-finite losses abort with a diagnostic; the returned trace holds one row
// per log interval plus the final step.
inline TrainResult train(CascadeNetwork<float>& model, const FrameSequence& data,
                         const TileGrid& grid, const TrainConfig& cfg,
                         const TeacherForcingSchedule& schedule,
                         const std::function<void(const LossTraceRow&)>& on_log = {}) {
  std::vector<std::string> problems;
  validate(cfg, problems);
  if (!problems.empty()) {
    std::string msg = "invalid train config:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw config_error(msg);
  }
  detail::require(data.size() > 0, "train: empty dataset");

  BatchStream stream(data, grid, model.cfg.in_len, model.cfg.out_len,
                     cfg.batch_size, cfg.seed);
  SeededRng coin_rng(mix64(cfg.seed, 0xF0C));
  Optimizer<float> opt(cfg, model);
  CascadeNetwork<float> grads = model.zeros_like();
  std::vector<CascadeNetwork<float>> sample_grads;

  int threads = cfg.threads;
  if (threads == 0)
    threads = std::max(1, static_cast<int>(std::min(4u, std::thread::hardware_concurrency())));

  TrainResult result;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    SampleBatch batch = stream.next();
    const double p = schedule.probability(static_cast<std::uint64_t>(step - 1));
    std::vector<char> forced(model.cfg.out_len, 0);
    for (int j = 1; j < model.cfg.out_len; ++j)
      forced[j] = coin_rng.bernoulli(p) ? 1 : 0;

    const double loss =
        train_step(model, opt, batch, forced, threads, sample_grads, grads);
    if (!std::isfinite(loss))
      throw error(detail::cat("train: non-finite loss ", loss, " at step ", step,
                              " (tile ", batch.tile_row, ",", batch.tile_col,
                              "; lr ", cfg.learning_rate, ")"));
    result.final_loss = loss;
    if (step % cfg.log_every == 0 || step == cfg.max_steps) {
      LossTraceRow row{step, loss, p};
      result.trace.push_back(row);
      if (on_log) on_log(row);
    }
  }
  return result;
}

}  // namespace gridcast
