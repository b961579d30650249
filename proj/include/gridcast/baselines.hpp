// Non-learned reference predictors: persistence, flat window mean and the
// exponentially decayed window average.
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "gridcast/tensor.hpp"

namespace gridcast {

struct DecayAverageConfig {
  int window = 12;
  double gamma = 0.9;  // weight ratio between consecutive frames, in (0,1]
};

// Repeats the newest frame.
template <typename T>
std::vector<Tensor4<T>> persistence_predict(std::span<const Tensor4<T>> history,
                                            int out_len) {
  detail::require(!history.empty(), "persistence_predict: empty history");
  return std::vector<Tensor4<T>>(out_len, history.back());
}

// Unweighted mean of the last `window` frames, repeated.
template <typename T>
std::vector<Tensor4<T>> mean_predict(std::span<const Tensor4<T>> history,
                                     int window, int out_len) {
  detail::require(window >= 1, "mean_predict: window must be >= 1");
  detail::require(history.size() >= static_cast<std::size_t>(window),
                  detail::cat("mean_predict: history of ", history.size(),
                              " frames is shorter than the window ", window));
  const Tensor4<T>& last = history.back();
  std::vector<double> acc(last.size(), 0.0);
  for (int k = 0; k < window; ++k) {
    const Tensor4<T>& f = history[history.size() - 1 - k];
    detail::check_same(f, last, "mean_predict");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += f.data[i];
  }
  Tensor4<T> mean(last.b, last.c, last.h, last.w);
  for (std::size_t i = 0; i < acc.size(); ++i)
    mean.data[i] = static_cast<T>(acc[i] / window);
  return std::vector<Tensor4<T>>(out_len, mean);
}

// Convex combination of the last `window` frames with weights proportional
// to gamma^k (k = 0 at the newest frame), normalized to sum 1.
template <typename T>
std::vector<Tensor4<T>> decay_average_predict(std::span<const Tensor4<T>> history,
                                              const DecayAverageConfig& cfg,
                                              int out_len) {
  detail::require(cfg.window >= 1, "decay_average_predict: window must be >= 1");
  detail::require(cfg.gamma > 0.0 && cfg.gamma <= 1.0,
                  detail::cat("decay_average_predict: gamma ", cfg.gamma,
                              " outside (0,1]"));
  detail::require(history.size() >= static_cast<std::size_t>(cfg.window),
                  detail::cat("decay_average_predict: history of ", history.size(),
                              " frames is shorter than the window ", cfg.window));
  std::vector<double> weights(cfg.window);
  double sum = 0.0;
  for (int k = 0; k < cfg.window; ++k) {
    weights[k] = std::pow(cfg.gamma, k);
    sum += weights[k];
  }
  for (auto& w : weights) w /= sum;

  const Tensor4<T>& last = history.back();
  std::vector<double> acc(last.size(), 0.0);
  for (int k = 0; k < cfg.window; ++k) {
    const Tensor4<T>& f = history[history.size() - 1 - k];
    detail::check_same(f, last, "decay_average_predict");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weights[k] * f.data[i];
  }
  Tensor4<T> pred(last.b, last.c, last.h, last.w);
  for (std::size_t i = 0; i < acc.size(); ++i) pred.data[i] = static_cast<T>(acc[i]);
  return std::vector<Tensor4<T>>(out_len, pred);
}

}  // namespace gridcast
