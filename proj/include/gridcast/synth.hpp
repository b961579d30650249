// Seeded synthetic traffic frames: Gaussian intensity blobs travelling along
// a fixed axis-aligned road network, with a sinusoidal day cycle modulating
// the overall volume. Channel 0 carries the normalized speed of the traffic
// at a cell, channel 1 the accumulated density, channel 2 the heading bucket.
#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "gridcast/data.hpp"

namespace gridcast {

struct SynthConfig {
  int height = 64, width = 64;
  int num_frames = 600;
  int num_roads = 6;
  int num_blobs = 12;
  double diurnal_period = 96.0;  // frames per day cycle; 0 disables
  double min_speed = 1.0;        // pixels per frame along the road
  double max_speed = 3.0;
  double blob_sigma = 1.8;
  std::uint32_t start_timestamp = 0;
  std::uint64_t seed = 0;
  std::string city = "synthcity";
};

namespace detail {

struct SynthRoad {
  bool horizontal;
  int fixed;  // row for horizontal roads, column for vertical ones
  int length;
};

struct SynthBlob {
  int road;
  double pos;        // arc-length position along the road
  double speed;      // pixels per frame, signed by direction
  double intensity;  // peak density contribution
};

// Heading buckets at 45 degree steps starting east, value 0 = no traffic.
inline float heading_bucket_value(int bucket) {
  static constexpr int kValues[8] = {32, 64, 96, 128, 160, 192, 224, 255};
  return static_cast<float>(kValues[bucket & 7]) / 255.0f;
}

inline int heading_bucket(bool horizontal, bool positive) {
  if (horizontal) return positive ? 0 : 4;  // east / west
  return positive ? 6 : 2;                  // south (increasing row) / north
}

inline std::vector<SynthRoad> synth_roads(const SynthConfig& cfg, SeededRng& rng) {
  std::vector<SynthRoad> roads;
  for (int r = 0; r < cfg.num_roads; ++r) {
    SynthRoad road;
    road.horizontal = (r % 2) == 0;
    if (road.horizontal) {
      road.fixed = 1 + static_cast<int>(rng.below(std::max(1, cfg.height - 2)));
      road.length = cfg.width;
    } else {
      road.fixed = 1 + static_cast<int>(rng.below(std::max(1, cfg.width - 2)));
      road.length = cfg.height;
    }
    roads.push_back(road);
  }
  return roads;
}

}  // namespace detail

// The static road mask built by a given config (1 on road cells, 0 off).
// Regenerated from the same seed, so it matches synth_generate exactly.
inline Tensor4<float> synth_road_mask(const SynthConfig& cfg) {
  SeededRng rng(cfg.seed);
  auto roads = detail::synth_roads(cfg, rng);
  Tensor4<float> mask(1, 1, cfg.height, cfg.width);
  for (const auto& r : roads) {
    if (r.horizontal)
      for (int x = 0; x < cfg.width; ++x) mask.at(0, 0, r.fixed, x) = 1.0f;
    else
      for (int y = 0; y < cfg.height; ++y) mask.at(0, 0, y, r.fixed) = 1.0f;
  }
  return mask;
}

inline FrameSequence synth_generate(const SynthConfig& cfg) {
  detail::require(cfg.height > 0 && cfg.width > 0, "synth_generate: zero-size grid");
  detail::require(cfg.num_roads > 0 && cfg.num_blobs > 0,
                  "synth_generate: need at least one road and one blob");

  SeededRng rng(cfg.seed);
  auto roads = detail::synth_roads(cfg, rng);

  std::vector<detail::SynthBlob> blobs;
  for (int b = 0; b < cfg.num_blobs; ++b) {
    detail::SynthBlob blob;
    blob.road = b % cfg.num_roads;
    const auto& road = roads[blob.road];
    blob.pos = rng.uniform(0.0, road.length);
    const double mag = rng.uniform(cfg.min_speed, cfg.max_speed);
    blob.speed = rng.bernoulli(0.5) ? mag : -mag;
    blob.intensity = rng.uniform(0.6, 1.0);
    blobs.push_back(blob);
  }

  FrameSequence seq;
  seq.height = cfg.height;
  seq.width = cfg.width;
  seq.start_timestamp = cfg.start_timestamp;

  const double sigma = cfg.blob_sigma;
  const int reach = static_cast<int>(std::ceil(4.0 * sigma));
  const std::uint32_t phase_salt = static_cast<std::uint32_t>(rng.below(1000));

  std::vector<double> density(static_cast<std::size_t>(cfg.height) * cfg.width);
  std::vector<double> speed_acc(density.size());
  std::vector<double> weight_acc(density.size());
  std::vector<double> best_weight(density.size());
  std::vector<float> heading(density.size());

  for (int t = 0; t < cfg.num_frames; ++t) {
    std::fill(density.begin(), density.end(), 0.0);
    std::fill(speed_acc.begin(), speed_acc.end(), 0.0);
    std::fill(weight_acc.begin(), weight_acc.end(), 0.0);
    std::fill(best_weight.begin(), best_weight.end(), 0.0);
    std::fill(heading.begin(), heading.end(), 0.0f);

    const double day =
        cfg.diurnal_period > 0.0
            ? 0.55 + 0.45 * std::sin(2.0 * std::numbers::pi *
                                     (t + static_cast<double>(phase_salt)) /
                                     cfg.diurnal_period)
            : 1.0;

    for (const auto& blob : blobs) {
      const auto& road = roads[blob.road];
      double pos = std::fmod(blob.pos + blob.speed * t, static_cast<double>(road.length));
      if (pos < 0) pos += road.length;
      const int center = static_cast<int>(pos);
      const int bucket =
          detail::heading_bucket(road.horizontal, blob.speed > 0);
      const float bucket_value = detail::heading_bucket_value(bucket);
      const double speed_norm = std::abs(blob.speed) / cfg.max_speed;

      for (int d = -reach; d <= reach; ++d) {
        int arc = center + d;
        arc %= road.length;
        if (arc < 0) arc += road.length;
        const double dist = pos - (center + d);
        const double w = std::exp(-0.5 * dist * dist / (sigma * sigma));
        const int y = road.horizontal ? road.fixed : arc;
        const int x = road.horizontal ? arc : road.fixed;
        const std::size_t cell = static_cast<std::size_t>(y) * cfg.width + x;
        density[cell] += day * blob.intensity * w;
        speed_acc[cell] += w * speed_norm;
        weight_acc[cell] += w;
        if (w > best_weight[cell]) {
          best_weight[cell] = w;
          heading[cell] = bucket_value;
        }
      }
    }

    Tensor4<float> frame(1, kFrameChannels, cfg.height, cfg.width);
    float* speed_ch = frame.plane(0, 0);
    float* volume_ch = frame.plane(0, 1);
    float* heading_ch = frame.plane(0, 2);
    for (std::size_t i = 0; i < density.size(); ++i) {
      if (weight_acc[i] < 1e-4) continue;  // no traffic at this cell
      speed_ch[i] = quantize_unit(static_cast<float>(speed_acc[i] / weight_acc[i]));
      volume_ch[i] = quantize_unit(static_cast<float>(std::min(1.0, density[i])));
      heading_ch[i] = quantize_unit(heading[i]);
    }
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

}  // namespace gridcast
