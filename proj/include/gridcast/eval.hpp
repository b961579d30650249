// Multi-horizon evaluation harness: rolls a predictor over every tile at
// each predicting point and aggregates pixel-wise MSE per horizon, per tile
// and overall. Padded cells never enter the statistics, so edge tiles carry
// smaller pixel counts and the overall value is the count-weighted mean of
// the per-tile values.
#pragma once

#include <functional>
#include <iomanip>
#include <map>
#include <span>
#include <sstream>

#include "gridcast/baselines.hpp"
#include "gridcast/data.hpp"
#include "gridcast/model.hpp"

namespace gridcast {

inline double pixelwise_mse(std::span<const Tensor4<float>> pred,
                            std::span<const Tensor4<float>> target) {
  return mse_loss<float>(pred, target);
}

// A predictor sees one tile's history (frames of (1,3,tile_h,tile_w)) and
// emits out_len frames of the same shape.
using TilePredictor = std::function<std::vector<Tensor4<float>>(
    std::span<const Tensor4<float>>, int)>;

inline TilePredictor persistence_predictor() {
  return [](std::span<const Tensor4<float>> hist, int out_len) {
    return persistence_predict(hist, out_len);
  };
}

inline TilePredictor mean_predictor(int window) {
  return [window](std::span<const Tensor4<float>> hist, int out_len) {
    return mean_predict(hist, window, out_len);
  };
}

inline TilePredictor decay_predictor(const DecayAverageConfig& cfg) {
  return [cfg](std::span<const Tensor4<float>> hist, int out_len) {
    return decay_average_predict(hist, cfg, out_len);
  };
}

// The caller keeps `net` alive for the predictor's lifetime.
inline TilePredictor model_predictor(const CascadeNetwork<float>& net) {
  return [&net](std::span<const Tensor4<float>> hist, int out_len) {
    detail::require(out_len == net.cfg.out_len,
                    detail::cat("model_predictor: horizon ", out_len,
                                " does not match checkpoint out_len ",
                                net.cfg.out_len));
    return predict<float>(net, hist);
  };
}

struct EvalReport {
  int in_len = 0, out_len = 0;
  int rows = 0, cols = 0;
  std::vector<std::uint32_t> points;
  std::vector<double> per_horizon_mse;
  std::vector<double> per_tile_mse;     // rows*cols, row-major
  std::vector<std::uint64_t> per_tile_pixels;
  double overall_mse = 0.0;
  std::uint64_t pixels_total = 0;
  std::uint64_t samples = 0;  // (point, tile) rollouts

  double tile_mse(int i, int j) const { return per_tile_mse[i * cols + j]; }
};

inline EvalReport evaluate(const TilePredictor& predictor, const FrameSequence& seq,
                           const TileGrid& grid, int in_len, int out_len,
                           std::span<const std::uint32_t> points) {
  detail::require(!points.empty(), "evaluate: no predicting points");
  detail::require(grid.frame_h == seq.height && grid.frame_w == seq.width,
                  "evaluate: grid does not match the sequence");
  for (std::uint32_t p : points)
    detail::require(p >= static_cast<std::uint32_t>(in_len) &&
                        p + out_len <= seq.size(),
                    detail::cat("evaluate: predicting point ", p,
                                " lacks history or targets (need ", in_len,
                                " before and ", out_len, " after, have ",
                                seq.size(), " frames)"));

  EvalReport rep;
  rep.in_len = in_len;
  rep.out_len = out_len;
  rep.rows = grid.rows;
  rep.cols = grid.cols;
  rep.points.assign(points.begin(), points.end());
  rep.per_horizon_mse.assign(out_len, 0.0);
  rep.per_tile_mse.assign(grid.tiles(), 0.0);
  rep.per_tile_pixels.assign(grid.tiles(), 0);

  std::vector<double> horizon_sse(out_len, 0.0);
  std::vector<std::uint64_t> horizon_count(out_len, 0);
  std::vector<double> tile_sse(grid.tiles(), 0.0);
  double total_sse = 0.0;

  for (std::uint32_t p : points) {
    for (int ti = 0; ti < grid.rows; ++ti) {
      for (int tj = 0; tj < grid.cols; ++tj) {
        std::vector<Tensor4<float>> hist;
        for (int k = in_len; k >= 1; --k) {
          Tensor4<float> tile(1, kFrameChannels, grid.tile_h, grid.tile_w);
          copy_tile_into(tile, 0, seq.frames[p - k], grid, ti, tj);
          hist.push_back(std::move(tile));
        }
        std::vector<Tensor4<float>> preds = predictor(hist, out_len);
        detail::require(static_cast<int>(preds.size()) == out_len,
                        "evaluate: predictor returned wrong horizon count");
        ++rep.samples;

        const int valid_h = std::min(grid.tile_h, grid.frame_h - ti * grid.tile_h);
        const int valid_w = std::min(grid.tile_w, grid.frame_w - tj * grid.tile_w);
        for (int k = 0; k < out_len; ++k) {
          Tensor4<float> target(1, kFrameChannels, grid.tile_h, grid.tile_w);
          copy_tile_into(target, 0, seq.frames[p + k], grid, ti, tj);
          detail::check_same(preds[k], target, "evaluate");
          double sse = 0.0;
          for (int c = 0; c < kFrameChannels; ++c) {
            const float* pp = preds[k].plane(0, c);
            const float* tp = target.plane(0, c);
            for (int y = 0; y < valid_h; ++y)
              for (int x = 0; x < valid_w; ++x) {
                const double d = static_cast<double>(pp[y * grid.tile_w + x]) -
                                 static_cast<double>(tp[y * grid.tile_w + x]);
                sse += d * d;
              }
          }
          const std::uint64_t n =
              static_cast<std::uint64_t>(kFrameChannels) * valid_h * valid_w;
          horizon_sse[k] += sse;
          horizon_count[k] += n;
          tile_sse[ti * grid.cols + tj] += sse;
          rep.per_tile_pixels[ti * grid.cols + tj] += n;
          total_sse += sse;
          rep.pixels_total += n;
        }
      }
    }
  }

  for (int k = 0; k < out_len; ++k)
    rep.per_horizon_mse[k] =
        horizon_count[k] ? horizon_sse[k] / static_cast<double>(horizon_count[k]) : 0.0;
  for (int t = 0; t < grid.tiles(); ++t)
    rep.per_tile_mse[t] =
        rep.per_tile_pixels[t] ? tile_sse[t] / static_cast<double>(rep.per_tile_pixels[t])
                               : 0.0;
  rep.overall_mse =
      rep.pixels_total ? total_sse / static_cast<double>(rep.pixels_total) : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Report serialization: a human-readable table followed by a stable
// machine-readable key/value block.
// ---------------------------------------------------------------------------

inline std::string format_report(const EvalReport& r, const std::string& label) {
  std::ostringstream os;
  os << "# gridcast evaluation report: " << label << "\n";
  os << "# points:";
  for (auto p : r.points) os << ' ' << p;
  os << "\n#\n";
  os << "# horizon       mse\n";
  for (int k = 0; k < r.out_len; ++k)
    os << "#   t+" << (k + 1) << "      " << std::setprecision(6) << std::fixed
       << r.per_horizon_mse[k] << "\n";
  os << "# per-tile mse (" << r.rows << "x" << r.cols << ")\n";
  for (int i = 0; i < r.rows; ++i) {
    os << "#  ";
    for (int j = 0; j < r.cols; ++j)
      os << ' ' << std::setprecision(6) << std::fixed << r.per_tile_mse[i * r.cols + j];
    os << "\n";
  }
  os << "#\n";
  os.unsetf(std::ios::fixed);
  os << std::setprecision(17);
  os << "label " << label << "\n";
  os << "in_len " << r.in_len << "\n";
  os << "out_len " << r.out_len << "\n";
  os << "rows " << r.rows << "\n";
  os << "cols " << r.cols << "\n";
  os << "samples " << r.samples << "\n";
  os << "pixels_total " << r.pixels_total << "\n";
  os << "overall_mse " << r.overall_mse << "\n";
  for (int k = 0; k < r.out_len; ++k)
    os << "horizon_" << (k + 1) << "_mse " << r.per_horizon_mse[k] << "\n";
  for (int i = 0; i < r.rows; ++i)
    for (int j = 0; j < r.cols; ++j)
      os << "tile_" << i << "_" << j << "_mse " << r.per_tile_mse[i * r.cols + j]
         << "\n";
  return os.str();
}

inline void save_report(const EvalReport& r, const std::string& label,
                        const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error(io_errc::io_failure, "cannot open for writing: " + path);
  out << format_report(r, label);
  if (!out) throw io_error(io_errc::io_failure, "write failed: " + path);
}

// Key/value block of a saved report (comment lines skipped).
inline std::map<std::string, std::string> load_report_kv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error(io_errc::io_failure, "cannot open: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) continue;
    kv[line.substr(0, sp)] = line.substr(sp + 1);
  }
  return kv;
}

}  // namespace gridcast
