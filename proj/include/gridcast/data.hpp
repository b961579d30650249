// Frame sequences, the TRF1 on-disk format, padding/tiling geometry and
// same-tile mini-batch sampling.
//
// Frames are 3-channel (speed, volume, direction) maps normalized to [0,1];
// raw storage is 8-bit. Timestamps advance on a fixed stride in minutes.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gridcast/tensor.hpp"

namespace gridcast {

inline constexpr int kFrameChannels = 3;

inline float normalize_u8(std::uint8_t v) { return static_cast<float>(v) / 255.0f; }

// Round half up, clamp to [0, 255].
inline std::uint8_t denormalize_u8(float v) {
  const double scaled = std::floor(static_cast<double>(v) * 255.0 + 0.5);
  if (scaled <= 0.0) return 0;
  if (scaled >= 255.0) return 255;
  return static_cast<std::uint8_t>(scaled);
}

// Snap a normalized value onto the 8-bit grid.
inline float quantize_unit(float v) { return normalize_u8(denormalize_u8(v)); }

struct FrameSequence {
  int height = 0, width = 0;
  std::uint32_t stride_minutes = 5;
  std::uint32_t start_timestamp = 0;  // minutes since epoch
  std::vector<Tensor4<float>> frames;  // each (1, 3, height, width)

  std::size_t size() const { return frames.size(); }
  std::uint32_t timestamp(std::size_t t) const {
    return start_timestamp + static_cast<std::uint32_t>(t) * stride_minutes;
  }
};

// ---------------------------------------------------------------------------
// TRF1 file format.
//   "TRF1" | version u8 | T,C,H,W,stride_minutes,start_timestamp as LE u32 |
//   T*C*H*W raw bytes, frame-major then channel, row, column.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline constexpr char kTrfMagic[4] = {'T', 'R', 'F', '1'};
inline constexpr std::uint8_t kTrfVersion = 1;
inline constexpr std::size_t kTrfHeaderBytes = 4 + 1 + 6 * 4;

inline void save_frames(const FrameSequence& seq, const std::string& path) {
  std::string buf;
  buf.append(kTrfMagic, 4);
  buf.push_back(static_cast<char>(kTrfVersion));
  detail::put_u32_le(buf, static_cast<std::uint32_t>(seq.frames.size()));
  detail::put_u32_le(buf, kFrameChannels);
  detail::put_u32_le(buf, static_cast<std::uint32_t>(seq.height));
  detail::put_u32_le(buf, static_cast<std::uint32_t>(seq.width));
  detail::put_u32_le(buf, seq.stride_minutes);
  detail::put_u32_le(buf, seq.start_timestamp);
  for (const auto& f : seq.frames) {
    detail::require(f.c == kFrameChannels && f.h == seq.height && f.w == seq.width,
                    detail::cat("save_frames: frame ", f.shape_str(),
                                " does not match sequence ", seq.height, "x",
                                seq.width));
    for (float v : f.data) buf.push_back(static_cast<char>(denormalize_u8(v)));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error(io_errc::io_failure, "cannot open for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw io_error(io_errc::io_failure, "short write: " + path);
}

inline FrameSequence load_frames(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(io_errc::io_failure, "cannot open: " + path);
  in.seekg(0, std::ios::end);
  const std::uint64_t actual = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);

  unsigned char header[kTrfHeaderBytes];
  if (actual < kTrfHeaderBytes)
    throw io_error(io_errc::truncated,
                   detail::cat("TRF1 header truncated in ", path, ": expected at least ",
                               kTrfHeaderBytes, " bytes, found ", actual));
  in.read(reinterpret_cast<char*>(header), kTrfHeaderBytes);
  if (std::memcmp(header, kTrfMagic, 4) != 0)
    throw io_error(io_errc::bad_magic, "not a TRF1 file: " + path);
  if (header[4] != kTrfVersion)
    throw io_error(io_errc::bad_version,
                   detail::cat("unsupported TRF1 version ", int(header[4]), " in ", path));

  const std::uint32_t t = detail::get_u32_le(header + 5);
  const std::uint32_t c = detail::get_u32_le(header + 9);
  const std::uint32_t h = detail::get_u32_le(header + 13);
  const std::uint32_t w = detail::get_u32_le(header + 17);

  // Validate the payload length against the real file size before any
  // allocation driven by the header fields.
  const std::uint64_t payload = static_cast<std::uint64_t>(t) * c * h * w;
  const std::uint64_t expected = kTrfHeaderBytes + payload;
  if (expected != actual)
    throw io_error(io_errc::truncated,
                   detail::cat("TRF1 payload mismatch in ", path, ": expected ",
                               expected, " bytes, found ", actual));
  detail::require(c == kFrameChannels,
                  detail::cat("TRF1: expected 3 channels, found ", c));

  FrameSequence seq;
  seq.height = static_cast<int>(h);
  seq.width = static_cast<int>(w);
  seq.stride_minutes = detail::get_u32_le(header + 21);
  seq.start_timestamp = detail::get_u32_le(header + 25);
  std::vector<unsigned char> raw(payload);
  if (payload > 0) in.read(reinterpret_cast<char*>(raw.data()), payload);
  if (!in && payload > 0)
    throw io_error(io_errc::io_failure, "read failed: " + path);

  std::size_t off = 0;
  for (std::uint32_t ti = 0; ti < t; ++ti) {
    Tensor4<float> f(1, kFrameChannels, seq.height, seq.width);
    for (std::size_t i = 0; i < f.size(); ++i) f.data[i] = normalize_u8(raw[off + i]);
    off += f.size();
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Tiling geometry. Frames are padded bottom/right with zeros to a whole
// number of tiles.
// ---------------------------------------------------------------------------

struct TileGrid {
  int frame_h = 0, frame_w = 0;
  int tile_h = 0, tile_w = 0;
  int rows = 0, cols = 0;
  int pad_h = 0, pad_w = 0;

  int tiles() const { return rows * cols; }
};

inline TileGrid plan_tiles(int frame_h, int frame_w, int tile_h, int tile_w) {
  detail::require(frame_h > 0 && frame_w > 0, "plan_tiles: empty frame");
  detail::require(tile_h > 0 && tile_w > 0, "plan_tiles: empty tile");
  detail::require(tile_h <= 2 * frame_h && tile_w <= 2 * frame_w,
                  detail::cat("plan_tiles: tile ", tile_h, "x", tile_w,
                              " larger than twice the frame ", frame_h, "x",
                              frame_w));
  TileGrid g;
  g.frame_h = frame_h;
  g.frame_w = frame_w;
  g.tile_h = tile_h;
  g.tile_w = tile_w;
  g.rows = (frame_h + tile_h - 1) / tile_h;
  g.cols = (frame_w + tile_w - 1) / tile_w;
  g.pad_h = g.rows * tile_h - frame_h;
  g.pad_w = g.cols * tile_w - frame_w;
  return g;
}

// Copy tile (ti, tj) of a (B,C,frame_h,frame_w) tensor into the batch slot
// `dst_b` of dst, zero-filling past the frame edge.
template <typename T>
void copy_tile_into(Tensor4<T>& dst, int dst_b, const Tensor4<T>& frame,
                    const TileGrid& g, int ti, int tj, int src_b = 0) {
  detail::require(frame.h == g.frame_h && frame.w == g.frame_w,
                  detail::cat("copy_tile_into: frame ", frame.shape_str(),
                              " does not match grid ", g.frame_h, "x", g.frame_w));
  detail::require(dst.h == g.tile_h && dst.w == g.tile_w && dst.c == frame.c,
                  "copy_tile_into: bad destination shape");
  detail::require(ti >= 0 && ti < g.rows && tj >= 0 && tj < g.cols,
                  "copy_tile_into: tile index out of range");
  const int y0 = ti * g.tile_h, x0 = tj * g.tile_w;
  for (int c = 0; c < frame.c; ++c) {
    T* dp = dst.plane(dst_b, c);
    const T* sp = frame.plane(src_b, c);
    for (int y = 0; y < g.tile_h; ++y) {
      T* drow = dp + y * g.tile_w;
      const int sy = y0 + y;
      if (sy >= g.frame_h) {
        std::fill_n(drow, g.tile_w, T(0));
        continue;
      }
      const int valid = std::min(g.tile_w, g.frame_w - x0);
      std::copy_n(sp + sy * g.frame_w + x0, valid, drow);
      if (valid < g.tile_w) std::fill_n(drow + valid, g.tile_w - valid, T(0));
    }
  }
}

template <typename T>
std::vector<std::vector<Tensor4<T>>> tile_split(const Tensor4<T>& frame,
                                                const TileGrid& g) {
  std::vector<std::vector<Tensor4<T>>> tiles(g.rows);
  for (int i = 0; i < g.rows; ++i) {
    for (int j = 0; j < g.cols; ++j) {
      Tensor4<T> t(frame.b, frame.c, g.tile_h, g.tile_w);
      for (int b = 0; b < frame.b; ++b) copy_tile_into(t, b, frame, g, i, j, b);
      tiles[i].push_back(std::move(t));
    }
  }
  return tiles;
}

template <typename T>
Tensor4<T> tile_join(const std::vector<std::vector<Tensor4<T>>>& tiles,
                     const TileGrid& g) {
  detail::require(static_cast<int>(tiles.size()) == g.rows,
                  "tile_join: row count does not match grid");
  const Tensor4<T>& first = tiles.at(0).at(0);
  Tensor4<T> frame(first.b, first.c, g.frame_h, g.frame_w);
  for (int i = 0; i < g.rows; ++i) {
    detail::require(static_cast<int>(tiles[i].size()) == g.cols,
                    "tile_join: column count does not match grid");
    for (int j = 0; j < g.cols; ++j) {
      const Tensor4<T>& t = tiles[i][j];
      detail::require(t.h == g.tile_h && t.w == g.tile_w,
                      "tile_join: tile shape does not match grid");
      const int y0 = i * g.tile_h, x0 = j * g.tile_w;
      for (int b = 0; b < frame.b; ++b)
        for (int c = 0; c < frame.c; ++c) {
          const T* sp = t.plane(b, c);
          T* dp = frame.plane(b, c);
          const int ylim = std::min(g.tile_h, g.frame_h - y0);
          const int xlim = std::min(g.tile_w, g.frame_w - x0);
          for (int y = 0; y < ylim; ++y)
            std::copy_n(sp + y * g.tile_w, xlim, dp + (y0 + y) * g.frame_w + x0);
        }
    }
  }
  return frame;
}

// ---------------------------------------------------------------------------
// Same-tile mini-batch sampling.
// ---------------------------------------------------------------------------

struct SampleBatch {
  int tile_row = 0, tile_col = 0;
  std::vector<Tensor4<float>> inputs;   // in_len tensors of (B,3,th,tw)
  std::vector<Tensor4<float>> targets;  // out_len tensors
  std::vector<int> window_starts;       // source id per batch row
};

// Deterministic epoch stream: every admissible (tile, window) pair appears
// exactly once per epoch, each batch drawn from a single tile. The stream
// reshuffles with a seed derived from (seed, epoch) and runs indefinitely.
class BatchStream {
 public:
  BatchStream(const FrameSequence& seq, const TileGrid& grid, int in_len,
              int out_len, int batch_size, std::uint64_t seed)
      : seq_(&seq), grid_(grid), in_len_(in_len), out_len_(out_len),
        batch_size_(batch_size), seed_(seed) {
    detail::require(in_len >= 1 && out_len >= 1 && batch_size >= 1,
                    "BatchStream: bad lengths");
    const int span = in_len + out_len;
    detail::require(static_cast<int>(seq.size()) >= span,
                    detail::cat("BatchStream: dataset of ", seq.size(),
                                " frames is shorter than in_len+out_len = ", span));
    windows_per_tile_ = static_cast<int>(seq.size()) - span + 1;
    reshuffle();
  }

  int windows_per_tile() const { return windows_per_tile_; }

  int batches_per_epoch() const {
    const int per_tile = (windows_per_tile_ + batch_size_ - 1) / batch_size_;
    return per_tile * grid_.tiles();
  }

  std::uint64_t epoch() const { return epoch_; }

  SampleBatch next() {
    if (cursor_ >= plan_.size()) {
      ++epoch_;
      reshuffle();
    }
    const PlannedBatch& pb = plan_[cursor_++];
    return materialize(pb);
  }

 private:
  struct PlannedBatch {
    int ti, tj;
    std::vector<int> windows;
  };

  void reshuffle() {
    SeededRng rng(mix64(seed_, epoch_));
    plan_.clear();
    cursor_ = 0;
    std::vector<int> starts(windows_per_tile_);
    for (int i = 0; i < grid_.rows; ++i)
      for (int j = 0; j < grid_.cols; ++j) {
        for (int k = 0; k < windows_per_tile_; ++k) starts[k] = k;
        rng.shuffle(starts);
        for (int k = 0; k < windows_per_tile_; k += batch_size_) {
          PlannedBatch pb;
          pb.ti = i;
          pb.tj = j;
          const int hi = std::min(k + batch_size_, windows_per_tile_);
          pb.windows.assign(starts.begin() + k, starts.begin() + hi);
          plan_.push_back(std::move(pb));
        }
      }
    rng.shuffle(plan_);
  }

  SampleBatch materialize(const PlannedBatch& pb) const {
    SampleBatch out;
    out.tile_row = pb.ti;
    out.tile_col = pb.tj;
    out.window_starts = pb.windows;
    const int b = static_cast<int>(pb.windows.size());
    for (int j = 0; j < in_len_; ++j) {
      Tensor4<float> t(b, kFrameChannels, grid_.tile_h, grid_.tile_w);
      for (int s = 0; s < b; ++s)
        copy_tile_into(t, s, seq_->frames[pb.windows[s] + j], grid_, pb.ti, pb.tj);
      out.inputs.push_back(std::move(t));
    }
    for (int j = 0; j < out_len_; ++j) {
      Tensor4<float> t(b, kFrameChannels, grid_.tile_h, grid_.tile_w);
      for (int s = 0; s < b; ++s)
        copy_tile_into(t, s, seq_->frames[pb.windows[s] + in_len_ + j], grid_,
                       pb.ti, pb.tj);
      out.targets.push_back(std::move(t));
    }
    return out;
  }

  const FrameSequence* seq_;
  TileGrid grid_;
  int in_len_, out_len_, batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  int windows_per_tile_ = 0;
  std::vector<PlannedBatch> plan_;
  std::size_t cursor_ = 0;
};

// One full epoch, materialized. Convenience for tests and small runs.
inline std::vector<SampleBatch> make_batches(const FrameSequence& seq,
                                             const TileGrid& grid, int in_len,
                                             int out_len, int batch_size,
                                             std::uint64_t seed) {
  BatchStream stream(seq, grid, in_len, out_len, batch_size, seed);
  std::vector<SampleBatch> out;
  const int n = stream.batches_per_epoch();
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(stream.next());
  return out;
}

// ---------------------------------------------------------------------------
// Dataset manifest: tab-separated "split  city  path" lines.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string split;  // train | val | test
  std::string city;
  std::string path;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  const ManifestEntry* find(const std::string& split) const {
    for (const auto& e : entries)
      if (e.split == split) return &e;
    return nullptr;
  }
};

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error(io_errc::io_failure, "cannot open for writing: " + path);
  out << "# gridcast dataset manifest v1\n";
  for (const auto& e : m.entries)
    out << e.split << '\t' << e.city << '\t' << e.path << '\n';
  if (!out) throw io_error(io_errc::io_failure, "write failed: " + path);
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error(io_errc::io_failure, "cannot open: " + path);
  DatasetManifest m;
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = line.find('\t', tab1 == std::string::npos ? 0 : tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos)
      throw io_error(io_errc::io_failure, "malformed manifest line: " + line);
    ManifestEntry e;
    e.split = line.substr(0, tab1);
    e.city = line.substr(tab1 + 1, tab2 - tab1 - 1);
    e.path = line.substr(tab2 + 1);
    if (e.split != "train" && e.split != "val" && e.split != "test")
      throw io_error(io_errc::io_failure, "unknown split tag: " + e.split);
    std::filesystem::path p(e.path);
    if (p.is_relative()) e.path = (base / p).string();
    m.entries.push_back(std::move(e));
  }
  return m;
}

// Contiguous sub-range [from, from+count) with shifted start timestamp.
inline FrameSequence subsequence(const FrameSequence& seq, std::size_t from,
                                 std::size_t count) {
  detail::require(from + count <= seq.size(), "subsequence: range out of bounds");
  FrameSequence out;
  out.height = seq.height;
  out.width = seq.width;
  out.stride_minutes = seq.stride_minutes;
  out.start_timestamp = seq.timestamp(from);
  out.frames.assign(seq.frames.begin() + from, seq.frames.begin() + from + count);
  return out;
}

}  // namespace gridcast
