// Binary portable-graymap (P5) export of frame channels, plus per-channel
// absolute-difference images against a reference sequence.
#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "gridcast/data.hpp"

namespace gridcast {

inline void write_pgm(const std::string& path, int h, int w,
                      const std::vector<std::uint8_t>& bytes) {
  detail::require(bytes.size() == static_cast<std::size_t>(h) * w,
                  "write_pgm: byte count does not match dimensions");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error(io_errc::io_failure, "cannot open for writing: " + path);
  out << "P5\n" << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw io_error(io_errc::io_failure, "write failed: " + path);
}

struct PgmImage {
  int h = 0, w = 0;
  std::vector<std::uint8_t> bytes;
};

inline PgmImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(io_errc::io_failure, "cannot open: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw io_error(io_errc::bad_magic, "not a binary PGM: " + path);
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (maxval != 255)
    throw io_error(io_errc::bad_version, "unsupported PGM maxval: " + path);
  in.get();  // single whitespace after the header
  PgmImage img;
  img.h = h;
  img.w = w;
  img.bytes.resize(static_cast<std::size_t>(h) * w);
  in.read(reinterpret_cast<char*>(img.bytes.data()),
          static_cast<std::streamsize>(img.bytes.size()));
  if (!in) throw io_error(io_errc::truncated, "PGM payload truncated: " + path);
  return img;
}

inline const char* channel_name(int c) {
  static const char* names[3] = {"speed", "volume", "direction"};
  return names[c];
}

// One image per channel per frame: <prefix>_f<t>_<channel>.pgm; with a
// reference, adds <prefix>_f<t>_<channel>_diff.pgm holding |frame - ref|.
// Returns the written paths.
inline std::vector<std::string> export_heatmaps(const FrameSequence& seq,
                                                const std::string& prefix,
                                                const FrameSequence* reference = nullptr) {
  if (reference) {
    detail::require(reference->size() == seq.size() &&
                        reference->height == seq.height &&
                        reference->width == seq.width,
                    "export_heatmaps: reference does not match the sequence");
  }
  std::vector<std::string> written;
  const std::size_t plane = static_cast<std::size_t>(seq.height) * seq.width;
  std::vector<std::uint8_t> bytes(plane);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    for (int c = 0; c < kFrameChannels; ++c) {
      const float* p = seq.frames[t].plane(0, c);
      for (std::size_t i = 0; i < plane; ++i) bytes[i] = denormalize_u8(p[i]);
      std::string path = detail::cat(prefix, "_f", t, "_", channel_name(c), ".pgm");
      write_pgm(path, seq.height, seq.width, bytes);
      written.push_back(path);
      if (reference) {
        const float* r = reference->frames[t].plane(0, c);
        for (std::size_t i = 0; i < plane; ++i)
          bytes[i] = denormalize_u8(std::abs(p[i] - r[i]));
        std::string dpath =
            detail::cat(prefix, "_f", t, "_", channel_name(c), "_diff.pgm");
        write_pgm(dpath, seq.height, seq.width, bytes);
        written.push_back(dpath);
      }
    }
  }
  return written;
}

}  // namespace gridcast
