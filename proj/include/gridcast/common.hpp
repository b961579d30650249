// Shared error types, deterministic RNG and small string helpers.
#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridcast {

struct error : std::runtime_error {
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Precondition violation on tensor/kernel shapes.
struct shape_error : error {
  explicit shape_error(const std::string& msg) : error(msg) {}
};

// File-level failures carry a kind so callers can tell corruption apart
// from environment problems.
enum class io_errc { bad_magic, bad_version, truncated, io_failure };

struct io_error : error {
  io_errc code;
  io_error(io_errc c, const std::string& msg) : error(msg), code(c) {}
};

struct config_error : error {
  explicit config_error(const std::string& msg) : error(msg) {}
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw shape_error(msg);
}

template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail

// splitmix64-style combiner for deriving child seeds (per epoch, per worker).
inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic random source. All draws are derived from the raw mt19937_64
// stream with fixed arithmetic, so sequences are reproducible bit-for-bit
// for a given seed no matter which standard library we build against.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // Uniform in [0, 1).
  double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection-free modulo is fine here; n is tiny next to 2^64 so the
    // bias is far below anything observable in tests.
    return n == 0 ? 0 : gen_() % n;
  }

  bool bernoulli(double p) { return unit() < p; }

  // Fisher-Yates with draws from this stream.
  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent stream (e.g. per epoch or per worker) by folding
  // a salt into a draw from this one. splitmix64 finisher decorrelates.
  SeededRng fork(std::uint64_t salt) {
    std::uint64_t z = (raw() ^ salt) + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return SeededRng(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace gridcast
