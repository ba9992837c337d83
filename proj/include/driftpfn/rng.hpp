// Deterministic random number generation.
//
// Everything downstream of a seed must reproduce bit-identically across runs
// and platforms, so no std::*_distribution is used anywhere: xoshiro256**
// provides the stream and the distributions below are fixed algorithms on top
// of it. Streams are cheap value types; derive independent substreams with
// RngState::substream instead of sharing one state across threads.
#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "driftpfn/common.hpp"

namespace driftpfn {

inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

class RngState {
 public:
  RngState() : RngState(0) {}

  explicit RngState(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  // Independent child stream identified by a tag sequence. The derivation
  // hashes (seed, tags...) so substreams do not depend on draw order.
  static RngState substream(std::uint64_t seed,
                            std::initializer_list<std::uint64_t> tags) {
    std::uint64_t x = seed;
    std::uint64_t acc = splitmix64(x);
    for (std::uint64_t t : tags) {
      x ^= t + 0x9E3779B97F4A7C15ull + (acc << 6) + (acc >> 2);
      acc = splitmix64(x);
    }
    return RngState(acc);
  }

  std::uint64_t next_u64() {
    auto rotl = [](std::uint64_t v, int k) {
      return (v << k) | (v >> (64 - k));
    };
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform in (0, 1); safe as a log argument.
  double uniform_pos() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53 + 0x1.0p-54;
  }

  // Uniform integer in [lo, hi], inclusive. Unbiased via rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    DRIFTPFN_CHECK(lo <= hi);
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next_u64());  // full range
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % span;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return lo + static_cast<std::int64_t>(v % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller. Uses two draws per value and keeps no
  // cached spare, so the state stays four words and serializes exactly.
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) {
    return mean + stddev * normal();
  }

  // Log-uniform over [lo, hi], lo > 0.
  double log_uniform(double lo, double hi) {
    DRIFTPFN_CHECK(lo > 0.0 && hi >= lo);
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(
          uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string serialize() const {
    std::string out;
    char buf[17];
    for (std::uint64_t w : s_) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), w, 16);
      out.append(16 - static_cast<std::size_t>(p - buf), '0');
      out.append(buf, p);
    }
    return out;
  }

  static RngState deserialize(const std::string& hex) {
    if (hex.size() != 64) throw DataError("rng state: expected 64 hex chars");
    RngState r;
    for (int i = 0; i < 4; ++i) {
      std::uint64_t w = 0;
      auto [p, ec] = std::from_chars(hex.data() + 16 * i,
                                     hex.data() + 16 * (i + 1), w, 16);
      if (ec != std::errc() || p != hex.data() + 16 * (i + 1))
        throw DataError("rng state: bad hex");
      r.s_[i] = w;
    }
    return r;
  }

  friend bool operator==(const RngState&, const RngState&) = default;

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace driftpfn
