// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "distillkit/errors.hpp"

namespace distillkit {

namespace detail {

// SplitMix64 finalizer. Full-avalanche mixing of a 64-bit word.
inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Counter-based stream: output i is a pure function of (key, i), so a
// stream can be resumed from its (key, counter) pair and child streams
// never share state with their parent. There is no global generator;
// every stochastic consumer takes a stream argument.
class RngStream {
 public:
  RngStream() : RngStream(0) {}
  explicit RngStream(std::uint64_t seed)
      : key_(detail::mix64(seed ^ 0x853c49e6748fea9bULL)), counter_(0) {}

  [[nodiscard]] static RngStream restore(std::uint64_t key,
                                          std::uint64_t counter) {
    RngStream s(0);
    s.key_ = key;
    s.counter_ = counter;
    return s;
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  // Child streams are keyed by label or index; they start at counter 0
  // and are independent of any draws made from this stream.
  RngStream split(std::string_view label) const {
    return restore(detail::mix64(key_ ^ detail::fnv1a64(label)), 0);
  }
  RngStream split(std::uint64_t index) const {
    return restore(
        detail::mix64(key_ ^ detail::mix64(index + 0x9e3779b97f4a7c15ULL)), 0);
  }

  std::uint64_t next_u64() {
    std::uint64_t c = counter_++;
    return detail::mix64(key_ ^ detail::mix64(c * 0x9e3779b97f4a7c15ULL +
                                              0x632be59bd9b4e019ULL));
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in (0, 1]; safe argument for log().
  double next_unit_open() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

  // Unbiased integer in [0, n) via rejection.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw ContractError("next_below: n must be positive");
    std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    for (;;) {
      std::uint64_t v = next_u64();
      if (v < limit) return v % n;
    }
  }

  // Standard normal via Box-Muller (one value per pair of uniforms).
  double next_normal() {
    double u1 = next_unit_open();
    double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace distillkit
