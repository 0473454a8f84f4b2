#pragma once

// Portable deterministic randomness.
//
// Everything random in ovoda (synthetic scenes, proposal noise, synthetic
// embeddings) is drawn from SplitMix64 streams keyed by FNV-1a hashes, with
// distributions written out here instead of taken from <random>: the standard
// distributions are implementation-defined, and synthetic anchors have to be
// reproducible bit-for-bit by other components (see docs/synthetic_provider.md).

#include <cctype>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

namespace ovoda {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// FNV-1a over raw bytes, continuing from `h`.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

/// FNV-1a over the 8 little-endian bytes of `v`, continuing from `h`.
inline std::uint64_t fnv1a64_u64(std::uint64_t v, std::uint64_t h = kFnvOffset) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffU;
    h *= kFnvPrime;
  }
  return h;
}

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t state) : state_(state) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n). `n` must be positive.
  std::uint64_t below(std::uint64_t n) { return next() % n; }

  /// Standard normal via Box-Muller, cosine branch only (one draw per call).
  double gaussian() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

 private:
  std::uint64_t state_;
};

/// Derives an independent stream seed from a base seed and a list of tags.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::string_view> tags) {
  std::uint64_t h = fnv1a64_u64(seed);
  for (auto tag : tags) {
    h = fnv1a64(tag, h);
    h = fnv1a64(std::string_view("\x1f", 1), h);
  }
  return h;
}

/// Lowercase ASCII, whitespace runs collapsed to one space, trimmed.
inline std::string canonical_text(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

/// Key of the anchor stream for `text`: FNV-1a over (seed as 8 LE bytes,
/// 0x1f, canonical text bytes).
inline std::uint64_t anchor_key(std::uint64_t seed, std::string_view text) {
  std::uint64_t h = fnv1a64_u64(seed);
  h = fnv1a64(std::string_view("\x1f", 1), h);
  return fnv1a64(canonical_text(text), h);
}

/// The synthetic embedding of a string: `dim` standard normals drawn from
/// SplitMix64(anchor_key(seed, text)), then L2-normalized.
inline std::vector<double> anchor(std::uint64_t seed, std::string_view text, std::size_t dim) {
  SplitMix64 rng(anchor_key(seed, text));
  std::vector<double> v(dim);
  double norm2 = 0.0;
  for (auto& x : v) {
    x = rng.gaussian();
    norm2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& x : v) x *= inv;
  return v;
}

}  // namespace ovoda
