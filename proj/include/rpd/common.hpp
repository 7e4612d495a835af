#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rpd {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

std::string hash_hex(uint64_t h);

// SplitMix64. Self-contained so streams are reproducible across
// standard libraries and platforms, not just across runs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive on both ends.
  int uniform_int(int lo, int hi) {
    require(lo <= hi, "uniform_int: empty range");
    const uint64_t span = uint64_t(int64_t(hi) - int64_t(lo)) + 1;
    const uint64_t r = uint64_t((unsigned __int128)(next_u64()) * span >> 64);
    return int(int64_t(lo) + int64_t(r));
  }

  double normal(double mean = 0.0, double stddev = 1.0);

  // Child stream keyed off the current state; does not advance the parent.
  Rng child(uint64_t tag) const {
    uint64_t z = state_ ^ (tag * 0x9e3779b97f4a7c15ull + 0x7f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    return Rng(z ^ (z >> 27));
  }

  Rng child(std::string_view tag) const { return child(fnv1a64(tag)); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(uniform_int(0, int(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from {0, ..., n-1}, in draw order.
  std::vector<int> sample_without_replacement(int n, int k);

 private:
  uint64_t state_;
};

// Deterministic purpose-tagged seed derivation for run manifests.
inline uint64_t derive_seed(uint64_t base, std::string_view purpose, uint64_t index = 0) {
  uint64_t h = fnv1a64(purpose);
  h ^= base + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  h ^= index * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  return h ^ (h >> 31);
}

}  // namespace rpd
