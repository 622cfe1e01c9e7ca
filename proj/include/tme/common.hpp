#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tme {

class EngineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// FNV-1a, 64 bit. Used for content hashes (cache keys, config hashes,
// parameter fingerprints). Not cryptographic.
class Fnv {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 1099511628211ULL;
    }
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  template <typename T>
  void update_pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    update(&v, sizeof(T));
  }
  uint64_t digest() const { return h_; }

  static uint64_t of_bytes(const void* data, std::size_t n) {
    Fnv f;
    f.update(data, n);
    return f.digest();
  }
  static uint64_t of_string(const std::string& s) { return of_bytes(s.data(), s.size()); }

 private:
  uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::string hex64(uint64_t h);

// splitmix64 finalizer; used to derive independent seed streams.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG. Distributions are hand-rolled on top of the raw
// 64-bit stream so results do not depend on the standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : s_(seed == 0 ? 0x9e3779b97f4a7c15ULL : seed) {
    for (int i = 0; i < 4; ++i) next_u64();
  }

  uint64_t next_u64() {
    // xorshift64* core
    s_ ^= s_ >> 12;
    s_ ^= s_ << 25;
    s_ ^= s_ >> 27;
    return s_ * 0x2545f4914f6cdd1dULL;
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds, rejection sampled (unbiased)
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (lo > hi) throw EngineError("uniform_int: empty range");
    uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<int64_t>(next_u64());  // full 64-bit range
    uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return lo + static_cast<int64_t>(r % range);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // Box-Muller
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925287 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from [0, n), in draw order
  std::vector<long> sample_without_replacement(long n, long k);

 private:
  uint64_t s_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Warnings go to stderr; tests may install a capture hook.
void warn(const std::string& msg);
void set_warn_hook(std::function<void(const std::string&)> hook);

}  // namespace tme
