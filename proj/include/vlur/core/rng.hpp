#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>

#include "vlur/core/common.hpp"

namespace vlur::rng {

// splitmix64; the generator behind every stream. Streams are derived from
// (seed, tags...) so any point of the pipeline can be re-created from the
// base seed plus its position — nothing depends on global generator state,
// which is what makes checkpoint resume and re-drawn negatives reproducible.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Stream {
 public:
  explicit Stream(uint64_t state) : state_(state) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // uniform in [0,1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
  }

  // standard normal, Box-Muller
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

inline uint64_t mix(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
  return splitmix64(s);
}

// Derive a stream from a base seed and a chain of tags. String tags are
// hashed; numeric tags mixed directly.
inline Stream stream(uint64_t seed, std::initializer_list<uint64_t> tags) {
  uint64_t s = seed;
  for (uint64_t t : tags) s = mix(s, t);
  return Stream(s);
}

inline uint64_t tag(const std::string& name) { return fnv1a64(name); }

inline Stream stream(uint64_t seed, const std::string& name,
                     std::initializer_list<uint64_t> tags = {}) {
  uint64_t s = mix(seed, tag(name));
  for (uint64_t t : tags) s = mix(s, t);
  return Stream(s);
}

}  // namespace vlur::rng
