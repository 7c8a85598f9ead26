#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

namespace ecmvae {

// xoshiro256++ seeded through splitmix64. Every stochastic op takes one of
// these explicitly; there is no global generator. fork() derives an
// independent child stream from the construction key, not from the current
// state, so fork(k) is stable no matter how many draws happened in between.
class Rng {
 public:
  explicit Rng(uint64_t seed) : key_(seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t x = a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2));
    return splitmix64(x);
  }

  Rng fork(uint64_t stream) const { return Rng(mix(key_, stream)); }
  Rng fork(uint64_t a, uint64_t b) const { return Rng(mix(mix(key_, a), b)); }

  uint64_t key() const { return key_; }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform on (0,1]; never returns 0 so log(u) is safe
  double uniform() { return double((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; the spare is cached
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // [0,n), n > 0
  int64_t uniform_int(int64_t n) {
    return int64_t((static_cast<__uint128_t>(next_u64()) * static_cast<__uint128_t>(n)) >> 64);
  }

  // categorical draw from weights (need not be normalized)
  int categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u <= acc) return int(i);
    }
    return int(weights.size()) - 1;
  }

 private:
  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t key_;
  uint64_t s_[4];
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// stream ids used to key child generators; keeps call sites grep-able
namespace streams {
inline constexpr uint64_t kDataLayout = 101;
inline constexpr uint64_t kDataStyle = 102;
inline constexpr uint64_t kDataTimbre = 103;
inline constexpr uint64_t kDataAudioNoise = 104;
inline constexpr uint64_t kDataFrameNoise = 105;
inline constexpr uint64_t kDataActivity = 106;
inline constexpr uint64_t kDataProjection = 107;
inline constexpr uint64_t kDataSplit = 108;
inline constexpr uint64_t kModelInit = 201;
inline constexpr uint64_t kTrainShuffle = 301;
inline constexpr uint64_t kTrainClip = 302;
inline constexpr uint64_t kEval = 303;
}  // namespace streams

}  // namespace ecmvae
