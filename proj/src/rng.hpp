#pragma once

#include <cstdint>
#include <random>

namespace marketfx {

// splitmix64 finalizer, used to derive well-separated sub-stream seeds from a
// master seed.  Deterministic across platforms (unlike std::seed_seq).
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Derive the seed of sub-stream `stream` from `base`.  Used so that e.g. the
// population draw, the treatment draw and the perturbation draw of one
// experiment come from independent streams of the same master seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t s = base;
  std::uint64_t h = splitmix64_next(s);
  s ^= stream * 0xbf58476d1ce4e5b9ull + 0x94d049bb133111ebull;
  h ^= splitmix64_next(s);
  return h ? h : 0x9e3779b97f4a7c15ull;
}

// Thin wrapper over mt19937_64 with explicit, platform-independent
// uint64 -> double conversion (std::uniform_real_distribution is not
// bit-reproducible across standard libraries).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // uniform on [0, 1) with 53 bits of precision
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  double rademacher() { return bernoulli(0.5) ? 1.0 : -1.0; }

  std::uint64_t next_u64() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace marketfx
