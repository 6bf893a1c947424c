#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace skel3d {

// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t splitmix64(std::uint64_t x);

// Combines a list of integers into one seed. Order matters.
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

// FNV-1a over raw bytes.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t basis = 14695981039346656037ULL);
std::uint64_t fnv1a(std::string_view text);

// Deterministic random source. Only the engine (mt19937_64, fully specified by
// the standard) is taken from the library; the distributions are implemented
// here so that streams are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi], unbiased.
  int uniform_int(int lo, int hi);
  bool bernoulli(double p) { return uniform() < p; }
  // Standard normal via Box-Muller (pairs are cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace skel3d
