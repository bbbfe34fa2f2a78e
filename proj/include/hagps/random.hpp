#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hagps {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Splittable seed: every named or indexed child gets its own stream, so adding
// a consumer never perturbs the draws of another one.
class SeedTree {
 public:
  constexpr explicit SeedTree(std::uint64_t seed) : seed_(seed) {}

  constexpr std::uint64_t seed() const { return seed_; }

  constexpr SeedTree child(std::uint64_t index) const {
    return SeedTree(mix64(seed_ ^ mix64(index + 0x632be59bd9b4e019ULL)));
  }

  constexpr SeedTree child(std::string_view name) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return child(h);
  }

  Rng rng() const { return Rng(mix64(seed_)); }

 private:
  std::uint64_t seed_;
};

}  // namespace hagps
