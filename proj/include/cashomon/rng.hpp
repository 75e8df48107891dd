#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cashomon {

// All randomness in the library flows from a single root seed. Sub-streams are
// derived by mixing the root with fixed tags so that adding a consumer never
// perturbs the draws of an existing one.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = splitmix64(root);
  for (std::uint64_t t : tags) s = splitmix64(s ^ (t + 0x9e3779b97f4a7c15ULL));
  return s;
}

inline std::mt19937_64 make_engine(std::uint64_t root, std::initializer_list<std::uint64_t> tags) {
  return std::mt19937_64(derive_seed(root, tags));
}

}  // namespace cashomon
