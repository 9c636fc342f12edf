#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace fedmlp {

// SplitMix64 finalizer. Used to derive independent, reproducible seed
// streams from a base seed plus a tuple of tags, e.g. (seed, client, round).
constexpr uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// FNV-1a, for turning stream names ("select", "client", ...) into tags.
constexpr uint64_t tag(std::string_view name) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> parts) {
  uint64_t h = splitmix64(base);
  for (uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

inline std::mt19937_64 make_rng(uint64_t base, std::initializer_list<uint64_t> parts = {}) {
  return std::mt19937_64(derive_seed(base, parts));
}

}  // namespace fedmlp
