// Copyright 2026 The Onion Audit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ONION_AUDIT_SEEDING_H_
#define ONION_AUDIT_SEEDING_H_

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include <boost/random/uniform_int_distribution.hpp>

namespace onion_audit {

// All stochastic components draw from this engine. The engine itself is
// fully specified by the standard; distributions come from boost::random so
// that draws are identical across standard library implementations.
using Rng = std::mt19937_64;

// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr uint64_t Mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr uint64_t HashLabel(std::string_view label) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a offset basis
  for (char c : label) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent child seed from a parent seed and a sequence of
// integer coordinates, e.g. DeriveSeed(master, row). Order matters.
template <typename... Ts>
  requires(std::is_integral_v<Ts> && ...)
constexpr uint64_t DeriveSeed(uint64_t parent, Ts... coords) {
  uint64_t h = Mix64(parent);
  ((h = Mix64(h ^ Mix64(static_cast<uint64_t>(coords)))), ...);
  return h;
}

// Child seed for a named pipeline stage, e.g. DeriveSeed(master, "reality", 1).
template <typename... Ts>
  requires(std::is_integral_v<Ts> && ...)
constexpr uint64_t DeriveSeed(uint64_t parent, std::string_view stage,
                              Ts... coords) {
  return DeriveSeed(parent, HashLabel(stage), coords...);
}

// Uniform double in [0, 1) from the top 53 bits of a hashed word.
constexpr double UnitFromBits(uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Fisher-Yates shuffle with a portable index distribution.
template <typename T>
void Shuffle(std::vector<T>& items, Rng& rng) {
  for (size_t i = items.size(); i > 1; --i) {
    boost::random::uniform_int_distribution<size_t> pick(0, i - 1);
    std::swap(items[i - 1], items[pick(rng)]);
  }
}

// `count` distinct indices from [0, n), in draw order.
inline std::vector<size_t> SampleWithoutReplacement(size_t n, size_t count,
                                                    Rng& rng) {
  std::vector<size_t> pool(n);
  for (size_t i = 0; i < n; ++i) pool[i] = i;
  for (size_t i = 0; i < count && i < n; ++i) {
    boost::random::uniform_int_distribution<size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(std::min(count, n));
  return pool;
}

}  // namespace onion_audit

#endif  // ONION_AUDIT_SEEDING_H_
