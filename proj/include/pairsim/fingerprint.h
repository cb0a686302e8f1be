/* Copyright 2026 The pairsim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <compare>
#include <cstdint>
#include <functional>

namespace pairsim {

// Avalanche mixer (splitmix64 finalizer).
constexpr std::uint64_t Mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

constexpr std::uint64_t HashCombine(std::uint64_t seed, std::uint64_t value) {
  return Mix64(seed ^ (Mix64(value) + 0x9e3779b97f4a7c15ULL + (seed << 6) +
                       (seed >> 2)));
}

// Fingerprint of one token block, chained with the fingerprint of the block
// before it. Two prompts share fingerprints exactly up to their longest common
// block prefix.
struct BlockFingerprint {
  std::uint64_t value = 0;

  friend constexpr auto operator<=>(const BlockFingerprint&,
                                    const BlockFingerprint&) = default;
};

inline constexpr std::uint64_t kChainRootSeed = 0x243f6a8885a308d3ULL;

// Fingerprint of a block given its predecessor's fingerprint (nullptr-free:
// the first block chains from kChainRootSeed).
constexpr BlockFingerprint ChainFingerprint(const BlockFingerprint* prev,
                                            std::uint64_t block_content_id) {
  const std::uint64_t parent = prev ? prev->value : kChainRootSeed;
  return BlockFingerprint{HashCombine(parent, block_content_id)};
}

}  // namespace pairsim

template <>
struct std::hash<pairsim::BlockFingerprint> {
  std::size_t operator()(const pairsim::BlockFingerprint& fp) const noexcept {
    return static_cast<std::size_t>(fp.value);
  }
};
