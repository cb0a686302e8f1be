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

#include <cstdint>
#include <limits>
#include <set>
#include <span>
#include <unordered_map>

#include "pairsim/fingerprint.h"

namespace pairsim {

// Block-granular KV prefix cache metadata for one instance, LRU-evicted.
//
// Each resident block remembers its last-touch time and its depth in the
// prompt that inserted it. Eviction takes the least recently touched block
// first and, among blocks touched at the same instant, the deepest one, so
// the shallow blocks of widely shared prefixes outlive their suffixes.
class PrefixCache {
 public:
  static constexpr std::int64_t kBytesPerBlock = 16;  // hash value + block id

  PrefixCache(std::int64_t capacity_tokens, std::int64_t block_tokens);

  static PrefixCache Unbounded(std::int64_t block_tokens);

  // Reusable leading tokens of the prompt; refreshes the matched blocks.
  std::int64_t Query(std::span<const BlockFingerprint> prompt, double now);

  // Same answer as Query without touching LRU state.
  std::int64_t Probe(std::span<const BlockFingerprint> prompt) const;

  // Makes the prompt's blocks resident (at most capacity_blocks() of them,
  // leading first). Returns the number of evicted blocks.
  std::int64_t Insert(std::span<const BlockFingerprint> prompt, double now);

  bool Contains(BlockFingerprint fp) const { return entries_.contains(fp); }

  std::int64_t capacity_tokens() const { return capacity_tokens_; }
  std::int64_t block_tokens() const { return block_tokens_; }
  std::int64_t capacity_blocks() const { return capacity_blocks_; }
  std::int64_t resident_blocks() const {
    return static_cast<std::int64_t>(entries_.size());
  }
  std::int64_t resident_tokens() const {
    return resident_blocks() * block_tokens_;
  }
  bool unbounded() const {
    return capacity_tokens_ == std::numeric_limits<std::int64_t>::max();
  }

  // Scheduler-side metadata footprint of a cache this size.
  std::int64_t MetadataBytes() const;
  static std::int64_t MetadataBytesForBlocks(std::int64_t blocks) {
    return kBytesPerBlock * blocks;
  }

 private:
  struct Entry {
    double touched;
    std::int64_t depth;
  };
  struct LruKey {
    double touched;
    std::int64_t depth;
    std::uint64_t fp;

    bool operator<(const LruKey& o) const {
      if (touched != o.touched) return touched < o.touched;
      if (depth != o.depth) return depth > o.depth;
      return fp < o.fp;
    }
  };

  std::size_t LeadingRun(std::span<const BlockFingerprint> prompt) const;
  void Touch(BlockFingerprint fp, Entry& entry, double now);

  std::int64_t capacity_tokens_;
  std::int64_t block_tokens_;
  std::int64_t capacity_blocks_;
  std::unordered_map<BlockFingerprint, Entry> entries_;
  std::set<LruKey> lru_;
};

}  // namespace pairsim
