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

#include "pairsim/prefix_cache.h"

#include <algorithm>
#include <unordered_set>

#include "pairsim/errors.h"

namespace pairsim {

PrefixCache::PrefixCache(std::int64_t capacity_tokens, std::int64_t block_tokens)
    : capacity_tokens_(capacity_tokens),
      block_tokens_(block_tokens),
      capacity_blocks_(block_tokens > 0 ? capacity_tokens / block_tokens : 0) {
  if (block_tokens < 1) {
    throw ConfigError("block_tokens", "must be >= 1");
  }
  if (capacity_tokens < 0) {
    throw ConfigError("capacity_tokens", "must be >= 0");
  }
}

PrefixCache PrefixCache::Unbounded(std::int64_t block_tokens) {
  return PrefixCache(std::numeric_limits<std::int64_t>::max(), block_tokens);
}

std::size_t PrefixCache::LeadingRun(
    std::span<const BlockFingerprint> prompt) const {
  std::size_t run = 0;
  while (run < prompt.size() && entries_.contains(prompt[run])) ++run;
  return run;
}

void PrefixCache::Touch(BlockFingerprint fp, Entry& entry, double now) {
  if (entry.touched == now) return;
  lru_.erase(LruKey{entry.touched, entry.depth, fp.value});
  entry.touched = now;
  lru_.insert(LruKey{entry.touched, entry.depth, fp.value});
}

std::int64_t PrefixCache::Query(std::span<const BlockFingerprint> prompt,
                                double now) {
  std::size_t run = 0;
  for (; run < prompt.size(); ++run) {
    auto it = entries_.find(prompt[run]);
    if (it == entries_.end()) break;
    Touch(prompt[run], it->second, now);
  }
  return static_cast<std::int64_t>(run) * block_tokens_;
}

std::int64_t PrefixCache::Probe(std::span<const BlockFingerprint> prompt) const {
  return static_cast<std::int64_t>(LeadingRun(prompt)) * block_tokens_;
}

std::int64_t PrefixCache::Insert(std::span<const BlockFingerprint> prompt,
                                 double now) {
  const std::size_t limit = static_cast<std::size_t>(
      std::min<std::int64_t>(static_cast<std::int64_t>(prompt.size()),
                             capacity_blocks_));
  const auto blocks = prompt.first(limit);

  std::int64_t missing = 0;
  for (const BlockFingerprint& fp : blocks) {
    auto it = entries_.find(fp);
    if (it == entries_.end()) {
      ++missing;
    } else {
      Touch(fp, it->second, now);
    }
  }

  std::int64_t evicted = 0;
  const std::int64_t free_blocks = capacity_blocks_ - resident_blocks();
  if (missing > free_blocks) {
    const std::int64_t need = missing - free_blocks;
    const std::unordered_set<BlockFingerprint> keep(blocks.begin(),
                                                    blocks.end());
    for (auto it = lru_.begin(); it != lru_.end() && evicted < need;) {
      const BlockFingerprint fp{it->fp};
      if (keep.contains(fp)) {
        ++it;
        continue;
      }
      entries_.erase(fp);
      it = lru_.erase(it);
      ++evicted;
    }
  }

  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto depth = static_cast<std::int64_t>(i + 1);
    auto [it, inserted] = entries_.try_emplace(blocks[i], Entry{now, depth});
    if (inserted) lru_.insert(LruKey{now, depth, blocks[i].value});
  }
  return evicted;
}

std::int64_t PrefixCache::MetadataBytes() const {
  return MetadataBytesForBlocks(unbounded() ? resident_blocks()
                                            : capacity_blocks_);
}

}  // namespace pairsim
