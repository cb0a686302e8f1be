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
#include <map>
#include <set>
#include <span>
#include <vector>

#include "json.hpp"
#include "pairsim/fingerprint.h"

namespace pairsim {

using InstanceId = std::int32_t;
inline constexpr InstanceId kNoInstance = -1;

// Routing key of a request: the leading hash-granularity blocks of its prompt.
struct HashKey {
  std::vector<BlockFingerprint> blocks;

  std::size_t length() const { return blocks.size(); }
  friend bool operator==(const HashKey&, const HashKey&) = default;
};

struct CandidatePair {
  InstanceId primary = kNoInstance;
  InstanceId secondary = kNoInstance;
  bool adjusted = false;  // f1 and f2 collided; secondary was shifted

  bool Contains(InstanceId id) const { return id == primary || id == secondary; }
  // The member of the pair that is not `id`; `id` itself for a degenerate pair.
  InstanceId Other(InstanceId id) const {
    return id == primary ? secondary : primary;
  }
  friend bool operator==(const CandidatePair&, const CandidatePair&) = default;
};

// Half-open ring interval (after, upto]. after == upto denotes the full ring.
struct RingArc {
  std::uint64_t after = 0;
  std::uint64_t upto = 0;
  InstanceId previous_owner = kNoInstance;
  InstanceId new_owner = kNoInstance;

  bool Contains(std::uint64_t position) const;
};

struct RingOptions {
  int virtual_nodes = 64;
  std::uint64_t seed_primary = 0x5bd1e9955bd1e995ULL;
  std::uint64_t seed_secondary = 0xc2b2ae3d27d4eb4fULL;
  std::uint64_t anchor_seed = 0x165667b19e3779f9ULL;
};

// Consistent-hash ring over [0, 2^64) resolving each key through two
// independent hash functions to a pair of candidate instances.
class DualHashRing {
 public:
  explicit DualHashRing(RingOptions options = {});

  // Places options().virtual_nodes anchors for the instance. Returns the arcs
  // that now resolve to it, tagged with their previous owner.
  std::vector<RingArc> AddInstance(InstanceId id);
  // Same, with explicit anchor positions (constructed layouts, tests).
  std::vector<RingArc> AddInstanceAt(InstanceId id,
                                     std::span<const std::uint64_t> positions);
  // Returns the arcs the instance owned, tagged with their new owner.
  std::vector<RingArc> RemoveInstance(InstanceId id);

  // Clockwise successor anchor of a ring position.
  InstanceId Lookup(std::uint64_t position) const;

  std::uint64_t PrimaryPosition(const HashKey& key) const;
  std::uint64_t SecondaryPosition(const HashKey& key) const;

  CandidatePair Candidates(const HashKey& key) const;
  CandidatePair CandidatesAt(std::uint64_t primary_position,
                             std::uint64_t secondary_position) const;

  // Next online id after `id` in cyclic sorted order.
  InstanceId NextInstance(InstanceId id) const;

  bool Contains(InstanceId id) const { return instances_.contains(id); }
  bool empty() const { return instances_.empty(); }
  std::size_t size() const { return instances_.size(); }
  const std::set<InstanceId>& instances() const { return instances_; }
  const std::map<std::uint64_t, InstanceId>& anchors() const { return anchors_; }
  const RingOptions& options() const { return options_; }

  nlohmann::json ToJson() const;

 private:
  std::uint64_t AnchorPosition(InstanceId id, int vnode, std::uint64_t salt) const;
  std::uint64_t KeyPosition(std::uint64_t seed, const HashKey& key) const;
  // Arcs ending at anchors of `id`, consecutive ones merged.
  std::vector<RingArc> ArcsOwnedBy(InstanceId id) const;

  RingOptions options_;
  std::map<std::uint64_t, InstanceId> anchors_;
  std::set<InstanceId> instances_;
};

}  // namespace pairsim
