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

#include "pairsim/dual_ring.h"

#include <algorithm>
#include <string>

#include "pairsim/errors.h"

namespace pairsim {

bool RingArc::Contains(std::uint64_t position) const {
  if (after == upto) return true;
  if (after < upto) return position > after && position <= upto;
  return position > after || position <= upto;
}

DualHashRing::DualHashRing(RingOptions options) : options_(options) {
  if (options_.virtual_nodes < 1) {
    throw ConfigError("cluster.virtual_nodes", "must be >= 1");
  }
  if (options_.seed_primary == options_.seed_secondary) {
    throw ConfigError("cluster.ring_seeds", "the two hash seeds must differ");
  }
}

std::uint64_t DualHashRing::AnchorPosition(InstanceId id, int vnode,
                                           std::uint64_t salt) const {
  std::uint64_t h = HashCombine(options_.anchor_seed, static_cast<std::uint64_t>(id));
  h = HashCombine(h, static_cast<std::uint64_t>(vnode));
  return HashCombine(h, salt);
}

std::uint64_t DualHashRing::KeyPosition(std::uint64_t seed,
                                        const HashKey& key) const {
  std::uint64_t h = seed;
  for (const BlockFingerprint& fp : key.blocks) h = HashCombine(h, fp.value);
  return HashCombine(h, key.blocks.size());
}

std::uint64_t DualHashRing::PrimaryPosition(const HashKey& key) const {
  return KeyPosition(options_.seed_primary, key);
}

std::uint64_t DualHashRing::SecondaryPosition(const HashKey& key) const {
  return KeyPosition(options_.seed_secondary, key);
}

std::vector<RingArc> DualHashRing::ArcsOwnedBy(InstanceId id) const {
  std::vector<RingArc> arcs;
  if (anchors_.empty()) return arcs;
  // Start the walk just after an anchor of another instance so that runs of
  // consecutive anchors of `id` are merged into one arc.
  auto start = anchors_.begin();
  for (auto it = anchors_.begin(); it != anchors_.end(); ++it) {
    if (it->second != id) {
      start = std::next(it);
      if (start == anchors_.end()) start = anchors_.begin();
      break;
    }
  }
  auto prev_of = [&](auto it) {
    return it == anchors_.begin() ? std::prev(anchors_.end()) : std::prev(it);
  };
  auto it = start;
  for (std::size_t step = 0; step < anchors_.size(); ++step) {
    if (it->second == id) {
      const auto pred = prev_of(it);
      if (!arcs.empty() && pred->second == id && arcs.back().upto == pred->first) {
        arcs.back().upto = it->first;
      } else {
        arcs.push_back(RingArc{pred->first, it->first, kNoInstance, kNoInstance});
      }
    }
    ++it;
    if (it == anchors_.end()) it = anchors_.begin();
  }
  // A sole instance owns the whole ring.
  if (instances_.size() == 1) {
    arcs.assign(1, RingArc{anchors_.begin()->first, anchors_.begin()->first,
                           kNoInstance, kNoInstance});
  }
  return arcs;
}

std::vector<RingArc> DualHashRing::AddInstance(InstanceId id) {
  if (instances_.contains(id)) {
    throw StateError("instance " + std::to_string(id) + " already on the ring");
  }
  std::vector<std::uint64_t> positions;
  positions.reserve(options_.virtual_nodes);
  for (int v = 0; v < options_.virtual_nodes; ++v) {
    std::uint64_t salt = 0;
    std::uint64_t pos = AnchorPosition(id, v, salt);
    while (anchors_.contains(pos) ||
           std::find(positions.begin(), positions.end(), pos) != positions.end()) {
      pos = AnchorPosition(id, v, ++salt);
    }
    positions.push_back(pos);
  }
  return AddInstanceAt(id, positions);
}

std::vector<RingArc> DualHashRing::AddInstanceAt(
    InstanceId id, std::span<const std::uint64_t> positions) {
  if (id < 0) throw StateError("instance ids must be non-negative");
  if (instances_.contains(id)) {
    throw StateError("instance " + std::to_string(id) + " already on the ring");
  }
  if (positions.empty()) throw StateError("an instance needs at least one anchor");
  for (std::uint64_t pos : positions) {
    if (anchors_.contains(pos)) {
      throw StateError("anchor position collision");
    }
  }
  const DualHashRing before = *this;
  for (std::uint64_t pos : positions) anchors_.emplace(pos, id);
  instances_.insert(id);

  std::vector<RingArc> arcs = ArcsOwnedBy(id);
  for (RingArc& arc : arcs) {
    arc.new_owner = id;
    arc.previous_owner = before.empty() ? kNoInstance : before.Lookup(arc.upto);
  }
  return arcs;
}

std::vector<RingArc> DualHashRing::RemoveInstance(InstanceId id) {
  if (!instances_.contains(id)) {
    throw StateError("unknown instance " + std::to_string(id));
  }
  std::vector<RingArc> arcs = ArcsOwnedBy(id);
  for (auto it = anchors_.begin(); it != anchors_.end();) {
    it = it->second == id ? anchors_.erase(it) : std::next(it);
  }
  instances_.erase(id);
  for (RingArc& arc : arcs) {
    arc.previous_owner = id;
    arc.new_owner = empty() ? kNoInstance : Lookup(arc.upto);
  }
  return arcs;
}

InstanceId DualHashRing::Lookup(std::uint64_t position) const {
  if (anchors_.empty()) throw StateError("empty ring");
  auto it = anchors_.lower_bound(position);
  if (it == anchors_.end()) it = anchors_.begin();
  return it->second;
}

InstanceId DualHashRing::NextInstance(InstanceId id) const {
  if (instances_.empty()) throw StateError("empty ring");
  auto it = instances_.upper_bound(id);
  return it == instances_.end() ? *instances_.begin() : *it;
}

CandidatePair DualHashRing::CandidatesAt(std::uint64_t primary_position,
                                         std::uint64_t secondary_position) const {
  CandidatePair pair;
  pair.primary = Lookup(primary_position);
  pair.secondary = Lookup(secondary_position);
  if (pair.primary == pair.secondary && instances_.size() >= 2) {
    pair.secondary = NextInstance(pair.primary);
    pair.adjusted = true;
  }
  return pair;
}

CandidatePair DualHashRing::Candidates(const HashKey& key) const {
  return CandidatesAt(PrimaryPosition(key), SecondaryPosition(key));
}

nlohmann::json DualHashRing::ToJson() const {
  nlohmann::json j;
  j["virtual_nodes"] = options_.virtual_nodes;
  j["seed_primary"] = options_.seed_primary;
  j["seed_secondary"] = options_.seed_secondary;
  j["anchor_seed"] = options_.anchor_seed;
  j["instances"] = std::vector<InstanceId>(instances_.begin(), instances_.end());
  return j;
}

}  // namespace pairsim
