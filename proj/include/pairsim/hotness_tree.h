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
#include <deque>
#include <map>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "pairsim/dual_ring.h"
#include "pairsim/fingerprint.h"

namespace pairsim {

struct HotnessOptions {
  std::int64_t hash_block_tokens = 512;
  std::size_t min_depth = 2;  // one system block + one user block
  std::size_t window = 1024;  // most recent requests
  std::size_t eval_every = 256;  // observations between window re-evaluations
};

// Trie over hash-granularity prompt blocks tracking each prefix's share of
// recent traffic (rho). A leaf whose rho exceeds 2/n grows a child level so
// later requests with that prefix hash on a longer key; a grown node whose rho
// falls below 1/n loses its children again.
//
// rho is re-evaluated over the window's prompts at window boundaries (every
// eval_every observations), so within one evaluation period keys never
// shorten. A node created in between starts from its share of the current
// window, which lets a hot prefix grow one level per request.
class HotnessTree {
 public:
  HotnessTree(HotnessOptions options, std::int64_t cache_block_tokens,
              int n_instances);

  // Hash-granularity fingerprints of a prompt. Each covers
  // hash_block_tokens / cache_block_tokens cache blocks; a trailing partial
  // hash block is still a block.
  std::vector<BlockFingerprint> HashBlocks(
      std::span<const BlockFingerprint> prompt_blocks) const;

  // Records one request and returns its routing key. May run Decay() when the
  // observation closes an evaluation period.
  HashKey ObserveAndKey(std::span<const BlockFingerprint> prompt_blocks,
                        double now);

  // Key the next request with this prompt would get, without recording it.
  HashKey KeyFor(std::span<const BlockFingerprint> prompt_blocks) const;

  // Recomputes rho over the current window and prunes cooled-down prefixes.
  // Returns the number of removed nodes.
  std::int64_t Decay(double now);

  void set_instance_count(int n);
  int instance_count() const { return n_instances_; }

  // Lookups by hash-block path; 0 / false for absent nodes.
  double Rho(std::span<const BlockFingerprint> hash_path) const;
  bool IsExtended(std::span<const BlockFingerprint> hash_path) const;
  bool HasNode(std::span<const BlockFingerprint> hash_path) const;

  std::size_t node_count() const;
  std::size_t window_size() const { return window_.size(); }
  std::int64_t observations() const { return observations_; }
  const std::map<std::size_t, std::int64_t>& key_length_histogram() const {
    return key_lengths_;
  }
  const HotnessOptions& options() const { return options_; }

  double hot_threshold() const { return 2.0 / n_instances_; }
  double cold_threshold() const { return 1.0 / n_instances_; }

 private:
  struct Node {
    std::int64_t window_count = 0;
    double rho = 0.0;
    bool extended = false;
    std::unordered_map<std::uint64_t, std::unique_ptr<Node>> children;
  };

  HashKey Walk(std::span<const BlockFingerprint> hash_blocks, Node** leaf);
  const Node* Find(std::span<const BlockFingerprint> hash_path) const;

  HotnessOptions options_;
  std::int64_t cache_block_tokens_;
  std::size_t blocks_per_hash_block_;
  int n_instances_;
  Node root_;
  std::deque<std::vector<BlockFingerprint>> window_;  // full hash paths
  std::int64_t observations_ = 0;
  std::map<std::size_t, std::int64_t> key_lengths_;
};

}  // namespace pairsim
