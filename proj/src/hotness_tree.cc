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

#include "pairsim/hotness_tree.h"

#include <algorithm>
#include <functional>

#include "pairsim/errors.h"

namespace pairsim {

HotnessTree::HotnessTree(HotnessOptions options, std::int64_t cache_block_tokens,
                         int n_instances)
    : options_(options), cache_block_tokens_(cache_block_tokens) {
  if (cache_block_tokens < 1 || options_.hash_block_tokens < cache_block_tokens ||
      options_.hash_block_tokens % cache_block_tokens != 0) {
    throw ConfigError("hotness.hash_block_tokens",
                      "must be a positive multiple of cache_block_tokens");
  }
  if (options_.min_depth < 1) {
    throw ConfigError("hotness.min_depth", "must be >= 1");
  }
  if (options_.window < 1 || options_.eval_every < 1) {
    throw ConfigError("hotness.window", "window and eval_every must be >= 1");
  }
  blocks_per_hash_block_ =
      static_cast<std::size_t>(options_.hash_block_tokens / cache_block_tokens);
  set_instance_count(n_instances);
}

void HotnessTree::set_instance_count(int n) {
  if (n < 1) throw ConfigError("hotness.n_instances", "must be >= 1");
  n_instances_ = n;
}

std::vector<BlockFingerprint> HotnessTree::HashBlocks(
    std::span<const BlockFingerprint> prompt_blocks) const {
  std::vector<BlockFingerprint> out;
  const std::size_t n = prompt_blocks.size();
  const std::size_t step = blocks_per_hash_block_;
  out.reserve((n + step - 1) / step);
  for (std::size_t end = step; end - step < n; end += step) {
    // Chained fingerprints: the last cache block stands for the whole prefix.
    out.push_back(prompt_blocks[std::min(end, n) - 1]);
  }
  return out;
}

HashKey HotnessTree::Walk(std::span<const BlockFingerprint> hash_blocks,
                          Node** leaf) {
  HashKey key;
  Node* node = &root_;
  for (std::size_t depth = 0; depth < hash_blocks.size(); ++depth) {
    if (depth >= options_.min_depth && !node->extended) break;
    auto& child = node->children[hash_blocks[depth].value];
    if (!child) {
      // Seed from the window so a deeply shared hot prefix can descend a
      // level per request instead of a level per evaluation period. A chained
      // fingerprint at this depth identifies the whole path.
      child = std::make_unique<Node>();
      for (const auto& seen : window_) {
        if (seen.size() > depth && seen[depth] == hash_blocks[depth]) {
          ++child->window_count;
        }
      }
      if (!window_.empty()) {
        child->rho = static_cast<double>(child->window_count) /
                     static_cast<double>(window_.size());
      }
    }
    key.blocks.push_back(hash_blocks[depth]);
    node = child.get();
  }
  *leaf = node;
  return key;
}

HashKey HotnessTree::KeyFor(std::span<const BlockFingerprint> prompt_blocks) const {
  const auto hash_blocks = HashBlocks(prompt_blocks);
  HashKey key;
  const Node* node = &root_;
  for (std::size_t depth = 0; depth < hash_blocks.size(); ++depth) {
    // An absent node is neither extended nor has children; past the
    // mandatory depth the walk stops right after it.
    if (depth >= options_.min_depth && !(node && node->extended)) break;
    key.blocks.push_back(hash_blocks[depth]);
    if (node) {
      auto it = node->children.find(hash_blocks[depth].value);
      node = it == node->children.end() ? nullptr : it->second.get();
    }
  }
  return key;
}

HashKey HotnessTree::ObserveAndKey(
    std::span<const BlockFingerprint> prompt_blocks, double now) {
  const auto hash_blocks = HashBlocks(prompt_blocks);
  Node* leaf = nullptr;
  HashKey key = Walk(hash_blocks, &leaf);

  window_.push_back(hash_blocks);
  if (window_.size() > options_.window) window_.pop_front();
  ++observations_;
  ++key_lengths_[key.length()];

  // rho is as of the last evaluation; the longer key applies from the next
  // request on.
  if (key.length() >= options_.min_depth && leaf->rho > hot_threshold()) {
    leaf->extended = true;
  }
  if (observations_ % static_cast<std::int64_t>(options_.eval_every) == 0) {
    Decay(now);
  }
  return key;
}

std::int64_t HotnessTree::Decay(double /*now*/) {
  std::function<void(Node&)> reset = [&](Node& node) {
    node.window_count = 0;
    for (auto& [fp, child] : node.children) reset(*child);
  };
  reset(root_);
  for (const auto& path : window_) {
    Node* node = &root_;
    for (const BlockFingerprint& fp : path) {
      auto it = node->children.find(fp.value);
      if (it == node->children.end()) break;
      node = it->second.get();
      ++node->window_count;
    }
  }
  const double total = static_cast<double>(window_.size());

  std::function<std::int64_t(const Node&)> count_nodes = [&](const Node& node) {
    std::int64_t n = 0;
    for (const auto& [fp, child] : node.children) n += 1 + count_nodes(*child);
    return n;
  };

  std::int64_t pruned = 0;
  // Returns true when the node can be dropped by its parent (an idle
  // mandatory-depth node without children).
  std::function<bool(Node&, std::size_t)> visit = [&](Node& node,
                                                       std::size_t depth) {
    node.rho = total > 0.0 ? static_cast<double>(node.window_count) / total : 0.0;
    if (depth >= options_.min_depth && node.extended &&
        node.rho < cold_threshold()) {
      pruned += count_nodes(node);
      node.children.clear();
      node.extended = false;
    }
    for (auto it = node.children.begin(); it != node.children.end();) {
      if (visit(*it->second, depth + 1)) {
        it = node.children.erase(it);
      } else {
        ++it;
      }
    }
    return depth >= 1 && depth <= options_.min_depth && node.window_count == 0 &&
           node.children.empty() && !node.extended;
  };
  visit(root_, 0);
  root_.rho = total > 0.0 ? 1.0 : 0.0;
  return pruned;
}

const HotnessTree::Node* HotnessTree::Find(
    std::span<const BlockFingerprint> hash_path) const {
  const Node* node = &root_;
  for (const BlockFingerprint& fp : hash_path) {
    auto it = node->children.find(fp.value);
    if (it == node->children.end()) return nullptr;
    node = it->second.get();
  }
  return node;
}

double HotnessTree::Rho(std::span<const BlockFingerprint> hash_path) const {
  const Node* node = Find(hash_path);
  return node ? node->rho : 0.0;
}

bool HotnessTree::IsExtended(std::span<const BlockFingerprint> hash_path) const {
  const Node* node = Find(hash_path);
  return node && node->extended;
}

bool HotnessTree::HasNode(std::span<const BlockFingerprint> hash_path) const {
  return Find(hash_path) != nullptr;
}

std::size_t HotnessTree::node_count() const {
  std::function<std::size_t(const Node&)> count = [&](const Node& node) {
    std::size_t n = 0;
    for (const auto& [fp, child] : node.children) n += 1 + count(*child);
    return n;
  };
  return count(root_);
}

}  // namespace pairsim
