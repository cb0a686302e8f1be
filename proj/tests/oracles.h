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

// Independent reference computations shared by the unit and acceptance
// suites. Nothing here calls into the routing or rebalancing code under test.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pairsim/cost_model.h"
#include "pairsim/policies.h"
#include "pairsim/prefix_cache.h"
#include "pairsim/trace.h"

namespace pairsim::testing {

// A snapshot plus the unbounded caches behind it. Every cache also keeps a
// plain set of what was inserted so reuse can be recomputed without the
// cache code.
struct Scenario {
  ComputeProfile profile;
  std::vector<std::unique_ptr<PrefixCache>> caches;
  std::vector<std::set<BlockFingerprint>> resident;
  ClusterSnapshot snapshot;
  std::int64_t block_tokens = 128;

  void Insert(std::size_t idx, const std::vector<BlockFingerprint>& blocks) {
    caches[idx]->Insert(blocks, 0.0);
    resident[idx].insert(blocks.begin(), blocks.end());
  }
};

inline std::int64_t OracleReuse(const Scenario& sc, std::size_t idx,
                                const Request& r) {
  std::int64_t blocks = 0;
  for (BlockFingerprint fp : r.prompt_blocks) {
    if (!sc.resident[idx].count(fp)) break;
    ++blocks;
  }
  return std::min(blocks * sc.block_tokens, r.input_tokens);
}

inline double OracleTtft(const Scenario& sc, std::size_t idx, const Request& r,
                         std::int64_t ahead) {
  const InstanceSnapshot& s = sc.snapshot.instances[idx];
  const double rate = sc.profile.prefill_rate;
  const double d = s.bottlenecked ? std::max(0.0, sc.snapshot.now - s.last_prefill_time) : 0.0;
  const double t_q = std::max(0.0, sc.snapshot.now - r.arrival_time) + ahead / rate;
  const double t_c = (r.input_tokens - OracleReuse(sc, idx, r)) / rate;
  return d + t_q + t_c;
}

// Prompts drawn from a small tree of shared prefixes so reuse varies a lot.
inline std::vector<BlockFingerprint> RandomPrompt(std::mt19937_64& rng,
                                                  int max_blocks = 24) {
  std::uniform_int_distribution<int> len(1, max_blocks);
  std::uniform_int_distribution<std::uint64_t> id(1, 3);
  std::vector<std::uint64_t> ids(len(rng));
  for (auto& v : ids) v = id(rng);
  return ChainBlocks(ids);
}

inline Request RandomRequest(std::mt19937_64& rng, std::int64_t id, double now,
                             std::int64_t block_tokens) {
  Request r;
  r.id = id;
  r.prompt_blocks = RandomPrompt(rng);
  const auto n = static_cast<std::int64_t>(r.prompt_blocks.size());
  r.input_tokens = (n - 1) * block_tokens +
                   std::uniform_int_distribution<std::int64_t>(1, block_tokens)(rng);
  r.output_tokens = 1;
  r.arrival_time = now - std::uniform_real_distribution<double>(0.0, 2.0)(rng);
  return r;
}

inline Scenario RandomScenario(std::mt19937_64& rng, int min_n, int max_n) {
  Scenario sc;
  sc.profile.prefill_rate = std::uniform_real_distribution<double>(500.0, 20000.0)(rng);
  sc.snapshot.now = std::uniform_real_distribution<double>(0.0, 100.0)(rng);
  const int n = std::uniform_int_distribution<int>(min_n, max_n)(rng);
  // Sparse ids exercise the lookup paths.
  InstanceId next = 0;
  for (int i = 0; i < n; ++i) {
    next += std::uniform_int_distribution<int>(1, 2)(rng);
    sc.caches.push_back(std::make_unique<PrefixCache>(PrefixCache::Unbounded(sc.block_tokens)));
    sc.resident.emplace_back();
    InstanceSnapshot s;
    s.id = next;
    s.cache = sc.caches.back().get();
    // Coarse loads make exact ties reasonably common.
    s.pending_prefill_tokens = 1000 * std::uniform_int_distribution<int>(0, 40)(rng);
    s.bottlenecked = std::bernoulli_distribution(0.2)(rng);
    s.last_prefill_time = sc.snapshot.now - std::uniform_real_distribution<double>(0.0, 8.0)(rng);
    sc.snapshot.instances.push_back(s);
    const int prompts = std::uniform_int_distribution<int>(0, 3)(rng);
    for (int p = 0; p < prompts; ++p) sc.Insert(sc.caches.size() - 1, RandomPrompt(rng));
  }
  return sc;
}

// Exhaustive argmin with lowest-id ties.
inline InstanceId BruteForceMinTtft(const Scenario& sc, const Request& r) {
  InstanceId best = kNoInstance;
  double best_total = 0.0;
  for (std::size_t i = 0; i < sc.snapshot.instances.size(); ++i) {
    const double t = OracleTtft(sc, i, r, sc.snapshot.instances[i].pending_prefill_tokens);
    const InstanceId id = sc.snapshot.instances[i].id;
    if (best == kNoInstance || t < best_total || (t == best_total && id < best)) {
      best = id;
      best_total = t;
    }
  }
  return best;
}

// Overloaded source plus a snapshot holding the candidate partners.
struct RebalanceScenario {
  Scenario sc;
  std::vector<Request> requests;
  RebalanceSource source;
  double slo = 5.0;
};

inline RebalanceScenario RandomRebalanceScenario(std::mt19937_64& rng) {
  RebalanceScenario rs;
  rs.sc = RandomScenario(rng, 2, 8);
  Scenario& sc = rs.sc;
  sc.profile.prefill_rate = std::uniform_real_distribution<double>(1000.0, 8000.0)(rng);
  rs.slo = std::uniform_real_distribution<double>(1.0, 6.0)(rng);
  const std::size_t src_idx = std::uniform_int_distribution<std::size_t>(
      0, sc.snapshot.instances.size() - 1)(rng);
  InstanceSnapshot& src = sc.snapshot.instances[src_idx];
  src.bottlenecked = std::bernoulli_distribution(0.2)(rng);

  const int q = std::uniform_int_distribution<int>(1, 12)(rng);
  rs.requests.reserve(q);
  for (int i = 0; i < q; ++i) {
    rs.requests.push_back(RandomRequest(rng, i, sc.snapshot.now, sc.block_tokens));
  }
  rs.source.inflight_tokens = 500 * std::uniform_int_distribution<int>(0, 20)(rng);
  std::int64_t pending = rs.source.inflight_tokens;
  for (const Request& r : rs.requests) {
    QueuedRequest qr;
    qr.request = &r;
    qr.uncached_tokens = r.input_tokens - OracleReuse(sc, src_idx, r);
    const std::size_t other = std::uniform_int_distribution<std::size_t>(
        0, sc.snapshot.instances.size() - 1)(rng);
    qr.pair.primary = src.id;
    qr.pair.secondary = sc.snapshot.instances[other].id;  // may equal src
    if (std::bernoulli_distribution(0.5)(rng)) std::swap(qr.pair.primary, qr.pair.secondary);
    pending += qr.uncached_tokens;
    rs.source.queue.push_back(qr);
  }
  src.pending_prefill_tokens = pending;
  rs.source.instance = src;
  return rs;
}

inline std::size_t IndexOf(const Scenario& sc, InstanceId id) {
  for (std::size_t i = 0; i < sc.snapshot.instances.size(); ++i) {
    if (sc.snapshot.instances[i].id == id) return i;
  }
  return sc.snapshot.instances.size();
}

// Replays a plan against a working copy and returns the first broken rule,
// or "" when the plan is valid: each step is the best eligible move at that
// moment (positive benefit, destination under the SLO, destination is the
// pair partner), benefits never increase, and the plan stops exactly when
// the source meets the SLO or nothing eligible is left.
inline std::string CheckRebalancePlan(const RebalanceScenario& rs,
                                      const std::vector<Migration>& plan) {
  const Scenario& sc = rs.sc;
  const std::size_t src_idx = IndexOf(sc, rs.source.instance.id);
  const std::size_t n = rs.source.queue.size();
  std::vector<bool> moved(n, false);
  std::vector<std::int64_t> added(sc.snapshot.instances.size(), 0);

  struct Candidate {
    std::size_t index;
    std::size_t dst;
    double benefit;
    double dst_ttft;
  };
  auto state = [&](bool& any_late, std::vector<Candidate>& eligible) {
    any_late = false;
    eligible.clear();
    std::int64_t ahead = rs.source.inflight_tokens;
    for (std::size_t i = 0; i < n; ++i) {
      if (moved[i]) continue;
      const Request& r = *rs.source.queue[i].request;
      const double src_t = OracleTtft(sc, src_idx, r, ahead);
      ahead += rs.source.queue[i].uncached_tokens;
      any_late = any_late || src_t > rs.slo;
      const CandidatePair& p = rs.source.queue[i].pair;
      const InstanceId other = p.primary == rs.source.instance.id ? p.secondary : p.primary;
      if (other == rs.source.instance.id) continue;
      const std::size_t dst = IndexOf(sc, other);
      const double dst_t = OracleTtft(
          sc, dst, r, sc.snapshot.instances[dst].pending_prefill_tokens + added[dst]);
      if (src_t - dst_t > 0.0 && dst_t < rs.slo) {
        eligible.push_back({i, dst, src_t - dst_t, dst_t});
      }
    }
  };

  const double eps = 1e-9;
  double last_benefit = 1e300;
  bool any_late = false;
  std::vector<Candidate> eligible;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const Migration& m = plan[k];
    state(any_late, eligible);
    if (!any_late) return "step " + std::to_string(k) + " planned after the source met the SLO";
    if (m.queue_index >= n || moved[m.queue_index]) return "step " + std::to_string(k) + " bad index";
    const auto it = std::find_if(eligible.begin(), eligible.end(),
                                 [&](const Candidate& c) { return c.index == m.queue_index; });
    if (it == eligible.end()) return "step " + std::to_string(k) + " not eligible";
    if (sc.snapshot.instances[it->dst].id != m.destination) {
      return "step " + std::to_string(k) + " destination outside the pair";
    }
    if (std::abs(it->benefit - m.benefit) > eps) return "step " + std::to_string(k) + " benefit mismatch";
    if (!(m.benefit > 0.0)) return "step " + std::to_string(k) + " non-positive benefit";
    if (!(m.destination_estimate.total() < rs.slo)) return "step " + std::to_string(k) + " destination over SLO";
    for (const Candidate& c : eligible) {
      if (c.benefit > m.benefit + eps) return "step " + std::to_string(k) + " not the best move";
    }
    if (m.benefit > last_benefit + eps) return "step " + std::to_string(k) + " benefit increased";
    last_benefit = m.benefit;
    moved[m.queue_index] = true;
    const Request& r = *rs.source.queue[m.queue_index].request;
    added[it->dst] += r.input_tokens - OracleReuse(sc, it->dst, r);
  }
  state(any_late, eligible);
  if (any_late && !eligible.empty()) return "plan stopped with eligible moves left";
  return "";
}

}  // namespace pairsim::testing
