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
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pairsim/cost_model.h"
#include "pairsim/dual_ring.h"
#include "pairsim/hotness_tree.h"
#include "pairsim/trace.h"

namespace pairsim {

enum class RouteReason {
  kCacheAffinity,
  kLeastLoaded,
  kMinTtft,
  kSloSwitch,
  kTieLessLoaded,
  kRebalanceTrigger,
};

std::string_view RouteReasonName(RouteReason reason);

struct RoutingDecision {
  InstanceId target = kNoInstance;
  RouteReason reason = RouteReason::kLeastLoaded;
  // Estimates considered, at least the target's (for the decision log).
  std::vector<std::pair<InstanceId, TtftEstimate>> estimates;
  std::optional<CandidatePair> pair;  // set by dual-candidate policies
  std::size_t key_length = 0;

  const TtftEstimate* EstimateFor(InstanceId id) const;
};

// Baselines over the whole (online) cluster. Ties go to the lowest id.
RoutingDecision RouteCacheAffinity(const Request& request,
                                   const ClusterSnapshot& snapshot,
                                   const ComputeProfile& profile);
RoutingDecision RouteLeastLoaded(const Request& request,
                                 const ClusterSnapshot& snapshot,
                                 const ComputeProfile& profile);
RoutingDecision RouteMinTtft(const Request& request,
                             const ClusterSnapshot& snapshot,
                             const ComputeProfile& profile);
// Highest-hit instance when its prefix hit rate is strictly above 50%,
// least-loaded otherwise.
RoutingDecision RoutePreble(const Request& request,
                            const ClusterSnapshot& snapshot,
                            const ComputeProfile& profile);

// How a dual-candidate policy picks between its two candidates.
enum class PairSelection { kSloAware, kCacheAffinity, kLeastLoaded, kMinTtft };

RoutingDecision SelectCandidate(const Request& request,
                                const ClusterSnapshot& snapshot,
                                const CandidatePair& pair,
                                const ComputeProfile& profile,
                                std::int64_t slo_threshold_tokens,
                                PairSelection selection);

// Full dual-mapping route: hotness-tree key, ring candidates, SLO-aware pick.
RoutingDecision RouteDualMap(const Request& request,
                             const ClusterSnapshot& snapshot,
                             const DualHashRing& ring, HotnessTree& tree,
                             std::int64_t slo_threshold_tokens,
                             const ComputeProfile& profile);

// --- Rebalancing ---------------------------------------------------------

struct QueuedRequest {
  const Request* request = nullptr;
  std::int64_t uncached_tokens = 0;  // counted in the source's pending tokens
  CandidatePair pair;
};

struct RebalanceSource {
  InstanceSnapshot instance;
  std::int64_t inflight_tokens = 0;  // pending tokens not in `queue`
  std::vector<QueuedRequest> queue;  // FIFO order, not yet prefilling
};

struct Migration {
  std::size_t queue_index = 0;  // position in RebalanceSource::queue
  std::int64_t request_id = 0;
  InstanceId destination = kNoInstance;
  double benefit = 0.0;
  TtftEstimate source_estimate;
  TtftEstimate destination_estimate;
};

// Expected TTFT of every queued request at its current position.
std::vector<TtftEstimate> QueueEstimates(const RebalanceSource& source,
                                         const ComputeProfile& profile,
                                         double now);

// Tail of the queue expected to miss the SLO, or decode-bottlenecked.
bool IsOverloaded(const RebalanceSource& source, const ComputeProfile& profile,
                  double slo_seconds, double now);

// Single-round batch migration plan for an overloaded instance. Each queued
// request may only move to the other member of its candidate pair, and only
// if that strictly improves its TTFT and lands it under the SLO. Requests are
// taken in descending benefit, re-evaluated against the updated queues after
// every pick, until the remaining source queue is expected to meet the SLO.
std::vector<Migration> PlanRebalance(const RebalanceSource& source,
                                     const ClusterSnapshot& snapshot,
                                     const ComputeProfile& profile,
                                     double slo_seconds, double now);

// --- Policy objects ------------------------------------------------------

enum class PolicyKind {
  kCacheAffinity,
  kLeastLoaded,
  kMinTtft,
  kPreble,
  kDualMap,
  kDualMapNoRebalance,
  kDualMapCacheAffinity,
  kDualMapLeastLoaded,
  kDualMapMinTtft,
};

PolicyKind ParsePolicyKind(std::string_view name);
std::string_view PolicyName(PolicyKind kind);
const std::vector<PolicyKind>& AllPolicyKinds();

struct PolicyOptions {
  ComputeProfile profile;
  double slo_seconds = 5.0;
  RingOptions ring;
  HotnessOptions hotness;
  std::int64_t cache_block_tokens = kDefaultCacheBlockTokens;
};

class Policy {
 public:
  virtual ~Policy() = default;

  // observe == false re-routes an already-observed request (re-dispatch
  // after scale-in) without counting it in routing statistics again.
  virtual RoutingDecision Route(const Request& request,
                                const ClusterSnapshot& snapshot,
                                bool observe) = 0;

  virtual void OnInstanceAdded(InstanceId) {}
  virtual void OnInstanceRemoved(InstanceId) {}

  // Whether the cluster should run hotspot rebalancing for this policy.
  virtual bool rebalances() const { return false; }
  virtual const HotnessTree* hotness() const { return nullptr; }
  virtual const DualHashRing* ring() const { return nullptr; }

  PolicyKind kind() const { return kind_; }
  std::string_view name() const { return PolicyName(kind_); }

 protected:
  explicit Policy(PolicyKind kind) : kind_(kind) {}

 private:
  PolicyKind kind_;
};

std::unique_ptr<Policy> MakePolicy(PolicyKind kind, const PolicyOptions& options,
                                   const std::vector<InstanceId>& instances);

}  // namespace pairsim
