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

#include "pairsim/policies.h"

#include <algorithm>
#include <map>

#include "pairsim/errors.h"

namespace pairsim {

namespace {

void RequireInstances(const ClusterSnapshot& snapshot) {
  if (snapshot.instances.empty()) throw StateError("empty cluster");
}

RoutingDecision Decide(const Request& request, const InstanceSnapshot& target,
                       RouteReason reason, const ComputeProfile& profile,
                       double now) {
  RoutingDecision d;
  d.target = target.id;
  d.reason = reason;
  d.estimates.emplace_back(target.id, EstimateTtft(request, target, profile, now));
  return d;
}

// Index of the first minimum of score over the snapshot (ids ascending, so
// ties resolve to the lowest id).
template <typename Score>
std::size_t ArgMin(const ClusterSnapshot& snapshot, Score score) {
  std::size_t best = 0;
  auto best_score = score(snapshot.instances[0]);
  for (std::size_t i = 1; i < snapshot.instances.size(); ++i) {
    auto s = score(snapshot.instances[i]);
    if (s < best_score) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

}  // namespace

std::string_view RouteReasonName(RouteReason reason) {
  switch (reason) {
    case RouteReason::kCacheAffinity: return "cache_affinity";
    case RouteReason::kLeastLoaded: return "least_loaded";
    case RouteReason::kMinTtft: return "min_ttft";
    case RouteReason::kSloSwitch: return "slo_switch";
    case RouteReason::kTieLessLoaded: return "tie_less_loaded";
    case RouteReason::kRebalanceTrigger: return "rebalance_trigger";
  }
  return "unknown";
}

const TtftEstimate* RoutingDecision::EstimateFor(InstanceId id) const {
  for (const auto& [inst, est] : estimates) {
    if (inst == id) return &est;
  }
  return nullptr;
}

RoutingDecision RouteCacheAffinity(const Request& request,
                                   const ClusterSnapshot& snapshot,
                                   const ComputeProfile& profile) {
  RequireInstances(snapshot);
  const std::size_t best = ArgMin(snapshot, [&](const InstanceSnapshot& s) {
    return -s.ReusableTokens(request);
  });
  return Decide(request, snapshot.instances[best], RouteReason::kCacheAffinity,
                profile, snapshot.now);
}

RoutingDecision RouteLeastLoaded(const Request& request,
                                 const ClusterSnapshot& snapshot,
                                 const ComputeProfile& profile) {
  RequireInstances(snapshot);
  const std::size_t best = ArgMin(snapshot, [](const InstanceSnapshot& s) {
    return s.pending_prefill_tokens;
  });
  return Decide(request, snapshot.instances[best], RouteReason::kLeastLoaded,
                profile, snapshot.now);
}

RoutingDecision RouteMinTtft(const Request& request,
                             const ClusterSnapshot& snapshot,
                             const ComputeProfile& profile) {
  RequireInstances(snapshot);
  RoutingDecision d;
  d.reason = RouteReason::kMinTtft;
  double best = 0.0;
  for (const InstanceSnapshot& s : snapshot.instances) {
    const TtftEstimate est = EstimateTtft(request, s, profile, snapshot.now);
    d.estimates.emplace_back(s.id, est);
    if (d.target == kNoInstance || est.total() < best) {
      d.target = s.id;
      best = est.total();
    }
  }
  return d;
}

RoutingDecision RoutePreble(const Request& request,
                            const ClusterSnapshot& snapshot,
                            const ComputeProfile& profile) {
  RequireInstances(snapshot);
  const std::size_t best = ArgMin(snapshot, [&](const InstanceSnapshot& s) {
    return -s.ReusableTokens(request);
  });
  const double hit_rate =
      static_cast<double>(snapshot.instances[best].ReusableTokens(request)) /
      static_cast<double>(request.input_tokens);
  if (hit_rate > 0.5) {
    return Decide(request, snapshot.instances[best], RouteReason::kCacheAffinity,
                  profile, snapshot.now);
  }
  return RouteLeastLoaded(request, snapshot, profile);
}

RoutingDecision SelectCandidate(const Request& request,
                                const ClusterSnapshot& snapshot,
                                const CandidatePair& pair,
                                const ComputeProfile& profile,
                                std::int64_t slo_threshold_tokens,
                                PairSelection selection) {
  const InstanceSnapshot* first = snapshot.Find(pair.primary);
  const InstanceSnapshot* second = snapshot.Find(pair.secondary);
  if (!first || !second) {
    throw StateError("candidate instance is not online");
  }
  // Order the pair by id so every tie-break below favours the lower id.
  if (second->id < first->id) std::swap(first, second);

  RoutingDecision d;
  d.pair = pair;
  const double now = snapshot.now;
  const TtftEstimate est_first = EstimateTtft(request, *first, profile, now);
  const TtftEstimate est_second = EstimateTtft(request, *second, profile, now);
  d.estimates.emplace_back(first->id, est_first);
  if (second != first) d.estimates.emplace_back(second->id, est_second);

  const std::int64_t reuse_first = first->ReusableTokens(request);
  const std::int64_t reuse_second = second->ReusableTokens(request);
  auto less_loaded = [&]() {
    return second->pending_prefill_tokens < first->pending_prefill_tokens
               ? second
               : first;
  };

  switch (selection) {
    case PairSelection::kCacheAffinity:
      d.target = reuse_second > reuse_first ? second->id : first->id;
      d.reason = RouteReason::kCacheAffinity;
      return d;
    case PairSelection::kLeastLoaded:
      d.target = less_loaded()->id;
      d.reason = RouteReason::kLeastLoaded;
      return d;
    case PairSelection::kMinTtft:
      d.target = est_second.total() < est_first.total() ? second->id : first->id;
      d.reason = RouteReason::kMinTtft;
      return d;
    case PairSelection::kSloAware:
      break;
  }

  auto over = [&](const InstanceSnapshot& s) {
    return s.pending_prefill_tokens + s.UncachedTokens(request) >
           slo_threshold_tokens;
  };
  if (reuse_first == reuse_second) {
    const InstanceSnapshot* pick = less_loaded();
    const InstanceSnapshot* other = pick == first ? second : first;
    d.target = pick->id;
    d.reason = over(*pick) && over(*other) ? RouteReason::kRebalanceTrigger
                                           : RouteReason::kTieLessLoaded;
    return d;
  }
  const InstanceSnapshot* affine = reuse_second > reuse_first ? second : first;
  const InstanceSnapshot* other = affine == first ? second : first;
  if (!over(*affine)) {
    d.target = affine->id;
    d.reason = RouteReason::kCacheAffinity;
  } else if (!over(*other)) {
    d.target = other->id;
    d.reason = RouteReason::kSloSwitch;
  } else {
    d.target = affine->id;
    d.reason = RouteReason::kRebalanceTrigger;
  }
  return d;
}

RoutingDecision RouteDualMap(const Request& request,
                             const ClusterSnapshot& snapshot,
                             const DualHashRing& ring, HotnessTree& tree,
                             std::int64_t slo_threshold_tokens,
                             const ComputeProfile& profile) {
  const HashKey key = tree.ObserveAndKey(request.prompt_blocks, snapshot.now);
  RoutingDecision d =
      SelectCandidate(request, snapshot, ring.Candidates(key), profile,
                      slo_threshold_tokens, PairSelection::kSloAware);
  d.key_length = key.length();
  return d;
}

std::vector<TtftEstimate> QueueEstimates(const RebalanceSource& source,
                                         const ComputeProfile& profile,
                                         double now) {
  std::vector<TtftEstimate> out;
  out.reserve(source.queue.size());
  std::int64_t ahead = source.inflight_tokens;
  for (const QueuedRequest& q : source.queue) {
    out.push_back(EstimateTtft(*q.request, source.instance, profile, now, ahead));
    ahead += q.uncached_tokens;
  }
  return out;
}

bool IsOverloaded(const RebalanceSource& source, const ComputeProfile& profile,
                  double slo_seconds, double now) {
  if (source.instance.bottlenecked) return true;
  if (source.queue.empty()) return false;
  for (const TtftEstimate& est : QueueEstimates(source, profile, now)) {
    if (est.total() > slo_seconds) return true;
  }
  return false;
}

std::vector<Migration> PlanRebalance(const RebalanceSource& source,
                                     const ClusterSnapshot& snapshot,
                                     const ComputeProfile& profile,
                                     double slo_seconds, double now) {
  const InstanceSnapshot& src = source.instance;
  const std::size_t n = source.queue.size();
  std::vector<bool> moved(n, false);
  std::map<InstanceId, std::int64_t> added_tokens;
  std::vector<Migration> plan;

  while (true) {
    // Expected TTFT of what is still queued at the source.
    bool any_late = false;
    std::vector<std::int64_t> ahead(n, 0);
    std::int64_t running = source.inflight_tokens;
    for (std::size_t i = 0; i < n; ++i) {
      if (moved[i]) continue;
      ahead[i] = running;
      running += source.queue[i].uncached_tokens;
      const TtftEstimate est = EstimateTtft(*source.queue[i].request, src,
                                            profile, now, ahead[i]);
      any_late = any_late || est.total() > slo_seconds;
    }
    if (!any_late) break;

    std::optional<Migration> best;
    for (std::size_t i = 0; i < n; ++i) {
      if (moved[i]) continue;
      const QueuedRequest& q = source.queue[i];
      const InstanceId dst_id = q.pair.Other(src.id);
      if (dst_id == src.id || dst_id == kNoInstance) continue;
      const InstanceSnapshot* dst_base = snapshot.Find(dst_id);
      if (!dst_base || !dst_base->online) continue;
      InstanceSnapshot dst = *dst_base;
      dst.pending_prefill_tokens += added_tokens[dst_id];

      Migration m;
      m.queue_index = i;
      m.request_id = q.request->id;
      m.destination = dst_id;
      m.source_estimate = EstimateTtft(*q.request, src, profile, now, ahead[i]);
      m.destination_estimate = EstimateTtft(*q.request, dst, profile, now);
      m.benefit = m.source_estimate.total() - m.destination_estimate.total();
      if (m.benefit <= 0.0 || !(m.destination_estimate.total() < slo_seconds)) {
        continue;
      }
      if (!best || m.benefit > best->benefit) best = m;
    }
    if (!best) break;

    moved[best->queue_index] = true;
    const InstanceSnapshot* dst = snapshot.Find(best->destination);
    added_tokens[best->destination] +=
        dst->UncachedTokens(*source.queue[best->queue_index].request);
    plan.push_back(*best);
  }
  return plan;
}

// --- Policy objects ------------------------------------------------------

namespace {

const std::vector<std::pair<PolicyKind, std::string_view>>& PolicyNames() {
  static const std::vector<std::pair<PolicyKind, std::string_view>> names = {
      {PolicyKind::kCacheAffinity, "cache_affinity"},
      {PolicyKind::kLeastLoaded, "least_loaded"},
      {PolicyKind::kMinTtft, "min_ttft"},
      {PolicyKind::kPreble, "preble"},
      {PolicyKind::kDualMap, "dualmap"},
      {PolicyKind::kDualMapNoRebalance, "dualmap_no_rebalance"},
      {PolicyKind::kDualMapCacheAffinity, "dualmap_cache_affinity"},
      {PolicyKind::kDualMapLeastLoaded, "dualmap_least_loaded"},
      {PolicyKind::kDualMapMinTtft, "dualmap_min_ttft"},
  };
  return names;
}

class BaselinePolicy : public Policy {
 public:
  using RouteFn = RoutingDecision (*)(const Request&, const ClusterSnapshot&,
                                      const ComputeProfile&);

  BaselinePolicy(PolicyKind kind, RouteFn fn, const ComputeProfile& profile)
      : Policy(kind), fn_(fn), profile_(profile) {}

  RoutingDecision Route(const Request& request, const ClusterSnapshot& snapshot,
                        bool /*observe*/) override {
    return fn_(request, snapshot, profile_);
  }

 private:
  RouteFn fn_;
  ComputeProfile profile_;
};

class DualCandidatePolicy : public Policy {
 public:
  DualCandidatePolicy(PolicyKind kind, const PolicyOptions& options,
                      const std::vector<InstanceId>& instances,
                      PairSelection selection, bool rebalance)
      : Policy(kind),
        profile_(options.profile),
        threshold_(SloThresholdTokens(options.profile, options.slo_seconds)),
        ring_(options.ring),
        tree_(options.hotness, options.cache_block_tokens,
              std::max<int>(1, static_cast<int>(instances.size()))),
        selection_(selection),
        rebalance_(rebalance) {
    for (InstanceId id : instances) ring_.AddInstance(id);
  }

  RoutingDecision Route(const Request& request, const ClusterSnapshot& snapshot,
                        bool observe) override {
    const HashKey key = observe
                            ? tree_.ObserveAndKey(request.prompt_blocks, snapshot.now)
                            : tree_.KeyFor(request.prompt_blocks);
    RoutingDecision d = SelectCandidate(request, snapshot, ring_.Candidates(key),
                                        profile_, threshold_, selection_);
    d.key_length = key.length();
    return d;
  }

  void OnInstanceAdded(InstanceId id) override {
    ring_.AddInstance(id);
    tree_.set_instance_count(static_cast<int>(ring_.size()));
  }
  void OnInstanceRemoved(InstanceId id) override {
    ring_.RemoveInstance(id);
    tree_.set_instance_count(std::max<int>(1, static_cast<int>(ring_.size())));
  }

  bool rebalances() const override { return rebalance_; }
  const HotnessTree* hotness() const override { return &tree_; }
  const DualHashRing* ring() const override { return &ring_; }

 private:
  ComputeProfile profile_;
  std::int64_t threshold_;
  DualHashRing ring_;
  HotnessTree tree_;
  PairSelection selection_;
  bool rebalance_;
};

}  // namespace

PolicyKind ParsePolicyKind(std::string_view name) {
  for (const auto& [kind, n] : PolicyNames()) {
    if (n == name) return kind;
  }
  throw ConfigError("policy", "unknown policy '" + std::string(name) + "'");
}

std::string_view PolicyName(PolicyKind kind) {
  for (const auto& [k, n] : PolicyNames()) {
    if (k == kind) return n;
  }
  return "unknown";
}

const std::vector<PolicyKind>& AllPolicyKinds() {
  static const std::vector<PolicyKind> kinds = [] {
    std::vector<PolicyKind> v;
    for (const auto& [k, n] : PolicyNames()) v.push_back(k);
    return v;
  }();
  return kinds;
}

std::unique_ptr<Policy> MakePolicy(PolicyKind kind, const PolicyOptions& options,
                                   const std::vector<InstanceId>& instances) {
  ValidateProfile(options.profile);
  switch (kind) {
    case PolicyKind::kCacheAffinity:
      return std::make_unique<BaselinePolicy>(kind, &RouteCacheAffinity,
                                              options.profile);
    case PolicyKind::kLeastLoaded:
      return std::make_unique<BaselinePolicy>(kind, &RouteLeastLoaded,
                                              options.profile);
    case PolicyKind::kMinTtft:
      return std::make_unique<BaselinePolicy>(kind, &RouteMinTtft,
                                              options.profile);
    case PolicyKind::kPreble:
      return std::make_unique<BaselinePolicy>(kind, &RoutePreble,
                                              options.profile);
    case PolicyKind::kDualMap:
      return std::make_unique<DualCandidatePolicy>(
          kind, options, instances, PairSelection::kSloAware, true);
    case PolicyKind::kDualMapNoRebalance:
      return std::make_unique<DualCandidatePolicy>(
          kind, options, instances, PairSelection::kSloAware, false);
    case PolicyKind::kDualMapCacheAffinity:
      return std::make_unique<DualCandidatePolicy>(
          kind, options, instances, PairSelection::kCacheAffinity, false);
    case PolicyKind::kDualMapLeastLoaded:
      return std::make_unique<DualCandidatePolicy>(
          kind, options, instances, PairSelection::kLeastLoaded, false);
    case PolicyKind::kDualMapMinTtft:
      return std::make_unique<DualCandidatePolicy>(
          kind, options, instances, PairSelection::kMinTtft, false);
  }
  throw ConfigError("policy", "unhandled policy kind");
}

}  // namespace pairsim
