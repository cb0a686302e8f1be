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

#include <gtest/gtest.h>

#include <random>

#include "oracles.h"
#include "pairsim/errors.h"
#include "test_util.h"

namespace pairsim {
namespace {

using testing::MakeRequest;
using testing::Range;

ComputeProfile Rate(double r) {
  ComputeProfile p;
  p.prefill_rate = r;
  return p;
}

// Instances 0..n-1 with the given loads and optional caches.
struct Fixture {
  std::vector<std::unique_ptr<PrefixCache>> caches;
  ClusterSnapshot snap;

  explicit Fixture(std::vector<std::int64_t> loads, double now = 0.0) {
    snap.now = now;
    for (std::size_t i = 0; i < loads.size(); ++i) {
      caches.push_back(std::make_unique<PrefixCache>(PrefixCache::Unbounded(128)));
      InstanceSnapshot s;
      s.id = static_cast<InstanceId>(i);
      s.pending_prefill_tokens = loads[i];
      s.cache = caches.back().get();
      snap.instances.push_back(s);
    }
  }
  void Cache(std::size_t i, const Request& r) { caches[i]->Insert(r.prompt_blocks, 0.0); }
};

TEST(Baselines, EmptyClusterErrors) {
  const Request r = MakeRequest(0, 0, {1});
  const ClusterSnapshot empty;
  EXPECT_THROW(RouteCacheAffinity(r, empty, Rate(1000)), StateError);
  EXPECT_THROW(RouteLeastLoaded(r, empty, Rate(1000)), StateError);
  EXPECT_THROW(RouteMinTtft(r, empty, Rate(1000)), StateError);
  EXPECT_THROW(RoutePreble(r, empty, Rate(1000)), StateError);
}

TEST(Baselines, CacheAffinityPicksLongestReuseLowestId) {
  Fixture f({0, 0, 0, 0});
  const Request r = MakeRequest(0, 0, Range(1, 8));
  EXPECT_EQ(RouteCacheAffinity(r, f.snap, Rate(1000)).target, 0);
  f.Cache(2, MakeRequest(1, 0, Range(1, 4)));
  f.Cache(3, MakeRequest(2, 0, Range(1, 4)));
  f.Cache(1, MakeRequest(3, 0, Range(1, 2)));
  const RoutingDecision d = RouteCacheAffinity(r, f.snap, Rate(1000));
  EXPECT_EQ(d.target, 2);
  EXPECT_EQ(d.reason, RouteReason::kCacheAffinity);
}

TEST(Baselines, LeastLoadedArgminLowestId) {
  Fixture f({300, 100, 200, 100});
  EXPECT_EQ(RouteLeastLoaded(MakeRequest(0, 0, {1}), f.snap, Rate(1000)).target, 1);
}

TEST(Baselines, MinTtftPrefersLoadedHitOverIdleMiss) {
  // Hit instance waits 1 s then prefills nothing; idle one needs 2 s.
  Fixture f({1000, 0});
  const Request r = MakeRequest(0, 0, Range(1, 16), 125);
  f.Cache(0, r);
  const RoutingDecision d = RouteMinTtft(r, f.snap, Rate(1000));
  EXPECT_EQ(d.target, 0);
  EXPECT_EQ(d.estimates.size(), 2u);
  EXPECT_DOUBLE_EQ(d.EstimateFor(0)->total(), 1.0);
  EXPECT_DOUBLE_EQ(d.EstimateFor(1)->total(), 2.0);
}

TEST(Baselines, MinTtftTies) {
  Fixture idle({0, 0, 0});
  EXPECT_EQ(RouteMinTtft(MakeRequest(0, 0, {1}), idle.snap, Rate(1000)).target, 0);
  // Totals 2.0, 1.5, 1.5.
  Fixture f({1872, 1372, 1372});
  const RoutingDecision d = RouteMinTtft(MakeRequest(0, 0, {1}), f.snap, Rate(1000));
  EXPECT_DOUBLE_EQ(d.EstimateFor(0)->total(), 2.0);
  EXPECT_DOUBLE_EQ(d.EstimateFor(1)->total(), 1.5);
  EXPECT_EQ(d.target, 1);
}

TEST(Baselines, MinTtftMatchesBruteForce) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 300; ++i) {
    const testing::Scenario sc = testing::RandomScenario(rng, 1, 12);
    const Request r = testing::RandomRequest(rng, i, sc.snapshot.now, sc.block_tokens);
    ASSERT_EQ(RouteMinTtft(r, sc.snapshot, sc.profile).target,
              testing::BruteForceMinTtft(sc, r))
        << "scenario " << i;
  }
}

TEST(Baselines, PrebleHitThreshold) {
  const Request r = MakeRequest(0, 0, Range(1, 10));
  auto route = [&](std::size_t cached_blocks) {
    Fixture f({5000, 0});
    f.Cache(0, MakeRequest(1, 0, Range(1, cached_blocks)));
    return RoutePreble(r, f.snap, Rate(1000));
  };
  EXPECT_EQ(route(6).target, 0);
  EXPECT_EQ(route(6).reason, RouteReason::kCacheAffinity);
  EXPECT_EQ(route(4).target, 1);
  EXPECT_EQ(route(4).reason, RouteReason::kLeastLoaded);
  EXPECT_EQ(route(5).target, 1);  // exactly half is not enough
}

TEST(Baselines, RepeatedRoutingIsPure) {
  std::mt19937_64 rng(5);
  const testing::Scenario sc = testing::RandomScenario(rng, 4, 8);
  const Request r = testing::RandomRequest(rng, 0, sc.snapshot.now, sc.block_tokens);
  for (auto fn : {&RouteCacheAffinity, &RouteLeastLoaded, &RouteMinTtft, &RoutePreble}) {
    EXPECT_EQ(fn(r, sc.snapshot, sc.profile).target, fn(r, sc.snapshot, sc.profile).target);
  }
}

// --- SLO-aware pair selection ---------------------------------------------

constexpr std::int64_t kThreshold = 5000;

RoutingDecision Slo(const Fixture& f, const Request& r, InstanceId a, InstanceId b) {
  return SelectCandidate(r, f.snap, CandidatePair{a, b}, Rate(1000), kThreshold,
                         PairSelection::kSloAware);
}

TEST(SelectCandidate, AffinityUnderThreshold) {
  Fixture f({2000, 0});
  const Request r = MakeRequest(0, 0, Range(1, 8));
  f.Cache(0, r);
  const RoutingDecision d = Slo(f, r, 0, 1);
  EXPECT_EQ(d.target, 0);
  EXPECT_EQ(d.reason, RouteReason::kCacheAffinity);
  ASSERT_TRUE(d.pair.has_value());
  EXPECT_EQ(d.estimates.size(), 2u);
}

TEST(SelectCandidate, SwitchesWhenAffineIsOverThreshold) {
  Fixture f({5001, 0});
  const Request r = MakeRequest(0, 0, Range(1, 8));
  f.Cache(0, r);
  const RoutingDecision d = Slo(f, r, 0, 1);
  EXPECT_EQ(d.target, 1);
  EXPECT_EQ(d.reason, RouteReason::kSloSwitch);
}

TEST(SelectCandidate, OwnUncachedTokensCountTowardsThreshold) {
  const Request r = MakeRequest(0, 0, Range(1, 8));  // 1024 tokens
  Fixture f({4000, 0});
  f.Cache(0, MakeRequest(1, 0, Range(1, 4)));  // 512 uncached on 0
  EXPECT_EQ(Slo(f, r, 0, 1).target, 0);        // 4512 <= 5000
  f.snap.instances[0].pending_prefill_tokens = 4489;
  EXPECT_EQ(Slo(f, r, 0, 1).target, 1);  // 5001 > 5000
}

TEST(SelectCandidate, EqualReuseGoesToLessLoaded) {
  Fixture f({9000, 4000});
  const Request r = MakeRequest(0, 0, Range(1, 8));
  f.Cache(0, r);
  f.Cache(1, r);
  const RoutingDecision d = Slo(f, r, 0, 1);
  EXPECT_EQ(d.target, 1);
  EXPECT_EQ(d.reason, RouteReason::kTieLessLoaded);
  Fixture g({4000, 4000});
  EXPECT_EQ(Slo(g, r, 1, 0).target, 0);  // full tie: lower id
}

TEST(SelectCandidate, BothOverTriggersRebalance) {
  Fixture f({9000, 8000});
  const Request r = MakeRequest(0, 0, Range(1, 8));
  f.Cache(1, r);
  RoutingDecision d = Slo(f, r, 0, 1);
  EXPECT_EQ(d.target, 1);
  EXPECT_EQ(d.reason, RouteReason::kRebalanceTrigger);
  Fixture g({9000, 8000});
  d = Slo(g, r, 0, 1);
  EXPECT_EQ(d.target, 1);
  EXPECT_EQ(d.reason, RouteReason::kRebalanceTrigger);
}

TEST(SelectCandidate, AblationSelections) {
  Fixture f({9000, 100});
  const Request r = MakeRequest(0, 0, Range(1, 8));
  f.Cache(0, r);
  auto pick = [&](PairSelection s) {
    return SelectCandidate(r, f.snap, CandidatePair{0, 1}, Rate(1000), kThreshold, s).target;
  };
  EXPECT_EQ(pick(PairSelection::kCacheAffinity), 0);
  EXPECT_EQ(pick(PairSelection::kLeastLoaded), 1);
  EXPECT_EQ(pick(PairSelection::kMinTtft), 1);  // 9 s vs 1.124 s
}

TEST(SelectCandidate, OfflineCandidateErrors) {
  Fixture f({0, 0});
  EXPECT_THROW(Slo(f, MakeRequest(0, 0, {1}), 0, 7), StateError);
}

TEST(RouteDualMap, TargetsAreAlwaysPairMembersAndPairsDistinct) {
  std::vector<InstanceId> ids = {0, 1, 2, 3, 4, 5};
  DualHashRing ring(RingOptions{});
  for (InstanceId id : ids) ring.AddInstance(id);
  HotnessTree tree(HotnessOptions{}, 128, 6);
  Fixture f({0, 0, 0, 0, 0, 0});
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    const Request r = MakeRequest(i, 0, Range(rng() % 50, 5 + rng() % 12));
    const RoutingDecision d = RouteDualMap(r, f.snap, ring, tree, kThreshold, Rate(1000));
    ASSERT_TRUE(d.pair.has_value());
    ASSERT_NE(d.pair->primary, d.pair->secondary);
    ASSERT_TRUE(d.pair->Contains(d.target));
    EXPECT_GE(d.key_length, 2u);
    f.snap.instances[d.target].pending_prefill_tokens += r.input_tokens;
    f.caches[d.target]->Insert(r.prompt_blocks, 0.0);
  }
}

// --- Rebalancing ------------------------------------------------------------

// Source 0 holds A (3000), B (1000), C (1000) at 1000 tok/s, nothing cached.
// Partners: A -> 3 (swamped), B -> 2 (2000 pending), C -> 1 (1500 pending).
// Source TTFTs 3, 4, 5; moving C gains 5 - 2.5 = 2.5, moving B gains 4 - 3 = 1.
struct PlanFixture {
  Fixture f{{5000, 1500, 2000, 10000}};
  std::vector<Request> reqs = {MakeRequest(0, 0, Range(100, 3), 1000),
                               MakeRequest(1, 0, Range(200, 1), 1000),
                               MakeRequest(2, 0, Range(300, 1), 1000)};
  RebalanceSource src;

  PlanFixture() {
    src.instance = f.snap.instances[0];
    const InstanceId partner[] = {3, 2, 1};
    for (std::size_t i = 0; i < reqs.size(); ++i) {
      src.queue.push_back({&reqs[i], reqs[i].input_tokens, CandidatePair{0, partner[i]}});
    }
  }
  std::vector<Migration> Plan(double slo) {
    return PlanRebalance(src, f.snap, Rate(1000), slo, 0.0);
  }
};

TEST(PlanRebalance, QueueEstimatesFollowPosition) {
  PlanFixture p;
  const auto est = QueueEstimates(p.src, Rate(1000), 0.0);
  ASSERT_EQ(est.size(), 3u);
  EXPECT_DOUBLE_EQ(est[0].total(), 3.0);
  EXPECT_DOUBLE_EQ(est[1].total(), 4.0);
  EXPECT_DOUBLE_EQ(est[2].total(), 5.0);
  EXPECT_TRUE(IsOverloaded(p.src, Rate(1000), 4.5, 0.0));
  EXPECT_FALSE(IsOverloaded(p.src, Rate(1000), 5.0, 0.0));
}

TEST(PlanRebalance, DescendingBenefit) {
  PlanFixture p;
  const auto plan = p.Plan(3.5);
  ASSERT_EQ(plan.size(), 2u);
  EXPECT_EQ(plan[0].request_id, 2);
  EXPECT_EQ(plan[0].destination, 1);
  EXPECT_DOUBLE_EQ(plan[0].benefit, 2.5);
  EXPECT_EQ(plan[1].request_id, 1);
  EXPECT_DOUBLE_EQ(plan[1].benefit, 1.0);
}

TEST(PlanRebalance, StopsOnceSourceMeetsSlo) {
  PlanFixture p;
  const auto plan = p.Plan(4.5);
  ASSERT_EQ(plan.size(), 1u);
  EXPECT_EQ(plan[0].request_id, 2);
}

TEST(PlanRebalance, NothingBeneficialGivesEmptyPlan) {
  PlanFixture p;
  for (auto& s : p.f.snap.instances) {
    if (s.id != 0) s.pending_prefill_tokens = 50000;
  }
  EXPECT_TRUE(p.Plan(3.5).empty());
  EXPECT_TRUE(PlanRebalance(RebalanceSource{p.f.snap.instances[0], 0, {}}, p.f.snap,
                            Rate(1000), 1.0, 0.0)
                  .empty());
}

TEST(PlanRebalance, DestinationMustLandUnderSlo) {
  PlanFixture p;
  // C would gain 2.5 s but still arrive at 2.5 s > 2.4 s.
  const auto plan = p.Plan(2.4);
  for (const Migration& m : plan) EXPECT_LT(m.destination_estimate.total(), 2.4);
  EXPECT_TRUE(plan.empty());
}

TEST(PlanRebalance, BottleneckedSourceIsOverloaded) {
  PlanFixture p;
  p.src.instance.bottlenecked = true;
  p.src.instance.last_prefill_time = -4.0;
  EXPECT_TRUE(IsOverloaded(p.src, Rate(1000), 100.0, 0.0));
  p.src.queue.clear();
  EXPECT_TRUE(IsOverloaded(p.src, Rate(1000), 100.0, 0.0));
}

TEST(PlanRebalance, RandomPlansSatisfyOracle) {
  std::mt19937_64 rng(17);
  int nonempty = 0;
  for (int i = 0; i < 300; ++i) {
    const testing::RebalanceScenario rs = testing::RandomRebalanceScenario(rng);
    const auto plan = PlanRebalance(rs.source, rs.sc.snapshot, rs.sc.profile, rs.slo,
                                    rs.sc.snapshot.now);
    nonempty += !plan.empty();
    ASSERT_EQ(testing::CheckRebalancePlan(rs, plan), "") << "scenario " << i;
  }
  EXPECT_GT(nonempty, 30);
}

// --- Policy objects -------------------------------------------------------

TEST(Policies, NamesRoundTrip) {
  EXPECT_EQ(AllPolicyKinds().size(), 9u);
  for (PolicyKind k : AllPolicyKinds()) EXPECT_EQ(ParsePolicyKind(PolicyName(k)), k);
  EXPECT_THROW(ParsePolicyKind("round_robin"), ConfigError);
}

TEST(Policies, OnlyFullDualMapRebalances) {
  PolicyOptions o;
  for (PolicyKind k : AllPolicyKinds()) {
    auto p = MakePolicy(k, o, {0, 1, 2});
    EXPECT_EQ(p->rebalances(), k == PolicyKind::kDualMap) << p->name();
    const bool dual = PolicyName(k).starts_with("dualmap");
    EXPECT_EQ(p->ring() != nullptr, dual);
    EXPECT_EQ(p->hotness() != nullptr, dual);
  }
}

TEST(Policies, RerouteDoesNotCountAsObservation) {
  auto p = MakePolicy(PolicyKind::kDualMap, PolicyOptions{}, {0, 1, 2, 3});
  Fixture f({0, 0, 0, 0});
  const Request r = MakeRequest(0, 0, Range(1, 6));
  p->Route(r, f.snap, true);
  const auto seen = p->hotness()->observations();
  p->Route(r, f.snap, false);
  EXPECT_EQ(p->hotness()->observations(), seen);
}

TEST(Policies, MembershipChangesReachTheRing) {
  auto p = MakePolicy(PolicyKind::kDualMap, PolicyOptions{}, {0, 1});
  p->OnInstanceAdded(2);
  EXPECT_EQ(p->ring()->size(), 3u);
  p->OnInstanceRemoved(0);
  EXPECT_EQ(p->ring()->size(), 2u);
}

}  // namespace
}  // namespace pairsim
