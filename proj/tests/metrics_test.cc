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

#include "pairsim/metrics.h"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pairsim/errors.h"
#include "test_util.h"

namespace pairsim {
namespace {

using testing::MakeRequest;
using testing::Range;

double BruteCv(const std::vector<double>& x) {
  long double sum = 0;
  for (double v : x) sum += v;
  const long double mean = sum / x.size();
  if (mean == 0) return 0.0;
  long double sq = 0;
  for (double v : x) sq += (v - mean) * (v - mean);
  return static_cast<double>(std::sqrt(sq / x.size()) / mean);
}

RequestRecord Rec(double ttft, double e2e, std::int64_t input = 100,
                  std::int64_t reuse = 0) {
  RequestRecord r;
  r.first_token = ttft;
  r.completion = e2e;
  r.input_tokens = input;
  r.reusable_tokens = reuse;
  return r;
}

TEST(Cv, Examples) {
  EXPECT_EQ(CoefficientOfVariation(std::vector<double>{5, 5, 5, 5}), 0.0);
  EXPECT_DOUBLE_EQ(CoefficientOfVariation(std::vector<double>{1, 3}), 0.5);
  EXPECT_EQ(CoefficientOfVariation(std::vector<double>{0, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(CoefficientOfVariation(std::vector<std::int64_t>{1, 3}), 0.5);
  EXPECT_EQ(CoefficientOfVariation(std::vector<double>{7}), 0.0);
}

TEST(Cv, MatchesBruteForce) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> x(std::uniform_int_distribution<int>(2, 64)(rng));
    for (double& v : x) v = std::floor(std::uniform_real_distribution<double>(0, 50000)(rng));
    ASSERT_NEAR(CoefficientOfVariation(x), BruteCv(x), 1e-12);
  }
}

TEST(Percentiles, NearestRank) {
  std::vector<double> v;
  for (int i = 10; i >= 1; --i) v.push_back(i);
  EXPECT_EQ(NearestRankPercentile(v, 50), 5.0);
  EXPECT_EQ(NearestRankPercentile(v, 90), 9.0);
  EXPECT_EQ(NearestRankPercentile(v, 100), 10.0);
  EXPECT_EQ(NearestRankPercentile(v, 0), 1.0);
  EXPECT_EQ(NearestRankPercentile({3.5}, 90), 3.5);
  EXPECT_THROW(NearestRankPercentile({}, 50), ConfigError);
}

TEST(Percentiles, RecordsUseArrivalOffsets) {
  std::vector<RequestRecord> recs;
  for (int i = 1; i <= 10; ++i) {
    RequestRecord r = Rec(i + 100.0, 2 * i + 100.0);
    r.arrival = 100.0;
    recs.push_back(r);
  }
  const LatencyPercentiles p = ComputePercentiles(recs);
  EXPECT_DOUBLE_EQ(p.p50_ttft, 5.0);
  EXPECT_DOUBLE_EQ(p.p90_ttft, 9.0);
  EXPECT_DOUBLE_EQ(p.p50_e2e, 10.0);
  EXPECT_DOUBLE_EQ(p.p90_e2e, 18.0);
}

TEST(HitRate, TokenWeighted) {
  const std::vector<RequestRecord> recs = {Rec(1, 1, 100, 0), Rec(1, 1, 300, 300)};
  EXPECT_DOUBLE_EQ(CacheHitRate(recs), 0.75);
  EXPECT_EQ(CacheHitRate(std::vector<RequestRecord>{Rec(1, 1, 100, 0)}), 0.0);
  EXPECT_THROW(CacheHitRate(std::span<const RequestRecord>{}), ConfigError);
}

// One prompt repeated m times, each arriving after the previous one finished.
Trace HotPrefix(int m, double gap) {
  Trace t;
  for (int i = 0; i < m; ++i) t.requests.push_back(MakeRequest(i, gap * i, Range(1, 16)));
  return t;
}

double HitRate(const Trace& t, PolicyKind k, int n) {
  ClusterConfig c;
  c.n_instances = n;
  c.unbounded_cache = true;
  return CacheHitRate(RunSimulation(t, k, ComputeProfile{}, c).records);
}

TEST(HitRate, SingleHotPrefixFloors) {
  const int m = 200;
  const Trace t = HotPrefix(m, 1.0);
  EXPECT_GE(HitRate(t, PolicyKind::kCacheAffinity, 1), 1.0 - 1.0 / m);
  EXPECT_GE(HitRate(t, PolicyKind::kCacheAffinity, 8), 1.0 - 1.0 / m);
  EXPECT_GE(HitRate(t, PolicyKind::kDualMap, 8), 1.0 - 2.0 / m);
}

TEST(HitRate, InvariantUnderRescalingForSingleInstanceAffinity) {
  Trace t = SynthTrace(ToolAgentSpec(400, 3.0, 9));
  const double base = HitRate(t, PolicyKind::kCacheAffinity, 1);
  EXPECT_DOUBLE_EQ(HitRate(ScaleQps(t, 5.0), PolicyKind::kCacheAffinity, 1), base);
  EXPECT_DOUBLE_EQ(HitRate(ScaleQps(t, 0.1), PolicyKind::kCacheAffinity, 1), base);
}

TEST(Capacity, Examples) {
  EXPECT_EQ(EffectiveCapacity(std::vector<RequestRecord>(4, Rec(0.1, 1)), 5.0), 1.0);
  EXPECT_EQ(EffectiveCapacity(std::vector<RequestRecord>{Rec(1, 2), Rec(6, 7)}, 5.0), 0.5);
  EXPECT_EQ(EffectiveCapacity(std::vector<RequestRecord>{Rec(1, 2), Rec(6, 7)}, 1e300), 1.0);
  // Strictly below the SLO.
  EXPECT_EQ(EffectiveCapacity(std::vector<RequestRecord>{Rec(5, 6)}, 5.0), 0.0);
  EXPECT_THROW(EffectiveCapacity(std::vector<RequestRecord>{Rec(1, 2)}, 0.0), ConfigError);
}

TEST(Report, WarmupIsExcluded) {
  RunResult run;
  run.policy = "x";
  for (int i = 0; i < 10; ++i) run.records.push_back(Rec(i < 4 ? 100.0 : 1.0, 200.0));
  run.timeline.push_back({0.0, {{0, 1}, {1, 3}}});
  run.timeline.push_back({1.0, {{0, 2}, {1, 2}}});
  const MetricsReport r = ComputeReport(run, 5.0, 4);
  EXPECT_EQ(r.request_count, 6);
  EXPECT_EQ(r.warmup_excluded, 4);
  EXPECT_EQ(r.effective_capacity, 1.0);
  EXPECT_EQ(r.latency.p90_ttft, 1.0);
  EXPECT_DOUBLE_EQ(r.cv.mean, 0.25);
  ASSERT_EQ(r.cv.points.size(), 2u);
  EXPECT_THROW(ComputeReport(run, 5.0, 10), ConfigError);

  const auto j = ReportToJson(r);
  EXPECT_EQ(j["request_count"], 6);
  EXPECT_TRUE(j.contains("cv_series"));
  EXPECT_FALSE(ReportToJson(r, false).contains("cv_series"));
}

TEST(Report, FractionsStayInRange) {
  const Trace t = SynthTrace(ToolAgentSpec(1200, 12.0, 3));
  for (PolicyKind k : {PolicyKind::kDualMap, PolicyKind::kLeastLoaded}) {
    const RunResult run = RunSimulation(t, k, ComputeProfile{}, ClusterConfig{});
    const MetricsReport r = ComputeReport(run, 5.0, kDefaultWarmupRequests);
    EXPECT_EQ(r.request_count, 700);
    for (double f : {r.cache_hit_rate, r.effective_capacity}) {
      EXPECT_GE(f, 0.0);
      EXPECT_LE(f, 1.0);
    }
    EXPECT_LE(r.latency.p50_ttft, r.latency.p50_e2e);
    EXPECT_LE(r.latency.p90_ttft, r.latency.p90_e2e);
  }
}

TEST(Goodput, FastProfileIsUnsaturated) {
  const Trace t = SynthTrace(ToolAgentSpec(300, 2.0, 1));
  ComputeProfile fast;
  fast.prefill_rate = 1e12;
  GoodputOptions o;
  o.warmup = 0;
  o.max_doublings = 4;
  const GoodputResult g = SearchGoodput(t, PolicyKind::kLeastLoaded, fast, ClusterConfig{}, o);
  EXPECT_TRUE(g.unsaturated);
  EXPECT_FALSE(g.infeasible);
  EXPECT_DOUBLE_EQ(g.scale, 16.0);
}

TEST(Goodput, ImpossibleSloIsInfeasible) {
  const Trace t = SynthTrace(ToolAgentSpec(100, 2.0, 1));
  ClusterConfig c;
  c.slo_seconds = 1e-6;
  GoodputOptions o;
  o.warmup = 0;
  o.max_halvings = 3;
  const GoodputResult g = SearchGoodput(t, PolicyKind::kLeastLoaded, ComputeProfile{}, c, o);
  EXPECT_TRUE(g.infeasible);
  EXPECT_EQ(g.qps, 0.0);
}

TEST(Goodput, ResultIsVerifiedByFreshRuns) {
  const Trace t = SynthTrace(ToolAgentSpec(1500, 8.0, 2));
  const ClusterConfig c;
  const GoodputOptions o;
  const GoodputResult g = SearchGoodput(t, PolicyKind::kLeastLoaded, ComputeProfile{}, c, o);
  ASSERT_FALSE(g.unsaturated);
  ASSERT_FALSE(g.infeasible);
  auto capacity = [&](double scale) {
    const RunResult run = RunSimulation(ScaleQps(t, scale), PolicyKind::kLeastLoaded,
                                        ComputeProfile{}, c);
    return EffectiveCapacity(PostWarmup(run.records, o.warmup), c.slo_seconds);
  };
  EXPECT_GE(capacity(g.scale), 0.9);
  EXPECT_LT(capacity(g.scale * 1.05), 0.9);

  // Capacity falls as load rises.
  const double a = capacity(g.scale * 0.5), b = capacity(g.scale), d = capacity(g.scale * 2);
  EXPECT_GE(a, b);
  EXPECT_GE(b, d);
}

TEST(Goodput, BadOptions) {
  const Trace t = SynthTrace(ToolAgentSpec(50, 2.0, 1));
  GoodputOptions o;
  o.target = 0.0;
  EXPECT_THROW(SearchGoodput(t, PolicyKind::kDualMap, ComputeProfile{}, ClusterConfig{}, o),
               ConfigError);
  o.target = 1.5;
  EXPECT_THROW(SearchGoodput(t, PolicyKind::kDualMap, ComputeProfile{}, ClusterConfig{}, o),
               ConfigError);
}

}  // namespace
}  // namespace pairsim
