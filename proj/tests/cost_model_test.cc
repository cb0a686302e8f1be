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

#include "pairsim/cost_model.h"

#include <gtest/gtest.h>

#include <cmath>

#include "pairsim/errors.h"
#include "test_util.h"

namespace pairsim {
namespace {

using testing::MakeRequest;
using testing::Range;

ComputeProfile Rate(double prefill_rate) {
  ComputeProfile p;
  p.prefill_rate = prefill_rate;
  return p;
}

InstanceSnapshot Idle(InstanceId id, const PrefixCache* cache = nullptr) {
  InstanceSnapshot s;
  s.id = id;
  s.cache = cache;
  return s;
}

TEST(EstimateTtft, IdleFullHitIsFree) {
  PrefixCache cache(1 << 20, 128);
  const Request r = MakeRequest(0, 3.0, Range(1, 10));
  cache.Insert(r.prompt_blocks, 0.0);
  const TtftEstimate e = EstimateTtft(r, Idle(0, &cache), Rate(5000), 3.0);
  EXPECT_EQ(e.total(), 0.0);
}

TEST(EstimateTtft, QueueAndComputeQuotients) {
  Request r;
  r.input_tokens = 5000;
  r.prompt_blocks = ChainBlocks(Range(1, 40));  // ceil(5000/128)
  InstanceSnapshot s = Idle(0);
  s.pending_prefill_tokens = 10000;
  const TtftEstimate e = EstimateTtft(r, s, Rate(5000), 0.0);
  EXPECT_DOUBLE_EQ(e.t_q, 2.0);
  EXPECT_DOUBLE_EQ(e.t_c, 1.0);
  EXPECT_DOUBLE_EQ(e.total(), 3.0);
}

TEST(EstimateTtft, BottleneckCorrectionAddsInterval) {
  Request r;
  r.input_tokens = 1000;
  r.arrival_time = 10.0;
  r.prompt_blocks = ChainBlocks(Range(1, 8));
  InstanceSnapshot s = Idle(0);
  s.pending_prefill_tokens = 1000;
  s.last_prefill_time = 6.0;
  s.bottlenecked = true;
  const TtftEstimate e = EstimateTtft(r, s, Rate(1000), 10.0);
  EXPECT_DOUBLE_EQ(e.t_q, 1.0);
  EXPECT_DOUBLE_EQ(e.t_c, 1.0);
  EXPECT_DOUBLE_EQ(e.d_correction, 4.0);
  EXPECT_DOUBLE_EQ(e.total(), 6.0);
  s.bottlenecked = false;
  EXPECT_DOUBLE_EQ(EstimateTtft(r, s, Rate(1000), 10.0).total(), 2.0);
}

TEST(EstimateTtft, CountsTimeAlreadyWaited) {
  const Request r = MakeRequest(0, 1.0, Range(1, 1));
  const TtftEstimate e = EstimateTtft(r, Idle(0), Rate(128), 4.0);
  EXPECT_DOUBLE_EQ(e.t_q, 3.0);
  EXPECT_DOUBLE_EQ(e.t_c, 1.0);
}

TEST(EstimateTtft, ExplicitQueuePosition) {
  const Request r = MakeRequest(0, 0.0, Range(1, 1));
  InstanceSnapshot s = Idle(0);
  s.pending_prefill_tokens = 9000;
  EXPECT_DOUBLE_EQ(EstimateTtft(r, s, Rate(1000), 0.0, 2000).t_q, 2.0);
}

TEST(EstimateTtft, ProbeDoesNotDisturbLru) {
  PrefixCache cache(4 * 128, 128);
  const Request a = MakeRequest(0, 0, {1, 2});
  const Request b = MakeRequest(1, 0, {3, 4});
  cache.Insert(a.prompt_blocks, 0.0);
  cache.Insert(b.prompt_blocks, 1.0);
  EstimateTtft(a, Idle(0, &cache), Rate(1000), 2.0);
  cache.Insert(ChainBlocks(Range(10, 2)), 3.0);
  EXPECT_EQ(cache.Probe(a.prompt_blocks), 0);  // a stayed oldest
}

TEST(EstimateTtft, OfflineInstanceErrors) {
  InstanceSnapshot s = Idle(0);
  s.online = false;
  EXPECT_THROW(EstimateTtft(MakeRequest(0, 0, {1}), s, Rate(1000), 0.0),
               StateError);
}

TEST(EstimateTtft, ReuseCappedAtInput) {
  PrefixCache cache(1 << 20, 128);
  Request r = MakeRequest(0, 0, {1, 2});
  r.input_tokens = 200;  // the last block is partial
  cache.Insert(r.prompt_blocks, 0.0);
  EXPECT_EQ(Idle(0, &cache).ReusableTokens(r), 200);
  EXPECT_EQ(Idle(0, &cache).UncachedTokens(r), 0);
}

TEST(SloThreshold, FloorOfRateTimesSlo) {
  EXPECT_EQ(SloThresholdTokens(Rate(5000), 5.0), 25000);
  EXPECT_EQ(SloThresholdTokens(Rate(1000), 0.001), 1);
  EXPECT_EQ(SloThresholdTokens(Rate(10000), 5.0), 2 * SloThresholdTokens(Rate(5000), 5.0));
  EXPECT_EQ(SloThresholdTokens(Rate(1000), 0.0015), 1);
  EXPECT_THROW(SloThresholdTokens(Rate(1000), 0.0), ConfigError);
  EXPECT_THROW(SloThresholdTokens(Rate(1000), -1.0), ConfigError);
}

TEST(MigrationBenefit, SymmetricStatesGiveZero) {
  const Request r = MakeRequest(0, 0, Range(1, 20));
  InstanceSnapshot s = Idle(0);
  s.pending_prefill_tokens = 7777;
  EXPECT_EQ(MigrationBenefit(r, s, s.pending_prefill_tokens, s, Rate(3000), 1.5), 0.0);
}

TEST(MigrationBenefit, DifferenceOfTotals) {
  // src: t_q = 4, t_c = 1; dst: t_q = 0.5, t_c = 2 with a shorter cache hit.
  PrefixCache dst_cache(1 << 20, 1000);
  Request r;
  r.input_tokens = 3000;
  r.prompt_blocks = ChainBlocks(Range(1, 3));
  PrefixCache src_two(1 << 20, 1000);
  src_two.Insert(ChainBlocks(Range(1, 2)), 0.0);
  dst_cache.Insert(ChainBlocks(Range(1, 1)), 0.0);
  InstanceSnapshot src = Idle(0, &src_two);
  src.pending_prefill_tokens = 4000;
  InstanceSnapshot dst = Idle(1, &dst_cache);
  dst.pending_prefill_tokens = 500;
  const ComputeProfile p = Rate(1000);
  EXPECT_DOUBLE_EQ(EstimateTtft(r, src, p, 0.0).total(), 5.0);
  EXPECT_DOUBLE_EQ(EstimateTtft(r, dst, p, 0.0).total(), 2.5);
  EXPECT_DOUBLE_EQ(MigrationBenefit(r, src, 4000, dst, p, 0.0), 2.5);
}

TEST(MigrationBenefit, BottleneckedDestinationCanBeWorse) {
  const Request r = MakeRequest(0, 0, {1});
  InstanceSnapshot src = Idle(0);
  InstanceSnapshot dst = Idle(1);
  dst.bottlenecked = true;
  dst.last_prefill_time = 0.0;
  EXPECT_LT(MigrationBenefit(r, src, 0, dst, Rate(1000), 10.0), 0.0);
}

TEST(Bottleneck, NeedsQueueAndLongInterval) {
  EXPECT_FALSE(IsDecodeBottlenecked(10.0, 6.0, false, 3.0));
  EXPECT_FALSE(IsDecodeBottlenecked(9.0, 6.0, true, 3.0));
  EXPECT_TRUE(IsDecodeBottlenecked(9.01, 6.0, true, 3.0));
}

TEST(PotcBound, HandEvaluatedValues) {
  const PotcBound two = ComputePotcBound(8, 8000, 2);
  EXPECT_DOUBLE_EQ(two.mean_load, 1000.0);
  EXPECT_NEAR(two.deviation, std::log(std::log(8.0)) / std::log(2.0), 1e-12);
  EXPECT_FALSE(two.order_of);
  // ln ln 8 = 0.7320...
  EXPECT_NEAR(std::log(std::log(8.0)), 0.732, 5e-4);

  const PotcBound four = ComputePotcBound(8, 8000, 4);
  EXPECT_NEAR(four.deviation, two.deviation / 2.0, 1e-12);

  const PotcBound one = ComputePotcBound(8, 8000, 1);
  EXPECT_NEAR(one.deviation, 45.6, 0.05);
  EXPECT_TRUE(one.order_of);
}

TEST(PotcBound, DecreasingInDAndIndependentOfM) {
  for (std::int64_t n : {3, 8, 16, 32, 100}) {
    for (std::int64_t d = 2; d < 8; ++d) {
      EXPECT_GT(ComputePotcBound(n, 1000, d).deviation,
                ComputePotcBound(n, 1000, d + 1).deviation);
      EXPECT_EQ(ComputePotcBound(n, 1000, d).deviation,
                ComputePotcBound(n, 99999, d).deviation);
    }
  }
}

TEST(PotcBound, RejectsBadArguments) {
  EXPECT_THROW(ComputePotcBound(1, 10, 2), ConfigError);
  EXPECT_THROW(ComputePotcBound(8, 0, 2), ConfigError);
  EXPECT_THROW(ComputePotcBound(8, 10, 0), ConfigError);
}

TEST(Profile, Validation) {
  EXPECT_NO_THROW(ValidateProfile(ComputeProfile{}));
  ComputeProfile p;
  p.prefill_rate = 0;
  EXPECT_THROW(ValidateProfile(p), ConfigError);
  p = ComputeProfile{};
  p.memory_capacity_tokens = 0;
  EXPECT_THROW(ValidateProfile(p), ConfigError);
}

}  // namespace
}  // namespace pairsim
