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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pairsim/cluster.h"

namespace pairsim {

inline constexpr std::int64_t kDefaultWarmupRequests = 500;

// Population standard deviation over mean; 0 when the mean is 0.
double CoefficientOfVariation(std::span<const double> loads);
double CoefficientOfVariation(std::span<const std::int64_t> loads);

// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.
double NearestRankPercentile(std::vector<double> values, double p);

// Records after the first `warmup` requests (trace order).
std::span<const RequestRecord> PostWarmup(std::span<const RequestRecord> records,
                                          std::int64_t warmup);

// Reused tokens over input tokens, summed across records.
double CacheHitRate(std::span<const RequestRecord> records);

// Fraction of records whose TTFT is strictly below the SLO.
double EffectiveCapacity(std::span<const RequestRecord> records,
                         double slo_seconds);

struct LatencyPercentiles {
  double p50_ttft = 0.0;
  double p90_ttft = 0.0;
  double p50_e2e = 0.0;
  double p90_e2e = 0.0;
};

LatencyPercentiles ComputePercentiles(std::span<const RequestRecord> records);

struct CvSeries {
  std::vector<std::pair<double, double>> points;  // (time, CV)
  double mean = 0.0;
};

CvSeries CvOverTimeline(std::span<const TimelineSample> timeline);

struct MetricsReport {
  std::string policy;
  std::int64_t request_count = 0;
  std::int64_t warmup_excluded = 0;
  double cache_hit_rate = 0.0;
  CvSeries cv;
  LatencyPercentiles latency;
  double effective_capacity = 0.0;
  double slo_seconds = 0.0;
  std::int64_t migrations = 0;
  std::int64_t rebalance_plans = 0;
  std::int64_t bottleneck_flags = 0;
  std::int64_t redispatches = 0;
  std::int64_t audit_violations = 0;
};

MetricsReport ComputeReport(const RunResult& run, double slo_seconds,
                            std::int64_t warmup);

nlohmann::ordered_json ReportToJson(const MetricsReport& report,
                                    bool include_series = true);

struct GoodputOptions {
  double target = 0.9;
  double initial_scale = 1.0;
  double relative_tolerance = 0.02;
  int max_doublings = 12;
  int max_halvings = 12;
  std::int64_t warmup = kDefaultWarmupRequests;
};

struct GoodputResult {
  double qps = 0.0;  // highest probed rate meeting the target
  double scale = 0.0;
  bool unsaturated = false;  // never violated up to the bracket limit
  bool infeasible = false;   // even the lowest probe violated the target
  std::vector<std::pair<double, double>> probes;  // (qps, effective capacity)
};

// Bracketed doubling then bisection over QPS scale factors of `trace`.
GoodputResult SearchGoodput(const Trace& trace, PolicyKind policy,
                            const ComputeProfile& profile,
                            const ClusterConfig& config,
                            const GoodputOptions& options);

}  // namespace pairsim
