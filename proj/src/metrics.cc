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

#include <algorithm>
#include <cmath>

#include "pairsim/errors.h"

namespace pairsim {

namespace {

template <typename T>
double Cv(std::span<const T> loads) {
  if (loads.empty()) return 0.0;
  const double n = static_cast<double>(loads.size());
  double sum = 0.0;
  for (T v : loads) sum += static_cast<double>(v);
  const double mean = sum / n;
  if (mean == 0.0) return 0.0;
  double sq = 0.0;
  for (T v : loads) {
    const double d = static_cast<double>(v) - mean;
    sq += d * d;
  }
  return std::sqrt(sq / n) / mean;
}

}  // namespace

double CoefficientOfVariation(std::span<const double> loads) { return Cv(loads); }

double CoefficientOfVariation(std::span<const std::int64_t> loads) {
  return Cv(loads);
}

double NearestRankPercentile(std::vector<double> values, double p) {
  if (values.empty()) throw ConfigError("records", "percentile of empty set");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

std::span<const RequestRecord> PostWarmup(std::span<const RequestRecord> records,
                                          std::int64_t warmup) {
  const auto skip = static_cast<std::size_t>(std::max<std::int64_t>(warmup, 0));
  if (skip >= records.size()) return {};
  return records.subspan(skip);
}

double CacheHitRate(std::span<const RequestRecord> records) {
  if (records.empty()) throw ConfigError("records", "hit rate of empty set");
  double reused = 0.0;
  double input = 0.0;
  for (const RequestRecord& r : records) {
    reused += static_cast<double>(r.reusable_tokens);
    input += static_cast<double>(r.input_tokens);
  }
  return reused / input;
}

double EffectiveCapacity(std::span<const RequestRecord> records,
                         double slo_seconds) {
  if (!(slo_seconds > 0.0)) throw ConfigError("slo_seconds", "must be positive");
  if (records.empty()) return 0.0;
  const auto met = std::count_if(records.begin(), records.end(),
                                 [&](const RequestRecord& r) {
                                   return r.ttft() < slo_seconds;
                                 });
  return static_cast<double>(met) / static_cast<double>(records.size());
}

LatencyPercentiles ComputePercentiles(std::span<const RequestRecord> records) {
  std::vector<double> ttft;
  std::vector<double> e2e;
  ttft.reserve(records.size());
  e2e.reserve(records.size());
  for (const RequestRecord& r : records) {
    ttft.push_back(r.ttft());
    e2e.push_back(r.e2e());
  }
  LatencyPercentiles p;
  p.p50_ttft = NearestRankPercentile(ttft, 50);
  p.p90_ttft = NearestRankPercentile(ttft, 90);
  p.p50_e2e = NearestRankPercentile(e2e, 50);
  p.p90_e2e = NearestRankPercentile(std::move(e2e), 90);
  return p;
}

CvSeries CvOverTimeline(std::span<const TimelineSample> timeline) {
  CvSeries series;
  std::vector<std::int64_t> loads;
  double sum = 0.0;
  for (const TimelineSample& s : timeline) {
    loads.clear();
    for (const auto& [id, pending] : s.pending) loads.push_back(pending);
    const double cv = CoefficientOfVariation(std::span<const std::int64_t>(loads));
    series.points.emplace_back(s.time, cv);
    sum += cv;
  }
  if (!series.points.empty()) {
    series.mean = sum / static_cast<double>(series.points.size());
  }
  return series;
}

MetricsReport ComputeReport(const RunResult& run, double slo_seconds,
                            std::int64_t warmup) {
  const auto records = PostWarmup(run.records, warmup);
  if (records.empty()) {
    throw ConfigError("warmup_count",
                      "no requests left after excluding the warm-up prefix");
  }
  MetricsReport report;
  report.policy = run.policy;
  report.request_count = static_cast<std::int64_t>(records.size());
  report.warmup_excluded =
      static_cast<std::int64_t>(run.records.size() - records.size());
  report.cache_hit_rate = CacheHitRate(records);
  report.cv = CvOverTimeline(run.timeline);
  report.latency = ComputePercentiles(records);
  report.effective_capacity = EffectiveCapacity(records, slo_seconds);
  report.slo_seconds = slo_seconds;
  report.migrations = run.migrations;
  report.rebalance_plans = run.rebalance_plans;
  report.bottleneck_flags = run.bottleneck_flags;
  report.redispatches = run.redispatches;
  report.audit_violations = static_cast<std::int64_t>(run.audit_violations.size());
  return report;
}

nlohmann::ordered_json ReportToJson(const MetricsReport& report,
                                    bool include_series) {
  nlohmann::ordered_json j;
  j["policy"] = report.policy;
  j["request_count"] = report.request_count;
  j["warmup_excluded"] = report.warmup_excluded;
  j["slo_seconds"] = report.slo_seconds;
  j["effective_capacity"] = report.effective_capacity;
  j["cache_hit_rate"] = report.cache_hit_rate;
  j["mean_cv"] = report.cv.mean;
  j["p50_ttft"] = report.latency.p50_ttft;
  j["p90_ttft"] = report.latency.p90_ttft;
  j["p50_e2e"] = report.latency.p50_e2e;
  j["p90_e2e"] = report.latency.p90_e2e;
  j["migrations"] = report.migrations;
  j["rebalance_plans"] = report.rebalance_plans;
  j["bottleneck_flags"] = report.bottleneck_flags;
  j["redispatches"] = report.redispatches;
  j["audit_violations"] = report.audit_violations;
  if (include_series) {
    auto series = nlohmann::ordered_json::array();
    for (const auto& [t, cv] : report.cv.points) {
      series.push_back(nlohmann::ordered_json::array({t, cv}));
    }
    j["cv_series"] = std::move(series);
  }
  return j;
}

GoodputResult SearchGoodput(const Trace& trace, PolicyKind policy,
                            const ComputeProfile& profile,
                            const ClusterConfig& config,
                            const GoodputOptions& options) {
  if (!(options.target > 0.0) || options.target > 1.0) {
    throw ConfigError("goodput.target", "must be in (0, 1]");
  }
  if (!(options.initial_scale > 0.0) || !(options.relative_tolerance > 0.0)) {
    throw ConfigError("goodput", "initial_scale and tolerance must be positive");
  }
  const double base_qps = trace.MeanQps();
  if (!(base_qps > 0.0)) {
    throw ConfigError("trace", "goodput needs a trace spanning a positive duration");
  }
  ClusterConfig probe_config = config;
  probe_config.record_event_log = false;

  GoodputResult result;
  auto passes = [&](double scale) {
    const RunResult run =
        RunSimulation(ScaleQps(trace, scale), policy, profile, probe_config);
    const double cap = EffectiveCapacity(
        PostWarmup(run.records, options.warmup), config.slo_seconds);
    result.probes.emplace_back(base_qps * scale, cap);
    return cap >= options.target;
  };

  double lo = options.initial_scale;
  double hi = lo;
  if (passes(lo)) {
    hi = lo * 2.0;
    int doublings = 1;
    while (passes(hi)) {
      lo = hi;
      if (++doublings > options.max_doublings) {
        result.unsaturated = true;
        result.scale = lo;
        result.qps = base_qps * lo;
        return result;
      }
      hi *= 2.0;
    }
  } else {
    lo = hi / 2.0;
    int halvings = 1;
    while (!passes(lo)) {
      hi = lo;
      if (++halvings > options.max_halvings) {
        result.infeasible = true;
        return result;
      }
      lo /= 2.0;
    }
  }
  while ((hi - lo) / lo > options.relative_tolerance) {
    const double mid = 0.5 * (lo + hi);
    if (passes(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  result.scale = lo;
  result.qps = base_qps * lo;
  return result;
}

}  // namespace pairsim
