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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pairsim/cluster.h"
#include "pairsim/metrics.h"
#include "pairsim/trace.h"

namespace pairsim {

inline constexpr int kArtifactSchemaVersion = 1;

struct TraceSource {
  // Exactly one of file / synth is set after parsing.
  std::optional<std::filesystem::path> file;
  TraceFormat format = TraceFormat::kBlockIds;
  std::int64_t cache_block_tokens = kDefaultCacheBlockTokens;
  std::optional<SynthSpec> synth;  // seed comes from ExperimentConfig::seed
};

struct ExperimentConfig {
  TraceSource trace;
  PolicyKind policy = PolicyKind::kDualMap;
  std::optional<double> qps;  // rescale the trace to this mean rate
  std::uint64_t seed = 1;
  std::int64_t warmup_count = kDefaultWarmupRequests;
  ComputeProfile profile;
  ClusterConfig cluster;  // also carries slo_seconds and sample_interval
  std::vector<ScaleEvent> scale_script;
  GoodputOptions goodput;
};

// Strict parse: unknown keys and wrong types are ConfigErrors naming the
// field path ("cluster.n_instances", "scale_script[1].action"). Relative trace
// files resolve against base_dir.
ExperimentConfig ParseExperimentConfig(const nlohmann::json& doc,
                                       const std::filesystem::path& base_dir = {});
ExperimentConfig LoadExperimentConfig(const std::filesystem::path& path);

// Fully resolved form, every default spelled out. Parsing it yields the
// same config.
nlohmann::ordered_json ExperimentConfigToJson(const ExperimentConfig& config);

// 16 hex digits identifying the resolved config (seed, policy and qps
// included), written into every artifact row.
std::string ConfigFingerprint(const ExperimentConfig& config);

Trace BuildTrace(const ExperimentConfig& config);

// 16 hex digits identifying a trace's content and timing.
std::string TraceFingerprint(const Trace& trace);

struct RunOutput {
  ExperimentConfig config;
  std::string fingerprint;
  RunResult run;
  MetricsReport report;

  bool clean() const { return run.audit_violations.empty(); }
};

RunOutput RunExperiment(const ExperimentConfig& config, const Trace& trace);
RunOutput RunExperiment(const ExperimentConfig& config);

// Artifact bodies. Every CSV starts with a header row and carries a
// config_fingerprint column.
std::string RequestsCsv(const RunOutput& out);
std::string TimelineCsv(const RunOutput& out);
std::string KeyLengthsCsv(const RunOutput& out);
std::string EventsLog(const RunOutput& out);
std::string ReportJson(const RunOutput& out);

// requests.csv, timeline.csv, events.log, report.json, key_lengths.csv.
void WriteRunArtifacts(const std::filesystem::path& dir, const RunOutput& out);

void WriteTextFile(const std::filesystem::path& path, const std::string& body);

// --- Sweeps ---------------------------------------------------------------

struct SweepRow {
  PolicyKind policy = PolicyKind::kDualMap;
  std::optional<double> qps;
  std::uint64_t seed = 0;
  std::string fingerprint;
  std::optional<MetricsReport> report;
  std::string error;  // set when the run failed or its audits were not clean
};

// Cross product in (policy, qps, seed) order, run on up to `parallel`
// threads. Row order never depends on completion order.
std::vector<SweepRow> RunSweep(const ExperimentConfig& base,
                               const std::vector<PolicyKind>& policies,
                               const std::vector<double>& qps_list,
                               const std::vector<std::uint64_t>& seeds,
                               int parallel);
std::string SweepCsv(const std::vector<SweepRow>& rows);

// --- Goodput ----------------------------------------------------------------

struct GoodputRow {
  PolicyKind policy = PolicyKind::kDualMap;
  std::uint64_t seed = 0;
  std::string fingerprint;
  GoodputResult result;
};

std::vector<GoodputRow> RunGoodput(const ExperimentConfig& base,
                                   const std::vector<PolicyKind>& policies,
                                   const std::vector<std::uint64_t>& seeds,
                                   int parallel);
std::string GoodputCsv(const std::vector<GoodputRow>& rows);
std::string GoodputProbesCsv(const std::vector<GoodputRow>& rows);

// --- Bounds ---------------------------------------------------------------

struct BoundsRow {
  std::int64_t n = 0;
  std::int64_t m = 0;
  std::int64_t d = 0;
  PotcBound bound;
};

// m_per_instance > 0 sets m = m_per_instance * n, otherwise m is used as is.
std::vector<BoundsRow> BoundsTable(const std::vector<std::int64_t>& n_list,
                                   std::int64_t m, std::int64_t m_per_instance,
                                   const std::vector<std::int64_t>& d_list);
std::string BoundsCsv(const std::vector<BoundsRow>& rows);

// --- Trace analysis --------------------------------------------------------

struct PrefixGroupStats {
  BlockFingerprint first_block;
  std::int64_t requests = 0;
  double mean_input_tokens = 0.0;
  double mean_shared_rate = 0.0;
};

struct TraceAnalysis {
  SharedPrefixStats shared;
  double share_at_least_half = 0.0;  // fraction of requests with rate >= 0.5
  std::vector<PrefixGroupStats> groups;  // by request count, descending
};

TraceAnalysis AnalyzeTrace(const Trace& trace);
std::string AnalysisCsv(const TraceAnalysis& a, const std::string& fingerprint);
std::string GroupsCsv(const TraceAnalysis& a, const std::string& fingerprint);

// --- Scaling demo ----------------------------------------------------------

struct ScaleDemoOptions {
  double high_qps = 10.0;
  double low_qps = 2.0;
  double high_duration = 240.0;  // seconds at high_qps, then low_qps
  std::int64_t num_requests = 3200;
  int base_instances = 4;
  int added_instances = 4;
  double scale_up_at = 60.0;
  double scale_down_at = 330.0;
  double window = 30.0;
};

// Arrival times of `trace` re-timed to a two-phase Poisson process: gaps are
// divided by high_qps until high_duration, by low_qps afterwards. The input
// is expected to be a unit-rate trace.
Trace TwoPhaseTrace(const Trace& unit_rate, double high_qps, double low_qps,
                    double high_duration);

struct SloWindow {
  double start = 0.0;
  double end = 0.0;
  std::int64_t requests = 0;
  double slo_attainment = 0.0;  // 1 for a window without arrivals
  int online_instances = 0;
  std::vector<std::int64_t> per_instance;  // dispatches by executing instance
};

struct ScaleDemoOutput {
  RunOutput run;
  std::vector<SloWindow> windows;
};

// Runs the config with its scale_script, or with the default 4 -> 8 -> 4
// script on a two-phase trace when the config has none and uses a synthetic
// trace.
ScaleDemoOutput RunScaleDemo(const ExperimentConfig& config,
                             const ScaleDemoOptions& options);
std::vector<SloWindow> SloWindows(const RunOutput& out, int initial_instances,
                                  double window);
std::string SloWindowsCsv(const ScaleDemoOutput& demo);
std::string InstanceCountsCsv(const ScaleDemoOutput& demo);

// Parses "1,2,3" and "1..6" style lists (ranges for integers only).
std::vector<std::int64_t> ParseIntList(const std::string& text, const std::string& field);
std::vector<double> ParseDoubleList(const std::string& text, const std::string& field);

}  // namespace pairsim
