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
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pairsim/fingerprint.h"

namespace pairsim {

inline constexpr std::int64_t kDefaultCacheBlockTokens = 128;

struct Request {
  std::int64_t id = 0;
  double arrival_time = 0.0;  // seconds
  std::vector<BlockFingerprint> prompt_blocks;
  std::int64_t input_tokens = 1;
  std::int64_t output_tokens = 1;
  std::optional<std::int64_t> session_id;
};

struct Trace {
  std::vector<Request> requests;
  std::int64_t cache_block_tokens = kDefaultCacheBlockTokens;
  std::string name;
  std::string description;

  bool empty() const { return requests.empty(); }
  std::size_t size() const { return requests.size(); }
  // Arrival span of the trace divided into its request count; 0 for traces
  // with fewer than two distinct arrival times.
  double MeanQps() const;
};

enum class TraceFormat {
  kBlockIds,      // "block_ids": content ids, fingerprints chained at load
  kFingerprints,  // "fingerprints": precomputed 64-bit hex fingerprints
};

TraceFormat ParseTraceFormat(const std::string& tag);
std::string TraceFormatName(TraceFormat format);

constexpr std::int64_t BlocksForTokens(std::int64_t tokens,
                                       std::int64_t block_tokens) {
  return (tokens + block_tokens - 1) / block_tokens;
}

// Chains content ids into prefix-closed fingerprints.
std::vector<BlockFingerprint> ChainBlocks(std::span<const std::uint64_t> ids);

// Checks the Trace invariants; throws ParseError naming the offending request.
void ValidateTrace(const Trace& trace);

Trace LoadTrace(const std::filesystem::path& path, TraceFormat format,
                std::int64_t cache_block_tokens = kDefaultCacheBlockTokens);
Trace ReadTrace(std::istream& in, TraceFormat format,
                std::int64_t cache_block_tokens = kDefaultCacheBlockTokens);

// Always writes the fingerprints format (block content ids are not retained
// after loading). Output is byte-stable for equal traces.
void WriteTrace(const Trace& trace, std::ostream& out);
std::string SerializeTrace(const Trace& trace);

// Divides every arrival time by factor.
Trace ScaleQps(const Trace& trace, double factor);

struct SynthSpec {
  std::int64_t num_requests = 1000;
  double rate_qps = 1.0;  // Poisson arrival rate
  std::int64_t mean_input_tokens = 8596;
  std::int64_t mean_output_tokens = 182;
  std::int64_t max_input_tokens = 20480;
  std::int64_t num_groups = 20;
  double zipf_s = 1.2;
  // Shared prefix length of each group, as a fraction of mean_input_tokens,
  // drawn uniformly per group. A value of 1 for both bounds makes every
  // request of a group identical ("all blocks shared").
  double shared_fraction_min = 0.4;
  double shared_fraction_max = 0.8;
  // Probability that a request belongs to no group and shares nothing.
  double unique_fraction = 0.0;
  // Probability that a grouped request continues one of its group's recent
  // sessions (its prompt extends that session's previous prompt).
  double session_continue_prob = 0.0;
  std::int64_t sessions_per_group = 8;
  std::int64_t mean_turn_tokens = 512;
  // When positive, a turn's mean length is this fraction of the session's
  // current prompt instead of mean_turn_tokens (agent loops grow quickly).
  double turn_fraction = 0.0;
  std::int64_t cache_block_tokens = kDefaultCacheBlockTokens;
  std::uint64_t seed = 1;
  std::string name = "synthetic";
};

void ValidateSynthSpec(const SynthSpec& spec);
Trace SynthTrace(const SynthSpec& spec);

// Preset resembling a tool/agent workload: Zipf(1.2) over 20 tool prompts,
// multi-turn agent sessions extending their previous prompt. About 76% of
// requests share at least half their prompt with an earlier one.
SynthSpec ToolAgentSpec(std::int64_t num_requests, double rate_qps,
                        std::uint64_t seed);

struct SharedPrefixStats {
  std::vector<double> rates;  // per request, trace order
  std::vector<std::pair<double, double>> cdf;  // (rate, cumulative fraction)
};

// Fraction of each request's prompt covered by its longest common block
// prefix with any earlier request.
SharedPrefixStats SharedPrefixRate(const Trace& trace);

}  // namespace pairsim
