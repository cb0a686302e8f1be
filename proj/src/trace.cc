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

#include "pairsim/trace.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>

#include "json.hpp"
#include "pairsim/errors.h"

namespace pairsim {

namespace {

using ordered_json = nlohmann::ordered_json;

// Distribution helpers built directly on the engine output so a seed yields
// the same trace regardless of the standard library's distribution code.
class SynthRng {
 public:
  explicit SynthRng(std::uint64_t seed) : engine_(seed) {}

  double Uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  double Exponential(double mean) { return -mean * std::log1p(-Uniform()); }
  bool Bernoulli(double p) { return p > 0.0 && Uniform() < p; }
  std::size_t Index(std::size_t n) {
    return std::min(n - 1, static_cast<std::size_t>(Uniform() * n));
  }

 private:
  std::mt19937_64 engine_;
};

class ZipfSampler {
 public:
  ZipfSampler(std::int64_t n, double s) : cdf_(n) {
    double total = 0.0;
    for (std::int64_t k = 0; k < n; ++k) {
      total += std::pow(static_cast<double>(k + 1), -s);
      cdf_[k] = total;
    }
    for (double& c : cdf_) c /= total;
  }

  std::size_t Sample(SynthRng& rng) const {
    const double u = rng.Uniform();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min(static_cast<std::size_t>(it - cdf_.begin()),
                    cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

std::uint64_t ParseHex64(const std::string& text, int line) {
  std::string_view digits = text;
  if (digits.starts_with("0x") || digits.starts_with("0X")) digits.remove_prefix(2);
  std::uint64_t value = 0;
  const char* end = digits.data() + digits.size();
  const auto [ptr, ec] = std::from_chars(digits.data(), end, value, 16);
  if (digits.empty() || ec != std::errc() || ptr != end) {
    throw ParseError("bad fingerprint '" + text + "'", line);
  }
  return value;
}

template <typename T>
T RequireField(const nlohmann::json& record, const char* key, int line) {
  auto it = record.find(key);
  if (it == record.end()) {
    throw ParseError(fmt::format("missing field '{}'", key), line);
  }
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(fmt::format("field '{}' has the wrong type", key), line);
  }
}

void CheckRequest(const Request& r, std::int64_t block_tokens, int line) {
  if (!std::isfinite(r.arrival_time)) {
    throw ParseError("non-finite arrival", line);
  }
  if (r.arrival_time < 0.0) throw ParseError("negative arrival", line);
  if (r.input_tokens < 1) throw ParseError("input_tokens must be >= 1", line);
  if (r.output_tokens < 1) {
    throw ParseError("output_tokens must be >= 1", line);
  }
  const auto expected = BlocksForTokens(r.input_tokens, block_tokens);
  if (static_cast<std::int64_t>(r.prompt_blocks.size()) != expected) {
    throw ParseError(
        fmt::format("request {} has {} blocks, expected ceil({}/{}) = {}",
                    r.id, r.prompt_blocks.size(), r.input_tokens,
                    block_tokens, expected),
        line);
  }
}

}  // namespace

double Trace::MeanQps() const {
  if (requests.size() < 2) return 0.0;
  const double span = requests.back().arrival_time - requests.front().arrival_time;
  return span > 0.0 ? static_cast<double>(requests.size()) / span : 0.0;
}

TraceFormat ParseTraceFormat(const std::string& tag) {
  if (tag == "block_ids") return TraceFormat::kBlockIds;
  if (tag == "fingerprints") return TraceFormat::kFingerprints;
  throw ConfigError("format", "unknown trace format '" + tag +
                                  "' (expected block_ids or fingerprints)");
}

std::string TraceFormatName(TraceFormat format) {
  return format == TraceFormat::kBlockIds ? "block_ids" : "fingerprints";
}

std::vector<BlockFingerprint> ChainBlocks(std::span<const std::uint64_t> ids) {
  std::vector<BlockFingerprint> out;
  out.reserve(ids.size());
  for (std::uint64_t id : ids) {
    out.push_back(ChainFingerprint(out.empty() ? nullptr : &out.back(), id));
  }
  return out;
}

void ValidateTrace(const Trace& trace) {
  if (trace.cache_block_tokens < 1) {
    throw ParseError("cache_block_tokens must be >= 1");
  }
  for (std::size_t i = 0; i < trace.requests.size(); ++i) {
    const Request& r = trace.requests[i];
    CheckRequest(r, trace.cache_block_tokens, static_cast<int>(i + 1));
    if (i > 0 && r.arrival_time < trace.requests[i - 1].arrival_time) {
      throw ParseError(fmt::format("request {} arrives before its predecessor",
                                   r.id),
                       static_cast<int>(i + 1));
    }
  }
}

Trace ReadTrace(std::istream& in, TraceFormat format,
                std::int64_t cache_block_tokens) {
  Trace trace;
  trace.cache_block_tokens = cache_block_tokens;
  std::unordered_set<std::int64_t> seen_ids;
  std::string text;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    const auto first = text.find_first_not_of(" \t\r");
    if (first == std::string::npos || text[first] == '#') continue;

    nlohmann::json record;
    try {
      record = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), line);
    }
    if (!record.is_object()) throw ParseError("record is not an object", line);

    if (!record.contains("id")) {
      // Header record.
      if (!trace.requests.empty()) {
        throw ParseError("header must precede all requests", line);
      }
      if (record.contains("cache_block_tokens")) {
        trace.cache_block_tokens =
            RequireField<std::int64_t>(record, "cache_block_tokens", line);
        if (trace.cache_block_tokens < 1) {
          throw ParseError("cache_block_tokens must be >= 1", line);
        }
      }
      trace.name = record.value("name", trace.name);
      trace.description = record.value("description", trace.description);
      continue;
    }

    Request r;
    r.id = RequireField<std::int64_t>(record, "id", line);
    r.arrival_time = RequireField<double>(record, "arrival_time_s", line);
    r.input_tokens = RequireField<std::int64_t>(record, "input_tokens", line);
    r.output_tokens = RequireField<std::int64_t>(record, "output_tokens", line);
    if (auto it = record.find("session_id");
        it != record.end() && !it->is_null()) {
      r.session_id = it->get<std::int64_t>();
    }
    if (format == TraceFormat::kBlockIds) {
      const auto ids =
          RequireField<std::vector<std::uint64_t>>(record, "block_ids", line);
      r.prompt_blocks = ChainBlocks(ids);
    } else {
      const auto hex =
          RequireField<std::vector<std::string>>(record, "fingerprints", line);
      r.prompt_blocks.reserve(hex.size());
      for (const auto& h : hex) {
        r.prompt_blocks.push_back(BlockFingerprint{ParseHex64(h, line)});
      }
    }
    CheckRequest(r, trace.cache_block_tokens, line);
    if (!trace.requests.empty() &&
        r.arrival_time < trace.requests.back().arrival_time) {
      throw ParseError("arrivals are not sorted", line);
    }
    if (!seen_ids.insert(r.id).second) {
      throw ParseError(fmt::format("duplicate request id {}", r.id), line);
    }
    trace.requests.push_back(std::move(r));
  }
  return trace;
}

Trace LoadTrace(const std::filesystem::path& path, TraceFormat format,
                std::int64_t cache_block_tokens) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open trace file " + path.string());
  Trace trace = ReadTrace(in, format, cache_block_tokens);
  if (trace.name.empty()) trace.name = path.stem().string();
  return trace;
}

void WriteTrace(const Trace& trace, std::ostream& out) {
  ordered_json header;
  header["format"] = "fingerprints";
  header["cache_block_tokens"] = trace.cache_block_tokens;
  header["name"] = trace.name;
  header["description"] = trace.description;
  out << header.dump() << '\n';
  for (const Request& r : trace.requests) {
    ordered_json rec;
    rec["id"] = r.id;
    rec["arrival_time_s"] = r.arrival_time;
    rec["input_tokens"] = r.input_tokens;
    rec["output_tokens"] = r.output_tokens;
    if (r.session_id) rec["session_id"] = *r.session_id;
    auto fps = ordered_json::array();
    for (const auto& fp : r.prompt_blocks) {
      fps.push_back(fmt::format("{:016x}", fp.value));
    }
    rec["fingerprints"] = std::move(fps);
    out << rec.dump() << '\n';
  }
}

std::string SerializeTrace(const Trace& trace) {
  std::ostringstream out;
  WriteTrace(trace, out);
  return out.str();
}

Trace ScaleQps(const Trace& trace, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw ConfigError("factor", "QPS scale factor must be positive");
  }
  Trace scaled = trace;
  for (Request& r : scaled.requests) r.arrival_time /= factor;
  return scaled;
}

void ValidateSynthSpec(const SynthSpec& spec) {
  if (spec.num_requests < 1) {
    throw ConfigError("synth.num_requests", "must be >= 1");
  }
  if (!(spec.rate_qps > 0.0)) {
    throw ConfigError("synth.rate_qps", "must be positive");
  }
  if (spec.num_groups < 1) throw ConfigError("synth.num_groups", "must be >= 1");
  if (spec.zipf_s < 0.0) throw ConfigError("synth.zipf_s", "must be >= 0");
  if (spec.cache_block_tokens < 1) {
    throw ConfigError("synth.cache_block_tokens", "must be >= 1");
  }
  if (spec.mean_input_tokens < 1 || spec.max_input_tokens < spec.mean_input_tokens) {
    throw ConfigError("synth.mean_input_tokens",
                      "must be in [1, max_input_tokens]");
  }
  if (spec.mean_output_tokens < 1) {
    throw ConfigError("synth.mean_output_tokens", "must be >= 1");
  }
  if (!(spec.shared_fraction_min > 0.0) ||
      spec.shared_fraction_max < spec.shared_fraction_min ||
      spec.shared_fraction_max > 1.0) {
    throw ConfigError("synth.shared_fraction_min",
                      "need 0 < shared_fraction_min <= shared_fraction_max <= 1");
  }
  if (spec.unique_fraction < 0.0 || spec.unique_fraction > 1.0) {
    throw ConfigError("synth.unique_fraction", "must be in [0, 1]");
  }
  if (spec.session_continue_prob < 0.0 || spec.session_continue_prob > 1.0) {
    throw ConfigError("synth.session_continue_prob", "must be in [0, 1]");
  }
  if (spec.sessions_per_group < 1) {
    throw ConfigError("synth.sessions_per_group", "must be >= 1");
  }
  if (spec.mean_turn_tokens < 1) {
    throw ConfigError("synth.mean_turn_tokens", "must be >= 1");
  }
  if (spec.turn_fraction < 0.0 || !std::isfinite(spec.turn_fraction)) {
    throw ConfigError("synth.turn_fraction", "must be >= 0");
  }
}

Trace SynthTrace(const SynthSpec& spec) {
  ValidateSynthSpec(spec);
  const std::int64_t bt = spec.cache_block_tokens;
  SynthRng rng(spec.seed);
  ZipfSampler zipf(spec.num_groups, spec.zipf_s);
  std::uint64_t next_content_id = 1;
  auto fresh_blocks = [&](std::vector<std::uint64_t>& ids, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) ids.push_back(next_content_id++);
  };
  auto clamp_input = [&](double tokens) {
    return std::clamp<std::int64_t>(std::llround(tokens), 1,
                                    spec.max_input_tokens);
  };

  struct Session {
    std::int64_t id;
    std::vector<std::uint64_t> block_ids;
    std::int64_t input_tokens;
  };
  struct Group {
    std::vector<std::uint64_t> shared_ids;
    std::int64_t shared_tokens = 0;  // == shared_ids.size() * bt unless full
    bool full_share = false;
    std::vector<Session> sessions;  // most recent last
  };

  const bool full_share = spec.shared_fraction_min >= 1.0;
  std::vector<Group> groups(spec.num_groups);
  for (Group& g : groups) {
    const double frac =
        rng.Uniform(spec.shared_fraction_min, spec.shared_fraction_max);
    g.full_share = full_share;
    if (full_share) {
      g.shared_tokens = clamp_input(spec.mean_input_tokens);
      fresh_blocks(g.shared_ids, BlocksForTokens(g.shared_tokens, bt));
    } else {
      const std::int64_t blocks = std::max<std::int64_t>(
          1, static_cast<std::int64_t>(frac * spec.mean_input_tokens) / bt);
      const std::int64_t capped =
          std::min<std::int64_t>(blocks, (spec.max_input_tokens - 1) / bt);
      fresh_blocks(g.shared_ids, std::max<std::int64_t>(capped, 1));
      g.shared_tokens = static_cast<std::int64_t>(g.shared_ids.size()) * bt;
    }
  }

  Trace trace;
  trace.cache_block_tokens = bt;
  trace.name = spec.name;
  trace.description = fmt::format(
      "synthetic n={} qps={} groups={} zipf_s={} seed={}", spec.num_requests,
      spec.rate_qps, spec.num_groups, spec.zipf_s, spec.seed);
  trace.requests.reserve(spec.num_requests);

  std::int64_t next_session = 0;
  double now = 0.0;
  for (std::int64_t i = 0; i < spec.num_requests; ++i) {
    if (i > 0) now += rng.Exponential(1.0 / spec.rate_qps);
    Request r;
    r.id = i;
    r.arrival_time = now;
    r.output_tokens = std::max<std::int64_t>(
        1, std::llround(1.0 + rng.Exponential(static_cast<double>(
                                   spec.mean_output_tokens - 1))));

    std::vector<std::uint64_t> ids;
    if (rng.Bernoulli(spec.unique_fraction)) {
      r.input_tokens = clamp_input(
          1.0 + rng.Exponential(static_cast<double>(spec.mean_input_tokens - 1)));
      fresh_blocks(ids, BlocksForTokens(r.input_tokens, bt));
    } else {
      Group& g = groups[zipf.Sample(rng)];
      if (g.full_share) {
        r.input_tokens = g.shared_tokens;
        ids = g.shared_ids;
      } else {
        bool continued = false;
        if (!g.sessions.empty() && rng.Bernoulli(spec.session_continue_prob)) {
          const std::size_t pick = rng.Index(g.sessions.size());
          Session s = std::move(g.sessions[pick]);
          g.sessions.erase(g.sessions.begin() + static_cast<long>(pick));
          const std::int64_t whole = s.input_tokens / bt;
          const std::int64_t tail = s.input_tokens % bt;
          const double turn_mean =
              spec.turn_fraction > 0.0
                  ? std::max(1.0, spec.turn_fraction *
                                      static_cast<double>(s.input_tokens))
                  : static_cast<double>(spec.mean_turn_tokens);
          const std::int64_t turn =
              std::llround(1.0 + rng.Exponential(turn_mean - 1.0));
          const std::int64_t total = whole * bt + tail + turn;
          if (total <= spec.max_input_tokens) {
            ids.assign(s.block_ids.begin(), s.block_ids.begin() + whole);
            fresh_blocks(ids, BlocksForTokens(tail + turn, bt));
            r.input_tokens = total;
            r.session_id = s.id;
            s.block_ids = ids;
            s.input_tokens = total;
            g.sessions.push_back(std::move(s));
            continued = true;
          }
        }
        if (!continued) {
          const double suffix_mean = std::max<double>(
              1.0, static_cast<double>(spec.mean_input_tokens - g.shared_tokens));
          const std::int64_t suffix = std::llround(1.0 + rng.Exponential(suffix_mean - 1.0));
          r.input_tokens =
              std::min(g.shared_tokens + suffix, spec.max_input_tokens);
          ids = g.shared_ids;
          fresh_blocks(ids, BlocksForTokens(r.input_tokens - g.shared_tokens, bt));
          r.session_id = next_session++;
          g.sessions.push_back(Session{*r.session_id, ids, r.input_tokens});
          if (static_cast<std::int64_t>(g.sessions.size()) >
              spec.sessions_per_group) {
            g.sessions.erase(g.sessions.begin());
          }
        }
      }
    }
    r.prompt_blocks = ChainBlocks(ids);
    trace.requests.push_back(std::move(r));
  }
  return trace;
}

SynthSpec ToolAgentSpec(std::int64_t num_requests, double rate_qps,
                        std::uint64_t seed) {
  SynthSpec spec;
  spec.name = "tool_agent";
  spec.num_requests = num_requests;
  spec.rate_qps = rate_qps;
  // New sessions start shorter than the target mean; agent turns grow them.
  spec.mean_input_tokens = 7600;
  spec.mean_output_tokens = 182;
  spec.max_input_tokens = 20480;
  spec.num_groups = 20;
  spec.zipf_s = 1.2;
  spec.shared_fraction_min = 0.1;
  spec.shared_fraction_max = 0.3;
  spec.unique_fraction = 0.04;
  spec.session_continue_prob = 0.9;
  spec.sessions_per_group = 16;
  spec.turn_fraction = 0.3;
  spec.seed = seed;
  return spec;
}

SharedPrefixStats SharedPrefixRate(const Trace& trace) {
  if (trace.empty()) {
    throw ConfigError("trace", "shared prefix rate needs a non-empty trace");
  }
  SharedPrefixStats stats;
  stats.rates.reserve(trace.size());
  std::unordered_set<BlockFingerprint> seen;
  for (const Request& r : trace.requests) {
    // Chained fingerprints: a seen block implies its whole prefix was seen.
    std::size_t common = 0;
    while (common < r.prompt_blocks.size() &&
           seen.contains(r.prompt_blocks[common])) {
      ++common;
    }
    const std::int64_t tokens = std::min<std::int64_t>(
        static_cast<std::int64_t>(common) * trace.cache_block_tokens,
        r.input_tokens);
    stats.rates.push_back(static_cast<double>(tokens) /
                          static_cast<double>(r.input_tokens));
    seen.insert(r.prompt_blocks.begin(), r.prompt_blocks.end());
  }

  std::vector<double> sorted = stats.rates;
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
    stats.cdf.emplace_back(sorted[i], static_cast<double>(i + 1) / n);
  }
  return stats;
}

}  // namespace pairsim
