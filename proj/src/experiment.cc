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

#include "pairsim/experiment.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "pairsim/errors.h"

namespace pairsim {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Strict object reader: remembers which keys were consumed so leftovers can
// be reported as unknown fields.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw ConfigError(path_.empty() ? "config" : path_, "must be an object");
    }
  }

  std::string Path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json* Find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  bool Has(const std::string& key) const { return j_.contains(key); }

  void Read(const std::string& key, double& out) {
    if (const json* v = Find(key)) {
      if (!v->is_number() || !std::isfinite(v->get<double>())) {
        throw ConfigError(Path(key), "must be a finite number");
      }
      out = v->get<double>();
    }
  }
  void Read(const std::string& key, std::int64_t& out) {
    if (const json* v = Find(key)) {
      if (!v->is_number_integer()) throw ConfigError(Path(key), "must be an integer");
      out = v->get<std::int64_t>();
    }
  }
  void Read(const std::string& key, int& out) {
    std::int64_t wide = out;
    Read(key, wide);
    if (wide < INT32_MIN || wide > INT32_MAX) throw ConfigError(Path(key), "out of range");
    out = static_cast<int>(wide);
  }
  void ReadCount(const std::string& key, std::size_t& out) {
    std::int64_t wide = static_cast<std::int64_t>(out);
    Read(key, wide);
    if (wide < 0) throw ConfigError(Path(key), "must be >= 0");
    out = static_cast<std::size_t>(wide);
  }
  // Seeds: non-negative integer or a "0x..." string.
  void ReadSeed(const std::string& key, std::uint64_t& out) {
    const json* v = Find(key);
    if (!v) return;
    if (v->is_number_unsigned()) {
      out = v->get<std::uint64_t>();
    } else if (v->is_string()) {
      const std::string s = v->get<std::string>();
      std::size_t used = 0;
      try {
        out = std::stoull(s, &used, 0);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != s.size()) {
        throw ConfigError(Path(key), "must be an unsigned integer");
      }
    } else {
      throw ConfigError(Path(key), "must be an unsigned integer");
    }
  }
  void Read(const std::string& key, bool& out) {
    if (const json* v = Find(key)) {
      if (!v->is_boolean()) throw ConfigError(Path(key), "must be true or false");
      out = v->get<bool>();
    }
  }
  void Read(const std::string& key, std::string& out) {
    if (const json* v = Find(key)) {
      if (!v->is_string()) throw ConfigError(Path(key), "must be a string");
      out = v->get<std::string>();
    }
  }

  void Finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(Path(item.key()), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void ParseSynth(const json& j, const std::string& path, SynthSpec& spec) {
  Fields f(j, path);
  std::string preset = "tool_agent";
  f.Read("preset", preset);
  std::int64_t n = 8000;
  double rate = 1.0;
  f.Read("num_requests", n);
  f.Read("rate_qps", rate);
  if (preset == "tool_agent") {
    spec = ToolAgentSpec(n, rate, spec.seed);
  } else if (preset == "plain") {
    spec.num_requests = n;
    spec.rate_qps = rate;
  } else {
    throw ConfigError(f.Path("preset"), "unknown preset '" + preset + "' (tool_agent or plain)");
  }
  f.Read("mean_input_tokens", spec.mean_input_tokens);
  f.Read("mean_output_tokens", spec.mean_output_tokens);
  f.Read("max_input_tokens", spec.max_input_tokens);
  f.Read("num_groups", spec.num_groups);
  f.Read("zipf_s", spec.zipf_s);
  f.Read("shared_fraction_min", spec.shared_fraction_min);
  f.Read("shared_fraction_max", spec.shared_fraction_max);
  f.Read("unique_fraction", spec.unique_fraction);
  f.Read("session_continue_prob", spec.session_continue_prob);
  f.Read("sessions_per_group", spec.sessions_per_group);
  f.Read("mean_turn_tokens", spec.mean_turn_tokens);
  f.Read("turn_fraction", spec.turn_fraction);
  f.Read("cache_block_tokens", spec.cache_block_tokens);
  f.Read("name", spec.name);
  f.Finish();
  try {
    ValidateSynthSpec(spec);
  } catch (const ConfigError& e) {
    // Re-anchor "synth.x" style paths under the config path.
    const std::string& p = e.path();
    const std::string field = p.rfind("synth.", 0) == 0 ? p.substr(6) : p;
    throw ConfigError(path + "." + field, std::string(e.what()).substr(p.size() + 2));
  }
}

void ParseTraceSource(const json& j, const std::filesystem::path& base_dir,
                      std::uint64_t seed, TraceSource& src) {
  Fields f(j, "trace");
  const bool has_file = f.Has("file");
  const bool has_synth = f.Has("synth");
  if (has_file == has_synth) {
    throw ConfigError("trace", "needs exactly one of 'file' or 'synth'");
  }
  if (has_file) {
    std::string file;
    f.Read("file", file);
    if (file.empty()) throw ConfigError("trace.file", "must not be empty");
    std::filesystem::path p(file);
    src.file = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    std::string format = TraceFormatName(src.format);
    f.Read("format", format);
    try {
      src.format = ParseTraceFormat(format);
    } catch (const std::exception& e) {
      throw ConfigError("trace.format", e.what());
    }
    f.Read("cache_block_tokens", src.cache_block_tokens);
    if (src.cache_block_tokens < 1) throw ConfigError("trace.cache_block_tokens", "must be >= 1");
  } else {
    SynthSpec spec;
    spec.seed = seed;
    ParseSynth(*f.Find("synth"), "trace.synth", spec);
    src.synth = spec;
  }
  f.Finish();
}

void ParseProfile(const json& j, ComputeProfile& p) {
  Fields f(j, "profile");
  f.Read("prefill_rate", p.prefill_rate);
  f.Read("decode_rate", p.decode_rate);
  f.Read("memory_capacity_tokens", p.memory_capacity_tokens);
  f.Read("prefill_quadratic_coeff", p.prefill_quadratic_coeff);
  f.Finish();
  ValidateProfile(p);
}

void ParseCluster(const json& j, ClusterConfig& c) {
  Fields f(j, "cluster");
  f.Read("n_instances", c.n_instances);
  f.Read("cache_capacity_tokens", c.cache_capacity_tokens);
  f.Read("unbounded_cache", c.unbounded_cache);
  f.Read("bottleneck_threshold", c.bottleneck_threshold);
  f.Read("bottleneck_detection", c.bottleneck_detection);
  f.Read("bottleneck_recheck", c.bottleneck_recheck);
  f.Read("audit_every", c.audit_every);
  f.Read("record_event_log", c.record_event_log);
  if (const json* ring = f.Find("ring")) {
    Fields r(*ring, "cluster.ring");
    r.Read("virtual_nodes", c.ring.virtual_nodes);
    r.ReadSeed("seed_primary", c.ring.seed_primary);
    r.ReadSeed("seed_secondary", c.ring.seed_secondary);
    r.ReadSeed("anchor_seed", c.ring.anchor_seed);
    r.Finish();
    if (c.ring.virtual_nodes < 1) throw ConfigError("cluster.ring.virtual_nodes", "must be >= 1");
    if (c.ring.seed_primary == c.ring.seed_secondary) {
      throw ConfigError("cluster.ring.seed_secondary", "must differ from seed_primary");
    }
  }
  if (const json* hot = f.Find("hotness")) {
    Fields h(*hot, "cluster.hotness");
    h.Read("hash_block_tokens", c.hotness.hash_block_tokens);
    h.ReadCount("min_depth", c.hotness.min_depth);
    h.ReadCount("window", c.hotness.window);
    h.ReadCount("eval_every", c.hotness.eval_every);
    h.Finish();
    if (c.hotness.hash_block_tokens < 1) {
      throw ConfigError("cluster.hotness.hash_block_tokens", "must be >= 1");
    }
    if (c.hotness.min_depth < 1) throw ConfigError("cluster.hotness.min_depth", "must be >= 1");
    if (c.hotness.window < 1) throw ConfigError("cluster.hotness.window", "must be >= 1");
    if (c.hotness.eval_every < 1) throw ConfigError("cluster.hotness.eval_every", "must be >= 1");
  }
  f.Finish();
}

void ParseScaleScript(const json& j, std::vector<ScaleEvent>& script) {
  if (!j.is_array()) throw ConfigError("scale_script", "must be an array");
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string path = fmt::format("scale_script[{}]", i);
    Fields f(j[i], path);
    ScaleEvent ev;
    if (!f.Has("time")) throw ConfigError(path + ".time", "required");
    f.Read("time", ev.time);
    if (ev.time < 0.0) throw ConfigError(path + ".time", "must be >= 0");
    std::string action;
    f.Read("action", action);
    if (action == "add") {
      ev.kind = ScaleEvent::Kind::kAdd;
    } else if (action == "remove") {
      ev.kind = ScaleEvent::Kind::kRemove;
    } else {
      throw ConfigError(path + ".action", "must be 'add' or 'remove'");
    }
    std::int64_t inst = kNoInstance;
    f.Read("instance", inst);
    if (ev.kind == ScaleEvent::Kind::kAdd && f.Has("instance")) {
      throw ConfigError(path + ".instance", "only valid for 'remove'");
    }
    if (inst < kNoInstance) throw ConfigError(path + ".instance", "must be >= 0");
    ev.instance = static_cast<InstanceId>(inst);
    f.Finish();
    script.push_back(ev);
  }
}

void ParseGoodput(const json& j, GoodputOptions& g) {
  Fields f(j, "goodput");
  f.Read("target", g.target);
  f.Read("initial_scale", g.initial_scale);
  f.Read("relative_tolerance", g.relative_tolerance);
  f.Read("max_doublings", g.max_doublings);
  f.Read("max_halvings", g.max_halvings);
  f.Finish();
  if (!(g.target > 0.0) || g.target > 1.0) throw ConfigError("goodput.target", "must be in (0, 1]");
  if (!(g.initial_scale > 0.0)) throw ConfigError("goodput.initial_scale", "must be positive");
  if (!(g.relative_tolerance > 0.0)) {
    throw ConfigError("goodput.relative_tolerance", "must be positive");
  }
}

std::string Hex16(std::uint64_t h) { return fmt::format("{:016x}", h); }

std::uint64_t HashText(const std::string& text) {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  std::uint64_t word = 0;
  std::size_t i = 0;
  for (unsigned char c : text) {
    word = (word << 8) | c;
    if (++i % 8 == 0) {
      h = HashCombine(h, word);
      word = 0;
    }
  }
  return HashCombine(HashCombine(h, word), text.size());
}

std::string Quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

// Runs fn(i) for i in [0, n) on up to `parallel` threads.
template <typename Fn>
void ParallelFor(std::size_t n, int parallel, Fn fn) {
  unsigned threads = parallel > 0 ? static_cast<unsigned>(parallel)
                                  : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (std::thread& th : pool) th.join();
}

}  // namespace

ExperimentConfig ParseExperimentConfig(const json& doc,
                                       const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  Fields f(doc, "");
  f.ReadSeed("seed", c.seed);
  if (const json* t = f.Find("trace")) {
    ParseTraceSource(*t, base_dir, c.seed, c.trace);
  } else {
    throw ConfigError("trace", "required");
  }
  std::string policy(PolicyName(c.policy));
  f.Read("policy", policy);
  c.policy = ParsePolicyKind(policy);  // ConfigError("policy", ...)
  if (f.Has("qps")) {
    double q = 0.0;
    f.Read("qps", q);
    if (!(q > 0.0)) throw ConfigError("qps", "must be positive");
    c.qps = q;
  }
  f.Read("warmup_count", c.warmup_count);
  if (c.warmup_count < 0) throw ConfigError("warmup_count", "must be >= 0");
  f.Read("slo_seconds", c.cluster.slo_seconds);
  f.Read("sample_interval", c.cluster.sample_interval);
  if (const json* p = f.Find("profile")) ParseProfile(*p, c.profile);
  if (const json* cl = f.Find("cluster")) ParseCluster(*cl, c.cluster);
  if (const json* s = f.Find("scale_script")) ParseScaleScript(*s, c.scale_script);
  if (const json* g = f.Find("goodput")) ParseGoodput(*g, c.goodput);
  f.Finish();
  ValidateClusterConfig(c.cluster);
  c.goodput.warmup = c.warmup_count;
  return c;
}

ExperimentConfig LoadExperimentConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return ParseExperimentConfig(doc, path.parent_path());
}

ordered_json ExperimentConfigToJson(const ExperimentConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  ordered_json t;
  if (c.trace.file) {
    t["file"] = c.trace.file->string();
    t["format"] = TraceFormatName(c.trace.format);
    t["cache_block_tokens"] = c.trace.cache_block_tokens;
  } else if (c.trace.synth) {
    const SynthSpec& s = *c.trace.synth;
    ordered_json sj;
    sj["preset"] = "plain";  // every field below is explicit
    sj["num_requests"] = s.num_requests;
    sj["rate_qps"] = s.rate_qps;
    sj["mean_input_tokens"] = s.mean_input_tokens;
    sj["mean_output_tokens"] = s.mean_output_tokens;
    sj["max_input_tokens"] = s.max_input_tokens;
    sj["num_groups"] = s.num_groups;
    sj["zipf_s"] = s.zipf_s;
    sj["shared_fraction_min"] = s.shared_fraction_min;
    sj["shared_fraction_max"] = s.shared_fraction_max;
    sj["unique_fraction"] = s.unique_fraction;
    sj["session_continue_prob"] = s.session_continue_prob;
    sj["sessions_per_group"] = s.sessions_per_group;
    sj["mean_turn_tokens"] = s.mean_turn_tokens;
    sj["turn_fraction"] = s.turn_fraction;
    sj["cache_block_tokens"] = s.cache_block_tokens;
    sj["name"] = s.name;
    t["synth"] = sj;
  }
  j["trace"] = t;
  j["policy"] = PolicyName(c.policy);
  if (c.qps) j["qps"] = *c.qps;
  j["warmup_count"] = c.warmup_count;
  j["slo_seconds"] = c.cluster.slo_seconds;
  j["sample_interval"] = c.cluster.sample_interval;
  j["profile"] = {{"prefill_rate", c.profile.prefill_rate},
                  {"decode_rate", c.profile.decode_rate},
                  {"memory_capacity_tokens", c.profile.memory_capacity_tokens},
                  {"prefill_quadratic_coeff", c.profile.prefill_quadratic_coeff}};
  const ClusterConfig& cl = c.cluster;
  ordered_json cj;
  cj["n_instances"] = cl.n_instances;
  cj["cache_capacity_tokens"] = cl.cache_capacity_tokens;
  cj["unbounded_cache"] = cl.unbounded_cache;
  cj["bottleneck_threshold"] = cl.bottleneck_threshold;
  cj["bottleneck_detection"] = cl.bottleneck_detection;
  cj["bottleneck_recheck"] = cl.bottleneck_recheck;
  cj["audit_every"] = cl.audit_every;
  cj["record_event_log"] = cl.record_event_log;
  cj["ring"] = {{"virtual_nodes", cl.ring.virtual_nodes},
                {"seed_primary", cl.ring.seed_primary},
                {"seed_secondary", cl.ring.seed_secondary},
                {"anchor_seed", cl.ring.anchor_seed}};
  cj["hotness"] = {{"hash_block_tokens", cl.hotness.hash_block_tokens},
                   {"min_depth", cl.hotness.min_depth},
                   {"window", cl.hotness.window},
                   {"eval_every", cl.hotness.eval_every}};
  j["cluster"] = cj;
  ordered_json script = ordered_json::array();
  for (const ScaleEvent& ev : c.scale_script) {
    ordered_json e;
    e["time"] = ev.time;
    e["action"] = ev.kind == ScaleEvent::Kind::kAdd ? "add" : "remove";
    if (ev.instance != kNoInstance) e["instance"] = ev.instance;
    script.push_back(e);
  }
  j["scale_script"] = script;
  j["goodput"] = {{"target", c.goodput.target},
                  {"initial_scale", c.goodput.initial_scale},
                  {"relative_tolerance", c.goodput.relative_tolerance},
                  {"max_doublings", c.goodput.max_doublings},
                  {"max_halvings", c.goodput.max_halvings}};
  return j;
}

std::string ConfigFingerprint(const ExperimentConfig& config) {
  return Hex16(HashText(ExperimentConfigToJson(config).dump()));
}

std::string TraceFingerprint(const Trace& trace) {
  return Hex16(HashText(SerializeTrace(trace)));
}

Trace BuildTrace(const ExperimentConfig& config) {
  Trace trace;
  if (config.trace.file) {
    trace = LoadTrace(*config.trace.file, config.trace.format, config.trace.cache_block_tokens);
  } else if (config.trace.synth) {
    SynthSpec spec = *config.trace.synth;
    spec.seed = config.seed;
    trace = SynthTrace(spec);
  } else {
    throw ConfigError("trace", "no trace source");
  }
  if (trace.empty()) throw ConfigError("trace", "trace is empty");
  if (config.qps) {
    const double mean = trace.MeanQps();
    if (!(mean > 0.0)) throw ConfigError("qps", "trace has no arrival span to rescale");
    trace = ScaleQps(trace, *config.qps / mean);
  }
  return trace;
}

RunOutput RunExperiment(const ExperimentConfig& config, const Trace& trace) {
  RunOutput out;
  out.config = config;
  out.fingerprint = ConfigFingerprint(config);
  out.run = RunSimulation(trace, config.policy, config.profile, config.cluster,
                          config.scale_script);
  out.report = ComputeReport(out.run, config.cluster.slo_seconds, config.warmup_count);
  return out;
}

RunOutput RunExperiment(const ExperimentConfig& config) {
  return RunExperiment(config, BuildTrace(config));
}

std::string RequestsCsv(const RunOutput& out) {
  std::string s =
      "id,arrival,dispatch,prefill_start,first_token,completion,ttft,e2e,"
      "input_tokens,output_tokens,reusable_tokens,instance,targets,pair_primary,"
      "pair_secondary,key_length,migrated,redispatched,config_fingerprint\n";
  for (const RequestRecord& r : out.run.records) {
    std::string targets;
    for (std::size_t i = 0; i < r.targets.size(); ++i) {
      targets += (i ? ";" : "") + std::to_string(r.targets[i]);
    }
    s += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{},{},{},{},{},{},{},{},{},{},{}\n",
                     r.id, r.arrival, r.dispatch, r.prefill_start, r.first_token,
                     r.completion, r.ttft(), r.e2e(), r.input_tokens, r.output_tokens,
                     r.reusable_tokens, r.executed_on(), targets,
                     r.pair ? std::to_string(r.pair->primary) : "",
                     r.pair ? std::to_string(r.pair->secondary) : "", r.key_length,
                     r.migrated ? 1 : 0, r.redispatched ? 1 : 0, out.fingerprint);
  }
  return s;
}

std::string TimelineCsv(const RunOutput& out) {
  std::string s = "time,instance,pending_tokens,config_fingerprint\n";
  for (const TimelineSample& t : out.run.timeline) {
    for (const auto& [id, pending] : t.pending) {
      s += fmt::format("{:.6f},{},{},{}\n", t.time, id, pending, out.fingerprint);
    }
  }
  return s;
}

std::string KeyLengthsCsv(const RunOutput& out) {
  std::string s = "key_length,requests,config_fingerprint\n";
  for (const auto& [len, count] : out.run.key_length_histogram) {
    s += fmt::format("{},{},{}\n", len, count, out.fingerprint);
  }
  return s;
}

std::string EventsLog(const RunOutput& out) {
  std::string s = fmt::format("# events schema={} config_fingerprint={}\n",
                              kArtifactSchemaVersion, out.fingerprint);
  for (const std::string& line : out.run.events) s += line + "\n";
  for (const std::string& v : out.run.audit_violations) s += "# audit " + v + "\n";
  return s;
}

std::string ReportJson(const RunOutput& out) {
  ordered_json j;
  j["schema_version"] = kArtifactSchemaVersion;
  j["config_fingerprint"] = out.fingerprint;
  j["seed"] = out.config.seed;
  j["metrics"] = ReportToJson(out.report);
  j["arrived"] = out.run.arrived;
  j["completed"] = out.run.completed;
  j["events_processed"] = out.run.events_processed;
  j["end_time"] = out.run.end_time;
  ordered_json hist = ordered_json::object();
  for (const auto& [len, count] : out.run.key_length_histogram) {
    hist[std::to_string(len)] = count;
  }
  j["key_length_histogram"] = hist;
  j["audit_violations"] = out.run.audit_violations;
  if (!out.run.ring.is_null()) j["ring"] = out.run.ring;
  j["config"] = ExperimentConfigToJson(out.config);
  return j.dump(2) + "\n";
}

void WriteTextFile(const std::filesystem::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw StateError("cannot write " + path.string());
  f << body;
  if (!f) throw StateError("write failed: " + path.string());
}

void WriteRunArtifacts(const std::filesystem::path& dir, const RunOutput& out) {
  std::filesystem::create_directories(dir);
  WriteTextFile(dir / "requests.csv", RequestsCsv(out));
  WriteTextFile(dir / "timeline.csv", TimelineCsv(out));
  WriteTextFile(dir / "events.log", EventsLog(out));
  WriteTextFile(dir / "report.json", ReportJson(out));
  WriteTextFile(dir / "key_lengths.csv", KeyLengthsCsv(out));
}

// --- Sweeps ---------------------------------------------------------------

std::vector<SweepRow> RunSweep(const ExperimentConfig& base,
                               const std::vector<PolicyKind>& policies,
                               const std::vector<double>& qps_list,
                               const std::vector<std::uint64_t>& seeds,
                               int parallel) {
  if (policies.empty()) throw ConfigError("policy", "sweep needs at least one policy");
  if (seeds.empty()) throw ConfigError("seed", "sweep needs at least one seed");
  std::vector<std::optional<double>> rates;
  for (double q : qps_list) {
    if (!(q > 0.0)) throw ConfigError("qps", "sweep rates must be positive");
    rates.emplace_back(q);
  }
  if (rates.empty()) rates.push_back(base.qps);

  std::vector<SweepRow> rows;
  std::vector<ExperimentConfig> configs;
  for (PolicyKind p : policies) {
    for (const auto& q : rates) {
      for (std::uint64_t seed : seeds) {
        ExperimentConfig c = base;
        c.policy = p;
        c.qps = q;
        c.seed = seed;
        c.cluster.record_event_log = false;
        SweepRow row;
        row.policy = p;
        row.qps = q;
        row.seed = seed;
        row.fingerprint = ConfigFingerprint(c);
        rows.push_back(row);
        configs.push_back(std::move(c));
      }
    }
  }
  ParallelFor(rows.size(), parallel, [&](std::size_t i) {
    try {
      RunOutput out = RunExperiment(configs[i]);
      rows[i].report = out.report;
      if (!out.clean()) {
        rows[i].error = fmt::format("{} audit violations, first: {}",
                                    out.run.audit_violations.size(),
                                    out.run.audit_violations.front());
      }
    } catch (const std::exception& e) {
      rows[i].error = fmt::format("row {}: {}", i, e.what());
    }
  });
  return rows;
}

std::string SweepCsv(const std::vector<SweepRow>& rows) {
  std::string s =
      "policy,qps,seed,requests,cache_hit_rate,cv_mean,p50_ttft,p90_ttft,p50_e2e,"
      "p90_e2e,effective_capacity,migrations,rebalance_plans,bottleneck_flags,"
      "redispatches,audit_violations,status,error,config_fingerprint\n";
  for (const SweepRow& r : rows) {
    const std::string qps = r.qps ? fmt::format("{}", *r.qps) : "";
    if (r.report) {
      const MetricsReport& m = *r.report;
      s += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                       PolicyName(r.policy), qps, r.seed, m.request_count,
                       m.cache_hit_rate, m.cv.mean, m.latency.p50_ttft,
                       m.latency.p90_ttft, m.latency.p50_e2e, m.latency.p90_e2e,
                       m.effective_capacity, m.migrations, m.rebalance_plans,
                       m.bottleneck_flags, m.redispatches, m.audit_violations,
                       r.error.empty() ? "ok" : "error", Quote(r.error), r.fingerprint);
    } else {
      s += fmt::format("{},{},{},,,,,,,,,,,,,,error,{},{}\n", PolicyName(r.policy), qps,
                       r.seed, Quote(r.error), r.fingerprint);
    }
  }
  return s;
}

// --- Goodput ----------------------------------------------------------------

std::vector<GoodputRow> RunGoodput(const ExperimentConfig& base,
                                   const std::vector<PolicyKind>& policies,
                                   const std::vector<std::uint64_t>& seeds,
                                   int parallel) {
  std::vector<GoodputRow> rows;
  std::vector<ExperimentConfig> configs;
  for (PolicyKind p : policies) {
    for (std::uint64_t seed : seeds) {
      ExperimentConfig c = base;
      c.policy = p;
      c.seed = seed;
      GoodputRow row;
      row.policy = p;
      row.seed = seed;
      row.fingerprint = ConfigFingerprint(c);
      rows.push_back(row);
      configs.push_back(std::move(c));
    }
  }
  // Exceptions escape to the caller once every worker has stopped.
  std::vector<std::string> errors(rows.size());
  ParallelFor(rows.size(), parallel, [&](std::size_t i) {
    try {
      const ExperimentConfig& c = configs[i];
      GoodputOptions o = c.goodput;
      o.warmup = c.warmup_count;
      rows[i].result = SearchGoodput(BuildTrace(c), c.policy, c.profile, c.cluster, o);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) {
      throw StateError(fmt::format("goodput {} seed {}: {}", PolicyName(rows[i].policy),
                                   rows[i].seed, errors[i]));
    }
  }
  return rows;
}

std::string GoodputCsv(const std::vector<GoodputRow>& rows) {
  std::string s = "policy,seed,goodput_qps,scale,unsaturated,infeasible,probes,config_fingerprint\n";
  for (const GoodputRow& r : rows) {
    s += fmt::format("{},{},{},{},{},{},{},{}\n", PolicyName(r.policy), r.seed, r.result.qps,
                     r.result.scale, r.result.unsaturated ? 1 : 0,
                     r.result.infeasible ? 1 : 0, r.result.probes.size(), r.fingerprint);
  }
  return s;
}

std::string GoodputProbesCsv(const std::vector<GoodputRow>& rows) {
  std::string s = "policy,seed,probe,qps,effective_capacity,config_fingerprint\n";
  for (const GoodputRow& r : rows) {
    for (std::size_t i = 0; i < r.result.probes.size(); ++i) {
      s += fmt::format("{},{},{},{},{},{}\n", PolicyName(r.policy), r.seed, i,
                       r.result.probes[i].first, r.result.probes[i].second, r.fingerprint);
    }
  }
  return s;
}

// --- Bounds ---------------------------------------------------------------

std::vector<BoundsRow> BoundsTable(const std::vector<std::int64_t>& n_list,
                                   std::int64_t m, std::int64_t m_per_instance,
                                   const std::vector<std::int64_t>& d_list) {
  if (n_list.empty()) throw ConfigError("n", "needs at least one value");
  if (d_list.empty()) throw ConfigError("d", "needs at least one value");
  std::vector<BoundsRow> rows;
  for (std::int64_t n : n_list) {
    for (std::int64_t d : d_list) {
      BoundsRow row;
      row.n = n;
      row.m = m_per_instance > 0 ? m_per_instance * n : m;
      row.d = d;
      row.bound = ComputePotcBound(row.n, row.m, d);
      rows.push_back(row);
    }
  }
  return rows;
}

std::string BoundsCsv(const std::vector<BoundsRow>& rows) {
  std::string grid;
  for (const BoundsRow& r : rows) grid += fmt::format("{}:{}:{};", r.n, r.m, r.d);
  const std::string fp = Hex16(HashText("bounds;" + grid));
  std::string s = "n,m,d,mean_load,deviation,max_load_bound,order_of,config_fingerprint\n";
  for (const BoundsRow& r : rows) {
    s += fmt::format("{},{},{},{},{:.12g},{:.12g},{},{}\n", r.n, r.m, r.d, r.bound.mean_load,
                     r.bound.deviation, r.bound.mean_load + r.bound.deviation,
                     r.bound.order_of ? 1 : 0, fp);
  }
  return s;
}

// --- Trace analysis --------------------------------------------------------

TraceAnalysis AnalyzeTrace(const Trace& trace) {
  TraceAnalysis a;
  a.shared = SharedPrefixRate(trace);
  std::int64_t half = 0;
  for (double r : a.shared.rates) half += r >= 0.5;
  a.share_at_least_half = static_cast<double>(half) / static_cast<double>(trace.size());

  struct Acc {
    std::int64_t n = 0;
    double input = 0.0;
    double shared = 0.0;
  };
  std::map<BlockFingerprint, Acc> groups;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const Request& r = trace.requests[i];
    if (r.prompt_blocks.empty()) continue;
    Acc& g = groups[r.prompt_blocks.front()];
    ++g.n;
    g.input += static_cast<double>(r.input_tokens);
    g.shared += a.shared.rates[i];
  }
  for (const auto& [fp, g] : groups) {
    a.groups.push_back({fp, g.n, g.input / g.n, g.shared / g.n});
  }
  std::stable_sort(a.groups.begin(), a.groups.end(),
                   [](const PrefixGroupStats& x, const PrefixGroupStats& y) {
                     return x.requests > y.requests;
                   });
  return a;
}

std::string AnalysisCsv(const TraceAnalysis& a, const std::string& fingerprint) {
  std::string s = "shared_prefix_rate,cumulative_fraction,config_fingerprint\n";
  for (const auto& [rate, cum] : a.shared.cdf) {
    s += fmt::format("{:.6f},{:.6f},{}\n", rate, cum, fingerprint);
  }
  return s;
}

std::string GroupsCsv(const TraceAnalysis& a, const std::string& fingerprint) {
  std::int64_t total = 0;
  for (const PrefixGroupStats& g : a.groups) total += g.requests;
  std::string s =
      "rank,first_block,requests,share,mean_input_tokens,mean_shared_prefix_rate,"
      "config_fingerprint\n";
  for (std::size_t i = 0; i < a.groups.size(); ++i) {
    const PrefixGroupStats& g = a.groups[i];
    s += fmt::format("{},{:016x},{},{:.6f},{:.1f},{:.6f},{}\n", i + 1, g.first_block.value,
                     g.requests, static_cast<double>(g.requests) / total,
                     g.mean_input_tokens, g.mean_shared_rate, fingerprint);
  }
  return s;
}

// --- Scaling demo ----------------------------------------------------------

Trace TwoPhaseTrace(const Trace& unit_rate, double high_qps, double low_qps,
                    double high_duration) {
  if (!(high_qps > 0.0) || !(low_qps > 0.0)) {
    throw ConfigError("scale_demo", "phase rates must be positive");
  }
  Trace out = unit_rate;
  double t = 0.0;
  double prev = unit_rate.requests.empty() ? 0.0 : unit_rate.requests.front().arrival_time;
  for (Request& r : out.requests) {
    const double gap = r.arrival_time - prev;
    prev = r.arrival_time;
    t += gap / (t < high_duration ? high_qps : low_qps);
    r.arrival_time = t;
  }
  return out;
}

std::vector<SloWindow> SloWindows(const RunOutput& out, int initial_instances,
                                  double window) {
  if (!(window > 0.0)) throw ConfigError("window", "must be positive");
  const auto& recs = out.run.records;
  if (recs.empty()) return {};
  InstanceId max_id = initial_instances - 1;
  for (const RequestRecord& r : recs) max_id = std::max(max_id, r.executed_on());

  std::vector<ScaleEvent> script = out.config.scale_script;
  std::stable_sort(script.begin(), script.end(),
                   [](const ScaleEvent& a, const ScaleEvent& b) { return a.time < b.time; });
  const double t0 = recs.front().arrival;
  double last = t0;
  for (const RequestRecord& r : recs) last = std::max(last, r.arrival);
  const auto count = static_cast<std::size_t>(std::floor((last - t0) / window)) + 1;

  std::vector<SloWindow> windows(count);
  std::vector<std::int64_t> met(count, 0);
  for (std::size_t w = 0; w < count; ++w) {
    windows[w].start = t0 + w * window;
    windows[w].end = windows[w].start + window;
    windows[w].per_instance.assign(static_cast<std::size_t>(max_id) + 1, 0);
    int online = initial_instances;
    for (const ScaleEvent& ev : script) {
      if (ev.time > windows[w].start) break;
      online += ev.kind == ScaleEvent::Kind::kAdd ? 1 : -1;
    }
    windows[w].online_instances = online;
  }
  for (const RequestRecord& r : recs) {
    const auto w = std::min(count - 1, static_cast<std::size_t>((r.arrival - t0) / window));
    ++windows[w].requests;
    met[w] += r.ttft() < out.config.cluster.slo_seconds;
    ++windows[w].per_instance[static_cast<std::size_t>(r.executed_on())];
  }
  for (std::size_t w = 0; w < count; ++w) {
    windows[w].slo_attainment =
        windows[w].requests ? static_cast<double>(met[w]) / windows[w].requests : 1.0;
  }
  return windows;
}

ScaleDemoOutput RunScaleDemo(const ExperimentConfig& config,
                             const ScaleDemoOptions& options) {
  ExperimentConfig c = config;
  Trace trace;
  if (c.scale_script.empty() && c.trace.synth) {
    if (options.base_instances < 1 || options.added_instances < 0) {
      throw ConfigError("scale_demo", "instance counts must be positive");
    }
    SynthSpec spec = *c.trace.synth;
    spec.rate_qps = 1.0;
    spec.seed = c.seed;
    trace = TwoPhaseTrace(SynthTrace(spec), options.high_qps, options.low_qps,
                          options.high_duration);
    c.trace.synth = spec;
    c.qps.reset();
    c.cluster.n_instances = options.base_instances;
    for (int i = 0; i < options.added_instances; ++i) {
      c.scale_script.push_back({options.scale_up_at, ScaleEvent::Kind::kAdd, kNoInstance});
    }
    for (int i = 0; i < options.added_instances; ++i) {
      c.scale_script.push_back({options.scale_down_at, ScaleEvent::Kind::kRemove, kNoInstance});
    }
  } else {
    trace = BuildTrace(c);
  }
  // Windows cover every request; warm-up only matters for the summary report.
  c.warmup_count = std::min<std::int64_t>(c.warmup_count, static_cast<std::int64_t>(trace.size()) - 1);
  ScaleDemoOutput demo;
  demo.run = RunExperiment(c, trace);
  demo.windows = SloWindows(demo.run, c.cluster.n_instances, options.window);
  return demo;
}

std::string SloWindowsCsv(const ScaleDemoOutput& demo) {
  std::string s =
      "window_start,window_end,requests,slo_attainment,online_instances,config_fingerprint\n";
  for (const SloWindow& w : demo.windows) {
    s += fmt::format("{:.3f},{:.3f},{},{:.6f},{},{}\n", w.start, w.end, w.requests,
                     w.slo_attainment, w.online_instances, demo.run.fingerprint);
  }
  return s;
}

std::string InstanceCountsCsv(const ScaleDemoOutput& demo) {
  std::string s = "window_start,instance,requests,config_fingerprint\n";
  for (const SloWindow& w : demo.windows) {
    for (std::size_t i = 0; i < w.per_instance.size(); ++i) {
      s += fmt::format("{:.3f},{},{},{}\n", w.start, i, w.per_instance[i],
                       demo.run.fingerprint);
    }
  }
  return s;
}

// --- Lists ------------------------------------------------------------------

namespace {

std::vector<std::string> SplitCommas(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::size_t end = comma == std::string::npos ? text.size() : comma;
    std::string part = text.substr(start, end - start);
    part.erase(0, part.find_first_not_of(" \t"));
    part.erase(part.find_last_not_of(" \t") + 1);
    parts.push_back(part);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return parts;
}

std::int64_t ToInt(const std::string& s, const std::string& field) {
  std::size_t used = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size()) throw ConfigError(field, "bad integer '" + s + "'");
  return v;
}

}  // namespace

std::vector<std::int64_t> ParseIntList(const std::string& text, const std::string& field) {
  std::vector<std::int64_t> out;
  for (const std::string& part : SplitCommas(text)) {
    const std::size_t dots = part.find("..");
    if (dots == std::string::npos) {
      out.push_back(ToInt(part, field));
      continue;
    }
    const std::int64_t lo = ToInt(part.substr(0, dots), field);
    const std::int64_t hi = ToInt(part.substr(dots + 2), field);
    if (hi < lo) throw ConfigError(field, "empty range '" + part + "'");
    for (std::int64_t v = lo; v <= hi; ++v) out.push_back(v);
  }
  return out;
}

std::vector<double> ParseDoubleList(const std::string& text, const std::string& field) {
  std::vector<double> out;
  for (const std::string& part : SplitCommas(text)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (part.empty() || used != part.size() || !std::isfinite(v)) {
      throw ConfigError(field, "bad number '" + part + "'");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace pairsim
