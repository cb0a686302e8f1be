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

// Command-line experiment harness. Exit codes: 0 all runs finished with clean
// audits, 1 a run failed or an audit found violations, 2 bad config or usage.

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "pairsim/errors.h"
#include "pairsim/experiment.h"

namespace fs = std::filesystem;
using namespace pairsim;

namespace {

constexpr const char* kOutDirEnv = "PAIRSIM_OUT_DIR";

struct Common {
  std::string config;
  std::string out_dir;
  std::string seed;
  std::string policy;
  std::string qps;
  int parallel = 1;
};

fs::path OutDir(const Common& c) {
  if (!c.out_dir.empty()) return c.out_dir;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return "pairsim_out";
}

ExperimentConfig DefaultConfig() {
  ExperimentConfig c;
  c.trace.synth = ToolAgentSpec(8000, 1.0, c.seed);
  return c;
}

ExperimentConfig Load(const Common& c, bool required) {
  if (c.config.empty()) {
    if (required) throw ConfigError("--config", "required for this command");
    return DefaultConfig();
  }
  return LoadExperimentConfig(c.config);
}

std::vector<std::uint64_t> Seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (std::int64_t s : ParseIntList(text, "--seed")) {
    if (s < 0) throw ConfigError("--seed", "must be >= 0");
    out.push_back(static_cast<std::uint64_t>(s));
  }
  return out;
}

std::vector<PolicyKind> Policies(const std::string& text) {
  if (text == "all") return AllPolicyKinds();
  if (text == "ablation") {
    return {PolicyKind::kDualMapCacheAffinity, PolicyKind::kDualMapLeastLoaded,
            PolicyKind::kDualMapMinTtft, PolicyKind::kDualMapNoRebalance,
            PolicyKind::kDualMap};
  }
  std::vector<PolicyKind> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::size_t end = comma == std::string::npos ? text.size() : comma;
    out.push_back(ParsePolicyKind(text.substr(start, end - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// Single-value overrides shared by run and scale-demo.
void ApplyOverrides(const Common& c, ExperimentConfig& cfg) {
  if (!c.seed.empty()) {
    const auto seeds = Seeds(c.seed);
    if (seeds.size() != 1) throw ConfigError("--seed", "takes one value here");
    cfg.seed = seeds.front();
  }
  if (!c.policy.empty()) cfg.policy = ParsePolicyKind(c.policy);
  if (!c.qps.empty()) {
    const auto q = ParseDoubleList(c.qps, "--qps");
    if (q.size() != 1 || !(q.front() > 0.0)) throw ConfigError("--qps", "takes one positive value here");
    cfg.qps = q.front();
  }
}

void Write(const fs::path& dir, const std::string& name, const std::string& body) {
  fs::create_directories(dir);
  WriteTextFile(dir / name, body);
}

int CmdRun(const Common& c) {
  ExperimentConfig cfg = Load(c, true);
  ApplyOverrides(c, cfg);
  const RunOutput out = RunExperiment(cfg);
  const fs::path dir = OutDir(c);
  WriteRunArtifacts(dir, out);
  const MetricsReport& m = out.report;
  fmt::print("{} requests={} hit_rate={:.4f} cv_mean={:.4f} p50_ttft={:.3f} p90_ttft={:.3f} "
             "effective_capacity={:.4f} migrations={} audits={}\n",
             m.policy, m.request_count, m.cache_hit_rate, m.cv.mean, m.latency.p50_ttft,
             m.latency.p90_ttft, m.effective_capacity, m.migrations,
             out.clean() ? "clean" : fmt::format("{} violations", out.run.audit_violations.size()));
  fmt::print("artifacts in {}\n", dir.string());
  return out.clean() ? 0 : 1;
}

int CmdSweep(const Common& c) {
  const ExperimentConfig cfg = Load(c, true);
  const auto policies = c.policy.empty() ? std::vector<PolicyKind>{cfg.policy} : Policies(c.policy);
  const auto qps = c.qps.empty() ? std::vector<double>{} : ParseDoubleList(c.qps, "--qps");
  const auto seeds = c.seed.empty() ? std::vector<std::uint64_t>{cfg.seed} : Seeds(c.seed);
  const auto rows = RunSweep(cfg, policies, qps, seeds, c.parallel);
  const fs::path dir = OutDir(c);
  Write(dir, "sweep.csv", SweepCsv(rows));
  int failed = 0;
  for (const SweepRow& r : rows) {
    if (!r.error.empty()) {
      ++failed;
      fmt::print(stderr, "{} qps={} seed={}: {}\n", PolicyName(r.policy),
                 r.qps ? fmt::format("{}", *r.qps) : "-", r.seed, r.error);
    }
  }
  fmt::print("{} rows ({} failed) written to {}\n", rows.size(), failed,
             (dir / "sweep.csv").string());
  return failed ? 1 : 0;
}

int CmdGoodput(const Common& c) {
  const ExperimentConfig cfg = Load(c, true);
  const auto policies = c.policy.empty() ? std::vector<PolicyKind>{cfg.policy} : Policies(c.policy);
  const auto seeds = c.seed.empty() ? std::vector<std::uint64_t>{cfg.seed} : Seeds(c.seed);
  ExperimentConfig base = cfg;
  if (!c.qps.empty()) {
    const auto q = ParseDoubleList(c.qps, "--qps");
    if (q.size() != 1 || !(q.front() > 0.0)) throw ConfigError("--qps", "takes one starting rate");
    base.qps = q.front();
  }
  const auto rows = RunGoodput(base, policies, seeds, c.parallel);
  const fs::path dir = OutDir(c);
  Write(dir, "goodput.csv", GoodputCsv(rows));
  Write(dir, "goodput_probes.csv", GoodputProbesCsv(rows));
  for (const GoodputRow& r : rows) {
    fmt::print("{} seed={} goodput={:.3f} qps{}{}\n", PolicyName(r.policy), r.seed, r.result.qps,
               r.result.unsaturated ? " (unsaturated)" : "",
               r.result.infeasible ? " (infeasible)" : "");
  }
  return 0;
}

int CmdBounds(const Common& c, const std::string& n, const std::string& d, std::int64_t m,
              std::int64_t m_per_instance) {
  const auto rows = BoundsTable(ParseIntList(n, "--n"), m, m_per_instance, ParseIntList(d, "--d"));
  const std::string csv = BoundsCsv(rows);
  Write(OutDir(c), "bounds.csv", csv);
  fmt::print("{}", csv);
  return 0;
}

int CmdAnalyze(const Common& c, const std::string& trace_file, const std::string& format,
               std::int64_t block_tokens) {
  Trace trace;
  std::string fp;
  if (!trace_file.empty()) {
    trace = LoadTrace(trace_file, ParseTraceFormat(format), block_tokens);
    fp = TraceFingerprint(trace);
  } else {
    ExperimentConfig cfg = Load(c, true);
    ApplyOverrides(c, cfg);
    trace = BuildTrace(cfg);
    fp = ConfigFingerprint(cfg);
  }
  const TraceAnalysis a = AnalyzeTrace(trace);
  const fs::path dir = OutDir(c);
  Write(dir, "analysis.csv", AnalysisCsv(a, fp));
  Write(dir, "groups.csv", GroupsCsv(a, fp));
  fmt::print("requests={} prefix_groups={} share_at_least_half={:.4f}\n", trace.size(),
             a.groups.size(), a.share_at_least_half);
  return 0;
}

int CmdScaleDemo(const Common& c, const ScaleDemoOptions& options) {
  ExperimentConfig cfg = Load(c, false);
  if (c.config.empty()) cfg.trace.synth->num_requests = options.num_requests;
  ApplyOverrides(c, cfg);
  const ScaleDemoOutput demo = RunScaleDemo(cfg, options);
  const fs::path dir = OutDir(c);
  WriteRunArtifacts(dir, demo.run);
  Write(dir, "slo_windows.csv", SloWindowsCsv(demo));
  Write(dir, "instance_counts.csv", InstanceCountsCsv(demo));
  for (const SloWindow& w : demo.windows) {
    fmt::print("[{:7.1f}, {:7.1f}) instances={} requests={:4} slo_attainment={:.3f}\n", w.start,
               w.end, w.online_instances, w.requests, w.slo_attainment);
  }
  return demo.run.clean() ? 0 : 1;
}

void AddCommon(CLI::App* cmd, Common& c, bool lists) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)");
  cmd->add_option("--out-dir", c.out_dir,
                  fmt::format("Output directory (default ${} or ./pairsim_out)", kOutDirEnv));
  cmd->add_option("--seed", c.seed, lists ? "Seeds, e.g. 1,2,3 or 1..5" : "Seed");
  cmd->add_option("--policy", c.policy,
                  lists ? "Policies, comma separated, or 'all' / 'ablation'" : "Policy name");
  cmd->add_option("--qps", c.qps, lists ? "Mean request rates, comma separated" : "Mean request rate");
  cmd->add_option("--parallel", c.parallel, "Concurrent simulations (0 = all cores)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pairsim: prefix-cache-aware request routing simulator"};
  app.require_subcommand(1);

  Common c;
  auto* run = app.add_subcommand("run", "Run one simulation and write its artifacts");
  AddCommon(run, c, false);
  auto* sweep = app.add_subcommand("sweep", "Cross product of policies x rates x seeds");
  AddCommon(sweep, c, true);
  auto* goodput = app.add_subcommand("goodput", "Peak rate meeting the SLO target");
  AddCommon(goodput, c, true);

  auto* bounds = app.add_subcommand("bounds", "Balls-into-bins max-load deviation table");
  std::string n_list = "8,16,32";
  std::string d_list = "1..6";
  std::int64_t m = 0;
  std::int64_t m_per_instance = 1000;
  bounds->add_option("--n", n_list, "Instance counts")->capture_default_str();
  bounds->add_option("--d", d_list, "Choice counts")->capture_default_str();
  bounds->add_option("--m", m, "Total requests (used when --m-per-instance is 0)");
  bounds->add_option("--m-per-instance", m_per_instance, "Requests per instance")->capture_default_str();
  bounds->add_option("--out-dir", c.out_dir, "Output directory");

  auto* analyze = app.add_subcommand("analyze", "Shared-prefix statistics of a trace");
  std::string trace_file;
  std::string format = "block_ids";
  std::int64_t block_tokens = kDefaultCacheBlockTokens;
  analyze->add_option("--trace", trace_file, "Trace file (otherwise the config's trace)");
  analyze->add_option("--format", format, "block_ids or fingerprints")->capture_default_str();
  analyze->add_option("--cache-block-tokens", block_tokens, "Tokens per cache block")->capture_default_str();
  analyze->add_option("--config", c.config, "Experiment config (JSON)");
  analyze->add_option("--seed", c.seed, "Seed for synthetic traces");
  analyze->add_option("--out-dir", c.out_dir, "Output directory");

  auto* demo = app.add_subcommand("scale-demo", "Scale out under overload, back in when load drops");
  AddCommon(demo, c, false);
  ScaleDemoOptions demo_opts;
  demo->add_option("--high-qps", demo_opts.high_qps, "Rate of the first phase")->capture_default_str();
  demo->add_option("--low-qps", demo_opts.low_qps, "Rate of the second phase")->capture_default_str();
  demo->add_option("--high-duration", demo_opts.high_duration, "Length of the first phase (s)")->capture_default_str();
  demo->add_option("--requests", demo_opts.num_requests, "Trace length without --config")->capture_default_str();
  demo->add_option("--scale-up-at", demo_opts.scale_up_at, "Time of the scale-out (s)")->capture_default_str();
  demo->add_option("--scale-down-at", demo_opts.scale_down_at, "Time of the scale-in (s)")->capture_default_str();
  demo->add_option("--window", demo_opts.window, "SLO window length (s)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*run) return CmdRun(c);
    if (*sweep) return CmdSweep(c);
    if (*goodput) return CmdGoodput(c);
    if (*bounds) return CmdBounds(c, n_list, d_list, m, m_per_instance);
    if (*analyze) return CmdAnalyze(c, trace_file, format, block_tokens);
    if (*demo) return CmdScaleDemo(c, demo_opts);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 2;
  } catch (const pairsim::ParseError& e) {
    fmt::print(stderr, "parse error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 2;
}
