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
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "json.hpp"
#include "pairsim/cost_model.h"
#include "pairsim/policies.h"
#include "pairsim/prefix_cache.h"
#include "pairsim/trace.h"

namespace pairsim {

struct ClusterConfig {
  int n_instances = 8;
  // Host-DRAM context cache per instance; unbounded_cache ignores the size.
  std::int64_t cache_capacity_tokens = 1'000'000;
  bool unbounded_cache = false;
  double slo_seconds = 5.0;
  double bottleneck_threshold = 3.0;  // seconds without a finished prefill
  bool bottleneck_detection = true;
  double bottleneck_recheck = 1.0;  // re-plan period while still stalled
  double sample_interval = 1.0;
  std::int64_t audit_every = 1000;  // events between audits; 0 disables
  bool record_event_log = true;
  RingOptions ring;
  HotnessOptions hotness;
};

void ValidateClusterConfig(const ClusterConfig& config);

struct ScaleEvent {
  enum class Kind { kAdd, kRemove };
  double time = 0.0;
  Kind kind = Kind::kAdd;
  // Instance to remove; kNoInstance removes the highest online id.
  InstanceId instance = kNoInstance;
};

struct RequestRecord {
  std::int64_t id = 0;
  double arrival = 0.0;
  double dispatch = 0.0;
  double prefill_start = 0.0;
  double first_token = 0.0;
  double completion = 0.0;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  std::int64_t reusable_tokens = 0;  // at prefill start
  std::vector<InstanceId> targets;   // every queue it joined, in order
  std::optional<CandidatePair> pair;
  std::size_t key_length = 0;
  bool migrated = false;
  bool redispatched = false;
  int completions = 0;

  double ttft() const { return first_token - arrival; }
  double e2e() const { return completion - arrival; }
  InstanceId executed_on() const {
    return targets.empty() ? kNoInstance : targets.back();
  }
};

struct TimelineSample {
  double time = 0.0;
  std::vector<std::pair<InstanceId, std::int64_t>> pending;  // online only
};

struct RunResult {
  std::string policy;
  std::vector<RequestRecord> records;  // trace order
  std::vector<TimelineSample> timeline;
  std::vector<std::string> events;  // empty unless record_event_log
  std::vector<std::string> audit_violations;
  std::map<std::size_t, std::int64_t> key_length_histogram;
  nlohmann::json ring;  // final ring state, dual-candidate policies only
  std::int64_t arrived = 0;
  std::int64_t completed = 0;
  std::int64_t migrations = 0;
  std::int64_t rebalance_plans = 0;
  std::int64_t redispatches = 0;
  std::int64_t bottleneck_flags = 0;
  std::int64_t events_processed = 0;
  double end_time = 0.0;
};

// Discrete-event simulation of one serving cluster under one policy.
//
// Every instance prefills one request at a time from a FIFO queue at the
// profile's prefill rate, charging input + output tokens of device memory at
// admission and releasing them when decoding ends. A prefill that does not fit
// in memory waits for decodes to finish; an instance that has not finished a
// prefill for bottleneck_threshold seconds while requests wait is flagged as
// decode-bottlenecked.
class ClusterSim {
 public:
  ClusterSim(const Trace& trace, PolicyKind policy, const ComputeProfile& profile,
             const ClusterConfig& config, std::vector<ScaleEvent> scale_script = {});
  ~ClusterSim();

  RunResult Run();

  // Recomputes per-instance sums from first principles; empty when healthy.
  std::vector<std::string> Audit() const;

  // Test hook: corrupts an instance's pending-token counter.
  void InjectPendingFault(InstanceId id, std::int64_t delta);

 private:
  struct QueueItem {
    std::size_t request = 0;  // index into the trace
    std::int64_t uncached_tokens = 0;
    std::optional<CandidatePair> pair;
  };
  struct Instance {
    InstanceId id = kNoInstance;
    bool online = true;
    std::deque<QueueItem> queue;
    std::optional<QueueItem> inflight;
    std::int64_t pending_tokens = 0;
    PrefixCache cache;
    std::int64_t memory_used = 0;
    std::int64_t active_decodes = 0;
    double last_prefill_time = 0.0;
    bool bottlenecked = false;
    std::uint64_t check_generation = 0;
    std::optional<double> next_check;

    explicit Instance(PrefixCache c) : cache(std::move(c)) {}
    bool busy() const { return inflight.has_value() || !queue.empty(); }
  };
  enum class EventKind {
    kPrefillDone = 0,
    kDecodeDone = 1,
    kScaleAdd = 2,
    kScaleRemove = 3,
    kArrival = 4,
    kRebalanceCheck = 5,
  };
  struct Event {
    double time;
    EventKind kind;
    std::uint64_t seq;
    std::size_t request;
    InstanceId instance;
    std::uint64_t generation;

    bool operator>(const Event& o) const {
      if (time != o.time) return time > o.time;
      if (kind != o.kind) return kind > o.kind;
      return seq > o.seq;
    }
  };

  void Push(double time, EventKind kind, std::size_t request, InstanceId instance,
            std::uint64_t generation = 0);
  ClusterSnapshot Snapshot() const;
  bool ComputeBottleneck(const Instance& inst) const;

  void OnArrival(std::size_t request);
  void OnPrefillDone(InstanceId id);
  void OnDecodeDone(InstanceId id, std::size_t request);
  void OnScaleAdd();
  void OnScaleRemove(InstanceId id);
  void OnRebalanceCheck(InstanceId id, std::uint64_t generation);

  void Dispatch(std::size_t request, bool observe, const char* what);
  void Enqueue(Instance& inst, QueueItem item);
  void TryStart(Instance& inst);
  void ScheduleCheck(Instance& inst, double at);
  void Rebalance(Instance& inst, const char* why);
  void Sample(double time);
  void Log(std::string line);

  const Trace& trace_;
  ComputeProfile profile_;
  ClusterConfig config_;
  std::vector<ScaleEvent> scale_script_;
  std::unique_ptr<Policy> policy_;
  std::vector<Instance> instances_;  // index == id
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::uint64_t next_seq_ = 0;
  double now_ = 0.0;
  double next_sample_ = 0.0;
  RunResult result_;
};

// Convenience wrapper: construct and run.
RunResult RunSimulation(const Trace& trace, PolicyKind policy,
                        const ComputeProfile& profile, const ClusterConfig& config,
                        const std::vector<ScaleEvent>& scale_script = {});

}  // namespace pairsim
