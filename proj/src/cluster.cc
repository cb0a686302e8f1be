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

#include "pairsim/cluster.h"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "pairsim/errors.h"

namespace pairsim {

namespace {

// Bottleneck checks fire just past the threshold so the strict comparison
// holds at the check instant.
constexpr double kCheckSlack = 1e-6;

std::string PairText(const std::optional<CandidatePair>& pair) {
  if (!pair) return "-";
  return fmt::format("{},{}", pair->primary, pair->secondary);
}

}  // namespace

void ValidateClusterConfig(const ClusterConfig& config) {
  if (config.n_instances < 1) {
    throw ConfigError("cluster.n_instances", "must be >= 1");
  }
  if (!config.unbounded_cache && config.cache_capacity_tokens < 0) {
    throw ConfigError("cluster.cache_capacity_tokens", "must be >= 0");
  }
  if (!(config.slo_seconds > 0.0)) {
    throw ConfigError("slo_seconds", "must be positive");
  }
  if (!(config.bottleneck_threshold > 0.0)) {
    throw ConfigError("cluster.bottleneck_threshold", "must be positive");
  }
  if (!(config.bottleneck_recheck > 0.0)) {
    throw ConfigError("cluster.bottleneck_recheck", "must be positive");
  }
  if (!(config.sample_interval > 0.0)) {
    throw ConfigError("sample_interval", "must be positive");
  }
  if (config.audit_every < 0) {
    throw ConfigError("cluster.audit_every", "must be >= 0");
  }
}

ClusterSim::ClusterSim(const Trace& trace, PolicyKind policy,
                       const ComputeProfile& profile, const ClusterConfig& config,
                       std::vector<ScaleEvent> scale_script)
    : trace_(trace),
      profile_(profile),
      config_(config),
      scale_script_(std::move(scale_script)) {
  ValidateProfile(profile_);
  ValidateClusterConfig(config_);
  if (trace_.empty()) throw ConfigError("trace", "trace is empty");
  ValidateTrace(trace_);
  for (const Request& r : trace_.requests) {
    if (r.input_tokens + r.output_tokens > profile_.memory_capacity_tokens) {
      throw ConfigError(
          "profile.memory_capacity_tokens",
          fmt::format("request {} needs {} tokens of memory, capacity is {}",
                      r.id, r.input_tokens + r.output_tokens,
                      profile_.memory_capacity_tokens));
    }
  }
  // Replay the script to reject scale-ins below one instance up front.
  int online = config_.n_instances;
  for (const ScaleEvent& ev : scale_script_) {
    if (!std::isfinite(ev.time) || ev.time < 0.0) {
      throw ConfigError("scale_script.time", "must be finite and >= 0");
    }
    online += ev.kind == ScaleEvent::Kind::kAdd ? 1 : -1;
    if (online < 1) {
      throw ConfigError("scale_script", "script removes the last instance");
    }
  }

  std::vector<InstanceId> ids;
  for (int i = 0; i < config_.n_instances; ++i) {
    ids.push_back(i);
    instances_.emplace_back(
        config_.unbounded_cache
            ? PrefixCache::Unbounded(trace_.cache_block_tokens)
            : PrefixCache(config_.cache_capacity_tokens, trace_.cache_block_tokens));
    instances_.back().id = i;
  }
  PolicyOptions options;
  options.profile = profile_;
  options.slo_seconds = config_.slo_seconds;
  options.ring = config_.ring;
  options.hotness = config_.hotness;
  options.cache_block_tokens = trace_.cache_block_tokens;
  policy_ = MakePolicy(policy, options, ids);
  result_.policy = std::string(policy_->name());
}

ClusterSim::~ClusterSim() = default;

void ClusterSim::Push(double time, EventKind kind, std::size_t request,
                      InstanceId instance, std::uint64_t generation) {
  events_.push(Event{time, kind, next_seq_++, request, instance, generation});
}

void ClusterSim::Log(std::string line) {
  if (config_.record_event_log) {
    result_.events.push_back(fmt::format("{:.6f} {}", now_, line));
  }
}

bool ClusterSim::ComputeBottleneck(const Instance& inst) const {
  return config_.bottleneck_detection &&
         IsDecodeBottlenecked(now_, inst.last_prefill_time, !inst.queue.empty(),
                              config_.bottleneck_threshold);
}

ClusterSnapshot ClusterSim::Snapshot() const {
  ClusterSnapshot snap;
  snap.now = now_;
  for (const Instance& inst : instances_) {
    if (!inst.online) continue;
    InstanceSnapshot s;
    s.id = inst.id;
    s.online = true;
    s.pending_prefill_tokens = inst.pending_tokens;
    s.cache = &inst.cache;
    s.last_prefill_time = inst.last_prefill_time;
    s.bottlenecked = ComputeBottleneck(inst);
    snap.instances.push_back(s);
  }
  return snap;
}

RunResult ClusterSim::Run() {
  for (std::size_t i = 0; i < trace_.requests.size(); ++i) {
    const Request& r = trace_.requests[i];
    RequestRecord rec;
    rec.id = r.id;
    rec.arrival = r.arrival_time;
    rec.input_tokens = r.input_tokens;
    rec.output_tokens = r.output_tokens;
    result_.records.push_back(std::move(rec));
    Push(r.arrival_time, EventKind::kArrival, i, kNoInstance);
  }
  for (const ScaleEvent& ev : scale_script_) {
    Push(ev.time,
         ev.kind == ScaleEvent::Kind::kAdd ? EventKind::kScaleAdd
                                           : EventKind::kScaleRemove,
         0, ev.instance);
  }

  next_sample_ = trace_.requests.front().arrival_time;
  while (!events_.empty()) {
    const Event ev = events_.top();
    events_.pop();
    while (next_sample_ < ev.time) {
      Sample(next_sample_);
      next_sample_ += config_.sample_interval;
    }
    now_ = ev.time;
    switch (ev.kind) {
      case EventKind::kArrival: OnArrival(ev.request); break;
      case EventKind::kPrefillDone: OnPrefillDone(ev.instance); break;
      case EventKind::kDecodeDone: OnDecodeDone(ev.instance, ev.request); break;
      case EventKind::kScaleAdd: OnScaleAdd(); break;
      case EventKind::kScaleRemove: OnScaleRemove(ev.instance); break;
      case EventKind::kRebalanceCheck:
        OnRebalanceCheck(ev.instance, ev.generation);
        break;
    }
    ++result_.events_processed;
    if (config_.audit_every > 0 &&
        result_.events_processed % config_.audit_every == 0) {
      for (std::string& v : Audit()) {
        result_.audit_violations.push_back(fmt::format("t={:.6f} {}", now_, v));
      }
    }
  }
  while (next_sample_ <= now_) {
    Sample(next_sample_);
    next_sample_ += config_.sample_interval;
  }
  for (std::string& v : Audit()) {
    result_.audit_violations.push_back(fmt::format("t={:.6f} {}", now_, v));
  }
  for (const RequestRecord& rec : result_.records) {
    if (rec.completions != 1) {
      result_.audit_violations.push_back(fmt::format(
          "request {} completed {} times", rec.id, rec.completions));
    }
  }
  result_.end_time = now_;
  if (const HotnessTree* tree = policy_->hotness()) {
    result_.key_length_histogram = tree->key_length_histogram();
  }
  if (const DualHashRing* ring = policy_->ring()) result_.ring = ring->ToJson();
  return std::move(result_);
}

void ClusterSim::Sample(double time) {
  TimelineSample s;
  s.time = time;
  for (const Instance& inst : instances_) {
    if (inst.online) s.pending.emplace_back(inst.id, inst.pending_tokens);
  }
  result_.timeline.push_back(std::move(s));
}

void ClusterSim::OnArrival(std::size_t request) {
  ++result_.arrived;
  Log(fmt::format("arrival req={}", trace_.requests[request].id));
  Dispatch(request, true, "route");
}

void ClusterSim::Dispatch(std::size_t request, bool observe, const char* what) {
  const Request& r = trace_.requests[request];
  const ClusterSnapshot snap = Snapshot();
  const RoutingDecision d = policy_->Route(r, snap, observe);
  RequestRecord& rec = result_.records[request];
  rec.dispatch = now_;
  if (d.pair) rec.pair = d.pair;
  if (observe) rec.key_length = d.key_length;

  Instance& target = instances_.at(d.target);
  QueueItem item{request, target.cache.Probe(r.prompt_blocks), d.pair};
  item.uncached_tokens = r.input_tokens - std::min(item.uncached_tokens, r.input_tokens);
  Enqueue(target, item);
  rec.targets.push_back(d.target);

  TtftEstimate est;
  if (const TtftEstimate* e = d.EstimateFor(d.target)) est = *e;
  Log(fmt::format(
      "{} req={} policy={} inst={} reason={} t_q={:.6f} t_c={:.6f} d={:.6f} "
      "pair={} key_len={} pending={}",
      what, r.id, policy_->name(), d.target, RouteReasonName(d.reason), est.t_q,
      est.t_c, est.d_correction, PairText(d.pair), d.key_length,
      target.pending_tokens));

  if (d.reason == RouteReason::kRebalanceTrigger && policy_->rebalances() &&
      d.pair) {
    Rebalance(instances_.at(d.pair->primary), "trigger");
    if (d.pair->secondary != d.pair->primary) {
      Rebalance(instances_.at(d.pair->secondary), "trigger");
    }
  }
  TryStart(target);
}

void ClusterSim::Enqueue(Instance& inst, QueueItem item) {
  if (!inst.busy()) {
    // An idle instance starts its stall clock when work arrives.
    inst.last_prefill_time = now_;
  }
  inst.pending_tokens += item.uncached_tokens;
  inst.queue.push_back(std::move(item));
  ScheduleCheck(inst, inst.last_prefill_time + config_.bottleneck_threshold);
}

void ClusterSim::ScheduleCheck(Instance& inst, double at) {
  if (!config_.bottleneck_detection || inst.queue.empty()) return;
  at = std::max(at + kCheckSlack, now_);
  // One pending check per instance; an earlier request supersedes it. A
  // check that fires early re-arms itself from the stall clock.
  if (inst.next_check && *inst.next_check <= at) return;
  inst.next_check = at;
  Push(at, EventKind::kRebalanceCheck, 0, inst.id, ++inst.check_generation);
}

void ClusterSim::TryStart(Instance& inst) {
  if (inst.inflight || inst.queue.empty()) return;
  QueueItem& head = inst.queue.front();
  const Request& r = trace_.requests[head.request];
  const std::int64_t need = r.input_tokens + r.output_tokens;
  if (inst.memory_used + need > profile_.memory_capacity_tokens) return;

  QueueItem item = std::move(head);
  inst.queue.pop_front();
  const std::int64_t reusable =
      std::min(inst.cache.Query(r.prompt_blocks, now_), r.input_tokens);
  const std::int64_t uncached = r.input_tokens - reusable;
  inst.pending_tokens += uncached - item.uncached_tokens;
  item.uncached_tokens = uncached;
  inst.memory_used += need;

  RequestRecord& rec = result_.records[item.request];
  rec.prefill_start = now_;
  rec.reusable_tokens = reusable;
  Log(fmt::format("prefill_start req={} inst={} reuse={} pending={}", r.id,
                  inst.id, reusable, inst.pending_tokens));
  Push(now_ + profile_.PrefillSeconds(uncached), EventKind::kPrefillDone,
       item.request, inst.id);
  inst.inflight = std::move(item);
}

void ClusterSim::OnPrefillDone(InstanceId id) {
  Instance& inst = instances_.at(id);
  const QueueItem item = *inst.inflight;
  inst.inflight.reset();
  const Request& r = trace_.requests[item.request];
  result_.records[item.request].first_token = now_;
  inst.cache.Insert(r.prompt_blocks, now_);
  inst.pending_tokens -= item.uncached_tokens;
  inst.last_prefill_time = now_;
  inst.bottlenecked = false;
  ++inst.active_decodes;
  Push(now_ + profile_.DecodeSeconds(r.output_tokens), EventKind::kDecodeDone,
       item.request, id);
  Log(fmt::format("prefill_done req={} inst={} pending={}", r.id, id,
                  inst.pending_tokens));
  TryStart(inst);
  ScheduleCheck(inst, now_ + config_.bottleneck_threshold);
}

void ClusterSim::OnDecodeDone(InstanceId id, std::size_t request) {
  Instance& inst = instances_.at(id);
  const Request& r = trace_.requests[request];
  inst.memory_used -= r.input_tokens + r.output_tokens;
  --inst.active_decodes;
  RequestRecord& rec = result_.records[request];
  rec.completion = now_;
  ++rec.completions;
  ++result_.completed;
  Log(fmt::format("decode_done req={} inst={}", r.id, id));
  TryStart(inst);
}

void ClusterSim::OnRebalanceCheck(InstanceId id, std::uint64_t generation) {
  Instance& inst = instances_.at(id);
  if (generation != inst.check_generation) return;
  inst.next_check.reset();
  if (!inst.online) return;
  if (!ComputeBottleneck(inst)) {
    ScheduleCheck(inst, inst.last_prefill_time + config_.bottleneck_threshold);
    return;
  }
  if (!inst.bottlenecked) {
    inst.bottlenecked = true;
    ++result_.bottleneck_flags;
    Log(fmt::format("bottleneck inst={} interval={:.6f} queue={}", id,
                    now_ - inst.last_prefill_time, inst.queue.size()));
  }
  if (policy_->rebalances()) Rebalance(inst, "bottleneck");
  ScheduleCheck(inst, now_ + config_.bottleneck_recheck - kCheckSlack);
}

void ClusterSim::Rebalance(Instance& inst, const char* why) {
  if (!inst.online || inst.queue.empty()) return;
  const ClusterSnapshot snap = Snapshot();
  const InstanceSnapshot* self = snap.Find(inst.id);
  if (!self) return;

  RebalanceSource source;
  source.instance = *self;
  source.inflight_tokens = inst.inflight ? inst.inflight->uncached_tokens : 0;
  for (const QueueItem& item : inst.queue) {
    QueuedRequest q;
    q.request = &trace_.requests[item.request];
    q.uncached_tokens = item.uncached_tokens;
    // Requests without a pair (none under dual-candidate policies) stay put.
    q.pair = item.pair.value_or(CandidatePair{inst.id, inst.id, false});
    source.queue.push_back(q);
  }
  if (!IsOverloaded(source, profile_, config_.slo_seconds, now_)) return;

  const std::vector<Migration> plan =
      PlanRebalance(source, snap, profile_, config_.slo_seconds, now_);
  ++result_.rebalance_plans;
  Log(fmt::format("rebalance inst={} why={} queue={} moves={}", inst.id, why,
                  inst.queue.size(), plan.size()));
  if (plan.empty()) return;

  std::vector<bool> leaving(inst.queue.size(), false);
  for (const Migration& m : plan) leaving[m.queue_index] = true;
  std::vector<QueueItem> moved(plan.size());
  std::deque<QueueItem> staying;
  std::vector<std::size_t> slot(inst.queue.size());
  for (std::size_t i = 0; i < plan.size(); ++i) slot[plan[i].queue_index] = i;
  for (std::size_t i = 0; i < inst.queue.size(); ++i) {
    if (leaving[i]) {
      moved[slot[i]] = std::move(inst.queue[i]);
    } else {
      staying.push_back(std::move(inst.queue[i]));
    }
  }
  inst.queue = std::move(staying);

  for (std::size_t i = 0; i < plan.size(); ++i) {
    QueueItem item = std::move(moved[i]);
    const Request& r = trace_.requests[item.request];
    inst.pending_tokens -= item.uncached_tokens;
    Instance& dst = instances_.at(plan[i].destination);
    item.uncached_tokens =
        r.input_tokens - std::min(dst.cache.Probe(r.prompt_blocks), r.input_tokens);
    Enqueue(dst, std::move(item));
    RequestRecord& rec = result_.records[dst.queue.back().request];
    rec.targets.push_back(dst.id);
    rec.migrated = true;
    ++result_.migrations;
    Log(fmt::format("migrate req={} from={} to={} benefit={:.6f} "
                    "pending_from={} pending_to={}",
                    r.id, inst.id, dst.id, plan[i].benefit, inst.pending_tokens,
                    dst.pending_tokens));
  }
  for (const Migration& m : plan) TryStart(instances_.at(m.destination));
}

void ClusterSim::OnScaleAdd() {
  const auto id = static_cast<InstanceId>(instances_.size());
  instances_.emplace_back(
      config_.unbounded_cache
          ? PrefixCache::Unbounded(trace_.cache_block_tokens)
          : PrefixCache(config_.cache_capacity_tokens, trace_.cache_block_tokens));
  instances_.back().id = id;
  instances_.back().last_prefill_time = now_;
  policy_->OnInstanceAdded(id);
  Log(fmt::format("scale_add inst={}", id));
}

void ClusterSim::OnScaleRemove(InstanceId id) {
  if (id == kNoInstance) {
    for (auto it = instances_.rbegin(); it != instances_.rend(); ++it) {
      if (it->online) {
        id = it->id;
        break;
      }
    }
  }
  if (id < 0 || id >= static_cast<InstanceId>(instances_.size()) ||
      !instances_[id].online) {
    throw StateError(fmt::format("scale_remove of unknown instance {}", id));
  }
  const auto online = std::count_if(instances_.begin(), instances_.end(),
                                    [](const Instance& i) { return i.online; });
  if (online < 2) throw StateError("cannot remove the last instance");

  Instance& inst = instances_[id];
  inst.online = false;
  policy_->OnInstanceRemoved(id);
  std::deque<QueueItem> orphans = std::move(inst.queue);
  inst.queue.clear();
  for (const QueueItem& item : orphans) inst.pending_tokens -= item.uncached_tokens;
  Log(fmt::format("scale_remove inst={} requeued={}", id, orphans.size()));
  // In-flight work drains on the removed instance; queued work is re-routed.
  for (const QueueItem& item : orphans) {
    result_.records[item.request].redispatched = true;
    ++result_.redispatches;
    Dispatch(item.request, false, "redispatch");
  }
}

std::vector<std::string> ClusterSim::Audit() const {
  std::vector<std::string> issues;
  for (const Instance& inst : instances_) {
    std::int64_t pending = inst.inflight ? inst.inflight->uncached_tokens : 0;
    for (const QueueItem& item : inst.queue) pending += item.uncached_tokens;
    if (pending != inst.pending_tokens) {
      issues.push_back(fmt::format("instance {}: pending_tokens {} != recomputed {}",
                                   inst.id, inst.pending_tokens, pending));
    }
    if (inst.memory_used > profile_.memory_capacity_tokens || inst.memory_used < 0) {
      issues.push_back(fmt::format("instance {}: memory_used {} outside [0, {}]",
                                   inst.id, inst.memory_used,
                                   profile_.memory_capacity_tokens));
    }
    if (inst.cache.resident_blocks() > inst.cache.capacity_blocks()) {
      issues.push_back(fmt::format("instance {}: cache over capacity", inst.id));
    }
    if (!inst.online && !inst.queue.empty()) {
      issues.push_back(fmt::format("instance {}: offline with queued work", inst.id));
    }
    if (inst.online && !inst.inflight && !inst.queue.empty()) {
      const Request& head = trace_.requests[inst.queue.front().request];
      if (inst.memory_used + head.input_tokens + head.output_tokens <=
          profile_.memory_capacity_tokens) {
        issues.push_back(fmt::format("instance {}: idle with admissible work",
                                     inst.id));
      }
    }
  }
  return issues;
}

void ClusterSim::InjectPendingFault(InstanceId id, std::int64_t delta) {
  instances_.at(id).pending_tokens += delta;
}

RunResult RunSimulation(const Trace& trace, PolicyKind policy,
                        const ComputeProfile& profile, const ClusterConfig& config,
                        const std::vector<ScaleEvent>& scale_script) {
  ClusterSim sim(trace, policy, profile, config, scale_script);
  return sim.Run();
}

}  // namespace pairsim
