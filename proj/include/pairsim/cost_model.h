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
#include <optional>
#include <vector>

#include "pairsim/dual_ring.h"
#include "pairsim/prefix_cache.h"
#include "pairsim/trace.h"

namespace pairsim {

struct ComputeProfile {
  double prefill_rate = 8000.0;  // prompt tokens per second
  double decode_rate = 50.0;     // output tokens per second per request
  std::int64_t memory_capacity_tokens = 1 << 21;  // device KV budget
  // Optional attention term: seconds += coeff * tokens^2. Off by default.
  double prefill_quadratic_coeff = 0.0;

  double PrefillSeconds(std::int64_t tokens) const;
  double DecodeSeconds(std::int64_t tokens) const;
};

void ValidateProfile(const ComputeProfile& profile);

// Scheduler-visible state of one instance.
struct InstanceSnapshot {
  InstanceId id = kNoInstance;
  bool online = true;
  std::int64_t pending_prefill_tokens = 0;
  const PrefixCache* cache = nullptr;
  double last_prefill_time = 0.0;
  bool bottlenecked = false;

  // Reusable tokens of the request here; never touches LRU state.
  std::int64_t ReusableTokens(const Request& request) const;
  std::int64_t UncachedTokens(const Request& request) const {
    return request.input_tokens - ReusableTokens(request);
  }
};

struct ClusterSnapshot {
  double now = 0.0;
  std::vector<InstanceSnapshot> instances;  // online instances, ascending id

  const InstanceSnapshot* Find(InstanceId id) const;
};

struct TtftEstimate {
  double t_q = 0.0;           // queueing, including time already waited
  double t_c = 0.0;           // prefill of the uncached suffix
  double d_correction = 0.0;  // decode-bottleneck delay
  double total() const { return d_correction + t_q + t_c; }
};

// Expected TTFT of `request` on `instance`. The request waits behind
// `queue_tokens` pending prefill tokens (defaults to everything pending on the
// instance, i.e. appended at the tail). Time already spent since arrival is
// part of t_q, so the estimate is comparable against the SLO.
TtftEstimate EstimateTtft(const Request& request,
                          const InstanceSnapshot& instance,
                          const ComputeProfile& profile, double now,
                          std::optional<std::int64_t> queue_tokens = {});

// TTFT gain of moving a request queued at src (behind src_queue_tokens) to the
// tail of dst.
double MigrationBenefit(const Request& request, const InstanceSnapshot& src,
                        std::int64_t src_queue_tokens,
                        const InstanceSnapshot& dst,
                        const ComputeProfile& profile, double now);

// Largest pending-token backlog an instance can clear within the SLO.
std::int64_t SloThresholdTokens(const ComputeProfile& profile, double ttft_slo);

// No prefill finished for longer than threshold while work is queued.
bool IsDecodeBottlenecked(double now, double last_prefill_time,
                          bool queue_nonempty, double threshold);

struct PotcBound {
  double mean_load = 0.0;
  double deviation = 0.0;
  bool order_of = false;  // d == 1: Theta(.) expression with constant 1
};

// Max-load bound for m balls into n bins with d uniform choices, natural
// logarithms throughout.
PotcBound ComputePotcBound(std::int64_t n, std::int64_t m, std::int64_t d);

}  // namespace pairsim
