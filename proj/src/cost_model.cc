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

#include "pairsim/cost_model.h"

#include <algorithm>
#include <cmath>

#include "pairsim/errors.h"

namespace pairsim {

double ComputeProfile::PrefillSeconds(std::int64_t tokens) const {
  const double t = static_cast<double>(std::max<std::int64_t>(tokens, 0));
  return t / prefill_rate + prefill_quadratic_coeff * t * t;
}

double ComputeProfile::DecodeSeconds(std::int64_t tokens) const {
  return static_cast<double>(tokens) / decode_rate;
}

void ValidateProfile(const ComputeProfile& profile) {
  if (!(profile.prefill_rate > 0.0)) {
    throw ConfigError("profile.prefill_rate", "must be positive");
  }
  if (!(profile.decode_rate > 0.0)) {
    throw ConfigError("profile.decode_rate", "must be positive");
  }
  if (profile.memory_capacity_tokens < 1) {
    throw ConfigError("profile.memory_capacity_tokens", "must be positive");
  }
  if (profile.prefill_quadratic_coeff < 0.0) {
    throw ConfigError("profile.prefill_quadratic_coeff", "must be >= 0");
  }
}

std::int64_t InstanceSnapshot::ReusableTokens(const Request& request) const {
  if (!cache) return 0;
  return std::min(cache->Probe(request.prompt_blocks), request.input_tokens);
}

const InstanceSnapshot* ClusterSnapshot::Find(InstanceId id) const {
  auto it = std::lower_bound(
      instances.begin(), instances.end(), id,
      [](const InstanceSnapshot& s, InstanceId v) { return s.id < v; });
  return it != instances.end() && it->id == id ? &*it : nullptr;
}

TtftEstimate EstimateTtft(const Request& request,
                          const InstanceSnapshot& instance,
                          const ComputeProfile& profile, double now,
                          std::optional<std::int64_t> queue_tokens) {
  if (!instance.online) {
    throw StateError("TTFT estimate for offline instance " +
                     std::to_string(instance.id));
  }
  TtftEstimate est;
  const std::int64_t ahead =
      queue_tokens.value_or(instance.pending_prefill_tokens);
  est.t_q = std::max(0.0, now - request.arrival_time) +
            static_cast<double>(std::max<std::int64_t>(ahead, 0)) /
                profile.prefill_rate;
  est.t_c = profile.PrefillSeconds(instance.UncachedTokens(request));
  if (instance.bottlenecked) {
    est.d_correction = std::max(0.0, now - instance.last_prefill_time);
  }
  return est;
}

double MigrationBenefit(const Request& request, const InstanceSnapshot& src,
                        std::int64_t src_queue_tokens,
                        const InstanceSnapshot& dst,
                        const ComputeProfile& profile, double now) {
  return EstimateTtft(request, src, profile, now, src_queue_tokens).total() -
         EstimateTtft(request, dst, profile, now).total();
}

std::int64_t SloThresholdTokens(const ComputeProfile& profile, double ttft_slo) {
  if (!(ttft_slo > 0.0)) throw ConfigError("slo_seconds", "must be positive");
  return static_cast<std::int64_t>(std::floor(profile.prefill_rate * ttft_slo));
}

bool IsDecodeBottlenecked(double now, double last_prefill_time,
                          bool queue_nonempty, double threshold) {
  return queue_nonempty && now - last_prefill_time > threshold;
}

PotcBound ComputePotcBound(std::int64_t n, std::int64_t m, std::int64_t d) {
  if (n < 2) throw ConfigError("n", "bound needs n >= 2");
  if (m < 1) throw ConfigError("m", "bound needs m >= 1");
  if (d < 1) throw ConfigError("d", "bound needs d >= 1");
  const double dn = static_cast<double>(n);
  const double dm = static_cast<double>(m);
  PotcBound bound;
  bound.mean_load = dm / dn;
  if (d == 1) {
    bound.deviation = std::sqrt(dm * std::log(dn) / dn);
    bound.order_of = true;
  } else {
    bound.deviation =
        std::log(std::log(dn)) / std::log(static_cast<double>(d));
  }
  return bound;
}

}  // namespace pairsim
