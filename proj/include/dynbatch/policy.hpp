#pragma once

#include <cstdint>
#include <string_view>
#include <utility>

#include "dynbatch/workload.hpp"

namespace dynbatch {

/// Engine telemetry handed to a batching policy once per scheduling step.
struct PolicyInputs {
  std::int64_t b_prev = 1;
  std::int64_t n_prefill = 0;  // waiting plus in-prefill requests
  std::int64_t n_decode = 0;   // running decode requests
  LengthMoments moments;       // current length window
  double tau_bar_ms = 0.0;     // recent mean step latency
  double b_bar = 0.0;          // recent mean realized batch
};

enum class Rationale { kStatic, kMemoryBound, kSlaBound, kCombinedMin, kCarriedOver };

std::string_view to_string(Rationale r);

struct PolicyDecision {
  std::int64_t b_t = 1;
  Rationale rationale = Rationale::kStatic;
};

/// Persistent search interval of the latency-feedback controller together
/// with its hyper-parameters.
struct SlaSearchState {
  std::int64_t b_low = 1;
  std::int64_t b_high = 1;
  double d_sla_ms = 50.0;
  double epsilon_d_ms = 2.0;
  std::int64_t alpha = 8;
  std::int64_t delta = 2;
  std::int64_t b_min = 1;
  std::int64_t b_max = 256;

  /// Validated initial state with the interval spanning [b_min, b_max].
  static SlaSearchState initial(double d_sla_ms, double epsilon_d_ms,
                                std::int64_t alpha, std::int64_t delta,
                                std::int64_t b_min, std::int64_t b_max);

  friend bool operator==(const SlaSearchState&, const SlaSearchState&) = default;
};

PolicyDecision static_decide(std::int64_t b_fixed);

/// Memory-constrained update: resize to floor((eta - l0)/m) only while both
/// decode and prefill work exist, never below the running count and never
/// above b_max. Otherwise the previous size carries over.
PolicyDecision batching_memory(const PolicyInputs& inputs, std::int64_t eta,
                               std::int64_t l0, std::int64_t b_max);

/// Latency-feedback binary search over [b_low, b_high].
std::pair<PolicyDecision, SlaSearchState> batching_sla(const SlaSearchState& state,
                                                       const PolicyInputs& inputs);

PolicyDecision combined_decide(const PolicyDecision& mem, const PolicyDecision& sla);

}  // namespace dynbatch
