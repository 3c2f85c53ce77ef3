#include "dynbatch/policy.hpp"

#include <algorithm>
#include <cmath>

#include "dynbatch/errors.hpp"

namespace dynbatch {

std::string_view to_string(Rationale r) {
  switch (r) {
    case Rationale::kStatic: return "static";
    case Rationale::kMemoryBound: return "memory-bound";
    case Rationale::kSlaBound: return "sla-bound";
    case Rationale::kCombinedMin: return "combined-min";
    case Rationale::kCarriedOver: return "carried-over";
  }
  return "unknown";
}

SlaSearchState SlaSearchState::initial(double d_sla_ms, double epsilon_d_ms,
                                       std::int64_t alpha, std::int64_t delta,
                                       std::int64_t b_min, std::int64_t b_max) {
  if (!(d_sla_ms > 0.0)) throw ConfigError("d_sla_ms must be > 0");
  if (!(epsilon_d_ms >= 0.0)) throw ConfigError("epsilon_d_ms must be >= 0");
  if (alpha < 1 || delta < 1) throw ConfigError("alpha and delta must be >= 1");
  if (alpha <= delta) throw ConfigError("alpha must exceed delta");
  if (b_min < 1 || b_max < b_min) throw ConfigError("need 1 <= b_min <= b_max");
  return {b_min, b_max, d_sla_ms, epsilon_d_ms, alpha, delta, b_min, b_max};
}

PolicyDecision static_decide(std::int64_t b_fixed) {
  if (b_fixed < 1) throw ConfigError("static batch size must be >= 1");
  return {b_fixed, Rationale::kStatic};
}

PolicyDecision batching_memory(const PolicyInputs& inputs, std::int64_t eta,
                               std::int64_t l0, std::int64_t b_max) {
  if (!(inputs.moments.m > 0.0)) throw ConfigError("batching_memory: m must be > 0");
  if (l0 < 0 || l0 > eta) throw ConfigError("batching_memory: l0 must lie in [0, eta]");
  if (b_max < 1) throw ConfigError("batching_memory: b_max must be >= 1");
  if (!(inputs.n_decode > 0 && inputs.n_prefill > 0)) {
    return {inputs.b_prev, Rationale::kCarriedOver};
  }
  const auto fit = static_cast<std::int64_t>(
      std::floor(static_cast<double>(eta - l0) / inputs.moments.m));
  const std::int64_t b = std::min(std::max(fit, inputs.n_decode), b_max);
  return {b, Rationale::kMemoryBound};
}

std::pair<PolicyDecision, SlaSearchState> batching_sla(const SlaSearchState& state,
                                                       const PolicyInputs& inputs) {
  const std::int64_t b_bar = std::llround(inputs.b_bar);
  if (b_bar <= 0) return {{inputs.b_prev, Rationale::kCarriedOver}, state};

  SlaSearchState next = state;
  const double tau = inputs.tau_bar_ms;
  const std::int64_t half = state.alpha / 2;
  if (tau > state.d_sla_ms + state.epsilon_d_ms) {
    next.b_high = std::max(b_bar, state.b_low + state.alpha);
    next.b_low = std::max(state.b_low - state.delta, state.b_min);
  } else if (tau < state.d_sla_ms - state.epsilon_d_ms) {
    next.b_low = std::min(b_bar, state.b_high - state.alpha);
    next.b_high = std::min(state.b_high + state.delta, state.b_max);
  } else {
    next.b_high = std::min(b_bar + half, state.b_max);
    next.b_low = std::max(b_bar - half, state.b_min);
  }
  next.b_low = std::clamp(next.b_low, state.b_min, state.b_max);
  next.b_high = std::clamp(next.b_high, state.b_min, state.b_max);
  if (next.b_low > next.b_high) next.b_low = next.b_high;

  std::int64_t b = (next.b_low + next.b_high) / 2;
  b = std::min(std::max(b, inputs.n_decode), state.b_max);
  return {{b, Rationale::kSlaBound}, next};
}

PolicyDecision combined_decide(const PolicyDecision& mem, const PolicyDecision& sla) {
  if (mem.b_t < sla.b_t) return {mem.b_t, Rationale::kMemoryBound};
  if (sla.b_t < mem.b_t) return {sla.b_t, Rationale::kSlaBound};
  return {mem.b_t, Rationale::kCombinedMin};
}

}  // namespace dynbatch
