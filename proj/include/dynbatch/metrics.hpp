#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dynbatch/engine.hpp"

namespace dynbatch {

struct Summary {
  double throughput_tps = 0.0;
  double tbt_mean_ms = 0.0;
  double tbt_p95_ms = 0.0;
  double tbt_p99_ms = 0.0;
  double mean_batch_occupancy = 0.0;       // mean of n_decode / b_target
  double mean_token_occupancy_frac = 0.0;  // mean of occupancy / eta
  double overflow_rate = 0.0;              // fraction of steps that preempted
  double sched_delay_p99_ms = 0.0;         // first admission minus arrival
  double mean_step_ms = 0.0;
  double mean_b_target = 0.0;
  double mean_n_decode = 0.0;
  double span_ms = 0.0;
  std::int64_t generated_tokens = 0;
  std::int64_t steps = 0;
  std::int64_t requests = 0;
  std::int64_t preemptions = 0;
};

/// Nearest-rank percentile (p in (0, 100]) of an unsorted sample.
double nearest_rank(std::span<const double> samples, double p);

Summary summarize(const SimResult& result);

enum class LatencyStatistic { kMean, kP95, kP99 };

LatencyStatistic parse_statistic(std::string_view name);
std::string_view to_string(LatencyStatistic s);

bool sla_compliant(const Summary& summary, double d_sla_ms, double epsilon_d_ms,
                   LatencyStatistic statistic);

struct SlaTarget {
  double d_sla_ms = 50.0;
  double epsilon_d_ms = 2.0;
  LatencyStatistic statistic = LatencyStatistic::kP99;
  // Upper bound on p99 scheduling delay; 0 disables the check.
  double max_sched_delay_ms = 0.0;
};

/// A complete experiment except for the arrival rate. Request lengths and
/// the arrival seed are fixed so that every probe sees the same random
/// numbers, rescaled in time by the probed rate.
struct CapacityExperiment {
  std::vector<LengthPair> lengths;
  std::uint64_t arrival_seed = 0;
  PolicyConfig policy;
  LatencyModel latency{0.0, 1.0, 0.0, 1.0};
  MemoryConfig memory{1, 1, 0.5};
  EngineConfig engine;
  SlaTarget sla;
};

struct ProbeOutcome {
  double qps = 0.0;
  bool compliant = false;
  std::string reason;  // why a probe failed
  std::optional<Summary> summary;
};

struct CapacityResult {
  double capacity_qps = 0.0;
  std::vector<ProbeOutcome> probes;
};

ProbeOutcome probe_capacity(const CapacityExperiment& experiment, double qps);

/// Bisection on the arrival rate, assuming compliance is monotone in it.
/// Returns the largest compliant rate found once the bracket is narrower
/// than tol_qps. A compliant qps_hi is doubled until it fails.
CapacityResult capacity_search(const CapacityExperiment& experiment, double qps_lo,
                               double qps_hi, double tol_qps);

}  // namespace dynbatch
