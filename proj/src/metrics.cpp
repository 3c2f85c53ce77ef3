#include "dynbatch/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "dynbatch/errors.hpp"

namespace dynbatch {

double nearest_rank(std::span<const double> samples, double p) {
  if (samples.empty()) throw ConfigError("nearest_rank: empty sample");
  if (!(p > 0.0 && p <= 100.0)) throw ConfigError("nearest_rank: p must lie in (0, 100]");
  std::vector<double> sorted(samples.begin(), samples.end());
  const auto n = sorted.size();
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                   sorted.end());
  return sorted[rank - 1];
}

Summary summarize(const SimResult& result) {
  Summary s;
  s.span_ms = result.end_ms - result.start_ms;
  if (result.steps.empty() || !(s.span_ms > 0.0)) {
    throw ConfigError("summarize: result has zero span");
  }
  s.generated_tokens = result.generated_tokens;
  s.throughput_tps = static_cast<double>(result.generated_tokens) / (s.span_ms / 1000.0);
  s.steps = static_cast<std::int64_t>(result.steps.size());
  s.requests = static_cast<std::int64_t>(result.requests.size());

  std::vector<double> tbt;
  std::vector<double> delay;
  delay.reserve(result.requests.size());
  for (const auto& r : result.requests) {
    tbt.insert(tbt.end(), r.tbt_samples.begin(), r.tbt_samples.end());
    delay.push_back(r.admit_ms - r.arrival_ms);
    s.preemptions += r.preemptions;
  }
  if (!tbt.empty()) {
    double sum = 0.0;
    for (double x : tbt) sum += x;
    s.tbt_mean_ms = sum / static_cast<double>(tbt.size());
    s.tbt_p95_ms = nearest_rank(tbt, 95.0);
    s.tbt_p99_ms = nearest_rank(tbt, 99.0);
  }
  if (!delay.empty()) s.sched_delay_p99_ms = nearest_rank(delay, 99.0);

  const double n = static_cast<double>(result.steps.size());
  const double eta = static_cast<double>(std::max<std::int64_t>(result.eta, 1));
  std::int64_t overflow = 0;
  for (const auto& st : result.steps) {
    s.mean_batch_occupancy +=
        static_cast<double>(st.n_decode) / static_cast<double>(std::max<std::int64_t>(st.b_target, 1));
    s.mean_token_occupancy_frac += static_cast<double>(st.occupancy) / eta;
    s.mean_step_ms += st.step_ms;
    s.mean_b_target += static_cast<double>(st.b_target);
    s.mean_n_decode += static_cast<double>(st.n_decode);
    overflow += st.overflow ? 1 : 0;
  }
  s.mean_batch_occupancy /= n;
  s.mean_token_occupancy_frac /= n;
  s.mean_step_ms /= n;
  s.mean_b_target /= n;
  s.mean_n_decode /= n;
  s.overflow_rate = static_cast<double>(overflow) / n;
  return s;
}

LatencyStatistic parse_statistic(std::string_view name) {
  if (name == "mean") return LatencyStatistic::kMean;
  if (name == "p95") return LatencyStatistic::kP95;
  if (name == "p99") return LatencyStatistic::kP99;
  throw ConfigError("unknown latency statistic '" + std::string(name) + "'");
}

std::string_view to_string(LatencyStatistic s) {
  switch (s) {
    case LatencyStatistic::kMean: return "mean";
    case LatencyStatistic::kP95: return "p95";
    case LatencyStatistic::kP99: return "p99";
  }
  return "p99";
}

bool sla_compliant(const Summary& summary, double d_sla_ms, double epsilon_d_ms,
                   LatencyStatistic statistic) {
  double value = summary.tbt_p99_ms;
  if (statistic == LatencyStatistic::kMean) value = summary.tbt_mean_ms;
  if (statistic == LatencyStatistic::kP95) value = summary.tbt_p95_ms;
  return value <= d_sla_ms + epsilon_d_ms;
}

ProbeOutcome probe_capacity(const CapacityExperiment& experiment, double qps) {
  ProbeOutcome out;
  out.qps = qps;
  const auto n = static_cast<std::int64_t>(experiment.lengths.size());
  const auto arrivals =
      generate_arrivals(ArrivalProcess::poisson(qps), n, experiment.arrival_seed);
  const auto requests = make_requests(arrivals, experiment.lengths);
  try {
    const auto result = dynbatch::run(requests, experiment.policy, experiment.latency,
                                       experiment.memory, experiment.engine);
    out.summary = summarize(result);
  } catch (const QueueOverflowError& e) {
    out.reason = e.what();
    return out;
  }
  const auto& s = *out.summary;
  const auto& sla = experiment.sla;
  if (!sla_compliant(s, sla.d_sla_ms, sla.epsilon_d_ms, sla.statistic)) {
    out.reason = "tbt " + std::string(to_string(sla.statistic)) + " above SLA";
    return out;
  }
  if (sla.max_sched_delay_ms > 0.0 && s.sched_delay_p99_ms > sla.max_sched_delay_ms) {
    out.reason = "p99 scheduling delay above bound";
    return out;
  }
  out.compliant = true;
  return out;
}

CapacityResult capacity_search(const CapacityExperiment& experiment, double qps_lo,
                               double qps_hi, double tol_qps) {
  if (!(tol_qps > 0.0)) throw ConfigError("capacity_search: tol must be > 0");
  if (!(qps_lo > 0.0) || !(qps_hi > qps_lo)) {
    throw ConfigError("capacity_search: need 0 < qps_lo < qps_hi");
  }
  if (experiment.lengths.empty()) throw ConfigError("capacity_search: no requests");
  const auto& sla = experiment.sla;
  if (sla_batch_from_model(experiment.latency, sla.d_sla_ms + sla.epsilon_d_ms) == 0) {
    throw InfeasibleError("infeasible SLA: a single-request decode step exceeds D_SLA + eps_D");
  }

  CapacityResult result;
  auto probe = [&](double qps) {
    result.probes.push_back(probe_capacity(experiment, qps));
    return result.probes.back().compliant;
  };

  if (!probe(qps_lo)) {
    throw InfeasibleError("infeasible SLA: qps_lo=" + std::to_string(qps_lo) +
                          " is already non-compliant (" + result.probes.back().reason + ")");
  }
  double lo = qps_lo, hi = qps_hi;
  int expansions = 0;
  while (probe(hi)) {
    if (++expansions > 8) {
      throw ConfigError("capacity_search: still compliant at qps=" + std::to_string(hi));
    }
    lo = hi;
    hi *= 2.0;
  }
  while (hi - lo > tol_qps) {
    const double mid = 0.5 * (lo + hi);
    if (probe(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  result.capacity_qps = lo;
  return result;
}

}  // namespace dynbatch
