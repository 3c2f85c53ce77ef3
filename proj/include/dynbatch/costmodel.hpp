#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace dynbatch {

/// Affine decode-step and prefill cost models, in milliseconds:
///   step(b)      = decode_base_ms + decode_per_seq_ms * b
///   prefill(T)   = prefill_base_ms + prefill_per_token_ms * T
/// Immutable once constructed; the constructor enforces positivity of both
/// slopes and of step(1).
class LatencyModel {
 public:
  LatencyModel(double decode_base_ms, double decode_per_seq_ms,
               double prefill_base_ms, double prefill_per_token_ms);

  double decode_base_ms() const { return decode_base_ms_; }
  double decode_per_seq_ms() const { return decode_per_seq_ms_; }
  double prefill_base_ms() const { return prefill_base_ms_; }
  double prefill_per_token_ms() const { return prefill_per_token_ms_; }

 private:
  double decode_base_ms_;
  double decode_per_seq_ms_;
  double prefill_base_ms_;
  double prefill_per_token_ms_;
};

struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
};

struct LatencySample {
  std::int64_t batch_size = 0;
  double latency_ms = 0.0;
};

double step_latency(const LatencyModel& model, std::int64_t b);
double prefill_latency(const LatencyModel& model, std::int64_t tokens);

/// Ordinary least squares through (batch size, latency) samples.
LinearFit fit_linear(std::span<const LatencySample> samples);

/// Steady-state token throughput b / step(b) in tokens per second.
double steady_throughput(const LatencyModel& model, std::int64_t b);

/// Largest b >= 0 whose decode step fits within `d_sla_ms`.
std::int64_t sla_batch_from_model(const LatencyModel& model, double d_sla_ms);

/// Reads `batch_size,step_latency_ms` CSV.
std::vector<LatencySample> load_calibration(const std::filesystem::path& path);

}  // namespace dynbatch
