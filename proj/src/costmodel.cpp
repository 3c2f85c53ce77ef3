#include "dynbatch/costmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dynbatch/errors.hpp"

namespace dynbatch {

namespace {

// Latency comparisons absorb representation error from fitted coefficients,
// e.g. 26.923... + 0.2307... * 100 evaluating a hair above 50.
bool within(double latency_ms, double limit_ms) {
  return latency_ms <= limit_ms + 1e-9 * std::max(1.0, std::abs(limit_ms));
}

}  // namespace

LatencyModel::LatencyModel(double decode_base_ms, double decode_per_seq_ms,
                           double prefill_base_ms, double prefill_per_token_ms)
    : decode_base_ms_(decode_base_ms),
      decode_per_seq_ms_(decode_per_seq_ms),
      prefill_base_ms_(prefill_base_ms),
      prefill_per_token_ms_(prefill_per_token_ms) {
  for (double x : {decode_base_ms, decode_per_seq_ms, prefill_base_ms,
                   prefill_per_token_ms}) {
    if (!std::isfinite(x)) throw ConfigError("latency coefficients must be finite");
  }
  if (decode_base_ms < 0.0) throw ConfigError("decode_base_ms must be >= 0");
  if (!(decode_per_seq_ms > 0.0)) throw ConfigError("decode_per_seq_ms must be > 0");
  if (prefill_base_ms < 0.0) throw ConfigError("prefill_base_ms must be >= 0");
  if (!(prefill_per_token_ms > 0.0)) {
    throw ConfigError("prefill_per_token_ms must be > 0");
  }
}

double step_latency(const LatencyModel& model, std::int64_t b) {
  if (b < 1) throw ConfigError("step_latency: batch size must be >= 1");
  return model.decode_base_ms() + model.decode_per_seq_ms() * static_cast<double>(b);
}

double prefill_latency(const LatencyModel& model, std::int64_t tokens) {
  if (tokens < 1) throw ConfigError("prefill_latency: tokens must be >= 1");
  return model.prefill_base_ms() +
         model.prefill_per_token_ms() * static_cast<double>(tokens);
}

LinearFit fit_linear(std::span<const LatencySample> samples) {
  if (samples.size() < 2) throw ConfigError("fit_linear: need at least 2 samples");
  const double n = static_cast<double>(samples.size());
  double mean_x = 0.0, mean_y = 0.0;
  for (const auto& s : samples) {
    mean_x += static_cast<double>(s.batch_size);
    mean_y += s.latency_ms;
  }
  mean_x /= n;
  mean_y /= n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& s : samples) {
    const double dx = static_cast<double>(s.batch_size) - mean_x;
    sxx += dx * dx;
    sxy += dx * (s.latency_ms - mean_y);
  }
  if (sxx == 0.0) throw ConfigError("fit_linear: all batch sizes are equal");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = mean_y - fit.slope * mean_x;
  if (!(fit.slope > 0.0)) {
    throw ConfigError("fit_linear: fitted slope is not positive");
  }
  return fit;
}

double steady_throughput(const LatencyModel& model, std::int64_t b) {
  return 1000.0 * static_cast<double>(b) / step_latency(model, b);
}

std::int64_t sla_batch_from_model(const LatencyModel& model, double d_sla_ms) {
  if (!(d_sla_ms > 0.0)) throw ConfigError("sla_batch_from_model: D_SLA must be > 0");
  const double raw =
      (d_sla_ms - model.decode_base_ms()) / model.decode_per_seq_ms();
  if (raw > static_cast<double>(std::numeric_limits<std::int32_t>::max())) {
    throw ConfigError("sla_batch_from_model: batch size out of range");
  }
  auto b = static_cast<std::int64_t>(std::max(0.0, std::floor(raw)));
  while (b >= 1 && !within(step_latency(model, b), d_sla_ms)) --b;
  while (within(step_latency(model, b + 1), d_sla_ms)) ++b;
  return b;
}

std::vector<LatencySample> load_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open calibration file: " + path.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError(path.string() + ":1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "batch_size,step_latency_ms") {
    throw ParseError(path.string() +
                     ":1: expected header 'batch_size,step_latency_ms'");
  }
  std::vector<LatencySample> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream row(line);
    LatencySample s;
    char comma = 0;
    std::string rest;
    if (!(row >> s.batch_size >> comma >> s.latency_ms) || comma != ',' ||
        (row >> rest) || s.batch_size < 1 || !std::isfinite(s.latency_ms)) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": malformed calibration row");
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace dynbatch
