#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace dynbatch {

/// One inference request. `l_out` is ground truth known only to the engine;
/// batching policies see length statistics through LengthMoments.
struct RequestSpec {
  std::int64_t id = 0;
  double arrival_ms = 0.0;
  std::int64_t l_in = 1;
  std::int64_t l_out = 1;
};

struct ArrivalSegment {
  double start_ms = 0.0;
  double rate_qps = 0.0;
};

class ArrivalProcess {
 public:
  enum class Kind { kAllAtOnce, kPoisson, kPiecewisePoisson, kTrace };

  static ArrivalProcess all_at_once();
  static ArrivalProcess poisson(double rate_qps);
  static ArrivalProcess piecewise_poisson(std::vector<ArrivalSegment> segments);
  static ArrivalProcess trace(std::vector<double> arrivals_ms);

  Kind kind() const { return kind_; }
  const std::vector<ArrivalSegment>& segments() const { return segments_; }
  const std::vector<double>& trace_arrivals() const { return trace_; }

 private:
  Kind kind_ = Kind::kAllAtOnce;
  std::vector<ArrivalSegment> segments_;
  std::vector<double> trace_;
};

/// Integer-valued length distribution truncated to [1, max_value].
class LengthDistribution {
 public:
  enum class Kind { kFixed, kLognormal, kEmpirical };

  static LengthDistribution fixed(std::int64_t value);
  static LengthDistribution lognormal(double log_mean, double log_std,
                                      std::int64_t max_value);
  // Lognormal whose untruncated mean equals `mean`.
  static LengthDistribution lognormal_with_mean(double mean, double log_std,
                                                std::int64_t max_value);
  static LengthDistribution empirical(std::vector<std::int64_t> values);

  Kind kind() const { return kind_; }
  std::int64_t max_value() const { return max_value_; }
  double log_mean() const { return log_mean_; }
  double log_std() const { return log_std_; }
  const std::vector<std::int64_t>& values() const { return values_; }

  std::int64_t sample(std::mt19937_64& rng) const;

 private:
  Kind kind_ = Kind::kFixed;
  std::int64_t fixed_ = 1;
  double log_mean_ = 0.0;
  double log_std_ = 0.0;
  std::int64_t max_value_ = 1;
  std::vector<std::int64_t> values_;
};

/// Per-request moments of the total token footprint l_in + l_out.
struct LengthMoments {
  double m = 2.0;  // E[l_in] + E[l_out]
  double v = 0.0;  // Var(l_in) + Var(l_out)
};

using LengthPair = std::pair<std::int64_t, std::int64_t>;

/// Samples n (l_in, l_out) pairs. When `max_sequence` is positive, l_out is
/// clipped so that l_in + l_out <= max_sequence.
std::vector<LengthPair> sample_lengths(const LengthDistribution& dist_in,
                                       const LengthDistribution& dist_out,
                                       std::int64_t n, std::uint64_t seed,
                                       std::int64_t max_sequence = 0);

/// Nondecreasing arrival times in milliseconds.
std::vector<double> generate_arrivals(const ArrivalProcess& proc,
                                      std::int64_t count, std::uint64_t seed);

/// Reads `arrival_ms,l_in,l_out` CSV. Ids follow row order; the result is
/// sorted by arrival, ties kept in id order.
std::vector<RequestSpec> load_trace(const std::filesystem::path& path);

void write_trace(const std::filesystem::path& path,
                 std::span<const RequestSpec> requests);

/// Plug-in (population) moments of a nonempty window.
LengthMoments estimate_moments(std::span<const LengthPair> window);

/// Zips arrivals with sampled lengths into request specs (ids 0..n-1).
std::vector<RequestSpec> make_requests(std::span<const double> arrivals,
                                       std::span<const LengthPair> lengths);

/// Component-wise maximum of m and v over every sliding window of
/// `window` consecutive requests (whole list when shorter).
LengthMoments worst_window_moments(std::span<const RequestSpec> requests,
                                   std::size_t window);

/// Sliding window of the most recent `capacity` length pairs with O(1)
/// moment queries.
class MomentWindow {
 public:
  explicit MomentWindow(std::size_t capacity);

  void push(std::int64_t l_in, std::int64_t l_out);
  bool empty() const { return pairs_.empty(); }
  std::size_t size() const { return pairs_.size(); }
  LengthMoments moments() const;

 private:
  std::size_t capacity_;
  std::deque<LengthPair> pairs_;
  double sum_in_ = 0.0, sum_out_ = 0.0;
  double sumsq_in_ = 0.0, sumsq_out_ = 0.0;
};

}  // namespace dynbatch
