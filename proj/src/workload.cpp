#include "dynbatch/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>

#include "dynbatch/errors.hpp"

namespace dynbatch {

ArrivalProcess ArrivalProcess::all_at_once() { return ArrivalProcess{}; }

ArrivalProcess ArrivalProcess::poisson(double rate_qps) {
  if (!(rate_qps > 0.0) || !std::isfinite(rate_qps)) {
    throw ConfigError("poisson arrival rate must be positive");
  }
  ArrivalProcess p;
  p.kind_ = Kind::kPoisson;
  p.segments_ = {{0.0, rate_qps}};
  return p;
}

ArrivalProcess ArrivalProcess::piecewise_poisson(
    std::vector<ArrivalSegment> segments) {
  if (segments.empty()) {
    throw ConfigError("piecewise-poisson needs at least one segment");
  }
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (!(segments[i].rate_qps > 0.0)) {
      throw ConfigError("piecewise-poisson rates must be positive");
    }
    if (segments[i].start_ms < 0.0 ||
        (i > 0 && !(segments[i].start_ms > segments[i - 1].start_ms))) {
      throw ConfigError(
          "piecewise-poisson segment starts must be nonnegative and strictly "
          "increasing");
    }
  }
  ArrivalProcess p;
  p.kind_ = Kind::kPiecewisePoisson;
  p.segments_ = std::move(segments);
  return p;
}

ArrivalProcess ArrivalProcess::trace(std::vector<double> arrivals_ms) {
  for (double a : arrivals_ms) {
    if (!(a >= 0.0)) throw ConfigError("trace arrivals must be nonnegative");
  }
  std::sort(arrivals_ms.begin(), arrivals_ms.end());
  ArrivalProcess p;
  p.kind_ = Kind::kTrace;
  p.trace_ = std::move(arrivals_ms);
  return p;
}

LengthDistribution LengthDistribution::fixed(std::int64_t value) {
  if (value < 1) throw ConfigError("fixed length must be >= 1");
  LengthDistribution d;
  d.kind_ = Kind::kFixed;
  d.fixed_ = value;
  d.max_value_ = value;
  return d;
}

LengthDistribution LengthDistribution::lognormal(double log_mean,
                                                 double log_std,
                                                 std::int64_t max_value) {
  if (!std::isfinite(log_mean) || !(log_std >= 0.0) || !std::isfinite(log_std)) {
    throw ConfigError("lognormal parameters must be finite with log_std >= 0");
  }
  if (max_value < 1) throw ConfigError("lognormal max must be >= 1");
  LengthDistribution d;
  d.kind_ = Kind::kLognormal;
  d.log_mean_ = log_mean;
  d.log_std_ = log_std;
  d.max_value_ = max_value;
  return d;
}

LengthDistribution LengthDistribution::lognormal_with_mean(
    double mean, double log_std, std::int64_t max_value) {
  if (!(mean >= 1.0)) throw ConfigError("lognormal mean must be >= 1");
  return lognormal(std::log(mean) - 0.5 * log_std * log_std, log_std,
                   max_value);
}

LengthDistribution LengthDistribution::empirical(
    std::vector<std::int64_t> values) {
  if (values.empty()) throw ConfigError("empirical length list is empty");
  for (auto x : values) {
    if (x < 1) throw ConfigError("empirical lengths must be >= 1");
  }
  LengthDistribution d;
  d.kind_ = Kind::kEmpirical;
  d.max_value_ = *std::max_element(values.begin(), values.end());
  d.values_ = std::move(values);
  return d;
}

std::int64_t LengthDistribution::sample(std::mt19937_64& rng) const {
  switch (kind_) {
    case Kind::kFixed:
      return fixed_;
    case Kind::kLognormal: {
      std::lognormal_distribution<double> dist(log_mean_, log_std_);
      const double x = std::round(dist(rng));
      if (!(x >= 1.0)) return 1;
      if (x >= static_cast<double>(max_value_)) return max_value_;
      return static_cast<std::int64_t>(x);
    }
    case Kind::kEmpirical: {
      std::uniform_int_distribution<std::size_t> pick(0, values_.size() - 1);
      return values_[pick(rng)];
    }
  }
  return 1;
}

std::vector<LengthPair> sample_lengths(const LengthDistribution& dist_in,
                                       const LengthDistribution& dist_out,
                                       std::int64_t n, std::uint64_t seed,
                                       std::int64_t max_sequence) {
  if (n < 1) throw ConfigError("sample_lengths: n must be >= 1");
  if (max_sequence != 0 && max_sequence < 2) {
    throw ConfigError("max sequence length must be >= 2");
  }
  std::mt19937_64 rng(seed);
  std::vector<LengthPair> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t l_in = dist_in.sample(rng);
    std::int64_t l_out = dist_out.sample(rng);
    if (max_sequence > 0) {
      l_in = std::min(l_in, max_sequence - 1);
      l_out = std::min(l_out, max_sequence - l_in);
    }
    out.emplace_back(l_in, l_out);
  }
  return out;
}

namespace {

// Maps unit-rate operational time onto wall-clock time for a piecewise
// constant intensity (time-rescaling of a unit Poisson process).
class PiecewiseClock {
 public:
  explicit PiecewiseClock(const std::vector<ArrivalSegment>& segments)
      : segments_(segments) {}

  double advance(double unit_gap) {
    double remaining = unit_gap;
    while (true) {
      const double rate_per_ms = segments_[seg_].rate_qps / 1000.0;
      const bool last = seg_ + 1 == segments_.size();
      const double seg_end =
          last ? INFINITY : segments_[seg_ + 1].start_ms;
      const double capacity = (seg_end - now_) * rate_per_ms;
      if (last || remaining < capacity) {
        now_ += remaining / rate_per_ms;
        return now_;
      }
      remaining -= capacity;
      now_ = seg_end;
      ++seg_;
    }
  }

 private:
  const std::vector<ArrivalSegment>& segments_;
  std::size_t seg_ = 0;
  double now_ = segments_.front().start_ms;
};

}  // namespace

std::vector<double> generate_arrivals(const ArrivalProcess& proc,
                                      std::int64_t count, std::uint64_t seed) {
  if (count < 1) throw ConfigError("generate_arrivals: count must be >= 1");
  const auto n = static_cast<std::size_t>(count);
  std::vector<double> out;
  out.reserve(n);
  switch (proc.kind()) {
    case ArrivalProcess::Kind::kAllAtOnce:
      out.assign(n, 0.0);
      break;
    case ArrivalProcess::Kind::kPoisson:
    case ArrivalProcess::Kind::kPiecewisePoisson: {
      // Unit exponentials are drawn first and then rescaled, so probes at
      // different rates with the same seed share random numbers.
      std::mt19937_64 rng(seed);
      std::exponential_distribution<double> unit(1.0);
      PiecewiseClock clock(proc.segments());
      for (std::size_t i = 0; i < n; ++i) out.push_back(clock.advance(unit(rng)));
      break;
    }
    case ArrivalProcess::Kind::kTrace: {
      const auto& t = proc.trace_arrivals();
      if (t.size() < n) {
        throw ConfigError("trace has fewer arrivals than requested count");
      }
      out.assign(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(n));
      break;
    }
  }
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

template <typename T>
bool parse_field(std::string_view text, T& out) {
  text = trim(text);
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc{} && ptr == text.data() + text.size();
}

}  // namespace

std::vector<RequestSpec> load_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open trace file: " + path.string());

  const auto fail = [&](std::size_t line, const std::string& what) {
    throw ParseError(path.string() + ":" + std::to_string(line) + ": " + what);
  };

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) fail(1, "missing header");
  ++line_no;
  if (trim(line) != "arrival_ms,l_in,l_out") {
    fail(line_no, "expected header 'arrival_ms,l_in,l_out'");
  }

  std::vector<RequestSpec> out;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view row = trim(line);
    if (row.empty()) continue;
    const auto c1 = row.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : row.find(',', c1 + 1);
    if (c2 == std::string_view::npos || row.find(',', c2 + 1) != std::string_view::npos) {
      fail(line_no, "expected 3 fields");
    }
    RequestSpec r;
    r.id = static_cast<std::int64_t>(out.size());
    if (!parse_field(row.substr(0, c1), r.arrival_ms) || !std::isfinite(r.arrival_ms) ||
        r.arrival_ms < 0.0) {
      fail(line_no, "arrival_ms must be a nonnegative number");
    }
    if (!parse_field(row.substr(c1 + 1, c2 - c1 - 1), r.l_in) || r.l_in < 1) {
      fail(line_no, "l_in must be an integer >= 1");
    }
    if (!parse_field(row.substr(c2 + 1), r.l_out) || r.l_out < 1) {
      fail(line_no, "l_out must be an integer >= 1");
    }
    out.push_back(r);
  }
  if (out.empty()) fail(line_no, "trace has no requests");
  std::stable_sort(out.begin(), out.end(),
                   [](const RequestSpec& a, const RequestSpec& b) {
                     return a.arrival_ms < b.arrival_ms;
                   });
  return out;
}

void write_trace(const std::filesystem::path& path,
                 std::span<const RequestSpec> requests) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write trace file: " + path.string());
  out << "arrival_ms,l_in,l_out\n" << std::setprecision(17);
  for (const auto& r : requests) {
    out << r.arrival_ms << ',' << r.l_in << ',' << r.l_out << '\n';
  }
}

LengthMoments estimate_moments(std::span<const LengthPair> window) {
  if (window.empty()) {
    throw ConfigError("estimate_moments: empty window");
  }
  const double n = static_cast<double>(window.size());
  double mean_in = 0.0, mean_out = 0.0;
  for (const auto& [a, b] : window) {
    mean_in += static_cast<double>(a);
    mean_out += static_cast<double>(b);
  }
  mean_in /= n;
  mean_out /= n;
  double var_in = 0.0, var_out = 0.0;
  for (const auto& [a, b] : window) {
    var_in += (static_cast<double>(a) - mean_in) * (static_cast<double>(a) - mean_in);
    var_out += (static_cast<double>(b) - mean_out) * (static_cast<double>(b) - mean_out);
  }
  return {mean_in + mean_out, (var_in + var_out) / n};
}

std::vector<RequestSpec> make_requests(std::span<const double> arrivals,
                                       std::span<const LengthPair> lengths) {
  if (arrivals.size() != lengths.size()) {
    throw ConfigError("make_requests: arrivals and lengths differ in size");
  }
  std::vector<RequestSpec> out(arrivals.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = {static_cast<std::int64_t>(i), arrivals[i], lengths[i].first,
              lengths[i].second};
  }
  return out;
}

LengthMoments worst_window_moments(std::span<const RequestSpec> requests,
                                   std::size_t window) {
  if (requests.empty() || window == 0) {
    throw ConfigError("worst_window_moments: empty input");
  }
  MomentWindow w(window);
  LengthMoments worst{0.0, 0.0};
  for (std::size_t i = 0; i < requests.size(); ++i) {
    w.push(requests[i].l_in, requests[i].l_out);
    if (w.size() == window || i + 1 == requests.size()) {
      const auto mo = w.moments();
      worst.m = std::max(worst.m, mo.m);
      worst.v = std::max(worst.v, mo.v);
    }
  }
  return worst;
}

MomentWindow::MomentWindow(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("moment window capacity must be >= 1");
}

void MomentWindow::push(std::int64_t l_in, std::int64_t l_out) {
  pairs_.emplace_back(l_in, l_out);
  const auto a = static_cast<double>(l_in), b = static_cast<double>(l_out);
  sum_in_ += a;
  sum_out_ += b;
  sumsq_in_ += a * a;
  sumsq_out_ += b * b;
  if (pairs_.size() > capacity_) {
    const auto [x, y] = pairs_.front();
    pairs_.pop_front();
    const auto fx = static_cast<double>(x), fy = static_cast<double>(y);
    sum_in_ -= fx;
    sum_out_ -= fy;
    sumsq_in_ -= fx * fx;
    sumsq_out_ -= fy * fy;
  }
}

LengthMoments MomentWindow::moments() const {
  if (pairs_.empty()) throw ConfigError("moment window is empty");
  // Integer sums stay exact in double well past any realistic window.
  const double n = static_cast<double>(pairs_.size());
  const double var_in = std::max(0.0, (sumsq_in_ - sum_in_ * sum_in_ / n) / n);
  const double var_out = std::max(0.0, (sumsq_out_ - sum_out_ * sum_out_ / n) / n);
  return {(sum_in_ + sum_out_) / n, var_in + var_out};
}

}  // namespace dynbatch
