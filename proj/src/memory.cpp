#include "dynbatch/memory.hpp"

#include <cmath>
#include <numbers>

#include "dynbatch/errors.hpp"

namespace dynbatch {

MemoryConfig::MemoryConfig(std::int64_t m_max_bytes,
                           std::int64_t bytes_per_token, double epsilon_m)
    : m_max_bytes_(m_max_bytes),
      bytes_per_token_(bytes_per_token),
      eta_(bytes_per_token > 0 ? m_max_bytes / bytes_per_token : 0),
      epsilon_m_(epsilon_m) {
  if (m_max_bytes < 1) throw ConfigError("m_max_bytes must be >= 1");
  if (bytes_per_token < 1) throw ConfigError("bytes_per_token must be >= 1");
  if (eta_ < 1) throw ConfigError("memory budget holds fewer than one token");
  if (!(epsilon_m > 0.0 && epsilon_m < 1.0)) {
    throw ConfigError("epsilon_m must lie in (0, 1)");
  }
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double theta_quantile(double epsilon_m) {
  if (!(epsilon_m > 0.0 && epsilon_m < 1.0)) {
    throw ConfigError("theta_quantile: epsilon_m must lie in (0, 1)");
  }
  const double p = 1.0 - epsilon_m;
  if (p == 0.5) return 0.0;

  // Acklam's rational approximation (relative error ~1e-9) ...
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // ... polished by one Halley step against the erfc-based CDF. The upper
  // tail is written via epsilon_m directly to keep precision when p ~ 1.
  const double err = x > 0.0 ? epsilon_m - normal_cdf(-x) : normal_cdf(x) - p;
  const double u = err * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

double overflow_probability(const LengthMoments& moments, std::int64_t b,
                            std::int64_t eta) {
  if (b < 1) throw ConfigError("overflow_probability: b must be >= 1");
  if (moments.v < 0.0) throw ConfigError("overflow_probability: v must be >= 0");
  const double mean = static_cast<double>(b) * moments.m;
  const double cap = static_cast<double>(eta);
  if (moments.v == 0.0) return mean > cap ? 1.0 : 0.0;
  const double z = (cap - mean) / std::sqrt(static_cast<double>(b) * moments.v);
  return normal_cdf(-z);
}

namespace {

void check_bound_args(const LengthMoments& moments, std::int64_t eta,
                      double epsilon_m) {
  if (!(moments.m > 0.0) || !std::isfinite(moments.m)) {
    throw ConfigError("length moments: m must be positive");
  }
  if (!(moments.v >= 0.0) || !std::isfinite(moments.v)) {
    throw ConfigError("length moments: v must be nonnegative");
  }
  if (eta < 1) throw ConfigError("eta must be >= 1");
  if (!(epsilon_m > 0.0 && epsilon_m < 1.0)) {
    throw ConfigError("epsilon_m must lie in (0, 1)");
  }
}

}  // namespace

std::optional<std::int64_t> batch_bound_quadratic(const LengthMoments& moments,
                                                  std::int64_t eta,
                                                  double epsilon_m) {
  check_bound_args(moments, eta, epsilon_m);
  const auto ok = [&](std::int64_t b) {
    return overflow_probability(moments, b, eta) <= epsilon_m;
  };

  // With x = sqrt(b) the constraint is m x^2 + theta sqrt(v) x - eta <= 0.
  // The roots have product -eta/m < 0, so the positive root bounds x for
  // either sign of theta.
  const double theta = theta_quantile(epsilon_m);
  const double ts = theta * std::sqrt(moments.v);
  const double eta_d = static_cast<double>(eta);
  const double x = (std::sqrt(ts * ts + 4.0 * moments.m * eta_d) - ts) / (2.0 * moments.m);
  auto b = static_cast<std::int64_t>(std::floor(x * x));

  // The closed form lands within a step or two of the answer; settle it
  // against the exact predicate, which is monotone in b.
  b = std::max<std::int64_t>(b, 1);
  while (b >= 1 && !ok(b)) --b;
  if (b == 0) return std::nullopt;
  while (ok(b + 1)) ++b;
  return b;
}

std::int64_t safety_buffer(const LengthMoments& moments, std::int64_t eta,
                           double epsilon_m) {
  const auto b_star = batch_bound_quadratic(moments, eta, epsilon_m);
  if (!b_star) return eta;
  const double headroom = static_cast<double>(eta) - static_cast<double>(*b_star) * moments.m;
  return std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(headroom)));
}

std::int64_t residual_slack(const LengthMoments& moments, std::int64_t eta,
                            double epsilon_m) {
  const auto b_star = batch_bound_quadratic(moments, eta, epsilon_m);
  if (!b_star) return 0;
  const double b = static_cast<double>(*b_star);
  const double reserved =
      theta_quantile(epsilon_m) * std::sqrt(b * moments.v) + b * moments.m;
  return std::max<std::int64_t>(0, std::llround(static_cast<double>(eta) - reserved));
}

std::optional<std::int64_t> batch_bound_linear(const LengthMoments& moments,
                                               std::int64_t eta,
                                               std::int64_t l0) {
  if (!(moments.m > 0.0)) throw ConfigError("batch_bound_linear: m must be positive");
  if (l0 < 0 || l0 >= eta) {
    throw ConfigError("batch_bound_linear: safety buffer must lie in [0, eta)");
  }
  const double b = std::floor(static_cast<double>(eta - l0) / moments.m);
  if (b < 1.0) return std::nullopt;
  return static_cast<std::int64_t>(b);
}

}  // namespace dynbatch
