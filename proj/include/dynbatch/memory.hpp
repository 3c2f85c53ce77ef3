#pragma once

#include <cstdint>
#include <optional>

#include "dynbatch/workload.hpp"

namespace dynbatch {

/// KV-cache budget expressed in tokens. `eta` is the number of tokens the
/// budget holds; `epsilon_m` bounds the probability of exceeding it.
class MemoryConfig {
 public:
  MemoryConfig(std::int64_t m_max_bytes, std::int64_t bytes_per_token,
               double epsilon_m);

  std::int64_t m_max_bytes() const { return m_max_bytes_; }
  std::int64_t bytes_per_token() const { return bytes_per_token_; }
  std::int64_t eta() const { return eta_; }
  double epsilon_m() const { return epsilon_m_; }

 private:
  std::int64_t m_max_bytes_;
  std::int64_t bytes_per_token_;
  std::int64_t eta_;
  double epsilon_m_;
};

double normal_cdf(double x);

/// Standard-normal quantile at 1 - epsilon_m.
double theta_quantile(double epsilon_m);

/// Normal approximation of P(sum of b footprints > eta). With v == 0 the
/// footprint is deterministic and the result is the indicator b*m > eta.
double overflow_probability(const LengthMoments& moments, std::int64_t b,
                            std::int64_t eta);

/// Largest b with eta - b*m >= theta * sqrt(b*v), i.e. the largest batch
/// whose overflow probability stays within epsilon_m. nullopt when even a
/// single request violates the constraint.
std::optional<std::int64_t> batch_bound_quadratic(const LengthMoments& moments,
                                                  std::int64_t eta,
                                                  double epsilon_m);

/// Token headroom left after reserving the mean footprint of the
/// chance-constrained batch: eta - b_star*m, where b_star is the quadratic
/// bound. Equal to eta when no batch is feasible.
std::int64_t safety_buffer(const LengthMoments& moments, std::int64_t eta,
                           double epsilon_m);

/// Unused capacity at the chance-constrained optimum once both the mean and
/// the theta-sigma margin are reserved: eta - (theta*sigma_S + mu_S) at
/// b_star, clamped at zero.
std::int64_t residual_slack(const LengthMoments& moments, std::int64_t eta,
                            double epsilon_m);

/// floor((eta - l0) / m); nullopt when fewer than one request fits.
std::optional<std::int64_t> batch_bound_linear(const LengthMoments& moments,
                                               std::int64_t eta,
                                               std::int64_t l0);

}  // namespace dynbatch
