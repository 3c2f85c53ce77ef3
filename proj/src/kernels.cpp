#include "dynbatch/kernels.hpp"

#include <cmath>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dynbatch/errors.hpp"

namespace dynbatch {

namespace {

void check_args(const LengthMoments& moments, std::int64_t batch, std::int64_t trials) {
  if (batch < 1) throw ConfigError("overflow_count: batch must be >= 1");
  if (trials < 1) throw ConfigError("overflow_count: trials must be >= 1");
  if (!(moments.v >= 0.0)) throw ConfigError("overflow_count: v must be >= 0");
}

bool trial_overflows(const LengthMoments& moments, std::int64_t batch, double eta,
                     std::uint64_t seed, std::int64_t trial) {
  SplitMix64 mixer(seed ^ (0xd1b54a32d192ed03ULL * static_cast<std::uint64_t>(trial + 1)));
  SplitMix64 rng(mixer());
  std::normal_distribution<double> footprint(moments.m, std::sqrt(moments.v));
  double total = 0.0;
  for (std::int64_t i = 0; i < batch; ++i) total += footprint(rng);
  return total > eta;
}

}  // namespace

std::int64_t overflow_count_serial(const LengthMoments& moments, std::int64_t batch,
                                   std::int64_t eta, std::int64_t trials,
                                   std::uint64_t seed) {
  check_args(moments, batch, trials);
  const double cap = static_cast<double>(eta);
  std::int64_t hits = 0;
  for (std::int64_t t = 0; t < trials; ++t) {
    hits += trial_overflows(moments, batch, cap, seed, t) ? 1 : 0;
  }
  return hits;
}

std::int64_t overflow_count_parallel(const LengthMoments& moments, std::int64_t batch,
                                     std::int64_t eta, std::int64_t trials,
                                     std::uint64_t seed) {
  check_args(moments, batch, trials);
  const double cap = static_cast<double>(eta);
  std::int64_t hits = 0;
#pragma omp parallel for reduction(+ : hits) schedule(static)
  for (std::int64_t t = 0; t < trials; ++t) {
    hits += trial_overflows(moments, batch, cap, seed, t) ? 1 : 0;
  }
  return hits;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace dynbatch
