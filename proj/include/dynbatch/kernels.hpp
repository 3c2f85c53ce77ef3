#pragma once

// Data-parallel kernels. Each has a serial reference that produces
// bit-identical results; tests compare the two and bench/ times them.

#include <cstdint>
#include <exception>
#include <optional>
#include <vector>

#include "dynbatch/workload.hpp"

namespace dynbatch {

/// SplitMix64 as a UniformRandomBitGenerator. Cheap to seed, so every
/// Monte-Carlo trial owns an independent stream keyed by its index.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// Number of trials (out of `trials`) in which the sum of `batch` iid
/// normal(m, v) footprints exceeds eta.
std::int64_t overflow_count_serial(const LengthMoments& moments, std::int64_t batch,
                                   std::int64_t eta, std::int64_t trials,
                                   std::uint64_t seed);
std::int64_t overflow_count_parallel(const LengthMoments& moments, std::int64_t batch,
                                     std::int64_t eta, std::int64_t trials,
                                     std::uint64_t seed);

int max_threads();

/// f(i) for i in [0, n), results in index order.
template <typename F>
auto serial_map(std::size_t n, F&& f) -> std::vector<decltype(f(std::size_t{}))> {
  std::vector<decltype(f(std::size_t{}))> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(f(i));
  return out;
}

/// Same contract as serial_map with iterations spread over OpenMP threads.
/// The first exception (by index) is rethrown after the loop.
template <typename F>
auto parallel_map(std::size_t n, F&& f) -> std::vector<decltype(f(std::size_t{}))> {
  using R = decltype(f(std::size_t{}));
  std::vector<std::optional<R>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t i = 0; i < count; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      slots[idx].emplace(f(idx));
    } catch (...) {
      errors[idx] = std::current_exception();
    }
  }
  std::vector<R> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    out.push_back(std::move(*slots[i]));
  }
  return out;
}

}  // namespace dynbatch
