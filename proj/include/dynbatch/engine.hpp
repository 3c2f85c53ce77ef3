#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dynbatch/costmodel.hpp"
#include "dynbatch/errors.hpp"
#include "dynbatch/memory.hpp"
#include "dynbatch/policy.hpp"
#include "dynbatch/workload.hpp"

namespace dynbatch {

/// Waiting queue exceeded EngineConfig::max_queue.
class QueueOverflowError : public SimulationError {
 public:
  using SimulationError::SimulationError;
};

enum class EngineMode { kPdSeparate, kPdFused };

struct EngineConfig {
  EngineMode mode = EngineMode::kPdSeparate;
  double swap_penalty_ms = 0.0;
  std::int64_t max_queue = 1'000'000;
};

enum class PolicyKind { kStatic, kMemory, kSla, kCombined };

struct PolicyConfig {
  PolicyKind kind = PolicyKind::kStatic;
  std::int64_t static_batch = 256;
  double d_sla_ms = 50.0;
  double epsilon_d_ms = 2.0;
  std::int64_t alpha = 8;
  std::int64_t delta = 2;
  std::int64_t b_min = 1;
  std::int64_t b_max = 256;
  std::size_t w_sla = 20;
  std::size_t w_len = 256;
  std::int64_t refresh_period = 100;
  // Length moments assumed until the first request completes.
  LengthMoments prior{2.0, 0.0};
};

/// Owns all policy state for one engine instance: the previous decisions,
/// the search interval of the latency controller and the safety buffer,
/// which is recomputed every `refresh_period` decisions.
class BatchController {
 public:
  BatchController(const PolicyConfig& config, const MemoryConfig& memory);

  /// `inputs.b_prev` is ignored; the controller tracks its own history.
  PolicyDecision decide(const PolicyInputs& inputs);

  std::int64_t safety_buffer_tokens() const { return l0_; }
  const SlaSearchState& sla_state() const { return sla_; }

 private:
  PolicyConfig config_;
  std::int64_t eta_;
  double epsilon_m_;
  std::int64_t l0_ = 0;
  std::int64_t decisions_ = 0;
  std::int64_t mem_prev_ = 1;
  std::int64_t sla_prev_ = 1;
  SlaSearchState sla_;
};

struct StepRecord {
  double t_ms = 0.0;
  std::int64_t b_target = 0;
  std::int64_t n_decode = 0;
  std::int64_t prefill_tokens = 0;
  double step_ms = 0.0;
  std::int64_t tokens_out = 0;
  std::int64_t occupancy = 0;
  bool overflow = false;
};

struct RequestRecord {
  std::int64_t id = 0;
  double arrival_ms = 0.0;
  double admit_ms = 0.0;  // first admission
  double finish_ms = 0.0;
  std::int64_t l_in = 0;
  std::int64_t l_out = 0;
  std::int64_t preemptions = 0;
  std::vector<double> tbt_samples;
};

struct SimResult {
  std::vector<StepRecord> steps;
  std::vector<RequestRecord> requests;  // in id order
  std::int64_t generated_tokens = 0;
  double start_ms = 0.0;
  double end_ms = 0.0;
  std::int64_t eta = 0;
};

/// Number of queue-head requests admitted FCFS. Each entry of
/// `queued_prefill_tokens` is a request's prefill size; admitting it needs
/// that many tokens plus one for its first decode. Admission stops at the
/// first request that does not fit (no bypass).
std::size_t admit(std::span<const std::int64_t> queued_prefill_tokens,
                  std::int64_t n_running, std::int64_t b_t,
                  std::int64_t headroom_tokens);

/// Number of requests to evict from the back (most recently admitted) of
/// `footprints` so that their sum is at most eta. Throws SimulationError if
/// the oldest request alone exceeds eta.
std::size_t preempt_on_overflow(std::span<const std::int64_t> footprints,
                                std::int64_t eta);

struct FusedPlan {
  std::int64_t chunk_tokens = 0;
  std::vector<std::int64_t> allocation;  // per prefill entry, FCFS
  double duration_ms = 0.0;
};

/// Composition of one fused iteration: every running decode plus a prompt
/// chunk of max(0, b_t - n_decode) tokens split FCFS over
/// `prefill_remaining`.
FusedPlan fused_step(std::int64_t n_decode,
                     std::span<const std::int64_t> prefill_remaining,
                     std::int64_t b_t, const LatencyModel& model);

SimResult run(std::span<const RequestSpec> workload, const PolicyConfig& policy,
              const LatencyModel& latency, const MemoryConfig& memory,
              const EngineConfig& engine);

void write_step_csv(const std::filesystem::path& path, const SimResult& result);
std::vector<StepRecord> load_step_csv(const std::filesystem::path& path);

}  // namespace dynbatch
