#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dynbatch/engine.hpp"
#include "dynbatch/metrics.hpp"

namespace dynbatch {

struct WorkloadConfig {
  std::int64_t requests = 1000;
  std::uint64_t seed = 0;
  ArrivalProcess arrival = ArrivalProcess::all_at_once();
  LengthDistribution prompt = LengthDistribution::fixed(128);
  LengthDistribution output = LengthDistribution::fixed(128);
  std::int64_t max_sequence = 0;  // 0: no joint cap
  std::optional<std::filesystem::path> trace;
};

struct CapacityConfig {
  std::vector<PolicyKind> policies;
  double lo = 0.0;
  double hi = 0.0;
  double tol = 0.1;
};

/// Parsed and validated experiment document. Relative paths are resolved
/// against the config file's directory.
struct ExperimentConfig {
  WorkloadConfig workload;
  LatencyModel latency{0.0, 1.0, 0.0, 1.0};
  MemoryConfig memory{1, 1, 0.5};
  PolicyConfig policy;
  // How policy.static_batch is chosen: taken as given, the largest batch
  // keeping worst-window overflow risk within epsilon_m, or the largest
  // batch whose modeled decode step meets D_SLA.
  enum class StaticBatch { kFixed, kConservative, kSlaFeasible } static_batch_mode =
      StaticBatch::kFixed;
  bool prior_given = false;
  EngineConfig engine;
  SlaTarget sla;
  std::optional<CapacityConfig> capacity;
  std::optional<std::filesystem::path> summary_out;
  std::optional<std::filesystem::path> steps_out;
};

ExperimentConfig parse_config(const nlohmann::json& doc,
                              const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);

PolicyKind parse_policy_kind(const std::string& name);
std::string to_string(PolicyKind kind);

std::vector<RequestSpec> build_workload(const ExperimentConfig& config);

/// Resolves config-derived policy inputs against a concrete workload: the
/// prior moments (unless given) and a conservative static batch (when
/// requested). Policies never see per-request output lengths.
PolicyConfig resolve_policy(const ExperimentConfig& config,
                            const std::vector<RequestSpec>& workload);

nlohmann::json summary_json(const Summary& summary);

struct ExperimentOutcome {
  SimResult result;
  Summary summary;
  PolicyConfig policy;
};

ExperimentOutcome run_experiment(const ExperimentConfig& config);

enum class SweepAxis { kBatchSize, kQps, kDSla };
SweepAxis parse_axis(const std::string& name);

struct SweepTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

/// One simulation per value; rows follow input order.
SweepTable sweep(const ExperimentConfig& config, SweepAxis axis,
                 const std::vector<double>& values, bool parallel = true);

void write_sweep_csv(std::ostream& out, const SweepTable& table);
SweepTable read_sweep_csv(std::istream& in);

struct CapacityReportRow {
  PolicyKind policy;
  std::int64_t static_batch = 0;
  CapacityResult result;
};

/// Capacity of each listed policy (defaults to the configured one).
std::vector<CapacityReportRow> capacity_report(const ExperimentConfig& config, double lo,
                                               double hi, double tol);

CapacityExperiment capacity_experiment(const ExperimentConfig& config, PolicyKind kind);

}  // namespace dynbatch
