// dynbatch: run batching-policy experiments against the serving simulator.
//
// Exit codes:
//   0  success
//   1  internal error
//   2  invalid configuration or arguments
//   3  missing or unreadable file
//   4  malformed input file
//   5  infeasible SLA or memory constraint
//   6  simulation aborted (queue overflow, oversized request)

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dynbatch/errors.hpp"
#include "dynbatch/experiment.hpp"

namespace {

using namespace dynbatch;

enum Exit { kOk = 0, kInternal = 1, kConfig = 2, kFile = 3, kParse = 4, kInfeasible = 5, kAbort = 6 };

// "1,2,8" or "1..256" or "10..100:10", mixed freely.
std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  auto number = [](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw ConfigError("bad value '" + s + "'");
    return v;
  };
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      out.push_back(number(item));
      continue;
    }
    std::string rest = item.substr(dots + 2);
    double step = 1.0;
    if (const auto colon = rest.find(':'); colon != std::string::npos) {
      step = number(rest.substr(colon + 1));
      rest = rest.substr(0, colon);
    }
    const double lo = number(item.substr(0, dots));
    const double hi = number(rest);
    if (!(step > 0.0) || hi < lo) throw ConfigError("bad range '" + item + "'");
    for (int k = 0;; ++k) {
      const double v = lo + step * k;
      if (v > hi + 1e-9 * step) break;
      out.push_back(v);
    }
  }
  return out;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

int simulate(ExperimentConfig cfg, const std::string& steps_path) {
  const auto outcome = run_experiment(cfg);
  const auto& s = outcome.summary;
  nlohmann::json doc = summary_json(s);
  doc["policy"] = to_string(outcome.policy.kind);
  if (outcome.policy.kind == PolicyKind::kStatic) doc["static_batch"] = outcome.policy.static_batch;

  if (!steps_path.empty()) cfg.steps_out = steps_path;
  if (cfg.steps_out) write_step_csv(*cfg.steps_out, outcome.result);

  char line[256];
  std::snprintf(line, sizeof line,
                "%s: %lld requests, throughput %.1f tok/s, tbt p99 %.2f ms, overflow %.4f",
                to_string(outcome.policy.kind).c_str(), static_cast<long long>(s.requests),
                s.throughput_tps, s.tbt_p99_ms, s.overflow_rate);
  if (cfg.summary_out) {
    write_json(*cfg.summary_out, doc);
    std::cout << line << '\n';
  } else {
    std::cout << doc.dump(2) << '\n';
    std::cerr << line << '\n';
  }
  return kOk;
}

int run_sweep(const ExperimentConfig& cfg, const std::string& axis, const std::string& values,
              const std::string& out_path) {
  const auto table = sweep(cfg, parse_axis(axis), parse_values(values));
  if (out_path.empty()) {
    write_sweep_csv(std::cout, table);
  } else {
    std::ofstream out(out_path);
    if (!out) throw FileError("cannot write " + out_path);
    write_sweep_csv(out, table);
  }
  return kOk;
}

int run_capacity(const ExperimentConfig& cfg, double lo, double hi, double tol) {
  if (!(tol > 0.0)) throw ConfigError("--tol must be > 0");
  const auto rows = capacity_report(cfg, lo, hi, tol);
  std::cout << "policy,static_batch,capacity_qps,probes\n";
  for (const auto& r : rows) {
    std::cout << to_string(r.policy) << ',' << r.static_batch << ',' << r.result.capacity_qps
              << ',' << r.result.probes.size() << '\n';
  }
  if (rows.size() >= 2 && rows.front().result.capacity_qps > 0.0) {
    const double gain = rows.back().result.capacity_qps / rows.front().result.capacity_qps - 1.0;
    std::cerr << to_string(rows.back().policy) << " vs " << to_string(rows.front().policy)
              << ": " << (gain >= 0 ? "+" : "") << gain * 100.0 << "%\n";
  }
  return kOk;
}

int calibrate(const std::string& csv) {
  if (!std::filesystem::exists(csv)) throw FileError("calibration file not found: " + csv);
  const auto samples = load_calibration(csv);
  const auto fit = fit_linear(samples);
  nlohmann::json doc{{"decode_base_ms", fit.intercept},
                     {"decode_per_seq_ms", fit.slope},
                     {"samples", samples.size()}};
  std::cout << doc.dump(2) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic batching experiments on a continuous-batching simulator"};
  app.require_subcommand(1);

  std::string config_path, steps_path, axis, values, out_path, csv_path;
  std::int64_t seed = -1;
  double lo = 0.0, hi = 0.0, tol = -1.0;

  auto* sim = app.add_subcommand("simulate", "Run one experiment and print its summary");
  sim->add_option("config", config_path, "Experiment config (JSON)")->required();
  sim->add_option("--emit-steps", steps_path, "Write the per-step CSV here");
  sim->add_option("--seed", seed, "Override workload.seed");

  auto* sw = app.add_subcommand("sweep", "Run one experiment per value of an axis");
  sw->add_option("config", config_path, "Experiment config (JSON)")->required();
  sw->add_option("--axis", axis, "batch_size | qps | d_sla")->required();
  sw->add_option("--values", values, "Comma list; ranges as a..b or a..b:step")->required();
  sw->add_option("--out", out_path, "Write the CSV here instead of stdout");
  sw->add_option("--seed", seed, "Override workload.seed");

  auto* cap = app.add_subcommand("capacity", "Search the largest SLA-compliant arrival rate");
  cap->add_option("config", config_path, "Experiment config (JSON)")->required();
  cap->add_option("--lo", lo, "Lower rate (must be compliant)");
  cap->add_option("--hi", hi, "Upper rate (expanded if still compliant)");
  cap->add_option("--tol", tol, "Bracket width at which the search stops");
  cap->add_option("--seed", seed, "Override workload.seed");

  auto* cal = app.add_subcommand("calibrate", "Fit decode latency coefficients from a CSV");
  cal->add_option("csv", csv_path, "CSV with header batch_size,step_latency_ms")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (cal->parsed()) return calibrate(csv_path);

    if (!std::filesystem::exists(config_path)) {
      throw FileError("config not found: " + config_path);
    }
    auto cfg = load_config(config_path);
    if (seed >= 0) cfg.workload.seed = static_cast<std::uint64_t>(seed);

    if (sim->parsed()) return simulate(cfg, steps_path);
    if (sw->parsed()) return run_sweep(cfg, axis, values, out_path);
    if (cap->parsed()) {
      if (cfg.capacity) {
        if (lo <= 0.0) lo = cfg.capacity->lo;
        if (hi <= 0.0) hi = cfg.capacity->hi;
        if (tol < 0.0) tol = cfg.capacity->tol;
      }
      if (tol < 0.0) tol = 0.1;
      return run_capacity(cfg, lo, hi, tol);
    }
  } catch (const FileError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFile;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kParse;
  } catch (const InfeasibleError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInfeasible;
  } catch (const SimulationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kAbort;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kInternal;
}
