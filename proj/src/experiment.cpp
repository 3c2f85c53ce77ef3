#include "dynbatch/experiment.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "dynbatch/errors.hpp"
#include "dynbatch/kernels.hpp"

namespace dynbatch {

using nlohmann::json;

namespace {

constexpr std::uint64_t kArrivalSalt = 0x5bd1e9955bd1e995ULL;
constexpr std::uint64_t kPriorSalt = 0xa5a5a5a5c3c3c3c3ULL;
constexpr std::int64_t kPriorSamples = 20000;

// Strict object access: every key must be known, every value well-typed.
class Section {
 public:
  Section(const json& doc, std::string name) : doc_(doc), name_(std::move(name)) {
    if (!doc_.is_object()) throw ConfigError(name_ + ": expected an object");
  }

  ~Section() = default;

  void allow_only(std::initializer_list<const char*> keys) const {
    std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [k, _] : doc_.items()) {
      if (!known.count(k)) throw ConfigError(name_ + ": unknown key '" + k + "'");
    }
  }

  bool has(const char* key) const { return doc_.contains(key); }
  const json& raw(const char* key) const { return doc_.at(key); }

  double number(const char* key) const {
    const auto& v = need(key);
    if (!v.is_number()) throw ConfigError(where(key) + " must be a number");
    return v.get<double>();
  }
  double number(const char* key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

  std::int64_t integer(const char* key) const {
    const auto& v = need(key);
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (std::floor(d) == d && std::abs(d) < 9e15) return static_cast<std::int64_t>(d);
    }
    throw ConfigError(where(key) + " must be an integer");
  }
  std::int64_t integer(const char* key, std::int64_t fallback) const {
    return has(key) ? integer(key) : fallback;
  }

  std::string text(const char* key) const {
    const auto& v = need(key);
    if (!v.is_string()) throw ConfigError(where(key) + " must be a string");
    return v.get<std::string>();
  }
  std::string text(const char* key, const std::string& fallback) const {
    return has(key) ? text(key) : fallback;
  }

  Section sub(const char* key) const { return Section(need(key), where(key)); }
  std::string where(const char* key) const { return name_ + "." + key; }

 private:
  const json& need(const char* key) const {
    if (!doc_.contains(key)) throw ConfigError(name_ + ": missing key '" + key + "'");
    return doc_.at(key);
  }

  const json& doc_;
  std::string name_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

LengthDistribution parse_length(const Section& s) {
  const auto kind = s.text("kind");
  if (kind == "fixed") {
    s.allow_only({"kind", "value"});
    return LengthDistribution::fixed(s.integer("value"));
  }
  if (kind == "lognormal") {
    s.allow_only({"kind", "mean", "log_mean", "sigma", "max"});
    const double sigma = s.number("sigma");
    const std::int64_t max = s.integer("max", 32768);
    if (s.has("mean") == s.has("log_mean")) {
      throw ConfigError("lognormal length needs exactly one of 'mean' or 'log_mean'");
    }
    return s.has("mean") ? LengthDistribution::lognormal_with_mean(s.number("mean"), sigma, max)
                         : LengthDistribution::lognormal(s.number("log_mean"), sigma, max);
  }
  if (kind == "empirical") {
    s.allow_only({"kind", "values"});
    const auto& arr = s.raw("values");
    if (!arr.is_array()) throw ConfigError("empirical length 'values' must be an array");
    std::vector<std::int64_t> values;
    for (const auto& v : arr) {
      if (!v.is_number_integer()) throw ConfigError("empirical lengths must be integers");
      values.push_back(v.get<std::int64_t>());
    }
    return LengthDistribution::empirical(std::move(values));
  }
  throw ConfigError("unknown length distribution kind '" + kind + "'");
}

ArrivalProcess parse_arrival(const Section& s) {
  const auto kind = s.text("kind");
  if (kind == "all-at-once") {
    s.allow_only({"kind"});
    return ArrivalProcess::all_at_once();
  }
  if (kind == "poisson") {
    s.allow_only({"kind", "rate_qps"});
    return ArrivalProcess::poisson(s.number("rate_qps"));
  }
  if (kind == "piecewise-poisson") {
    s.allow_only({"kind", "segments"});
    const auto& arr = s.raw("segments");
    if (!arr.is_array()) throw ConfigError("arrival.segments must be an array");
    std::vector<ArrivalSegment> segs;
    for (const auto& item : arr) {
      Section seg(item, "arrival.segments[]");
      seg.allow_only({"start_ms", "rate_qps"});
      segs.push_back({seg.number("start_ms"), seg.number("rate_qps")});
    }
    return ArrivalProcess::piecewise_poisson(std::move(segs));
  }
  throw ConfigError("unknown arrival kind '" + kind + "'");
}

EngineMode parse_mode(const std::string& name) {
  if (name == "pd-separate") return EngineMode::kPdSeparate;
  if (name == "pd-fused") return EngineMode::kPdFused;
  throw ConfigError("unknown engine mode '" + name + "'");
}

std::vector<LengthPair> lengths_of(const std::vector<RequestSpec>& requests) {
  std::vector<LengthPair> out;
  out.reserve(requests.size());
  for (const auto& r : requests) out.emplace_back(r.l_in, r.l_out);
  return out;
}

}  // namespace

PolicyKind parse_policy_kind(const std::string& name) {
  if (name == "static") return PolicyKind::kStatic;
  if (name == "memory") return PolicyKind::kMemory;
  if (name == "sla") return PolicyKind::kSla;
  if (name == "combined") return PolicyKind::kCombined;
  throw ConfigError("unknown policy kind '" + name + "'");
}

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kStatic: return "static";
    case PolicyKind::kMemory: return "memory";
    case PolicyKind::kSla: return "sla";
    case PolicyKind::kCombined: return "combined";
  }
  return "static";
}

ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  Section root(doc, "config");
  root.allow_only({"workload", "latency", "memory", "policy", "engine", "sla", "capacity",
                   "output", "description"});
  ExperimentConfig cfg;

  {
    const auto w = root.sub("workload");
    w.allow_only({"requests", "seed", "arrival", "prompt", "output", "max_sequence", "trace"});
    cfg.workload.requests = w.integer("requests", 1000);
    if (cfg.workload.requests < 1) throw ConfigError("workload.requests must be >= 1");
    const auto seed = w.integer("seed", 0);
    if (seed < 0) throw ConfigError("workload.seed must be >= 0");
    cfg.workload.seed = static_cast<std::uint64_t>(seed);
    cfg.workload.max_sequence = w.integer("max_sequence", 0);
    if (cfg.workload.max_sequence < 0 || cfg.workload.max_sequence == 1) {
      throw ConfigError("workload.max_sequence must be 0 or >= 2");
    }
    if (w.has("trace")) {
      cfg.workload.trace = resolve(base_dir, w.text("trace"));
      if (!std::filesystem::exists(*cfg.workload.trace)) {
        throw FileError("trace file not found: " + cfg.workload.trace->string());
      }
    } else {
      cfg.workload.arrival = parse_arrival(w.sub("arrival"));
      cfg.workload.prompt = parse_length(w.sub("prompt"));
      cfg.workload.output = parse_length(w.sub("output"));
    }
  }

  {
    const auto l = root.sub("latency");
    l.allow_only({"decode_base_ms", "decode_per_seq_ms", "prefill_base_ms",
                  "prefill_per_token_ms", "calibration_csv"});
    double a0, a1;
    if (l.has("calibration_csv")) {
      if (l.has("decode_base_ms") || l.has("decode_per_seq_ms")) {
        throw ConfigError("latency: give either calibration_csv or decode coefficients");
      }
      const auto path = resolve(base_dir, l.text("calibration_csv"));
      if (!std::filesystem::exists(path)) {
        throw FileError("calibration file not found: " + path.string());
      }
      const auto samples = load_calibration(path);
      const auto fit = fit_linear(samples);
      a0 = fit.intercept;
      a1 = fit.slope;
    } else {
      a0 = l.number("decode_base_ms");
      a1 = l.number("decode_per_seq_ms");
    }
    cfg.latency = LatencyModel(a0, a1, l.number("prefill_base_ms", 0.0),
                               l.number("prefill_per_token_ms"));
  }

  {
    const auto m = root.sub("memory");
    m.allow_only({"m_max_bytes", "bytes_per_token", "epsilon_m"});
    cfg.memory = MemoryConfig(m.integer("m_max_bytes"), m.integer("bytes_per_token"),
                              m.number("epsilon_m", 0.02));
  }

  {
    const auto p = root.sub("policy");
    p.allow_only({"kind", "static_batch", "d_sla_ms", "epsilon_d_ms", "alpha", "delta", "b_min",
                  "b_max", "w_sla", "w_len", "refresh_period", "prior"});
    auto& pc = cfg.policy;
    pc.kind = parse_policy_kind(p.text("kind"));
    pc.d_sla_ms = p.number("d_sla_ms", 50.0);
    pc.epsilon_d_ms = p.number("epsilon_d_ms", 2.0);
    pc.alpha = p.integer("alpha", 8);
    pc.delta = p.integer("delta", 2);
    pc.b_min = p.integer("b_min", 1);
    pc.b_max = p.integer("b_max", 256);
    const auto w_sla = p.integer("w_sla", 20);
    const auto w_len = p.integer("w_len", 256);
    if (w_sla < 1 || w_len < 1) throw ConfigError("policy windows must be >= 1");
    pc.w_sla = static_cast<std::size_t>(w_sla);
    pc.w_len = static_cast<std::size_t>(w_len);
    pc.refresh_period = p.integer("refresh_period", 100);
    if (pc.refresh_period < 1) throw ConfigError("policy.refresh_period must be >= 1");
    SlaSearchState::initial(pc.d_sla_ms, pc.epsilon_d_ms, pc.alpha, pc.delta, pc.b_min,
                            pc.b_max);
    if (p.has("static_batch") && p.raw("static_batch").is_string()) {
      const auto mode = p.text("static_batch");
      if (mode == "conservative") {
        cfg.static_batch_mode = ExperimentConfig::StaticBatch::kConservative;
      } else if (mode == "sla-feasible") {
        cfg.static_batch_mode = ExperimentConfig::StaticBatch::kSlaFeasible;
      } else {
        throw ConfigError("policy.static_batch must be an integer, 'conservative' or "
                          "'sla-feasible'");
      }
    } else {
      pc.static_batch = p.integer("static_batch", pc.b_max);
      if (pc.static_batch < 1) throw ConfigError("policy.static_batch must be >= 1");
    }
    if (p.has("prior")) {
      const auto pr = p.sub("prior");
      pr.allow_only({"m", "v"});
      pc.prior = {pr.number("m"), pr.number("v")};
      if (!(pc.prior.m > 0.0) || !(pc.prior.v >= 0.0)) {
        throw ConfigError("policy.prior needs m > 0 and v >= 0");
      }
      cfg.prior_given = true;
    }
  }

  if (root.has("engine")) {
    const auto e = root.sub("engine");
    e.allow_only({"mode", "swap_penalty_ms", "max_queue"});
    cfg.engine.mode = parse_mode(e.text("mode", "pd-separate"));
    cfg.engine.swap_penalty_ms = e.number("swap_penalty_ms", 0.0);
    if (!(cfg.engine.swap_penalty_ms >= 0.0)) {
      throw ConfigError("engine.swap_penalty_ms must be >= 0");
    }
    cfg.engine.max_queue = e.integer("max_queue", 1'000'000);
    if (cfg.engine.max_queue < 1) throw ConfigError("engine.max_queue must be >= 1");
  }

  cfg.sla.d_sla_ms = cfg.policy.d_sla_ms;
  cfg.sla.epsilon_d_ms = cfg.policy.epsilon_d_ms;
  if (root.has("sla")) {
    const auto s = root.sub("sla");
    s.allow_only({"statistic", "max_sched_delay_ms"});
    cfg.sla.statistic = parse_statistic(s.text("statistic", "p99"));
    cfg.sla.max_sched_delay_ms = s.number("max_sched_delay_ms", 0.0);
    if (!(cfg.sla.max_sched_delay_ms >= 0.0)) {
      throw ConfigError("sla.max_sched_delay_ms must be >= 0");
    }
  }

  if (root.has("capacity")) {
    const auto c = root.sub("capacity");
    c.allow_only({"policies", "lo", "hi", "tol"});
    CapacityConfig cap;
    if (c.has("policies")) {
      const auto& arr = c.raw("policies");
      if (!arr.is_array()) throw ConfigError("capacity.policies must be an array");
      for (const auto& v : arr) {
        if (!v.is_string()) throw ConfigError("capacity.policies entries must be strings");
        cap.policies.push_back(parse_policy_kind(v.get<std::string>()));
      }
    }
    cap.lo = c.number("lo", 0.0);
    cap.hi = c.number("hi", 0.0);
    cap.tol = c.number("tol", 0.1);
    if (!(cap.tol > 0.0)) throw ConfigError("capacity.tol must be > 0");
    cfg.capacity = cap;
  }

  if (root.has("output")) {
    const auto o = root.sub("output");
    o.allow_only({"summary", "steps"});
    if (o.has("summary")) cfg.summary_out = resolve(base_dir, o.text("summary"));
    if (o.has("steps")) cfg.steps_out = resolve(base_dir, o.text("steps"));
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open config: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return parse_config(doc, path.parent_path());
}

std::vector<RequestSpec> build_workload(const ExperimentConfig& config) {
  const auto& w = config.workload;
  if (w.trace) {
    auto reqs = load_trace(*w.trace);
    if (static_cast<std::int64_t>(reqs.size()) > w.requests) {
      reqs.resize(static_cast<std::size_t>(w.requests));
    }
    return reqs;
  }
  const auto lengths = sample_lengths(w.prompt, w.output, w.requests, w.seed, w.max_sequence);
  const auto arrivals = generate_arrivals(w.arrival, w.requests, w.seed ^ kArrivalSalt);
  return make_requests(arrivals, lengths);
}

PolicyConfig resolve_policy(const ExperimentConfig& config,
                            const std::vector<RequestSpec>& workload) {
  PolicyConfig policy = config.policy;
  if (!config.prior_given) {
    const auto& w = config.workload;
    if (w.trace) {
      policy.prior = estimate_moments(lengths_of(workload));
    } else {
      const auto sample = sample_lengths(w.prompt, w.output, kPriorSamples,
                                         w.seed ^ kPriorSalt, w.max_sequence);
      policy.prior = estimate_moments(sample);
    }
  }
  switch (config.static_batch_mode) {
    case ExperimentConfig::StaticBatch::kFixed:
      break;
    case ExperimentConfig::StaticBatch::kConservative: {
      const auto worst = worst_window_moments(workload, policy.w_len);
      const auto b = batch_bound_quadratic(worst, config.memory.eta(), config.memory.epsilon_m());
      if (!b) throw InfeasibleError("no static batch meets the memory chance constraint");
      policy.static_batch = std::min(*b, policy.b_max);
      break;
    }
    case ExperimentConfig::StaticBatch::kSlaFeasible: {
      const auto b = sla_batch_from_model(config.latency, policy.d_sla_ms);
      if (b < 1) throw InfeasibleError("infeasible SLA: no batch size meets D_SLA");
      policy.static_batch = std::min(b, policy.b_max);
      break;
    }
  }
  return policy;
}

json summary_json(const Summary& s) {
  return json{{"throughput_tps", s.throughput_tps},
              {"tbt_mean_ms", s.tbt_mean_ms},
              {"tbt_p95_ms", s.tbt_p95_ms},
              {"tbt_p99_ms", s.tbt_p99_ms},
              {"mean_batch_occupancy", s.mean_batch_occupancy},
              {"mean_token_occupancy_frac", s.mean_token_occupancy_frac},
              {"overflow_rate", s.overflow_rate},
              {"sched_delay_p99_ms", s.sched_delay_p99_ms},
              {"mean_step_ms", s.mean_step_ms},
              {"mean_b_target", s.mean_b_target},
              {"mean_n_decode", s.mean_n_decode},
              {"span_ms", s.span_ms},
              {"generated_tokens", s.generated_tokens},
              {"steps", s.steps},
              {"requests", s.requests},
              {"preemptions", s.preemptions}};
}

ExperimentOutcome run_experiment(const ExperimentConfig& config) {
  const auto workload = build_workload(config);
  auto policy = resolve_policy(config, workload);
  auto result = run(workload, policy, config.latency, config.memory, config.engine);
  auto summary = summarize(result);
  return {std::move(result), summary, policy};
}

SweepAxis parse_axis(const std::string& name) {
  if (name == "batch_size") return SweepAxis::kBatchSize;
  if (name == "qps") return SweepAxis::kQps;
  if (name == "d_sla") return SweepAxis::kDSla;
  throw ConfigError("unknown sweep axis '" + name + "' (batch_size|qps|d_sla)");
}

SweepTable sweep(const ExperimentConfig& config, SweepAxis axis,
                 const std::vector<double>& values, bool parallel) {
  if (values.empty()) throw ConfigError("sweep: empty value list");
  SweepTable table;
  for (double v : values) {
    if (!std::isfinite(v) || !(v > 0.0)) throw ConfigError("sweep values must be positive");
    if (axis == SweepAxis::kBatchSize && std::floor(v) != v) {
      throw ConfigError("batch_size sweep values must be integers");
    }
  }

  std::function<std::vector<double>(std::size_t)> point;
  switch (axis) {
    case SweepAxis::kBatchSize:
      table.header = {"batch_size",    "model_step_ms", "model_throughput_tps",
                      "mean_step_ms",  "throughput_tps", "tbt_mean_ms",
                      "tbt_p99_ms",    "overflow_rate"};
      point = [&](std::size_t i) {
        ExperimentConfig cfg = config;
        const auto b = static_cast<std::int64_t>(values[i]);
        cfg.policy.kind = PolicyKind::kStatic;
        cfg.policy.static_batch = b;
        cfg.policy.b_max = std::max(cfg.policy.b_max, b);
        cfg.static_batch_mode = ExperimentConfig::StaticBatch::kFixed;
        const auto out = run_experiment(cfg);
        const auto& s = out.summary;
        return std::vector<double>{values[i],
                                   step_latency(config.latency, b),
                                   steady_throughput(config.latency, b),
                                   s.mean_step_ms,
                                   s.throughput_tps,
                                   s.tbt_mean_ms,
                                   s.tbt_p99_ms,
                                   s.overflow_rate};
      };
      break;
    case SweepAxis::kQps:
      if (config.workload.trace) throw ConfigError("qps sweep needs a synthetic workload");
      table.header = {"qps",        "throughput_tps",     "tbt_mean_ms",   "tbt_p95_ms",
                      "tbt_p99_ms", "sched_delay_p99_ms", "mean_b_target", "overflow_rate",
                      "compliant"};
      point = [&](std::size_t i) {
        ExperimentConfig cfg = config;
        cfg.workload.arrival = ArrivalProcess::poisson(values[i]);
        const auto out = run_experiment(cfg);
        const auto& s = out.summary;
        bool ok = sla_compliant(s, config.sla.d_sla_ms, config.sla.epsilon_d_ms,
                                config.sla.statistic);
        if (config.sla.max_sched_delay_ms > 0.0) {
          ok = ok && s.sched_delay_p99_ms <= config.sla.max_sched_delay_ms;
        }
        return std::vector<double>{values[i],     s.throughput_tps,    s.tbt_mean_ms,
                                   s.tbt_p95_ms,  s.tbt_p99_ms,        s.sched_delay_p99_ms,
                                   s.mean_b_target, s.overflow_rate,   ok ? 1.0 : 0.0};
      };
      break;
    case SweepAxis::kDSla:
      table.header = {"d_sla_ms",      "model_batch", "model_throughput_tps",
                      "mean_b_target", "throughput_tps", "tbt_mean_ms",
                      "tbt_p99_ms",    "capacity_qps"};
      point = [&](std::size_t i) {
        ExperimentConfig cfg = config;
        cfg.policy.d_sla_ms = values[i];
        cfg.sla.d_sla_ms = values[i];
        const auto b = sla_batch_from_model(config.latency, values[i]);
        const auto out = run_experiment(cfg);
        const auto& s = out.summary;
        double capacity = std::nan("");
        if (config.capacity && config.capacity->lo > 0.0) {
          auto cap = capacity_search(capacity_experiment(cfg, cfg.policy.kind),
                                     config.capacity->lo, config.capacity->hi,
                                     config.capacity->tol);
          capacity = cap.capacity_qps;
        }
        return std::vector<double>{values[i],
                                   static_cast<double>(b),
                                   b > 0 ? steady_throughput(config.latency, b) : 0.0,
                                   s.mean_b_target,
                                   s.throughput_tps,
                                   s.tbt_mean_ms,
                                   s.tbt_p99_ms,
                                   capacity};
      };
      break;
  }
  table.rows = parallel ? parallel_map(values.size(), point) : serial_map(values.size(), point);
  return table;
}

void write_sweep_csv(std::ostream& out, const SweepTable& table) {
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    out << (i ? "," : "") << table.header[i];
  }
  out << '\n' << std::setprecision(10);
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out << (i ? "," : "");
      if (std::isnan(row[i])) {
        out << "nan";
      } else {
        out << row[i];
      }
    }
    out << '\n';
  }
}

SweepTable read_sweep_csv(std::istream& in) {
  SweepTable table;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("sweep csv: missing header");
  {
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) table.header.push_back(cell);
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream rs(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(rs, cell, ',')) {
      if (cell == "nan") {
        row.push_back(std::nan(""));
        continue;
      }
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ParseError("sweep csv:" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (row.size() != table.header.size()) {
      throw ParseError("sweep csv:" + std::to_string(line_no) + ": wrong field count");
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

CapacityExperiment capacity_experiment(const ExperimentConfig& config, PolicyKind kind) {
  if (config.workload.trace) throw ConfigError("capacity search needs a synthetic workload");
  const auto workload = build_workload(config);
  CapacityExperiment exp;
  exp.lengths = lengths_of(workload);
  exp.arrival_seed = config.workload.seed ^ kArrivalSalt;
  ExperimentConfig cfg = config;
  cfg.policy.kind = kind;
  exp.policy = resolve_policy(cfg, workload);
  exp.latency = config.latency;
  exp.memory = config.memory;
  exp.engine = config.engine;
  exp.sla = config.sla;
  return exp;
}

std::vector<CapacityReportRow> capacity_report(const ExperimentConfig& config, double lo,
                                               double hi, double tol) {
  std::vector<PolicyKind> kinds;
  if (config.capacity && !config.capacity->policies.empty()) {
    kinds = config.capacity->policies;
  } else {
    kinds = {config.policy.kind};
  }
  std::vector<CapacityReportRow> rows;
  for (auto kind : kinds) {
    const auto exp = capacity_experiment(config, kind);
    rows.push_back({kind, kind == PolicyKind::kStatic ? exp.policy.static_batch : 0,
                    capacity_search(exp, lo, hi, tol)});
  }
  return rows;
}

}  // namespace dynbatch
