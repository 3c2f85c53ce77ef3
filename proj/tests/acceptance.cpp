// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>

#include "dynbatch/experiment.hpp"
#include "oracles.hpp"

using namespace dynbatch;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* title, double limit_s, const std::function<Verdict()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > limit_s) {
    v.pass = false;
    v.detail += " (over the " + std::to_string(static_cast<int>(limit_s)) + " s limit)";
  }
  if (!v.pass) ++failures;
  std::printf("[%s] %d. %s: %s [%.2f s]\n", v.pass ? "PASS" : "FAIL", id, title,
              v.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

LatencyModel two_point_model() {
  const double a1 = 30.0 / 130.0;
  return LatencyModel(50.0 - 100.0 * a1, a1, 0.0, 1e-9);
}

std::int64_t ceil_log2(std::int64_t x) {
  std::int64_t k = 0;
  while ((std::int64_t{1} << k) < x) ++k;
  return k;
}

Verdict oracle_equivalence() {
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> md(2.0, 2000.0), cv(0.0, 3.0), ed(1e-4, 0.5);
  std::uniform_int_distribution<std::int64_t> etad(1, 100000);
  int matched = 0;
  for (int i = 0; i < 200; ++i) {
    const double m = md(rng);
    const double sd = cv(rng) * m;
    const auto eta = etad(rng);
    const double eps = ed(rng);
    const auto got = batch_bound_quadratic({m, sd * sd}, eta, eps).value_or(0);
    if (got == oracle::bound_scan(m, sd * sd, eta, eps)) ++matched;
  }
  return {matched == 200, std::to_string(matched) + "/200 instances match the scan"};
}

Verdict monte_carlo() {
  const LengthMoments mo{500.0, 90000.0};
  const std::int64_t eta = 100000;
  const auto b = batch_bound_quadratic(mo, eta, 0.02);
  if (!b) return {false, "no bound"};
  const double p = overflow_probability(mo, *b, eta);
  // Independent sampler: normal footprints, plain Mersenne Twister.
  std::mt19937_64 rng(99);
  std::normal_distribution<double> f(mo.m, std::sqrt(mo.v));
  const std::int64_t trials = 1'000'000;
  std::int64_t hits = 0;
  for (std::int64_t t = 0; t < trials; ++t) {
    double sum = 0.0;
    for (std::int64_t i = 0; i < *b; ++i) sum += f(rng);
    hits += sum > static_cast<double>(eta) ? 1 : 0;
  }
  const double freq = static_cast<double>(hits) / static_cast<double>(trials);
  const double half = 2.5758 * std::sqrt(p * (1 - p) / static_cast<double>(trials));
  const bool ok = *b == 183 && std::abs(freq - p) <= half;
  char buf[200];
  std::snprintf(buf, sizeof buf, "bound %lld, analytic %.5f, simulated %.5f, 99%% CI +/-%.5f",
                static_cast<long long>(*b), p, freq, half);
  return {ok, buf};
}

Verdict curve_readings() {
  const auto model = two_point_model();
  const auto b50 = sla_batch_from_model(model, 50.0);
  const auto b80 = sla_batch_from_model(model, 80.0);
  const double t50 = steady_throughput(model, b50);
  const double t80 = steady_throughput(model, b80);
  const bool ok = b50 == 100 && b80 == 230 && std::abs(t50 / 1900.0 - 1.0) <= 0.10 &&
                  std::abs(t80 / 2700.0 - 1.0) <= 0.10;
  char buf[200];
  std::snprintf(buf, sizeof buf, "b(50)=%lld b(80)=%lld, throughput %.0f and %.0f tok/s",
                static_cast<long long>(b50), static_cast<long long>(b80), t50, t80);
  return {ok, buf};
}

Verdict saturation() {
  const auto model = two_point_model();
  const MemoryConfig mem(1'000'000'000, 1, 0.02);
  std::string detail;
  bool ok = true;
  for (std::int64_t b : {16, 64, 256}) {
    std::vector<RequestSpec> reqs;
    for (std::int64_t i = 0; i < 4 * b; ++i) reqs.push_back({i, 0.0, 1, 200});
    PolicyConfig p;
    p.static_batch = b;
    p.b_max = 256;
    const auto s = summarize(run(reqs, p, model, mem, {}));
    const double rel = s.throughput_tps / steady_throughput(model, b) - 1.0;
    ok = ok && s.steps >= 100 && std::abs(rel) <= 0.02;
    detail += "b=" + std::to_string(b) + fmt(" %+.3f%% ", 100.0 * rel);
  }
  return {ok, detail + "vs model"};
}

Verdict sla_convergence() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> a0d(5.0, 40.0), a1d(0.05, 1.0);
  std::uniform_int_distribution<std::int64_t> bmind(1, 16), bmaxd(128, 512);
  const std::int64_t alpha = 8, delta = 2;
  int passed = 0;
  for (int draw = 0; draw < 20; ++draw) {
    const double a0 = a0d(rng), a1 = a1d(rng);
    const auto b_min = bmind(rng), b_max = bmaxd(rng);
    std::uniform_int_distribution<std::int64_t> td(b_min + alpha, b_max - alpha);
    const auto target_hint = td(rng);
    const LatencyModel model(a0, a1, 0.0, 1.0);
    const double d_sla = a0 + a1 * (static_cast<double>(target_hint) + 0.5);
    const double eps_d = 2.0 * a1;  // deadband spans b* - 1.5 .. b* + 2.5
    const auto target = sla_batch_from_model(model, d_sla);
    const auto bound = 2 * ceil_log2(b_max - b_min) + (b_max - b_min + alpha - 1) / alpha;

    auto state = SlaSearchState::initial(d_sla, eps_d, alpha, delta, b_min, b_max);
    std::int64_t b = (b_min + b_max) / 2;
    // Round after which b_t never leaves the band again.
    std::int64_t settled_at = 0;
    for (std::int64_t r = 1; r <= bound + 500; ++r) {
      PolicyInputs in;
      in.tau_bar_ms = step_latency(model, b);
      in.b_bar = static_cast<double>(b);
      auto [d, next] = batching_sla(state, in);
      state = next;
      b = d.b_t;
      if (std::abs(b - target) > alpha) settled_at = r;
    }
    if (settled_at < bound) ++passed;
  }
  return {passed == 20, std::to_string(passed) + "/20 draws converge within the round bound"};
}

Verdict throughput_gain() {
  auto cfg = load_config(oracle::fixture("c0_throughput.json"));
  double best = 0.0;
  std::string detail;
  cfg.policy.kind = PolicyKind::kStatic;
  const auto stat = run_experiment(cfg);
  for (auto kind : {PolicyKind::kMemory, PolicyKind::kCombined}) {
    cfg.policy.kind = kind;
    const auto t0 = std::chrono::steady_clock::now();
    const auto out = run_experiment(cfg);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > 60.0) return {false, "run over 60 s"};
    const double gain = out.summary.throughput_tps / stat.summary.throughput_tps - 1.0;
    best = std::max(best, gain);
    detail += to_string(kind) + fmt(" %+.1f%% ", 100.0 * gain);
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "vs static b=%lld at %.0f tok/s",
                static_cast<long long>(stat.policy.static_batch), stat.summary.throughput_tps);
  return {best >= 0.05, detail + buf};
}

Verdict capacity_gain() {
  const auto cfg = load_config(oracle::fixture("c0_capacity.json"));
  const auto stat = capacity_search(capacity_experiment(cfg, PolicyKind::kStatic),
                                    cfg.capacity->lo, cfg.capacity->hi, 0.1);
  const auto dyn = capacity_search(capacity_experiment(cfg, PolicyKind::kSla),
                                   cfg.capacity->lo, cfg.capacity->hi, 0.1);
  char buf[160];
  std::snprintf(buf, sizeof buf, "static %.3f qps, sla-dynamic %.3f qps at D_SLA=%.0f ms",
                stat.capacity_qps, dyn.capacity_qps, cfg.sla.d_sla_ms);
  return {dyn.capacity_qps > stat.capacity_qps && cfg.sla.d_sla_ms == 50.0, buf};
}

Verdict hand_traces() {
  int ok = 0, total = 0;
  auto expect = [&](bool c) {
    ++total;
    ok += c ? 1 : 0;
  };
  PolicyInputs in;
  in.moments = {400.0, 0.0};
  in.n_prefill = 5;
  in.n_decode = 10;
  in.b_prev = 17;
  expect(batching_memory(in, 12000, 2000, 256).b_t == 25);
  in.n_decode = 30;
  expect(batching_memory(in, 12000, 2000, 256).b_t == 30);
  in.n_prefill = 0;
  expect(batching_memory(in, 12000, 2000, 256).b_t == 17);

  const auto s = SlaSearchState::initial(50.0, 2.0, 8, 2, 1, 256);
  auto sla = [&](double tau) {
    PolicyInputs f;
    f.tau_bar_ms = tau;
    f.b_bar = 128.0;
    return batching_sla(s, f);
  };
  auto [d1, s1] = sla(60.0);
  expect(s1.b_high == 128 && s1.b_low == 1 && d1.b_t == 64);
  auto [d2, s2] = sla(40.0);
  expect(s2.b_low == 128 && s2.b_high == 256 && d2.b_t == 192);
  auto [d3, s3] = sla(50.0);
  expect(s3.b_high == 132 && s3.b_low == 124 && d3.b_t == 128);

  const auto c1 = combined_decide({25, Rationale::kMemoryBound}, {64, Rationale::kSlaBound});
  const auto c2 = combined_decide({100, Rationale::kMemoryBound}, {64, Rationale::kSlaBound});
  const auto c3 = combined_decide({64, Rationale::kMemoryBound}, {64, Rationale::kSlaBound});
  expect(c1.b_t == 25 && c1.rationale == Rationale::kMemoryBound);
  expect(c2.b_t == 64 && c2.rationale == Rationale::kSlaBound);
  expect(c3.b_t == 64 && c3.rationale == Rationale::kCombinedMin);
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " traces exact"};
}

Verdict determinism() {
  int same = 0, total = 0;
  for (const char* name :
       {"table1_pangu7b.json", "c0_throughput.json", "c0_capacity.json", "trace_run.json"}) {
    const auto cfg = load_config(oracle::fixture(name));
    const auto a = summary_json(run_experiment(cfg).summary).dump(2);
    const auto b = summary_json(run_experiment(cfg).summary).dump(2);
    ++total;
    same += a == b ? 1 : 0;
  }
  return {same == total, std::to_string(same) + "/" + std::to_string(total) +
                             " fixtures byte-identical"};
}

}  // namespace

int main() {
  criterion(1, "chance-constraint oracle equivalence", 10, oracle_equivalence);
  criterion(2, "Monte-Carlo soundness", 30, monte_carlo);
  criterion(3, "latency curve readings", 10, curve_readings);
  criterion(4, "saturated throughput tie-in", 60, saturation);
  criterion(5, "SLA search convergence", 10, sla_convergence);
  criterion(6, "throughput gain over conservative static", 180, throughput_gain);
  criterion(7, "capacity gain over SLA-feasible static", 600, capacity_gain);
  criterion(8, "algorithm hand traces", 10, hand_traces);
  criterion(9, "determinism", 300, determinism);
  std::printf("%d/9 criteria passed\n", 9 - failures);
  return failures;
}
