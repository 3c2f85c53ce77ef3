#include <cmath>
#include <random>

#include "doctest.h"
#include "dynbatch/costmodel.hpp"
#include "dynbatch/engine.hpp"
#include "dynbatch/errors.hpp"
#include "dynbatch/policy.hpp"

using namespace dynbatch;

namespace {

SlaSearchState hand_state() { return SlaSearchState::initial(50.0, 2.0, 8, 2, 1, 256); }

PolicyInputs feedback(double tau, double b_bar) {
  PolicyInputs in;
  in.tau_bar_ms = tau;
  in.b_bar = b_bar;
  in.n_decode = 0;
  in.n_prefill = 1;
  return in;
}

std::int64_t ceil_log2(std::int64_t x) {
  std::int64_t k = 0;
  while ((std::int64_t{1} << k) < x) ++k;
  return k;
}

}  // namespace

TEST_CASE("static decisions") {
  CHECK(static_decide(256).b_t == 256);
  CHECK(static_decide(1).b_t == 1);
  CHECK(static_decide(7).rationale == Rationale::kStatic);
  for (int i = 0; i < 5; ++i) CHECK(static_decide(42).b_t == 42);
  CHECK_THROWS_AS(static_decide(0), ConfigError);
}

TEST_CASE("memory-based batching hand trace") {
  PolicyInputs in;
  in.moments = {400.0, 0.0};
  in.n_prefill = 5;
  in.n_decode = 10;
  in.b_prev = 17;
  auto d = batching_memory(in, 12000, 2000, 256);
  CHECK(d.b_t == 25);
  CHECK(d.rationale == Rationale::kMemoryBound);

  in.n_decode = 30;
  CHECK(batching_memory(in, 12000, 2000, 256).b_t == 30);

  in.n_decode = 10;
  CHECK(batching_memory(in, 12000, 2000, 20).b_t == 20);

  in.n_prefill = 0;
  d = batching_memory(in, 12000, 2000, 256);
  CHECK(d.b_t == 17);
  CHECK(d.rationale == Rationale::kCarriedOver);

  in.n_prefill = 5;
  in.n_decode = 0;
  CHECK(batching_memory(in, 12000, 2000, 256).b_t == 17);
}

TEST_CASE("memory-based batching shrinks as requests grow") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> md(1.0, 5000.0);
  PolicyInputs in;
  in.n_prefill = 3;
  in.n_decode = 1;
  for (int i = 0; i < 500; ++i) {
    double m1 = md(rng), m2 = md(rng);
    if (m1 > m2) std::swap(m1, m2);
    in.moments.m = m1;
    const auto b1 = batching_memory(in, 1'000'000, 12345, 1'000'000).b_t;
    in.moments.m = m2;
    const auto b2 = batching_memory(in, 1'000'000, 12345, 1'000'000).b_t;
    CHECK(b2 <= b1);
  }
}

TEST_CASE("SLA search hand traces") {
  const auto s = hand_state();

  SUBCASE("over the deadline") {
    const auto [d, next] = batching_sla(s, feedback(60.0, 128.0));
    CHECK(next.b_high == 128);
    CHECK(next.b_low == 1);
    CHECK(d.b_t == 64);
    CHECK(d.rationale == Rationale::kSlaBound);
  }
  SUBCASE("under the deadline") {
    const auto [d, next] = batching_sla(s, feedback(40.0, 128.0));
    CHECK(next.b_low == 128);
    CHECK(next.b_high == 256);
    CHECK(d.b_t == 192);
  }
  SUBCASE("inside the deadband") {
    const auto [d, next] = batching_sla(s, feedback(50.0, 128.0));
    CHECK(next.b_high == 132);
    CHECK(next.b_low == 124);
    CHECK(d.b_t == 128);
  }
  SUBCASE("no realized batch carries over") {
    auto in = feedback(70.0, 0.0);
    in.b_prev = 33;
    const auto [d, next] = batching_sla(s, in);
    CHECK(d.b_t == 33);
    CHECK(d.rationale == Rationale::kCarriedOver);
    CHECK(next == s);
  }
  SUBCASE("running requests are never cut") {
    auto in = feedback(60.0, 128.0);
    in.n_decode = 100;
    CHECK(batching_sla(s, in).first.b_t == 100);
  }
}

TEST_CASE("SLA search state validation") {
  CHECK_THROWS_AS(SlaSearchState::initial(50.0, 2.0, 2, 2, 1, 256), ConfigError);
  CHECK_THROWS_AS(SlaSearchState::initial(50.0, 2.0, 8, 2, 10, 5), ConfigError);
  CHECK_THROWS_AS(SlaSearchState::initial(0.0, 2.0, 8, 2, 1, 5), ConfigError);
  CHECK_THROWS_AS(SlaSearchState::initial(50.0, -1.0, 8, 2, 1, 5), ConfigError);
}

TEST_CASE("SLA search keeps b_min <= b_low <= b_high <= b_max") {
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<std::int64_t> bmin_d(1, 32), span_d(0, 600), alpha_d(2, 40);
  std::uniform_real_distribution<double> tau_d(0.0, 120.0), bbar_d(-5.0, 900.0);
  for (int seq = 0; seq < 200; ++seq) {
    const auto b_min = bmin_d(rng);
    const auto b_max = b_min + span_d(rng);
    const auto alpha = alpha_d(rng);
    std::uniform_int_distribution<std::int64_t> delta_d(1, alpha - 1);
    auto state = SlaSearchState::initial(50.0, 3.0, alpha, delta_d(rng), b_min, b_max);
    for (int step = 0; step < 200; ++step) {
      const auto [d, next] = batching_sla(state, feedback(tau_d(rng), bbar_d(rng)));
      CHECK(b_min <= next.b_low);
      CHECK(next.b_low <= next.b_high);
      CHECK(next.b_high <= b_max);
      state = next;
    }
  }
}

TEST_CASE("SLA search is deterministic") {
  const auto s = hand_state();
  const auto in = feedback(47.3, 77.0);
  const auto a = batching_sla(s, in);
  const auto b = batching_sla(s, in);
  CHECK(a.first.b_t == b.first.b_t);
  CHECK(a.second == b.second);
}

TEST_CASE("SLA search converges against a noise-free latency oracle") {
  const double a1 = 30.0 / 130.0;
  const LatencyModel model(50.0 - 100.0 * a1, a1, 0.0, 1.0);
  for (double d_sla : {40.0, 50.0, 65.0, 80.0}) {
    const auto target = sla_batch_from_model(model, d_sla);
    const double eps = 1.5 * a1;
    auto state = SlaSearchState::initial(d_sla, eps, 8, 2, 1, 256);
    const auto rounds = 2 * ceil_log2(255) + (255 + 7) / 8;
    std::int64_t b = 128;
    bool entered = false;
    for (std::int64_t r = 0; r < rounds + 50; ++r) {
      auto [d, next] = batching_sla(state, feedback(step_latency(model, b), static_cast<double>(b)));
      state = next;
      b = d.b_t;
      const bool inside = std::abs(b - target) <= 8;
      if (r < rounds && inside) entered = true;
      if (r >= rounds) CHECK(inside);
    }
    CHECK(entered);
  }
}

TEST_CASE("combined decision takes the smaller side") {
  auto d = combined_decide({25, Rationale::kMemoryBound}, {64, Rationale::kSlaBound});
  CHECK(d.b_t == 25);
  CHECK(d.rationale == Rationale::kMemoryBound);
  d = combined_decide({100, Rationale::kMemoryBound}, {64, Rationale::kSlaBound});
  CHECK(d.b_t == 64);
  CHECK(d.rationale == Rationale::kSlaBound);
  d = combined_decide({64, Rationale::kMemoryBound}, {64, Rationale::kSlaBound});
  CHECK(d.b_t == 64);
  CHECK(d.rationale == Rationale::kCombinedMin);

  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::int64_t> bd(1, 1000);
  for (int i = 0; i < 1000; ++i) {
    const PolicyDecision mem{bd(rng), Rationale::kMemoryBound};
    const PolicyDecision sla{bd(rng), Rationale::kSlaBound};
    const auto c = combined_decide(mem, sla);
    CHECK(c.b_t <= mem.b_t);
    CHECK(c.b_t <= sla.b_t);
  }
}

TEST_CASE("controller refreshes the safety buffer on schedule") {
  PolicyConfig cfg;
  cfg.kind = PolicyKind::kMemory;
  cfg.refresh_period = 3;
  cfg.prior = {500.0, 90000.0};
  cfg.b_max = 1000;
  const MemoryConfig mem(100000, 1, 0.02);
  BatchController ctl(cfg, mem);
  CHECK(ctl.safety_buffer_tokens() == 8500);

  PolicyInputs in;
  in.n_decode = 1;
  in.n_prefill = 1;
  in.moments = {500.0, 90000.0};
  CHECK(ctl.decide(in).b_t == 183);

  // New moments only take effect in L0 at the next refresh.
  in.moments = {250.0, 0.0};
  CHECK(ctl.decide(in).b_t == (100000 - 8500) / 250);
  CHECK(ctl.decide(in).b_t == (100000 - 8500) / 250);
  ctl.decide(in);
  CHECK(ctl.safety_buffer_tokens() == 0);
  CHECK(ctl.decide(in).b_t == 400);
}

TEST_CASE("controller dispatches on policy kind") {
  const MemoryConfig mem(100000, 1, 0.02);
  PolicyInputs in;
  in.n_decode = 2;
  in.n_prefill = 4;
  in.moments = {1000.0, 0.0};
  in.tau_bar_ms = 100.0;
  in.b_bar = 80.0;

  PolicyConfig cfg;
  cfg.prior = {1000.0, 0.0};
  cfg.kind = PolicyKind::kStatic;
  cfg.static_batch = 12;
  CHECK(BatchController(cfg, mem).decide(in).b_t == 12);

  cfg.kind = PolicyKind::kSla;
  CHECK(BatchController(cfg, mem).decide(in).b_t == (1 + 80) / 2);

  cfg.kind = PolicyKind::kCombined;
  const auto d = BatchController(cfg, mem).decide(in);
  CHECK(d.b_t == 40);
  CHECK(d.rationale == Rationale::kSlaBound);
}
