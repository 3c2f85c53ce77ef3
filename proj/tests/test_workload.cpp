#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "dynbatch/errors.hpp"
#include "dynbatch/workload.hpp"
#include "oracles.hpp"

using namespace dynbatch;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& body) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << body;
  return path;
}

}  // namespace

TEST_CASE("fixed lengths reproduce the configured pair") {
  const auto f = LengthDistribution::fixed(128);
  const auto out = sample_lengths(f, f, 3, 42);
  REQUIRE(out.size() == 3);
  for (const auto& p : out) CHECK(p == LengthPair{128, 128});

  const auto one = LengthDistribution::fixed(1);
  CHECK(sample_lengths(one, one, 1, 0) == std::vector<LengthPair>{{1, 1}});
}

TEST_CASE("lognormal sample means track configured means") {
  const auto din = LengthDistribution::lognormal_with_mean(68.4, 0.8, 1'000'000);
  const auto dout = LengthDistribution::lognormal_with_mean(344.5, 0.8, 1'000'000);
  const auto out = sample_lengths(din, dout, 100'000, 3);
  double sin = 0, sout = 0;
  for (const auto& [a, b] : out) {
    sin += static_cast<double>(a);
    sout += static_cast<double>(b);
  }
  CHECK(std::abs(sin / 1e5 / 68.4 - 1.0) < 0.02);
  CHECK(std::abs(sout / 1e5 / 344.5 - 1.0) < 0.02);
}

TEST_CASE("sampled lengths stay inside [1, max]") {
  const auto d = LengthDistribution::lognormal(1.0, 2.5, 50);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (const auto& [a, b] : sample_lengths(d, d, 2000, seed)) {
      CHECK((a >= 1 && a <= 50));
      CHECK((b >= 1 && b <= 50));
    }
  }
  const auto e = LengthDistribution::empirical({3, 9, 27});
  for (const auto& [a, b] : sample_lengths(e, e, 500, 1)) {
    CHECK((a == 3 || a == 9 || a == 27));
    CHECK((b == 3 || b == 9 || b == 27));
  }
}

TEST_CASE("max_sequence clips the output length") {
  const auto d = LengthDistribution::lognormal(6.0, 1.5, 100'000);
  for (const auto& [a, b] : sample_lengths(d, d, 2000, 9, 1000)) {
    CHECK(b >= 1);
    CHECK(a + b <= std::max<std::int64_t>(1000, a + 1));
  }
}

TEST_CASE("invalid length distributions are rejected") {
  CHECK_THROWS_AS(LengthDistribution::fixed(0), ConfigError);
  CHECK_THROWS_AS(LengthDistribution::lognormal(1.0, -1.0, 10), ConfigError);
  CHECK_THROWS_AS(LengthDistribution::empirical({}), ConfigError);
  const auto f = LengthDistribution::fixed(4);
  CHECK_THROWS_AS(sample_lengths(f, f, 0, 1), ConfigError);
}

TEST_CASE("all-at-once arrivals are all zero") {
  const auto a = generate_arrivals(ArrivalProcess::all_at_once(), 1319, 5);
  REQUIRE(a.size() == 1319);
  CHECK(std::all_of(a.begin(), a.end(), [](double t) { return t == 0.0; }));
}

TEST_CASE("poisson arrivals") {
  CHECK_THROWS_AS(ArrivalProcess::poisson(0.0), ConfigError);
  CHECK_THROWS_AS(ArrivalProcess::poisson(-2.0), ConfigError);

  const auto a = generate_arrivals(ArrivalProcess::poisson(5.4), 10'000, 17);
  const double mean_gap = a.back() / static_cast<double>(a.size());
  CHECK(std::abs(mean_gap / (1000.0 / 5.4) - 1.0) < 0.03);
  const double rate = static_cast<double>(a.size()) / (a.back() / 1000.0);
  CHECK(std::abs(rate / 5.4 - 1.0) < 0.05);
}

TEST_CASE("arrivals are nondecreasing for every kind and seed") {
  const std::vector<ArrivalProcess> procs = {
      ArrivalProcess::all_at_once(), ArrivalProcess::poisson(3.0),
      ArrivalProcess::piecewise_poisson({{0.0, 1.0}, {2000.0, 20.0}, {4000.0, 0.5}}),
      ArrivalProcess::trace({0.0, 1.0, 1.0, 7.5, 20.0, 20.0, 31.0, 40.0, 41.0, 90.0})};
  for (const auto& p : procs) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto a = generate_arrivals(p, 10, seed);
      REQUIRE(a.size() == 10);
      CHECK(std::is_sorted(a.begin(), a.end()));
      CHECK(a.front() >= 0.0);
    }
  }
}

TEST_CASE("piecewise poisson follows each segment's rate") {
  const auto proc = ArrivalProcess::piecewise_poisson({{0.0, 2.0}, {100'000.0, 20.0}});
  const auto a = generate_arrivals(proc, 6000, 4);
  const auto slow = std::count_if(a.begin(), a.end(), [](double t) { return t < 100'000.0; });
  // 100 s at 2 qps.
  CHECK(std::abs(static_cast<double>(slow) - 200.0) < 45.0);
}

TEST_CASE("same seed gives the same workload") {
  const auto d = LengthDistribution::lognormal_with_mean(200, 1.0, 4000);
  CHECK(sample_lengths(d, d, 100, 8) == sample_lengths(d, d, 100, 8));
  CHECK(sample_lengths(d, d, 100, 8) != sample_lengths(d, d, 100, 9));
  const auto p = ArrivalProcess::poisson(4.0);
  CHECK(generate_arrivals(p, 100, 3) == generate_arrivals(p, 100, 3));
}

TEST_CASE("load_trace") {
  SUBCASE("three valid rows") {
    const auto path = temp_file("trace3.csv", "arrival_ms,l_in,l_out\n0,10,5\n1.5,20,6\n3,30,7\n");
    const auto reqs = load_trace(path);
    REQUIRE(reqs.size() == 3);
    CHECK(reqs[1].arrival_ms == 1.5);
    CHECK(reqs[2].l_in == 30);
    CHECK(reqs[2].l_out == 7);
  }
  SUBCASE("zero prompt length is a parse error") {
    const auto path = temp_file("trace_bad.csv", "arrival_ms,l_in,l_out\n0,10,5\n1,0,6\n");
    CHECK_THROWS_AS(load_trace(path), ParseError);
  }
  SUBCASE("bad header and junk") {
    CHECK_THROWS_AS(load_trace(temp_file("t_hdr.csv", "a,b,c\n0,1,1\n")), ParseError);
    CHECK_THROWS_AS(load_trace(temp_file("t_junk.csv", "arrival_ms,l_in,l_out\n0,x,1\n")),
                    ParseError);
    CHECK_THROWS_AS(load_trace("/nonexistent/trace.csv"), FileError);
  }
  SUBCASE("unsorted rows come back sorted and stable") {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> t(0, 20);
    std::string body = "arrival_ms,l_in,l_out\n";
    std::vector<std::pair<int, int>> rows;  // (arrival, row index)
    for (int i = 0; i < 300; ++i) {
      const int a = t(rng);
      rows.emplace_back(a, i);
      body += std::to_string(a) + "," + std::to_string(i + 1) + ",1\n";
    }
    const auto reqs = load_trace(temp_file("t_unsorted.csv", body));
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& x, const auto& y) { return x.first < y.first; });
    REQUIRE(reqs.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(reqs[i].arrival_ms == rows[i].first);
      CHECK(reqs[i].id == rows[i].second);
      CHECK(reqs[i].l_in == rows[i].second + 1);
    }
  }
  SUBCASE("write then read round-trips") {
    const auto original = load_trace(oracle::fixture("trace_small.csv"));
    const auto path = std::filesystem::temp_directory_path() / "trace_rt.csv";
    write_trace(path, original);
    const auto again = load_trace(path);
    REQUIRE(again.size() == original.size());
    for (std::size_t i = 0; i < again.size(); ++i) {
      CHECK(again[i].arrival_ms == original[i].arrival_ms);
      CHECK(again[i].l_in == original[i].l_in);
      CHECK(again[i].l_out == original[i].l_out);
    }
  }
}

TEST_CASE("estimate_moments") {
  const std::vector<LengthPair> same = {{100, 300}, {100, 300}};
  auto m = estimate_moments(same);
  CHECK(m.m == 400.0);
  CHECK(m.v == 0.0);

  const std::vector<LengthPair> two = {{100, 300}, {200, 500}};
  m = estimate_moments(two);
  CHECK(m.m == doctest::Approx(550.0));
  CHECK(m.v == doctest::Approx(12500.0));

  CHECK_THROWS_AS(estimate_moments(std::vector<LengthPair>{}), ConfigError);

  const std::vector<LengthPair> many(1000, {123457, 98765});
  CHECK(estimate_moments(many).v == 0.0);
}

TEST_CASE("moment window matches batch estimates over the last W pairs") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::int64_t> len(1, 5000);
  MomentWindow w(16);
  std::vector<LengthPair> all;
  for (int i = 0; i < 200; ++i) {
    const LengthPair p{len(rng), len(rng)};
    w.push(p.first, p.second);
    all.push_back(p);
    const auto from = all.size() > 16 ? all.size() - 16 : 0;
    const std::vector<LengthPair> tail(all.begin() + static_cast<std::ptrdiff_t>(from),
                                       all.end());
    const auto ref = estimate_moments(tail);
    const auto got = w.moments();
    CHECK(got.m == doctest::Approx(ref.m).epsilon(1e-9));
    CHECK(got.v == doctest::Approx(ref.v).epsilon(1e-6));
  }
  CHECK(w.size() == 16);
}

TEST_CASE("worst window takes component-wise maxima") {
  std::vector<RequestSpec> reqs;
  const std::vector<LengthPair> lens = {{10, 10}, {10, 10}, {500, 500}, {10, 10}, {10, 10}};
  for (std::size_t i = 0; i < lens.size(); ++i) {
    reqs.push_back({static_cast<std::int64_t>(i), 0.0, lens[i].first, lens[i].second});
  }
  const auto w = worst_window_moments(reqs, 2);
  CHECK(w.m == doctest::Approx(510.0));
  CHECK(w.v == doctest::Approx(2 * 245.0 * 245.0));
  const auto whole = worst_window_moments(reqs, 100);
  CHECK(whole.m == doctest::Approx(estimate_moments(lens).m));
}
