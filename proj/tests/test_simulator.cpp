#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>

#include "sensorbp/errors.hpp"
#include "sensorbp/exact.hpp"
#include "sensorbp/lbp.hpp"
#include "sensorbp/netgen.hpp"
#include "sensorbp/simulator.hpp"
#include "test_util.hpp"

using namespace sensorbp;
using namespace testutil;

TEST_CASE("sample_interval mean") {
  for (double rate : {0.5, 1.0, 4.0}) {
    Rng rng(derive_seed(3, static_cast<std::uint64_t>(rate * 10)));
    double sum = 0.0;
    const int n = 200000;
    for (int k = 0; k < n; ++k) {
      const double x = sample_interval(rate, rng);
      CHECK(x >= 0.0);
      sum += x;
    }
    // Standard error of the mean is 1/(rate·sqrt(n)); allow ~4.5 of them.
    CHECK(std::abs(sum / n - 1.0 / rate) < 0.01 / rate);
  }
  Rng rng(1);
  CHECK_THROWS_AS(sample_interval(0.0, rng), ModelError);
  CHECK_THROWS_AS(sample_interval(-1.0, rng), ModelError);
}

TEST_CASE("sample_interval is deterministic per seed") {
  Rng a(77), b(77);
  for (int k = 0; k < 100; ++k) CHECK(sample_interval(2.0, a) == sample_interval(2.0, b));
}

TEST_CASE("tv_error and count_incorrect") {
  const std::vector<double> p{0.5, 0.5}, q{0.6, 0.4};
  CHECK(tv_error(p, q) == doctest::Approx(0.1));
  CHECK(tv_error(p, p) == 0.0);
  CHECK_THROWS_AS(tv_error(p, std::vector<double>{1.0, 0.0, 0.0}), ModelError);

  std::vector<DiscreteDistribution> b{{0, {0.5, 0.5}}, {1, {0.9, 0.1}}, {2, {0.2, 0.8}}};
  std::vector<DiscreteDistribution> r{{0, {0.5, 0.5}}, {1, {0.5, 0.5}}, {2, {0.205, 0.795}}};
  const auto c = count_incorrect(b, r, 1e-2);
  CHECK(c.count == 1);
  CHECK(c.affected == std::vector<VarId>{1});
  CHECK(c.mean_tv_error == doctest::Approx(0.4));
  const std::vector<VarId> only{0, 2};
  CHECK(count_incorrect(b, r, 1e-2, only).count == 0);
  CHECK(count_incorrect(b, r, 1e-3).count == 2);
}

TEST_CASE("rate policies") {
  const auto net = gen_firesensor(4, 4, ClusterSpec{}, CouplingSpec{}, 1);
  const std::array<bool, 16> none{};
  auto u = RatePolicy::parse("uniform:2").rates(net.model, none, 1);
  for (double x : u) CHECK(x == 2.0);
  auto s = RatePolicy::parse("split:0.5x10").rates(net.model, none, 1);
  CHECK(std::count(s.begin(), s.end(), 10.0) == 8);
  CHECK(std::count(s.begin(), s.end(), 1.0) == 8);
  auto t = RatePolicy::parse("topk:4x5").rates(net.model, none, 1);
  CHECK(std::count(t.begin(), t.end(), 5.0) == 4);
  // Interior nodes are the best connected on a 4x4 lattice.
  for (VarId v : {5, 6, 9, 10}) CHECK(t[v] == 5.0);
  std::array<bool, 16> dead{};
  dead[5] = true;
  CHECK(RatePolicy::parse("topk:4x5").rates(net.model, dead, 1)[5] == 0.0);
  for (const char* bad : {"", "fast", "split:2x3", "topk:1.5x2", "uniform:-1", "split:0.5x"}) {
    CHECK_THROWS_AS(RatePolicy::parse(bad).validate(16), ModelError);
  }
  CHECK(RatePolicy::parse(RatePolicy::split(0.25, 4).to_string()).fraction_fast == 0.25);
}

TEST_CASE("single node converges to its local evidence") {
  ClusterSpec s;
  s.initial_reading_fraction = 1.0;
  const auto net = gen_firesensor(1, 1, s, CouplingSpec{}, 2);
  SimConfig cfg;
  cfg.seed = 4;
  const auto r = run_async(net.model, {}, cfg);
  CHECK(r.report.converged);
  const auto phi = normalize(net.model.factor(0));
  CHECK(max_abs_diff(r.beliefs[0].probs, phi.values()) < 1e-12);
}

TEST_CASE("async and sync agree at convergence") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ClusterSpec s;
    s.initial_reading_fraction = 0.3;
    const auto net = gen_firesensor(5, 5, s, CouplingSpec{}, seed);
    LbpConfig lc;
    lc.message_tolerance = 1e-9;
    const auto sync = run_synchronous(net.model, {}, lc);
    REQUIRE(sync.report.converged);
    for (const char* policy : {"uniform", "split:0.5x10", "topk:5x3"}) {
      SimConfig cfg;
      cfg.seed = seed;
      cfg.message_tolerance = 1e-9;
      cfg.rate_policy = RatePolicy::parse(policy);
      const auto a = run_async(net.model, {}, cfg);
      REQUIRE(a.report.converged);
      for (std::size_t v = 0; v < net.model.num_variables(); ++v) {
        CHECK(tv_error(a.beliefs[v], sync.beliefs[v]) < 1e-6);
      }
    }
  }
}

TEST_CASE("async is deterministic per seed") {
  ClusterSpec s;
  s.initial_reading_fraction = 0.3;
  const auto net = gen_firesensor(4, 4, s, CouplingSpec{}, 1);
  SimConfig cfg;
  cfg.seed = 11;
  cfg.rate_policy = RatePolicy::parse("split:0.5x10");
  const auto ref = run_synchronous(net.model, {}, LbpConfig{}).beliefs;
  const auto a = run_async(net.model, {}, cfg, ref);
  const auto b = run_async(net.model, {}, cfg, ref);
  CHECK(a.report.per_node_fire_count == b.report.per_node_fire_count);
  CHECK(a.series == b.series);
  cfg.seed = 12;
  const auto c = run_async(net.model, {}, cfg, ref);
  CHECK(a.report.per_node_fire_count != c.report.per_node_fire_count);
}

TEST_CASE("split rates produce proportional firing counts") {
  const auto net = gen_firesensor(10, 10, ClusterSpec{}, CouplingSpec{}, 1);
  SimConfig cfg;
  cfg.seed = 5;
  cfg.rate_policy = RatePolicy::split(0.5, 10.0);
  cfg.max_time = 200.0;
  cfg.message_tolerance = 0.0;  // never converges; runs to max_time
  const std::array<bool, 100> none{};
  const auto rates = cfg.rate_policy.rates(net.model, none, cfg.seed);
  const auto r = run_async(net.model, {}, cfg);
  double fast = 0.0, slow = 0.0;
  for (std::size_t v = 0; v < 100; ++v) (rates[v] > 1.0 ? fast : slow) += r.report.per_node_fire_count[v];
  CHECK(std::abs(fast / slow / 10.0 - 1.0) < 0.05);
}

TEST_CASE("dead nodes never fire and a dead node barely disturbs distant beliefs") {
  ClusterSpec s;
  s.initial_reading_fraction = 0.2;
  const auto net = gen_firesensor(10, 10, s, CouplingSpec{}, 3);
  const auto ref = run_synchronous(net.model, {}, LbpConfig{}).beliefs;
  SimConfig cfg;
  cfg.seed = 2;
  cfg.dead_nodes = {44};
  const auto r = run_async(net.model, {}, cfg, ref);
  CHECK(r.report.converged);
  CHECK(r.report.per_node_fire_count[44] == 0);
  for (std::size_t v = 0; v < 100; ++v) {
    const auto row = v / 10, col = v % 10;
    const auto dist = (row > 4 ? row - 4 : 4 - row) + (col > 4 ? col - 4 : 4 - col);
    if (dist >= 4) CHECK(tv_error(r.beliefs[v], ref[v]) < 1e-2);
  }
}

TEST_CASE("series rows are emitted at whole time steps") {
  ClusterSpec s;
  s.initial_reading_fraction = 0.2;
  const auto net = gen_firesensor(3, 3, s, CouplingSpec{}, 1);
  const auto ref = run_synchronous(net.model, {}, LbpConfig{}).beliefs;
  SimConfig cfg;
  cfg.max_time = 5.0;
  cfg.message_tolerance = 0.0;
  const auto r = run_async(net.model, {}, cfg, ref);
  REQUIRE(r.series.rows.size() >= 5);
  for (std::size_t k = 0; k + 1 < r.series.rows.size(); ++k) {
    CHECK(r.series.rows[k].time == doctest::Approx(static_cast<double>(k + 1)));
    if (k > 0) CHECK(r.series.rows[k].total_propagations >= r.series.rows[k - 1].total_propagations);
  }
  // A final row closes the run at its end time.
  CHECK(r.series.rows.back().time == r.end_time);
}

TEST_CASE("config validation") {
  SimConfig cfg;
  cfg.dead_nodes = {99};
  CHECK_THROWS_AS(cfg.validate(10), ModelError);
  cfg = {};
  cfg.message_tolerance = -1.0;
  CHECK_THROWS_AS(cfg.validate(10), ModelError);
  DynamicConfig d;
  d.observe_prob = 1.5;
  CHECK_THROWS_AS(d.validate(), ModelError);
}

TEST_CASE("dynamic run without churn settles to zero error") {
  ClusterSpec s;
  s.initial_reading_fraction = 0.2;
  const auto net = gen_firesensor(5, 5, s, CouplingSpec{}, 4);
  DynamicConfig d;
  d.observe_prob = 0.0;
  d.duration = 40.0;
  SimConfig cfg;
  cfg.seed = 3;
  const auto r = run_dynamic(net, d, cfg);
  REQUIRE(!r.series.rows.empty());
  CHECK(r.observation_changes == 0);
  CHECK(r.distinct_references == 1);
  for (const auto& row : r.series.rows) {
    if (row.time >= 20.0) CHECK(row.incorrect_fraction == 0.0);
  }
  CHECK(r.series.rows.size() == 400);
  CHECK(r.series.rows.front().time == doctest::Approx(0.1));
  CHECK(r.series.rows.back().time == doctest::Approx(40.0));
}

TEST_CASE("dynamic run is deterministic and independent of job count") {
  const auto net = gen_firesensor(4, 4, ClusterSpec{}, CouplingSpec{}, 4);
  DynamicConfig d;
  d.observe_prob = 0.1;
  d.duration = 15.0;
  SimConfig cfg;
  cfg.seed = 8;
  const auto a = run_dynamic(net, d, cfg);
  d.jobs = 3;
  const auto b = run_dynamic(net, d, cfg);
  CHECK(a.series == b.series);
  CHECK(a.observation_changes > 0);
}
