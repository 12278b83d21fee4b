#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <queue>

#include "sensorbp/errors.hpp"
#include "sensorbp/exact.hpp"
#include "sensorbp/lbp.hpp"
#include "sensorbp/netgen.hpp"
#include "test_util.hpp"

using namespace sensorbp;
using namespace testutil;

namespace {

double fire_mass(std::span<const double> composite) {
  double f = 0.0;
  for (std::size_t k = 1; k < composite.size(); k += 2) f += composite[k];
  return f;
}

// Edge-disjoint paths between two vertex sets (unit capacities, BFS augmenting).
std::size_t min_cut(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                    const std::vector<std::size_t>& src, const std::vector<std::size_t>& dst) {
  const std::size_t S = n, T = n + 1;
  std::vector<std::vector<int>> cap(n + 2, std::vector<int>(n + 2, 0));
  for (auto [a, b] : edges) {
    cap[a][b] += 1;
    cap[b][a] += 1;
  }
  for (auto s : src) cap[S][s] = 1 << 20;
  for (auto t : dst) cap[t][T] = 1 << 20;
  std::size_t flow = 0;
  for (;;) {
    std::vector<int> prev(n + 2, -1);
    prev[S] = static_cast<int>(S);
    std::queue<std::size_t> q;
    q.push(S);
    while (!q.empty() && prev[T] < 0) {
      const auto u = q.front();
      q.pop();
      for (std::size_t v = 0; v < n + 2; ++v) {
        if (prev[v] < 0 && cap[u][v] > 0) {
          prev[v] = static_cast<int>(u);
          q.push(v);
        }
      }
    }
    if (prev[T] < 0) return flow;
    for (std::size_t v = T; v != S; v = static_cast<std::size_t>(prev[v])) {
      cap[static_cast<std::size_t>(prev[v])][v] -= 1;
      cap[v][static_cast<std::size_t>(prev[v])] += 1;
    }
    ++flow;
  }
}

}  // namespace

TEST_CASE("cluster template topology") {
  const auto t = make_cluster_template(ClusterSpec{});
  const auto& bn = t.local_bn;
  CHECK(bn.size() == 7);
  auto id = [&](const std::string& name) { return *bn.find(name); };
  auto parents_of = [&](const std::string& name) {
    std::vector<std::string> out;
    for (VarId p : bn.parents()[id(name)]) out.push_back(bn.variables()[p].name);
    std::sort(out.begin(), out.end());
    return out;
  };
  CHECK(parents_of("FIRE-IN-ROOM").empty());
  CHECK(parents_of("TEMP-IN-ROOM") == std::vector<std::string>{"FIRE-IN-ROOM"});
  CHECK(parents_of("BROKEN(S0)") == std::vector<std::string>{"FIRE-IN-ROOM"});
  CHECK(parents_of("TEMP(S0)") == std::vector<std::string>{"FIRE-IN-ROOM", "TEMP-IN-ROOM"});
  CHECK(parents_of("NOISY(S0)") == std::vector<std::string>{"BIAS(S0)", "TEMP(S0)"});
  CHECK(parents_of("READING(S0)") == std::vector<std::string>{"BROKEN(S0)", "NOISY(S0)"});
  CHECK(bn.variables()[id("TEMP-IN-ROOM")].cardinality == 4);
  CHECK(bn.variables()[id("BIAS(S0)")].cardinality == 3);
  CHECK(bn.variables()[id("READING(S0)")].cardinality == 4);

  ClusterSpec two;
  two.sensors_per_cluster = 2;
  CHECK(make_cluster_template(two).local_bn.size() == 12);
}

TEST_CASE("cluster spec validation") {
  ClusterSpec s;
  s.fire_prior = 1.0;
  CHECK_THROWS_AS(make_cluster_template(s), ModelError);
  s = {};
  s.temp_levels = 1;
  CHECK_THROWS_AS(make_cluster_template(s), ModelError);
  CHECK_THROWS_AS(coupling_table(CouplingSpec{0.0, 1.0}, 4), ModelError);
}

TEST_CASE("coupling table shape") {
  const CouplingSpec cp;
  const auto psi = coupling_table(cp, 4);
  REQUIRE(psi.size() == 64);
  auto at = [&](std::size_t t, bool f, std::size_t t2, bool f2) {
    return psi[SensorNetwork::composite_state(t, f) * 8 + SensorNetwork::composite_state(t2, f2)];
  };
  CHECK(at(1, false, 1, false) == 1.0);
  CHECK(at(1, false, 2, false) == doctest::Approx(std::exp(-cp.temp_agreement)));
  CHECK(at(0, false, 3, false) < at(0, false, 2, false));
  CHECK(at(2, true, 2, false) == doctest::Approx(std::exp(-cp.fire_agreement)));
  CHECK(at(2, true, 2, true) > at(2, true, 2, false));
}

TEST_CASE("gen_firesensor 10x10") {
  const auto net = gen_firesensor(10, 10, ClusterSpec{}, CouplingSpec{}, 1);
  CHECK(net.clusters.size() == 100);
  CHECK(net.model.num_variables() == 100);
  std::size_t unary = 0, binary = 0;
  for (const auto& f : net.model.factors()) {
    (f.arity() == 1 ? unary : binary)++;
    for (double x : f.values()) CHECK(x > 0.0);
  }
  CHECK(unary == 100);
  CHECK(binary == 180);
  CHECK(net.raw_variable_count == 700);
  CHECK(net.rows == 10);
  CHECK(net.clusters[23].position == std::make_pair(std::size_t{2}, std::size_t{3}));
  CHECK(net.model.cardinality(0) == 8);
}

TEST_CASE("gen_firesensor 1x1 equals local evidence") {
  ClusterSpec s;
  s.initial_reading_fraction = 1.0;
  const auto net = gen_firesensor(1, 1, s, CouplingSpec{}, 5);
  CHECK(net.model.num_factors() == 1);
  const auto r = run_synchronous(net.model, {}, LbpConfig{});
  const auto phi = net.phi_for(net.clusters[0].readings, 0);
  CHECK(max_abs_diff(r.beliefs[0].probs, phi.values()) <= 1e-12);
}

TEST_CASE("calibration") {
  const auto net = gen_firesensor(10, 10, ClusterSpec{}, CouplingSpec{}, 1);
  const auto cal = cluster_calibration(net.cluster);
  CHECK(cal.prior_fire < 0.05);
  CHECK(cal.alarm_fire > 0.5);
  // Network-wide: no evidence keeps every fire posterior below 0.05.
  const auto r = run_synchronous(net.model, {}, LbpConfig{});
  REQUIRE(r.report.converged);
  for (const auto& b : r.beliefs) CHECK(fire_mass(b.probs) < 0.05);
  // One top reading raises its own cluster's posterior inside the network too.
  std::vector<int> hot{static_cast<int>(net.spec.readings()) - 1};
  const auto fg = net.model.with_factor(net.clusters[44].phi, net.phi_for(hot, 44));
  const auto r2 = run_synchronous(fg, {}, LbpConfig{});
  CHECK(fire_mass(r2.beliefs[44].probs) > fire_mass(r.beliefs[44].probs));

  ClusterSpec bad;
  bad.fire_prior = 0.2;
  CHECK_THROWS_AS(gen_firesensor(2, 2, bad, CouplingSpec{}, 1), ModelError);
  bad.check_calibration = false;
  CHECK_NOTHROW(gen_firesensor(2, 2, bad, CouplingSpec{}, 1));
}

TEST_CASE("property: a top reading raises the fire posterior") {
  for (std::size_t sensors : {1, 2, 3}) {
    ClusterSpec s;
    s.sensors_per_cluster = sensors;
    const auto t = make_cluster_template(s);
    const auto prior = fire_mass(local_evidence(t.local_bn, t.high_level, {}).values());
    for (VarId r : t.readings) {
      Evidence e{{r, s.readings() - 1}};
      CHECK(fire_mass(local_evidence(t.local_bn, t.high_level, e).values()) > prior);
    }
  }
}

TEST_CASE("generation is deterministic per seed") {
  ClusterSpec s;
  s.initial_reading_fraction = 0.5;
  const auto a = gen_firesensor(4, 5, s, CouplingSpec{}, 9);
  const auto b = gen_firesensor(4, 5, s, CouplingSpec{}, 9);
  const auto c = gen_firesensor(4, 5, s, CouplingSpec{}, 10);
  CHECK(a.model == b.model);
  CHECK_FALSE(a.model == c.model);
}

TEST_CASE("gen_floorplan") {
  FloorPlanSpec path;
  path.rooms = 3;
  path.edges = {{0, 1}, {1, 2}};
  const auto p = gen_floorplan(path, 1);
  std::size_t binary = 0;
  for (const auto& f : p.model.factors()) binary += f.arity() == 2;
  CHECK(binary == 2);

  FloorPlanSpec broken = path;
  broken.edges = {{0, 1}};
  CHECK_THROWS_AS(gen_floorplan(broken, 1), ModelError);
  broken.allow_disconnected = true;
  CHECK_NOTHROW(gen_floorplan(broken, 1));
  broken.edges = {{0, 1}, {1, 0}};
  CHECK_THROWS_AS(gen_floorplan(broken, 1), ModelError);
  broken.edges = {{0, 5}};
  CHECK_THROWS_AS(gen_floorplan(broken, 1), ModelError);

  auto lattice = lattice_floorplan(4, 4);
  CHECK(gen_floorplan(lattice, 3).model == gen_firesensor(4, 4, ClusterSpec{}, CouplingSpec{}, 3).model);
}

TEST_CASE("default floor plan has a narrower waist than the lattice") {
  const auto plan = default_floorplan();
  CHECK(plan.rooms == 100);
  CHECK(is_connected(plan.rooms, plan.edges));
  const auto lattice = lattice_floorplan(10, 10);
  std::vector<std::size_t> top, bottom;
  for (std::size_t c = 0; c < 10; ++c) {
    top.push_back(c);
    bottom.push_back(90 + c);
  }
  const auto cut_plan = min_cut(100, plan.edges, top, bottom);
  const auto cut_lattice = min_cut(100, lattice.edges, top, bottom);
  CHECK(cut_lattice == 10);
  CHECK(cut_plan < cut_lattice);
}

TEST_CASE("random generators") {
  const auto one = gen_random_polytree(1, 3, 1);
  CHECK(one.num_variables() == 1);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto t = random_tree_pairwise(10, 4, seed);
    CHECK(t.edges().size() == 9);
    std::vector<std::pair<std::size_t, std::size_t>> e;
    for (const auto& ed : t.edges()) e.emplace_back(ed.i, ed.j);
    CHECK(is_connected(10, e));
    const auto l = random_loopy_pairwise(10, 4, 3, 1.0, seed);
    CHECK(l.edges().size() == 13);
    const auto bn = random_bayes_net(8, 3, 3, seed);
    CHECK(bn.size() == 8);
  }
}
