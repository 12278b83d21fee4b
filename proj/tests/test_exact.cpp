#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sensorbp/errors.hpp"
#include "sensorbp/exact.hpp"
#include "sensorbp/netgen.hpp"
#include "test_util.hpp"

using namespace sensorbp;
using namespace testutil;

namespace {
FactorGraphModel two_node() {
  PairwiseMarkovNet p(binary_vars(2), {FactorTable({0}, {2}, {0.9, 0.1}), FactorTable({1}, {2}, {0.5, 0.5})},
                      {{0, 1, FactorTable({0, 1}, {2, 2}, {1, 0.5, 0.5, 1})}});
  return pairwise_to_factor_graph(p);
}
}  // namespace

TEST_CASE("variable_eliminate examples") {
  const auto prior = bn_to_factor_graph(BayesNet(binary_vars(1), {{}}, {FactorTable({0}, {2}, {0.2, 0.8})}));
  const VarId q0[] = {0};
  const auto m = variable_eliminate(prior, q0, {});
  CHECK(m.values()[0] == doctest::Approx(0.2));
  CHECK(m.values()[1] == doctest::Approx(0.8));

  const VarId q1[] = {1};
  const auto m2 = variable_eliminate(two_node(), q1, {});
  CHECK(m2.values()[0] == doctest::Approx(0.95 / 1.5).epsilon(1e-12));
  CHECK(m2.values()[1] == doctest::Approx(0.55 / 1.5).epsilon(1e-12));

  const auto obs = variable_eliminate(two_node(), q1, {{1, 1}});
  CHECK(obs.values()[0] == 0.0);
  CHECK(obs.values()[1] == 1.0);
}

TEST_CASE("variable_eliminate joint query and errors") {
  Rng rng(5);
  const auto fg = random_model(5, 6, 3, rng);
  const VarId q[] = {3, 1};
  const auto joint = variable_eliminate(fg, q, {});
  CHECK(joint.scope() == std::vector<VarId>{3, 1});
  const auto ref = enumerate_marginals(fg, {});
  // Summing the joint over var 1 gives the marginal of 3.
  for (std::size_t a = 0; a < fg.cardinality(3); ++a) {
    double s = 0.0;
    for (std::size_t b = 0; b < fg.cardinality(1); ++b) s += joint.values()[a * fg.cardinality(1) + b];
    CHECK(std::abs(s - ref[3][a]) <= 1e-12);
  }
  CHECK_THROWS_AS(variable_eliminate(fg, std::span<const VarId>{}, {}), ModelError);

  // Zero-mass evidence.
  BayesNet det(binary_vars(2), {{}, {0}},
               {FactorTable({0}, {2}, {0.5, 0.5}), FactorTable({0, 1}, {2, 2}, {1.0, 0.0, 0.0, 1.0})});
  const VarId q0[] = {0};
  CHECK_THROWS_AS(variable_eliminate(bn_to_factor_graph(det), q0, {{0, 0}, {1, 1}}), ZeroMassError);
}

TEST_CASE("brute_force_marginals examples") {
  BayesNet det(binary_vars(2), {{}, {0}},
               {FactorTable({0}, {2}, {0.5, 0.5}), FactorTable({0, 1}, {2, 2}, {1.0, 0.0, 0.0, 1.0})});
  const auto r = brute_force_marginals(bn_to_factor_graph(det), {{0, 1}});
  CHECK(r.marginals[1].probs[0] == 0.0);
  CHECK(r.marginals[1].probs[1] == 1.0);
  CHECK(r.log_partition == doctest::Approx(std::log(0.5)));

  // Uniform 3x3 grid.
  std::vector<FactorTable> phi;
  std::vector<PairwiseEdge> edges;
  for (VarId i = 0; i < 9; ++i) phi.emplace_back(std::vector<VarId>{i}, std::vector<std::size_t>{2}, std::vector<double>{1, 1});
  for (VarId i = 0; i < 9; ++i) {
    if (i % 3 < 2) edges.push_back({i, i + 1, FactorTable({i, i + 1}, {2, 2}, {1, 1, 1, 1})});
    if (i < 6) edges.push_back({i, i + 3, FactorTable({i, i + 3}, {2, 2}, {1, 1, 1, 1})});
  }
  const auto grid = brute_force_marginals(pairwise_to_factor_graph(PairwiseMarkovNet(binary_vars(9), phi, edges)), {});
  for (const auto& m : grid.marginals) {
    CHECK(m.probs[0] == doctest::Approx(0.5));
    CHECK(m.probs[1] == doctest::Approx(0.5));
  }
  CHECK(grid.log_partition == doctest::Approx(9 * std::log(2.0)));
}

TEST_CASE("brute force size guard") {
  std::vector<FactorTable> fs;
  for (VarId i = 0; i < 21; ++i) fs.emplace_back(std::vector<VarId>{i}, std::vector<std::size_t>{2}, std::vector<double>{1, 1});
  const FactorGraphModel big(binary_vars(21), fs);
  CHECK_THROWS_AS(brute_force_marginals(big, {}), SizeGuardError);
  CHECK_NOTHROW(brute_force_marginals(big, {{0, 0}}));
}

TEST_CASE("property: elimination matches brute force and enumeration") {
  Rng rng(21);
  for (int t = 0; t < 60; ++t) {
    const auto fg = random_model(2 + rng.below(7), 3 + rng.below(8), 3, rng);
    Evidence e;
    if (rng.uniform() < 0.5) e[rng.below(fg.num_variables())] = 0;
    const auto ve = exact_marginals(fg, e);
    const auto bf = brute_force_marginals(fg, e);
    const auto en = enumerate_marginals(fg, e);
    for (VarId v = 0; v < fg.num_variables(); ++v) {
      CHECK(max_abs_diff(ve[v].probs, bf.marginals[v].probs) <= 1e-12);
      CHECK(max_abs_diff(ve[v].probs, en[v]) <= 1e-12);
      double s = 0.0;
      for (double p : bf.marginals[v].probs) s += p;
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("property: elimination order does not matter") {
  Rng rng(22);
  for (int t = 0; t < 40; ++t) {
    const auto fg = random_model(7, 9, 3, rng);
    const VarId q[] = {0};
    std::vector<VarId> order{1, 2, 3, 4, 5, 6};
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const auto a = variable_eliminate(fg, q, {}, order);
    std::reverse(order.begin(), order.end());
    const auto b = variable_eliminate(fg, q, {}, order);
    CHECK(max_abs_diff(a.values(), b.values()) <= 1e-12);
  }
}

TEST_CASE("local_evidence") {
  const auto t = make_cluster_template(ClusterSpec{});
  const auto prior = local_evidence(t.local_bn, t.high_level, {});
  const auto bf = brute_force_marginals(bn_to_factor_graph(t.local_bn), {});
  // Prior over (room, fire) from brute force: fire and room marginals agree.
  std::vector<double> room(4, 0.0), fire(2, 0.0);
  for (std::size_t k = 0; k < prior.size(); ++k) {
    room[k / 2] += prior.values()[k];
    fire[k % 2] += prior.values()[k];
  }
  CHECK(max_abs_diff(room, bf.marginals[t.high_level[0]].probs) <= 1e-12);
  CHECK(max_abs_diff(fire, bf.marginals[t.high_level[1]].probs) <= 1e-12);

  Evidence hot;
  hot[t.readings[0]] = 3;
  const auto post = local_evidence(t.local_bn, t.high_level, hot);
  const auto bf_hot = brute_force_marginals(bn_to_factor_graph(t.local_bn), hot);
  double fire_post = 0.0;
  for (std::size_t k = 1; k < post.size(); k += 2) fire_post += post.values()[k];
  CHECK(std::abs(fire_post - bf_hot.marginals[t.high_level[1]].probs[1]) <= 1e-12);
  CHECK(fire_post > fire[1]);

  // A reading independent of the high-level variables leaves φ unchanged.
  std::vector<Variable> vars = binary_vars(3);
  BayesNet sep(vars, {{}, {0}, {}},
               {FactorTable({0}, {2}, {0.3, 0.7}), FactorTable({0, 1}, {2, 2}, {0.6, 0.4, 0.2, 0.8}),
                FactorTable({2}, {2}, {0.5, 0.5})});
  const VarId hl[] = {0, 1};
  const auto a = local_evidence(sep, hl, {});
  const auto b = local_evidence(sep, hl, {{2, 1}});
  CHECK(max_abs_diff(a.values(), b.values()) <= 1e-12);
}
