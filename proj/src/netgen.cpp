#include "sensorbp/netgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "sensorbp/errors.hpp"
#include "sensorbp/exact.hpp"
#include "sensorbp/rng.hpp"

namespace sensorbp {

namespace {

std::vector<double> decaying_row(std::size_t levels, double center, double scale) {
  std::vector<double> row(levels);
  for (std::size_t k = 0; k < levels; ++k) {
    row[k] = std::exp(-std::abs(static_cast<double>(k) - center) / scale);
  }
  normalize_in_place(row);
  return row;
}

std::vector<std::string> level_names(const std::string& prefix, std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < n; ++k) names.push_back(prefix + std::to_string(k));
  return names;
}

double standard_normal(Rng& rng) {
  // Box-Muller; one draw per call keeps the stream simple.
  const double u1 = 1.0 - rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace

void ClusterSpec::validate() const {
  if (sensors_per_cluster < 1) throw ModelError("a cluster needs at least one sensor");
  if (temp_levels < 2 || bias_levels < 1 || readings() < 2) {
    throw ModelError("cluster cardinalities too small");
  }
  auto prob = [](double p) { return p > 0.0 && p < 1.0; };
  if (!prob(fire_prior) || !prob(broken_prior) || !prob(broken_given_fire) ||
      !(bias_center_mass > 0.0 && bias_center_mass <= 1.0)) {
    throw ModelError("cluster probabilities must lie strictly inside (0, 1)");
  }
  if (!(room_temp_decay >= 0.0 && room_temp_rise >= 0.0 && hot_penalty >= 0.0 && temp_spread > 0.0 && temp_spread_given_fire > 0.0 &&
        reading_noise > 0.0)) {
    throw ModelError("cluster spread parameters must be positive");
  }
  if (!(initial_reading_fraction >= 0.0 && initial_reading_fraction <= 1.0)) {
    throw ModelError("initial_reading_fraction must lie in [0, 1]");
  }
}

void CouplingSpec::validate() const {
  if (!(temp_agreement > 0.0 && fire_agreement > 0.0)) {
    throw ModelError("coupling strengths must be positive");
  }
}

ClusterTemplate make_cluster_template(const ClusterSpec& spec) {
  spec.validate();
  const std::size_t T = spec.temp_levels;
  const std::size_t B = spec.bias_levels;
  const std::size_t R = spec.readings();

  std::vector<Variable> vars;
  std::vector<std::vector<VarId>> parents;
  std::vector<FactorTable> cpts;
  auto add = [&](std::string name, std::size_t card, std::vector<std::string> states,
                 std::vector<VarId> pa) {
    VarId id = vars.size();
    vars.push_back({id, std::move(name), card, std::move(states)});
    parents.push_back(std::move(pa));
    return id;
  };

  const VarId fire = add("FIRE-IN-ROOM", 2, {"no", "yes"}, {});
  const VarId room = add("TEMP-IN-ROOM", T, level_names("t", T), {fire});
  cpts.emplace_back(std::vector<VarId>{fire}, std::vector<std::size_t>{2},
                    std::vector<double>{1.0 - spec.fire_prior, spec.fire_prior});
  {
    std::vector<double> v;
    for (int f = 0; f < 2; ++f) {
      std::vector<double> row(T);
      for (std::size_t t = 0; t < T; ++t) {
        row[t] = f == 0 ? std::exp(-spec.room_temp_decay * static_cast<double>(t))
                        : std::exp(-spec.room_temp_rise * static_cast<double>(T - 1 - t));
        if (f == 0 && t == T - 1) row[t] *= std::exp(-spec.hot_penalty);
      }
      normalize_in_place(row);
      v.insert(v.end(), row.begin(), row.end());
    }
    cpts.emplace_back(std::vector<VarId>{fire, room}, std::vector<std::size_t>{2, T}, std::move(v));
  }

  ClusterTemplate out;
  out.high_level = {room, fire};
  const std::size_t center = B / 2;
  for (std::size_t s = 0; s < spec.sensors_per_cluster; ++s) {
    const std::string sfx = "(S" + std::to_string(s) + ")";
    const VarId broken = add("BROKEN" + sfx, 2, {"no", "yes"}, {fire});
    cpts.emplace_back(std::vector<VarId>{fire, broken}, std::vector<std::size_t>{2, 2},
                      std::vector<double>{1.0 - spec.broken_prior, spec.broken_prior,
                                          1.0 - spec.broken_given_fire, spec.broken_given_fire});

    const VarId bias = add("BIAS" + sfx, B, level_names("b", B), {});
    {
      std::vector<double> v(B, B > 1 ? (1.0 - spec.bias_center_mass) / static_cast<double>(B - 1) : 1.0);
      v[center] = B > 1 ? spec.bias_center_mass : 1.0;
      cpts.emplace_back(std::vector<VarId>{bias}, std::vector<std::size_t>{B}, std::move(v));
    }

    const VarId temp = add("TEMP" + sfx, T, level_names("t", T), {fire, room});
    {
      std::vector<double> v;
      for (int f = 0; f < 2; ++f) {
        for (std::size_t r = 0; r < T; ++r) {
          auto row = decaying_row(T, static_cast<double>(r),
                                  f == 0 ? spec.temp_spread : spec.temp_spread_given_fire);
          v.insert(v.end(), row.begin(), row.end());
        }
      }
      cpts.emplace_back(std::vector<VarId>{fire, room, temp}, std::vector<std::size_t>{2, T, T},
                        std::move(v));
    }

    const VarId noisy = add("NOISY" + sfx, T, level_names("t", T), {temp, bias});
    {
      std::vector<double> v;
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t b = 0; b < B; ++b) {
          const double target = std::clamp(static_cast<double>(t) + static_cast<double>(b) -
                                                static_cast<double>(center),
                                            0.0, static_cast<double>(T - 1));
          auto row = decaying_row(T, target, spec.reading_noise);
          v.insert(v.end(), row.begin(), row.end());
        }
      }
      cpts.emplace_back(std::vector<VarId>{temp, bias, noisy}, std::vector<std::size_t>{T, B, T},
                        std::move(v));
    }

    const VarId reading = add("READING" + sfx, R, level_names("r", R), {noisy, broken});
    {
      std::vector<double> v;
      for (std::size_t n = 0; n < T; ++n) {
        const double target = std::round(static_cast<double>(n) * static_cast<double>(R - 1) /
                                         static_cast<double>(T - 1));
        auto working = decaying_row(R, target, spec.reading_noise);
        v.insert(v.end(), working.begin(), working.end());
        v.insert(v.end(), R, 1.0 / static_cast<double>(R));
      }
      cpts.emplace_back(std::vector<VarId>{noisy, broken, reading},
                        std::vector<std::size_t>{T, 2, R}, std::move(v));
    }
    out.readings.push_back(reading);
  }
  // Factor order must follow variable order.
  std::vector<FactorTable> ordered(vars.size());
  for (auto& c : cpts) ordered[c.scope().back()] = std::move(c);
  out.local_bn = BayesNet(std::move(vars), std::move(parents), std::move(ordered));
  return out;
}

Calibration cluster_calibration(const ClusterTemplate& t) {
  auto fire_mass = [&](const Evidence& ev) {
    auto phi = local_evidence(t.local_bn, t.high_level, ev);
    double f = 0.0;
    for (std::size_t k = 1; k < phi.size(); k += 2) f += phi.values()[k];
    return f;
  };
  Calibration c;
  c.prior_fire = fire_mass({});
  Evidence ev;
  const VarId r = t.readings.front();
  ev[r] = t.local_bn.variables()[r].cardinality - 1;
  c.alarm_fire = fire_mass(ev);
  return c;
}

std::vector<double> coupling_table(const CouplingSpec& coupling, std::size_t temp_levels) {
  coupling.validate();
  const std::size_t n = 2 * temp_levels;
  std::vector<double> psi(n * n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      const double dt = std::abs(static_cast<double>(a / 2) - static_cast<double>(b / 2));
      const bool agree = (a % 2) == (b % 2);
      psi[a * n + b] = std::exp(-coupling.temp_agreement * dt) *
                       (agree ? 1.0 : std::exp(-coupling.fire_agreement));
    }
  }
  return psi;
}

FactorTable SensorNetwork::phi_for(std::span<const int> readings, VarId node) const {
  Evidence ev;
  for (std::size_t s = 0; s < readings.size() && s < cluster.readings.size(); ++s) {
    if (readings[s] >= 0) ev[cluster.readings[s]] = static_cast<std::size_t>(readings[s]);
  }
  auto phi = local_evidence(cluster.local_bn, cluster.high_level, ev);
  return FactorTable({node}, {phi.size()}, phi.values());
}

bool is_connected(std::size_t nodes, std::span<const std::pair<std::size_t, std::size_t>> edges) {
  if (nodes == 0) return true;
  std::vector<std::size_t> parent(nodes);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto root = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::size_t components = nodes;
  for (auto [a, b] : edges) {
    auto ra = root(a), rb = root(b);
    if (ra != rb) {
      parent[ra] = rb;
      --components;
    }
  }
  return components == 1;
}

SensorNetwork gen_floorplan(const FloorPlanSpec& spec, std::uint64_t seed) {
  if (spec.rooms == 0) throw ModelError("floor plan has no rooms");
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (auto [a, b] : spec.edges) {
    if (a >= spec.rooms || b >= spec.rooms) throw ModelError("floor plan edge names unknown room");
    if (a == b) throw ModelError("floor plan edge joins a room to itself");
    if (!seen.insert(std::minmax(a, b)).second) throw ModelError("floor plan edge listed twice");
  }
  if (!spec.positions.empty() && spec.positions.size() != spec.rooms) {
    throw ModelError("floor plan positions must cover every room");
  }
  if (!spec.allow_disconnected && !is_connected(spec.rooms, spec.edges)) {
    throw ModelError("floor plan graph is disconnected");
  }
  spec.coupling.validate();

  SensorNetwork net;
  net.spec = spec.cluster;
  net.coupling = spec.coupling;
  net.cluster = make_cluster_template(spec.cluster);
  if (spec.cluster.check_calibration) {
    const auto cal = cluster_calibration(net.cluster);
    if (!(cal.prior_fire < spec.cluster.max_prior_fire)) {
      throw ModelError("calibration: prior fire probability " + std::to_string(cal.prior_fire) +
                       " is not below " + std::to_string(spec.cluster.max_prior_fire));
    }
    if (!(cal.alarm_fire > spec.cluster.min_alarm_fire)) {
      throw ModelError("calibration: a top reading gives fire probability " +
                       std::to_string(cal.alarm_fire) + ", not above " +
                       std::to_string(spec.cluster.min_alarm_fire));
    }
  }
  const std::size_t T = spec.cluster.temp_levels;
  const std::size_t card = 2 * T;
  const std::size_t sensors = net.cluster.readings.size();

  std::vector<std::string> states;
  for (std::size_t t = 0; t < T; ++t) {
    states.push_back("t" + std::to_string(t) + "_nofire");
    states.push_back("t" + std::to_string(t) + "_fire");
  }

  // Sensor reading marginals, for optional initial readings.
  Rng rng(derive_seed(seed, 1));
  std::vector<std::vector<double>> reading_marginal;
  if (spec.cluster.initial_reading_fraction > 0.0) {
    const auto bn_fg = bn_to_factor_graph(net.cluster.local_bn);
    for (VarId r : net.cluster.readings) {
      const VarId q[] = {r};
      reading_marginal.push_back(variable_eliminate(bn_fg, q, {}).values());
    }
  }

  std::vector<Variable> vars;
  std::vector<FactorTable> factors;
  const std::vector<int> none(sensors, -1);
  const auto prior_phi = net.phi_for(none, 0).values();
  for (std::size_t i = 0; i < spec.rooms; ++i) {
    vars.push_back({i, "room" + std::to_string(i), card, states});
    Cluster c;
    c.node = i;
    c.phi = i;
    if (!spec.positions.empty()) c.position = spec.positions[i];
    c.readings = none;
    if (spec.cluster.initial_reading_fraction > 0.0 &&
        rng.uniform() < spec.cluster.initial_reading_fraction) {
      for (std::size_t s = 0; s < sensors; ++s) {
        const double u = rng.uniform();
        double acc = 0.0;
        std::size_t pick = reading_marginal[s].size() - 1;
        for (std::size_t k = 0; k < reading_marginal[s].size(); ++k) {
          acc += reading_marginal[s][k];
          if (u < acc) {
            pick = k;
            break;
          }
        }
        c.readings[s] = static_cast<int>(pick);
      }
      factors.push_back(net.phi_for(c.readings, i));
    } else {
      factors.emplace_back(std::vector<VarId>{i}, std::vector<std::size_t>{card}, prior_phi);
    }
    net.clusters.push_back(std::move(c));
  }
  const auto psi = coupling_table(spec.coupling, T);
  for (auto [a, b] : spec.edges) {
    factors.emplace_back(std::vector<VarId>{a, b}, std::vector<std::size_t>{card, card}, psi);
  }
  net.model = FactorGraphModel(std::move(vars), std::move(factors));
  net.raw_variable_count = spec.rooms * net.cluster.local_bn.size();
  return net;
}

FloorPlanSpec lattice_floorplan(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw ModelError("lattice needs at least one row and column");
  FloorPlanSpec plan;
  plan.rooms = rows * cols;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t id = r * cols + c;
      plan.positions.emplace_back(r, c);
      if (c + 1 < cols) plan.edges.emplace_back(id, id + 1);
      if (r + 1 < rows) plan.edges.emplace_back(id, id + cols);
    }
  }
  return plan;
}

SensorNetwork gen_firesensor(std::size_t rows, std::size_t cols, const ClusterSpec& cluster,
                             const CouplingSpec& coupling, std::uint64_t seed) {
  auto plan = lattice_floorplan(rows, cols);
  plan.cluster = cluster;
  plan.coupling = coupling;
  auto net = gen_floorplan(plan, seed);
  net.rows = rows;
  net.cols = cols;
  return net;
}

FloorPlanSpec default_floorplan() {
  // 10 × 10 grid. Rows 0-3 and 6-9 are office rows; rows 4 and 5 are the two
  // wing corridors. Offices open onto neighbours inside their block
  // (column blocks {0,1,2} {3,4} {5,6} {7,8,9}); every other office opens
  // onto its corridor; the wings meet at two doorways.
  constexpr std::size_t kRows = 10, kCols = 10;
  FloorPlanSpec plan;
  plan.rooms = kRows * kCols;
  auto id = [](std::size_t r, std::size_t c) { return r * kCols + c; };
  auto wall_after = [](std::size_t c) { return c == 2 || c == 4 || c == 6; };
  for (std::size_t r = 0; r < kRows; ++r) {
    for (std::size_t c = 0; c < kCols; ++c) plan.positions.emplace_back(r, c);
  }
  for (std::size_t r = 0; r < kRows; ++r) {
    const bool corridor = r == 4 || r == 5;
    for (std::size_t c = 0; c + 1 < kCols; ++c) {
      if (corridor || !wall_after(c)) plan.edges.emplace_back(id(r, c), id(r, c + 1));
    }
  }
  for (std::size_t c = 0; c < kCols; ++c) {
    for (std::size_t r : {0u, 1u, 2u, 6u, 7u, 8u}) plan.edges.emplace_back(id(r, c), id(r + 1, c));
    if (c % 2 == 0) {
      plan.edges.emplace_back(id(3, c), id(4, c));
      plan.edges.emplace_back(id(5, c), id(6, c));
    }
  }
  plan.edges.emplace_back(id(4, 2), id(5, 2));
  plan.edges.emplace_back(id(4, 7), id(5, 7));
  return plan;
}

PairwiseMarkovNet random_tree_pairwise(std::size_t n, std::size_t max_card, std::uint64_t seed) {
  if (n == 0) throw ModelError("random tree needs at least one node");
  if (max_card < 2) throw ModelError("max_card must be >= 2");
  Rng rng(seed);
  std::vector<Variable> nodes;
  std::vector<FactorTable> phi;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t card = 2 + rng.below(max_card - 1);
    nodes.push_back({i, "v" + std::to_string(i), card, {}});
    std::vector<double> v(card);
    for (double& x : v) x = 0.05 + 0.95 * rng.uniform();
    phi.emplace_back(std::vector<VarId>{i}, std::vector<std::size_t>{card}, std::move(v));
  }
  std::vector<PairwiseEdge> edges;
  for (std::size_t i = 1; i < n; ++i) {
    const VarId p = rng.below(i);
    std::vector<double> v(nodes[p].cardinality * nodes[i].cardinality);
    for (double& x : v) x = 0.05 + 0.95 * rng.uniform();
    edges.push_back({p, i,
                     FactorTable({p, i}, {nodes[p].cardinality, nodes[i].cardinality}, std::move(v))});
  }
  return PairwiseMarkovNet(std::move(nodes), std::move(phi), std::move(edges));
}

FactorGraphModel gen_random_polytree(std::size_t n, std::size_t max_card, std::uint64_t seed) {
  return pairwise_to_factor_graph(random_tree_pairwise(n, max_card, seed));
}

PairwiseMarkovNet random_loopy_pairwise(std::size_t n, std::size_t extra_edges,
                                        std::size_t max_card, double strength,
                                        std::uint64_t seed) {
  if (n == 0) throw ModelError("random model needs at least one node");
  if (max_card < 2) throw ModelError("max_card must be >= 2");
  const std::size_t max_extra = n * (n - 1) / 2 - (n - 1);
  if (extra_edges > max_extra) throw ModelError("too many extra edges for the node count");
  Rng rng(seed);
  std::vector<Variable> nodes;
  std::vector<FactorTable> phi;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t card = 2 + rng.below(max_card - 1);
    nodes.push_back({i, "v" + std::to_string(i), card, {}});
    std::vector<double> v(card);
    for (double& x : v) x = std::exp(0.5 * standard_normal(rng));
    phi.emplace_back(std::vector<VarId>{i}, std::vector<std::size_t>{card}, std::move(v));
  }
  std::set<std::pair<VarId, VarId>> used;
  std::vector<std::pair<VarId, VarId>> pairs;
  for (std::size_t i = 1; i < n; ++i) {
    const VarId p = rng.below(i);
    used.insert({p, i});
    pairs.emplace_back(p, i);
  }
  while (pairs.size() < n - 1 + extra_edges) {
    VarId a = rng.below(n), b = rng.below(n);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (!used.insert({a, b}).second) continue;
    pairs.emplace_back(a, b);
  }
  std::vector<PairwiseEdge> edges;
  for (auto [a, b] : pairs) {
    std::vector<double> v(nodes[a].cardinality * nodes[b].cardinality);
    for (double& x : v) x = std::exp(strength * standard_normal(rng));
    edges.push_back({a, b,
                     FactorTable({a, b}, {nodes[a].cardinality, nodes[b].cardinality}, std::move(v))});
  }
  return PairwiseMarkovNet(std::move(nodes), std::move(phi), std::move(edges));
}

BayesNet random_bayes_net(std::size_t n, std::size_t max_parents, std::size_t max_card,
                          std::uint64_t seed) {
  if (max_card < 2) throw ModelError("max_card must be >= 2");
  Rng rng(seed);
  std::vector<Variable> vars;
  std::vector<std::vector<VarId>> parents(n);
  std::vector<FactorTable> cpts;
  for (std::size_t v = 0; v < n; ++v) {
    vars.push_back({v, "n" + std::to_string(v), 2 + rng.below(max_card - 1), {}});
  }
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t k = rng.below(std::min(v, max_parents) + 1);
    std::vector<VarId> pool(v);
    std::iota(pool.begin(), pool.end(), VarId{0});
    for (std::size_t m = 0; m < k; ++m) {
      const std::size_t pick = m + rng.below(pool.size() - m);
      std::swap(pool[m], pool[pick]);
      parents[v].push_back(pool[m]);
    }
    std::sort(parents[v].begin(), parents[v].end());
    std::vector<VarId> scope = parents[v];
    scope.push_back(v);
    std::vector<std::size_t> cards;
    std::size_t rows = 1;
    for (VarId p : parents[v]) {
      cards.push_back(vars[p].cardinality);
      rows *= vars[p].cardinality;
    }
    cards.push_back(vars[v].cardinality);
    std::vector<double> table;
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<double> row(vars[v].cardinality);
      for (double& x : row) x = 0.02 + rng.uniform();
      normalize_in_place(row);
      table.insert(table.end(), row.begin(), row.end());
    }
    cpts.emplace_back(std::move(scope), std::move(cards), std::move(table));
  }
  return BayesNet(std::move(vars), std::move(parents), std::move(cpts));
}

}  // namespace sensorbp
