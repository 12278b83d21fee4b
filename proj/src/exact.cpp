#include "sensorbp/exact.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "sensorbp/errors.hpp"

namespace sensorbp {

namespace {

// Permute a table so its scope follows `order` (same variable set).
FactorTable reorder(const FactorTable& f, std::span<const VarId> order) {
  if (std::equal(order.begin(), order.end(), f.scope().begin(), f.scope().end())) return f;
  std::vector<std::size_t> cards;
  std::vector<std::size_t> src_stride;
  for (VarId v : order) {
    auto pos = f.position(v);
    cards.push_back(f.cards()[*pos]);
    src_stride.push_back(f.stride(*pos));
  }
  std::vector<double> out(f.size());
  std::vector<std::size_t> digits(order.size(), 0);
  for (std::size_t n = 0; n < out.size(); ++n) {
    std::size_t src = 0;
    for (std::size_t k = 0; k < digits.size(); ++k) src += digits[k] * src_stride[k];
    out[n] = f.values()[src];
    for (std::size_t k = digits.size(); k-- > 0;) {
      if (++digits[k] < cards[k]) break;
      digits[k] = 0;
    }
  }
  return FactorTable({order.begin(), order.end()}, std::move(cards), std::move(out));
}

FactorTable sum_out(const FactorTable& f, VarId v) {
  std::vector<VarId> keep;
  for (VarId u : f.scope()) {
    if (u != v) keep.push_back(u);
  }
  return factor_marginalize(f, keep);
}

}  // namespace

std::vector<VarId> min_degree_order(const FactorGraphModel& fg, std::span<const VarId> query) {
  const std::size_t n = fg.num_variables();
  std::vector<std::set<VarId>> adj(n);
  for (const auto& f : fg.factors()) {
    for (VarId a : f.scope()) {
      for (VarId b : f.scope()) {
        if (a != b) adj[a].insert(b);
      }
    }
  }
  std::vector<bool> done(n, false);
  for (VarId q : query) done[q] = true;
  std::vector<VarId> order;
  for (;;) {
    std::size_t best = n;
    std::size_t best_deg = 0;
    for (VarId v = 0; v < n; ++v) {
      if (done[v]) continue;
      std::size_t deg = adj[v].size();
      if (best == n || deg < best_deg) {
        best = v;
        best_deg = deg;
      }
    }
    if (best == n) break;
    order.push_back(best);
    done[best] = true;
    const std::vector<VarId> nb(adj[best].begin(), adj[best].end());
    for (VarId a : nb) {
      adj[a].erase(best);
      for (VarId b : nb) {
        if (a != b) adj[a].insert(b);
      }
    }
    adj[best].clear();
  }
  return order;
}

FactorTable variable_eliminate(const FactorGraphModel& fg, std::span<const VarId> query,
                               const Evidence& e) {
  auto order = min_degree_order(fg, query);
  return variable_eliminate(fg, query, e, order);
}

FactorTable variable_eliminate(const FactorGraphModel& fg, std::span<const VarId> query,
                               const Evidence& e, std::span<const VarId> order) {
  if (query.empty()) throw ModelError("variable elimination needs a nonempty query");
  check_evidence(fg, e);
  std::set<VarId> qset;
  for (VarId q : query) {
    if (q >= fg.num_variables()) throw ModelError("query names an unknown variable");
    if (!qset.insert(q).second) throw ModelError("query lists a variable twice");
  }

  std::vector<FactorTable> pool;
  pool.reserve(fg.num_factors());
  for (const auto& f : fg.factors()) pool.push_back(restrict_evidence(f, e));

  std::vector<VarId> full_order(order.begin(), order.end());
  std::vector<bool> listed(fg.num_variables(), false);
  for (VarId v : full_order) listed[v] = true;
  for (VarId v = 0; v < fg.num_variables(); ++v) {
    if (!listed[v] && !qset.count(v)) full_order.push_back(v);
  }

  for (VarId v : full_order) {
    if (qset.count(v)) continue;
    std::vector<FactorTable> rest;
    FactorTable bucket;  // scalar 1
    bool any = false;
    for (auto& f : pool) {
      if (f.contains(v)) {
        bucket = any ? factor_product(bucket, f) : std::move(f);
        any = true;
      } else {
        rest.push_back(std::move(f));
      }
    }
    pool = std::move(rest);
    if (any) pool.push_back(sum_out(bucket, v));
  }

  FactorTable joint;
  for (const auto& f : pool) joint = factor_product(joint, f);
  // Query variables that appear in no factor still need a (uniform) axis.
  for (VarId q : query) {
    if (!joint.contains(q)) {
      joint = factor_product(joint, restrict_evidence(FactorTable::ones({q}, {fg.cardinality(q)}), e));
    }
  }
  joint = factor_marginalize(joint, query);
  if (!(joint.total() > 0.0)) throw ZeroMassError("evidence has probability zero under the model");
  return normalize(reorder(joint, query));
}

std::vector<DiscreteDistribution> exact_marginals(const FactorGraphModel& fg, const Evidence& e) {
  std::vector<DiscreteDistribution> out;
  out.reserve(fg.num_variables());
  for (VarId v = 0; v < fg.num_variables(); ++v) {
    const VarId q[] = {v};
    out.push_back({v, variable_eliminate(fg, q, e).values()});
  }
  return out;
}

ExactResult brute_force_marginals(const FactorGraphModel& fg, const Evidence& e) {
  check_evidence(fg, e);
  const std::size_t n = fg.num_variables();
  std::vector<VarId> hidden;
  double states = 1.0;
  for (VarId v = 0; v < n; ++v) {
    if (!e.count(v)) {
      hidden.push_back(v);
      states *= static_cast<double>(fg.cardinality(v));
    }
  }
  if (states > static_cast<double>(kBruteForceLimit)) {
    throw SizeGuardError("brute force would enumerate " + std::to_string(states) + " states");
  }

  std::vector<std::size_t> assignment(n, 0);
  for (auto [v, s] : e) assignment[v] = s;

  ExactResult result;
  result.marginals.resize(n);
  for (VarId v = 0; v < n; ++v) result.marginals[v] = {v, std::vector<double>(fg.cardinality(v), 0.0)};

  double total = 0.0;
  for (;;) {
    const double w = fg.joint(assignment);
    if (w != 0.0) {
      total += w;
      for (VarId v = 0; v < n; ++v) result.marginals[v].probs[assignment[v]] += w;
    }
    std::size_t k = hidden.size();
    while (k-- > 0) {
      VarId v = hidden[k];
      if (++assignment[v] < fg.cardinality(v)) break;
      assignment[v] = 0;
    }
    if (k == static_cast<std::size_t>(-1)) break;
  }
  if (!(total > 0.0)) throw ZeroMassError("evidence has probability zero under the model");
  for (auto& m : result.marginals) {
    for (double& p : m.probs) p /= total;
  }
  result.log_partition = std::log(total);
  return result;
}

FactorTable local_evidence(const BayesNet& local_bn, std::span<const VarId> high_level_vars,
                           const Evidence& readings) {
  for (auto [v, s] : readings) {
    if (std::find(high_level_vars.begin(), high_level_vars.end(), v) != high_level_vars.end()) {
      throw ModelError("readings may only observe sensor-layer variables");
    }
  }
  const auto fg = bn_to_factor_graph(local_bn);
  return variable_eliminate(fg, high_level_vars, readings);
}

}  // namespace sensorbp
