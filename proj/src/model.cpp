#include "sensorbp/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <set>

#include "sensorbp/errors.hpp"

namespace sensorbp {

namespace {

std::vector<std::size_t> make_strides(const std::vector<std::size_t>& cards) {
  std::vector<std::size_t> strides(cards.size());
  std::size_t s = 1;
  for (std::size_t k = cards.size(); k-- > 0;) {
    strides[k] = s;
    s *= cards[k];
  }
  return strides;
}

std::size_t product(const std::vector<std::size_t>& cards) {
  return std::accumulate(cards.begin(), cards.end(), std::size_t{1}, std::multiplies<>());
}

// Advance a mixed-radix counter (last digit fastest). Returns false on wrap.
bool next_assignment(std::vector<std::size_t>& digits, const std::vector<std::size_t>& cards) {
  for (std::size_t k = digits.size(); k-- > 0;) {
    if (++digits[k] < cards[k]) return true;
    digits[k] = 0;
  }
  return false;
}

}  // namespace

FactorTable::FactorTable(std::vector<VarId> scope, std::vector<std::size_t> cards,
                         std::vector<double> values)
    : scope_(std::move(scope)), cards_(std::move(cards)), values_(std::move(values)) {
  if (scope_.size() != cards_.size()) {
    throw ModelError("factor scope and cardinality lists differ in length");
  }
  std::set<VarId> seen(scope_.begin(), scope_.end());
  if (seen.size() != scope_.size()) throw ModelError("factor scope has duplicate variables");
  for (auto c : cards_) {
    if (c == 0) throw ModelError("factor scope variable with cardinality 0");
  }
  if (values_.size() != product(cards_)) {
    throw ModelError("factor table has " + std::to_string(values_.size()) +
                     " entries, expected " + std::to_string(product(cards_)));
  }
  for (double v : values_) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ModelError("factor table entry is negative or not finite");
    }
  }
  strides_ = make_strides(cards_);
}

FactorTable FactorTable::ones(std::vector<VarId> scope, std::vector<std::size_t> cards) {
  auto n = product(cards);
  return FactorTable(std::move(scope), std::move(cards), std::vector<double>(n, 1.0));
}

FactorTable FactorTable::scalar(double value) { return FactorTable({}, {}, {value}); }

std::optional<std::size_t> FactorTable::position(VarId v) const {
  auto it = std::find(scope_.begin(), scope_.end(), v);
  if (it == scope_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - scope_.begin());
}

double FactorTable::at(std::span<const std::size_t> local) const {
  std::size_t idx = 0;
  for (std::size_t k = 0; k < scope_.size(); ++k) idx += local[k] * strides_[k];
  return values_[idx];
}

double FactorTable::at_full(std::span<const std::size_t> full) const {
  std::size_t idx = 0;
  for (std::size_t k = 0; k < scope_.size(); ++k) idx += full[scope_[k]] * strides_[k];
  return values_[idx];
}

double FactorTable::total() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

FactorTable factor_product(const FactorTable& a, const FactorTable& b) {
  std::vector<VarId> scope = a.scope();
  std::vector<std::size_t> cards = a.cards();
  for (std::size_t k = 0; k < b.arity(); ++k) {
    auto pos = a.position(b.scope()[k]);
    if (pos) {
      if (a.cards()[*pos] != b.cards()[k]) {
        throw ModelError("cardinality mismatch for shared variable " +
                         std::to_string(b.scope()[k]));
      }
    } else {
      scope.push_back(b.scope()[k]);
      cards.push_back(b.cards()[k]);
    }
  }
  // Stride of each result position inside a and b (0 when absent).
  std::vector<std::size_t> sa(scope.size(), 0), sb(scope.size(), 0);
  for (std::size_t k = 0; k < scope.size(); ++k) {
    if (auto p = a.position(scope[k])) sa[k] = a.stride(*p);
    if (auto p = b.position(scope[k])) sb[k] = b.stride(*p);
  }
  std::vector<double> out(product(cards));
  std::vector<std::size_t> digits(scope.size(), 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t n = 0; n < out.size(); ++n) {
    out[n] = a.values()[ia] * b.values()[ib];
    for (std::size_t k = scope.size(); k-- > 0;) {
      if (++digits[k] < cards[k]) {
        ia += sa[k];
        ib += sb[k];
        break;
      }
      ia -= sa[k] * (cards[k] - 1);
      ib -= sb[k] * (cards[k] - 1);
      digits[k] = 0;
    }
  }
  return FactorTable(std::move(scope), std::move(cards), std::move(out));
}

FactorTable factor_marginalize(const FactorTable& f, std::span<const VarId> keep) {
  for (VarId v : keep) {
    if (!f.contains(v)) {
      throw ModelError("cannot keep variable " + std::to_string(v) + " outside the factor scope");
    }
  }
  std::vector<VarId> scope;
  std::vector<std::size_t> cards;
  std::vector<std::size_t> out_stride_of_pos(f.arity(), 0);
  for (std::size_t k = 0; k < f.arity(); ++k) {
    if (std::find(keep.begin(), keep.end(), f.scope()[k]) != keep.end()) {
      scope.push_back(f.scope()[k]);
      cards.push_back(f.cards()[k]);
    }
  }
  auto out_strides = make_strides(cards);
  for (std::size_t k = 0, m = 0; k < f.arity(); ++k) {
    if (m < scope.size() && scope[m] == f.scope()[k]) out_stride_of_pos[k] = out_strides[m++];
  }
  std::vector<double> out(product(cards), 0.0);
  std::vector<std::size_t> digits(f.arity(), 0);
  for (std::size_t n = 0; n < f.size(); ++n) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < f.arity(); ++k) o += digits[k] * out_stride_of_pos[k];
    out[o] += f.values()[n];
    next_assignment(digits, f.cards());
  }
  return FactorTable(std::move(scope), std::move(cards), std::move(out));
}

void normalize_in_place(std::span<double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  if (!(s > 0.0)) throw ZeroMassError("cannot normalize a table with zero total mass");
  for (double& x : v) x /= s;
}

FactorTable normalize(const FactorTable& f) {
  auto values = f.values();
  normalize_in_place(values);
  return FactorTable(f.scope(), f.cards(), std::move(values));
}

FactorTable restrict_evidence(const FactorTable& f, const Evidence& e) {
  auto values = f.values();
  std::vector<std::size_t> digits(f.arity(), 0);
  std::vector<std::pair<std::size_t, std::size_t>> constraints;  // (position, state)
  for (std::size_t k = 0; k < f.arity(); ++k) {
    auto it = e.find(f.scope()[k]);
    if (it != e.end()) constraints.emplace_back(k, it->second);
  }
  if (constraints.empty()) return f;
  for (std::size_t n = 0; n < values.size(); ++n) {
    for (auto [pos, state] : constraints) {
      if (digits[pos] != state) {
        values[n] = 0.0;
        break;
      }
    }
    next_assignment(digits, f.cards());
  }
  return FactorTable(f.scope(), f.cards(), std::move(values));
}

// ---------------------------------------------------------------- BayesNet

BayesNet::BayesNet(std::vector<Variable> variables, std::vector<std::vector<VarId>> parents,
                   std::vector<FactorTable> cpts, double tolerance)
    : variables_(std::move(variables)), parents_(std::move(parents)), cpts_(std::move(cpts)) {
  const std::size_t n = variables_.size();
  if (parents_.size() != n || cpts_.size() != n) {
    throw ModelError("Bayes net needs one parent list and one CPT per variable");
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (variables_[v].id != v) throw ModelError("variable ids must be contiguous 0..n-1");
    if (variables_[v].cardinality < 2) {
      throw ModelError("variable " + variables_[v].name + " has cardinality < 2");
    }
    std::vector<VarId> scope = parents_[v];
    scope.push_back(v);
    if (cpts_[v].scope() != scope) {
      throw ModelError("CPT of " + variables_[v].name + " must have scope parents ++ [child]");
    }
    for (std::size_t k = 0; k < scope.size(); ++k) {
      if (scope[k] >= n) throw ModelError("CPT of " + variables_[v].name + " names unknown parent");
      if (cpts_[v].cards()[k] != variables_[scope[k]].cardinality) {
        throw ModelError("CPT of " + variables_[v].name + " has wrong cardinalities");
      }
    }
    const std::size_t card = variables_[v].cardinality;
    const auto& vals = cpts_[v].values();
    for (std::size_t row = 0; row < vals.size(); row += card) {
      double s = 0.0;
      for (std::size_t k = 0; k < card; ++k) s += vals[row + k];
      if (std::abs(s - 1.0) > tolerance) {
        throw ModelError("CPT row of " + variables_[v].name + " sums to " + std::to_string(s));
      }
    }
  }
  // Kahn's algorithm with a min-heap keeps the order deterministic.
  std::vector<std::size_t> indeg(n, 0);
  auto kids = children();
  for (std::size_t v = 0; v < n; ++v) indeg[v] = parents_[v].size();
  std::priority_queue<VarId, std::vector<VarId>, std::greater<>> ready;
  for (std::size_t v = 0; v < n; ++v) {
    if (indeg[v] == 0) ready.push(v);
  }
  while (!ready.empty()) {
    VarId v = ready.top();
    ready.pop();
    topo_.push_back(v);
    for (VarId c : kids[v]) {
      if (--indeg[c] == 0) ready.push(c);
    }
  }
  if (topo_.size() != n) throw ModelError("Bayes net parent graph has a cycle");
}

std::optional<VarId> BayesNet::find(const std::string& name) const {
  for (const auto& v : variables_) {
    if (v.name == name) return v.id;
  }
  return std::nullopt;
}

std::vector<std::vector<VarId>> BayesNet::children() const {
  std::vector<std::vector<VarId>> kids(variables_.size());
  for (std::size_t v = 0; v < parents_.size(); ++v) {
    for (VarId p : parents_[v]) {
      if (p < kids.size()) kids[p].push_back(v);
    }
  }
  return kids;
}

double BayesNet::joint(std::span<const std::size_t> assignment) const {
  double p = 1.0;
  for (const auto& cpt : cpts_) p *= cpt.at_full(assignment);
  return p;
}

// ------------------------------------------------------- PairwiseMarkovNet

PairwiseMarkovNet::PairwiseMarkovNet(std::vector<Variable> nodes, std::vector<FactorTable> phi,
                                     std::vector<PairwiseEdge> edges)
    : nodes_(std::move(nodes)), phi_(std::move(phi)), edges_(std::move(edges)) {
  const std::size_t n = nodes_.size();
  if (phi_.size() != n) throw ModelError("pairwise model needs exactly one phi per node");
  for (std::size_t i = 0; i < n; ++i) {
    if (nodes_[i].id != i) throw ModelError("node ids must be contiguous 0..n-1");
    if (nodes_[i].cardinality < 2) throw ModelError("node cardinality must be >= 2");
    if (phi_[i].scope() != std::vector<VarId>{i} || phi_[i].cards()[0] != nodes_[i].cardinality) {
      throw ModelError("phi of node " + std::to_string(i) + " must be over that node alone");
    }
  }
  incident_.assign(n, {});
  std::set<std::pair<VarId, VarId>> seen;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const auto& edge = edges_[e];
    if (edge.i >= n || edge.j >= n) throw ModelError("edge references an unknown node");
    if (edge.i == edge.j) throw ModelError("self-edges are not allowed");
    auto key = std::minmax(edge.i, edge.j);
    if (!seen.insert(key).second) throw ModelError("edge stored twice");
    if (edge.psi.scope() != std::vector<VarId>{edge.i, edge.j} ||
        edge.psi.cards() != std::vector<std::size_t>{nodes_[edge.i].cardinality,
                                                     nodes_[edge.j].cardinality}) {
      throw ModelError("psi must be over [i, j]");
    }
    incident_[edge.i].push_back(e);
    incident_[edge.j].push_back(e);
  }
}

std::vector<double> PairwiseMarkovNet::oriented_psi(std::size_t edge, VarId from) const {
  const auto& e = edges_[edge];
  if (e.i == from) return e.psi.values();
  const std::size_t ci = nodes_[e.i].cardinality, cj = nodes_[e.j].cardinality;
  std::vector<double> out(ci * cj);
  for (std::size_t a = 0; a < ci; ++a) {
    for (std::size_t b = 0; b < cj; ++b) out[b * ci + a] = e.psi.values()[a * cj + b];
  }
  return out;
}

double PairwiseMarkovNet::joint(std::span<const std::size_t> assignment) const {
  double p = 1.0;
  for (const auto& f : phi_) p *= f.at_full(assignment);
  for (const auto& e : edges_) p *= e.psi.at_full(assignment);
  return p;
}

// -------------------------------------------------------- FactorGraphModel

FactorGraphModel::FactorGraphModel(std::vector<Variable> variables,
                                   std::vector<FactorTable> factors)
    : variables_(std::move(variables)), factors_(std::move(factors)) {
  adjacency_.assign(variables_.size(), {});
  for (std::size_t v = 0; v < variables_.size(); ++v) {
    if (variables_[v].id != v) throw ModelError("variable ids must be contiguous 0..n-1");
    if (variables_[v].cardinality < 2) {
      throw ModelError("variable " + variables_[v].name + " has cardinality < 2");
    }
    if (!variables_[v].state_names.empty() &&
        variables_[v].state_names.size() != variables_[v].cardinality) {
      throw ModelError("variable " + variables_[v].name + " has the wrong number of state names");
    }
  }
  for (std::size_t f = 0; f < factors_.size(); ++f) {
    const auto& t = factors_[f];
    for (std::size_t k = 0; k < t.arity(); ++k) {
      VarId v = t.scope()[k];
      if (v >= variables_.size()) {
        throw ModelError("factor " + std::to_string(f) + " references undeclared variable");
      }
      if (t.cards()[k] != variables_[v].cardinality) {
        throw ModelError("factor " + std::to_string(f) + " disagrees on cardinality of " +
                         variables_[v].name);
      }
      adjacency_[v].push_back(f);
      ++incidences_;
    }
    if (!(t.total() > 0.0)) throw ModelError("factor " + std::to_string(f) + " is all zeros");
  }
}

std::vector<std::size_t> FactorGraphModel::cardinalities() const {
  std::vector<std::size_t> c;
  c.reserve(variables_.size());
  for (const auto& v : variables_) c.push_back(v.cardinality);
  return c;
}

std::optional<VarId> FactorGraphModel::find(const std::string& name) const {
  for (const auto& v : variables_) {
    if (v.name == name) return v.id;
  }
  return std::nullopt;
}

std::vector<VarId> FactorGraphModel::neighbors(VarId v) const {
  std::set<VarId> out;
  for (FactorId f : adjacency_[v]) {
    for (VarId u : factors_[f].scope()) {
      if (u != v) out.insert(u);
    }
  }
  return {out.begin(), out.end()};
}

std::size_t FactorGraphModel::connectivity(VarId v) const {
  std::size_t c = 0;
  for (FactorId f : adjacency_[v]) {
    const auto& scope = factors_[f].scope();
    if (scope.size() < 2) continue;
    c += (scope.back() == v) ? scope.size() - 1 : 1;
  }
  return c;
}

double FactorGraphModel::joint(std::span<const std::size_t> assignment) const {
  double p = 1.0;
  for (const auto& f : factors_) p *= f.at_full(assignment);
  return p;
}

FactorGraphModel FactorGraphModel::with_factor(FactorId f, FactorTable table) const {
  if (table.scope() != factors_.at(f).scope()) {
    throw ModelError("replacement factor must keep the scope");
  }
  FactorGraphModel copy = *this;
  copy.factors_[f] = std::move(table);
  if (!(copy.factors_[f].total() > 0.0)) throw ModelError("replacement factor is all zeros");
  return copy;
}

bool operator==(const FactorGraphModel& a, const FactorGraphModel& b) {
  if (a.variables_.size() != b.variables_.size()) return false;
  for (std::size_t v = 0; v < a.variables_.size(); ++v) {
    const auto& x = a.variables_[v];
    const auto& y = b.variables_[v];
    if (x.name != y.name || x.cardinality != y.cardinality || x.state_names != y.state_names) {
      return false;
    }
  }
  return a.factors_ == b.factors_;
}

FactorGraphModel bn_to_factor_graph(const BayesNet& bn) {
  return FactorGraphModel(bn.variables(), bn.cpts());
}

FactorGraphModel pairwise_to_factor_graph(const PairwiseMarkovNet& pmn) {
  std::vector<FactorTable> factors = pmn.phi();
  for (const auto& e : pmn.edges()) factors.push_back(e.psi);
  return FactorGraphModel(pmn.nodes(), std::move(factors));
}

void check_evidence(const FactorGraphModel& fg, const Evidence& e) {
  for (auto [v, s] : e) {
    if (v >= fg.num_variables()) throw ModelError("evidence on unknown variable");
    if (s >= fg.cardinality(v)) {
      throw ModelError("evidence state out of range for " + fg.variable(v).name);
    }
  }
}

}  // namespace sensorbp
