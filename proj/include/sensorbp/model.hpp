#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sensorbp {

using VarId = std::size_t;
using FactorId = std::size_t;

/// Observed state index per variable.
using Evidence = std::map<VarId, std::size_t>;

struct Variable {
  VarId id = 0;
  std::string name;
  std::size_t cardinality = 2;
  std::vector<std::string> state_names;  // empty, or one per state
};

/// Nonnegative table over an ordered scope. Values are row-major with the
/// last scope variable varying fastest.
class FactorTable {
 public:
  FactorTable() = default;
  FactorTable(std::vector<VarId> scope, std::vector<std::size_t> cards,
              std::vector<double> values);

  /// Table of ones over the given scope.
  static FactorTable ones(std::vector<VarId> scope, std::vector<std::size_t> cards);
  static FactorTable scalar(double value);

  const std::vector<VarId>& scope() const { return scope_; }
  const std::vector<std::size_t>& cards() const { return cards_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  std::size_t arity() const { return scope_.size(); }

  /// Position of `v` in the scope, if present.
  std::optional<std::size_t> position(VarId v) const;
  bool contains(VarId v) const { return position(v).has_value(); }

  /// Entry for a per-scope-position assignment.
  double at(std::span<const std::size_t> local) const;
  /// Entry for an assignment indexed by variable id over the full universe.
  double at_full(std::span<const std::size_t> full) const;

  std::size_t stride(std::size_t pos) const { return strides_[pos]; }
  double total() const;

  friend bool operator==(const FactorTable&, const FactorTable&) = default;

 private:
  std::vector<VarId> scope_;
  std::vector<std::size_t> cards_;
  std::vector<double> values_{1.0};
  std::vector<std::size_t> strides_;
};

struct DiscreteDistribution {
  VarId over = 0;
  std::vector<double> probs;
};

FactorTable factor_product(const FactorTable& a, const FactorTable& b);
/// Sum out every scope variable not in `keep`. The result keeps the original
/// scope order.
FactorTable factor_marginalize(const FactorTable& f, std::span<const VarId> keep);
/// Throws ZeroMassError when the table sums to zero.
FactorTable normalize(const FactorTable& f);
/// Zero every entry inconsistent with `e`; the scope is unchanged.
FactorTable restrict_evidence(const FactorTable& f, const Evidence& e);

/// Normalizes a probability vector in place; throws ZeroMassError on zero mass.
void normalize_in_place(std::span<double> v);

class BayesNet {
 public:
  BayesNet() = default;
  /// `cpts[v]` must have scope parents[v] ++ [v]. Validates acyclicity and
  /// that each CPT sums to one over the child within `tolerance`.
  BayesNet(std::vector<Variable> variables, std::vector<std::vector<VarId>> parents,
           std::vector<FactorTable> cpts, double tolerance = 1e-9);

  const std::vector<Variable>& variables() const { return variables_; }
  const std::vector<std::vector<VarId>>& parents() const { return parents_; }
  const std::vector<FactorTable>& cpts() const { return cpts_; }
  std::size_t size() const { return variables_.size(); }
  std::optional<VarId> find(const std::string& name) const;

  /// Parents before children; ties broken by id.
  const std::vector<VarId>& topological_order() const { return topo_; }
  std::vector<std::vector<VarId>> children() const;

  /// Product of CPT entries for a full assignment.
  double joint(std::span<const std::size_t> assignment) const;

 private:
  std::vector<Variable> variables_;
  std::vector<std::vector<VarId>> parents_;
  std::vector<FactorTable> cpts_;
  std::vector<VarId> topo_;
};

struct PairwiseEdge {
  VarId i = 0;
  VarId j = 0;
  FactorTable psi;  // scope [i, j]
};

class PairwiseMarkovNet {
 public:
  PairwiseMarkovNet() = default;
  PairwiseMarkovNet(std::vector<Variable> nodes, std::vector<FactorTable> phi,
                    std::vector<PairwiseEdge> edges);

  const std::vector<Variable>& nodes() const { return nodes_; }
  const std::vector<FactorTable>& phi() const { return phi_; }
  const std::vector<PairwiseEdge>& edges() const { return edges_; }
  std::size_t size() const { return nodes_.size(); }

  /// Indices into edges() touching node i.
  const std::vector<std::size_t>& incident(VarId i) const { return incident_[i]; }
  /// ψ oriented as (x_i, x_j): value at [a * card_j + b].
  std::vector<double> oriented_psi(std::size_t edge, VarId from) const;

  /// Unnormalized joint ∏ψ ∏φ at a full assignment.
  double joint(std::span<const std::size_t> assignment) const;

 private:
  std::vector<Variable> nodes_;
  std::vector<FactorTable> phi_;
  std::vector<PairwiseEdge> edges_;
  std::vector<std::vector<std::size_t>> incident_;
};

/// Variable/factor bipartite model; every other representation converts into
/// this one.
class FactorGraphModel {
 public:
  FactorGraphModel() = default;
  FactorGraphModel(std::vector<Variable> variables, std::vector<FactorTable> factors);

  const std::vector<Variable>& variables() const { return variables_; }
  const std::vector<FactorTable>& factors() const { return factors_; }
  const Variable& variable(VarId v) const { return variables_.at(v); }
  const FactorTable& factor(FactorId f) const { return factors_.at(f); }
  std::size_t num_variables() const { return variables_.size(); }
  std::size_t num_factors() const { return factors_.size(); }
  std::size_t cardinality(VarId v) const { return variables_[v].cardinality; }
  std::vector<std::size_t> cardinalities() const;

  /// Factors whose scope contains v, ascending.
  const std::vector<FactorId>& factors_of(VarId v) const { return adjacency_[v]; }
  std::size_t num_incidences() const { return incidences_; }
  std::optional<VarId> find(const std::string& name) const;

  /// Variables sharing a factor with v (excluding v), ascending.
  std::vector<VarId> neighbors(VarId v) const;

  /// Parent-plus-child count under the "last scope variable is the child"
  /// convention; the plain degree for pairwise models.
  std::size_t connectivity(VarId v) const;

  /// Product of all factors at a full assignment.
  double joint(std::span<const std::size_t> assignment) const;

  /// Copy with factor f replaced (same scope required).
  FactorGraphModel with_factor(FactorId f, FactorTable table) const;

  friend bool operator==(const FactorGraphModel& a, const FactorGraphModel& b);

 private:
  std::vector<Variable> variables_;
  std::vector<FactorTable> factors_;
  std::vector<std::vector<FactorId>> adjacency_;
  std::size_t incidences_ = 0;
};

/// One factor per CPT, in variable order.
FactorGraphModel bn_to_factor_graph(const BayesNet& bn);
/// Unary φ factors first (node order), then one binary ψ factor per edge.
FactorGraphModel pairwise_to_factor_graph(const PairwiseMarkovNet& pmn);

void check_evidence(const FactorGraphModel& fg, const Evidence& e);

}  // namespace sensorbp
