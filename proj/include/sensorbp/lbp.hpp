#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sensorbp/model.hpp"

namespace sensorbp {

struct LbpConfig {
  double message_tolerance = 1e-6;   // L∞ on messages
  double incorrect_threshold = 1e-2; // total variation
  std::size_t max_sweeps = 1000;
  double damping = 0.0;              // weight on the previous factor->variable message

  void validate() const;
};

struct ConvergenceReport {
  bool converged = false;
  std::size_t sweeps_or_firings = 0;
  std::size_t total_propagations = 0;
  double final_max_delta = 0.0;
  std::vector<std::size_t> per_node_fire_count;
};

/// Directed messages for every variable/factor incidence plus per-variable
/// beliefs. Messages are addressed by incidence edge: the position of the
/// variable inside the factor's scope.
class MessageStore {
 public:
  MessageStore() = default;
  /// Uniform messages; beliefs from the normalized unary factors (uniform
  /// when a variable has none). Messages out of unary factors hold the
  /// normalized factor itself.
  explicit MessageStore(const FactorGraphModel& fg);

  std::span<const double> var_to_factor(VarId v, FactorId f) const;
  std::span<const double> factor_to_var(FactorId f, VarId v) const;
  std::span<const double> belief(VarId v) const;
  std::vector<DiscreteDistribution> beliefs() const;

  std::size_t num_messages() const { return 2 * edge_card_.size(); }
  std::size_t num_variables() const { return belief_offset_.size(); }

  // Edge-indexed access used by the engine.
  std::size_t edge(FactorId f, std::size_t pos) const { return factor_edge_[f] + pos; }
  std::span<double> v2f(std::size_t e) { return {v2f_.data() + msg_offset_[e], edge_card_[e]}; }
  std::span<double> f2v(std::size_t e) { return {f2v_.data() + msg_offset_[e], edge_card_[e]}; }
  std::span<const double> v2f(std::size_t e) const {
    return {v2f_.data() + msg_offset_[e], edge_card_[e]};
  }
  std::span<const double> f2v(std::size_t e) const {
    return {f2v_.data() + msg_offset_[e], edge_card_[e]};
  }
  std::span<double> belief_mut(VarId v) {
    return {beliefs_.data() + belief_offset_[v], belief_card_[v]};
  }

  friend double max_message_delta(const MessageStore& a, const MessageStore& b);
  friend bool operator==(const MessageStore&, const MessageStore&) = default;

 private:
  std::vector<std::vector<VarId>> scopes_;
  std::vector<std::size_t> factor_edge_;
  std::vector<std::size_t> edge_card_;
  std::vector<std::size_t> msg_offset_;
  std::vector<double> v2f_;
  std::vector<double> f2v_;
  std::vector<std::size_t> belief_offset_;
  std::vector<std::size_t> belief_card_;
  std::vector<double> beliefs_;
};

MessageStore init_messages(const FactorGraphModel& fg);

/// L∞ distance over every message entry. Throws ModelError on layout mismatch.
double max_message_delta(const MessageStore& a, const MessageStore& b);

/// Sum-product engine over one model and one evidence set. A firing of
/// variable i recomputes every message i -> F and then F's messages to its
/// other variables, then b_i. For a pairwise factor the composite i -> F -> j
/// message is exactly the pairwise update m_ij.
class LoopyBP {
 public:
  LoopyBP(FactorGraphModel fg, Evidence evidence, double damping = 0.0);

  const FactorGraphModel& model() const { return fg_; }
  const Evidence& evidence() const { return evidence_; }

  MessageStore init_messages() const { return MessageStore(fg_); }

  /// Fires variable i; returns the L∞ change over the messages written and
  /// the belief of i.
  double fire(VarId i, MessageStore& store) const;

  /// One synchronous sweep: every live variable computes its outgoing
  /// messages from the previous sweep's messages, then factor outputs are
  /// recomputed from those. Returns the L∞ message change.
  double sweep(MessageStore& store, std::span<const bool> live) const;

  /// Replaces a unary factor (local evidence) and refreshes its outgoing
  /// message in `store`. The owning variable only sees it on its next firing.
  void set_unary(FactorId f, const FactorTable& table, MessageStore& store);
  void set_unary(FactorId f, const FactorTable& table);

  /// Belief b_i recomputed from the store without writing.
  std::vector<double> compute_belief(VarId i, const MessageStore& store) const;

 private:
  struct Incidence {
    FactorId factor;
    std::size_t pos;
    std::size_t edge;
  };

  void var_message(VarId i, std::size_t skip_edge, const MessageStore& in,
                   std::span<double> out) const;
  void factor_message(FactorId f, std::size_t target_pos, const MessageStore& in,
                      std::span<double> out) const;
  double write_factor_messages(FactorId f, std::size_t from_pos, MessageStore& store) const;

  FactorGraphModel fg_;
  Evidence evidence_;
  double damping_;
  std::vector<std::vector<double>> mask_;
  std::vector<std::vector<Incidence>> incidence_;
};

/// Fires node i once; convenience wrapper around LoopyBP.
double fire_node(VarId i, const FactorGraphModel& fg, MessageStore& store, const Evidence& e);

struct LbpResult {
  std::vector<DiscreteDistribution> beliefs;
  ConvergenceReport report;
  MessageStore store;
};

/// Synchronous (double-buffered) LBP. `dead` flags variables that never fire.
LbpResult run_synchronous(const FactorGraphModel& fg, const Evidence& e, const LbpConfig& cfg,
                          std::span<const bool> dead = {});

/// Pairwise sum-product message m_ij(x_j) ∝ Σ ψ_ij φ_i ∏_{k≠j} m_ki, read from
/// a store laid out over pairwise_to_factor_graph(pmn).
DiscreteDistribution pairwise_message(VarId i, VarId j, const PairwiseMarkovNet& pmn,
                                      const MessageStore& store, const Evidence& e);

/// Belief b_i ∝ φ_i ∏_k m_ki from the same store.
DiscreteDistribution node_belief(VarId i, const PairwiseMarkovNet& pmn, const MessageStore& store,
                                 const Evidence& e);

}  // namespace sensorbp
