#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sensorbp/model.hpp"

namespace sensorbp {

/// Largest joint state space brute_force_marginals will enumerate.
inline constexpr std::size_t kBruteForceLimit = std::size_t{1} << 20;

struct ExactResult {
  std::vector<DiscreteDistribution> marginals;  // indexed by variable id
  double log_partition = 0.0;
};

/// Normalized joint marginal over `query` (in the given order) given `e`.
/// Eliminates with the greedy min-degree order.
FactorTable variable_eliminate(const FactorGraphModel& fg, std::span<const VarId> query,
                               const Evidence& e);

/// Same, eliminating hidden variables in the supplied order. Variables missing
/// from `order` are eliminated afterwards in id order.
FactorTable variable_eliminate(const FactorGraphModel& fg, std::span<const VarId> query,
                               const Evidence& e, std::span<const VarId> order);

/// Greedy min-degree elimination order over the non-query variables.
std::vector<VarId> min_degree_order(const FactorGraphModel& fg, std::span<const VarId> query);

/// All single-variable marginals by variable elimination.
std::vector<DiscreteDistribution> exact_marginals(const FactorGraphModel& fg, const Evidence& e);

/// Marginals and log Z by full enumeration. Throws SizeGuardError when the
/// unobserved state space exceeds kBruteForceLimit.
ExactResult brute_force_marginals(const FactorGraphModel& fg, const Evidence& e);

/// φ over the joint of `high_level_vars` (scope order as given), proportional
/// to P(high-level, readings) under the cluster network; normalized.
FactorTable local_evidence(const BayesNet& local_bn, std::span<const VarId> high_level_vars,
                           const Evidence& readings);

}  // namespace sensorbp
