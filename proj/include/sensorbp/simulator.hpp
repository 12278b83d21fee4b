#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sensorbp/lbp.hpp"
#include "sensorbp/model.hpp"
#include "sensorbp/netgen.hpp"
#include "sensorbp/rng.hpp"

namespace sensorbp {

/// How firing rates are assigned to nodes. Text forms: "uniform",
/// "uniform:R", "split:FxM" (fraction F fast at M times the base rate),
/// "topk:KxM" (the K best-connected nodes at M times the base rate).
struct RatePolicy {
  enum class Kind { Uniform, Split, TopK };

  Kind kind = Kind::Uniform;
  double base_rate = 1.0;
  double fraction_fast = 0.5;
  double multiplier = 1.0;
  std::size_t k = 0;

  static RatePolicy uniform(double rate = 1.0);
  static RatePolicy split(double fraction_fast, double multiplier);
  static RatePolicy top_k(std::size_t k, double multiplier);
  /// Throws ModelError on malformed text.
  static RatePolicy parse(std::string_view text);
  std::string to_string() const;

  void validate(std::size_t node_count) const;

  /// Per-variable rates. Dead nodes get 0 and are excluded from the fast
  /// set. Split picks its fast set with `seed`; top-k ranks by
  /// FactorGraphModel::connectivity with ties to the lower id.
  std::vector<double> rates(const FactorGraphModel& fg, std::span<const bool> dead,
                            std::uint64_t seed) const;
};

enum class DeathMode { AtStart, AtTime };

struct SimConfig {
  std::uint64_t seed = 0;
  RatePolicy rate_policy;
  double message_tolerance = 1e-6;
  double incorrect_threshold = 1e-2;
  std::size_t window = 0;  // 0 means the live node count
  double max_time = 10000.0;
  std::set<VarId> dead_nodes;
  DeathMode death_mode = DeathMode::AtStart;
  double death_time = 0.0;
  double damping = 0.0;

  void validate(std::size_t node_count) const;
};

struct SeriesRow {
  double time = 0.0;
  double incorrect_fraction = 0.0;
  double mean_tv_error = 0.0;  // over nodes counted incorrect; 0 when none
  std::size_t total_propagations = 0;

  friend bool operator==(const SeriesRow&, const SeriesRow&) = default;
};

struct ExperimentSeries {
  std::vector<SeriesRow> rows;
  friend bool operator==(const ExperimentSeries&, const ExperimentSeries&) = default;
};

/// Exponential waiting time with mean 1/rate. Throws ModelError for rate <= 0.
double sample_interval(double rate, Rng& rng);

/// Total variation distance. Throws ModelError on cardinality mismatch.
double tv_error(std::span<const double> b, std::span<const double> ref);
double tv_error(const DiscreteDistribution& b, const DiscreteDistribution& ref);

struct IncorrectCount {
  std::size_t count = 0;
  std::vector<VarId> affected;  // ascending
  double mean_tv_error = 0.0;   // over affected
};

/// Nodes whose TV distance from the reference exceeds `threshold`. When
/// `only` is non-empty, just those variables are compared.
IncorrectCount count_incorrect(std::span<const DiscreteDistribution> beliefs,
                               std::span<const DiscreteDistribution> reference, double threshold,
                               std::span<const VarId> only = {});

struct AsyncResult {
  std::vector<DiscreteDistribution> beliefs;
  ConvergenceReport report;
  ExperimentSeries series;  // filled only when a reference is supplied
  double end_time = 0.0;
  std::size_t last_change_firing = 0;  // firings up to the last one above tolerance
  double last_change_time = 0.0;
};

/// Event-driven asynchronous LBP. Convergence: the run of consecutive
/// firings whose change stayed below message_tolerance is at least `window`
/// long and contains a firing of every live node. When `reference` is
/// given, a series row is emitted at every whole time step.
AsyncResult run_async(const FactorGraphModel& fg, const Evidence& e, const SimConfig& cfg,
                      std::span<const DiscreteDistribution> reference = {});

enum class ReadingDraw { Marginal, Uniform };

struct DynamicConfig {
  double observe_prob = 0.0;  // per cluster per time step
  double duration = 100.0;
  double sample_interval = 0.1;
  ReadingDraw draw = ReadingDraw::Marginal;
  std::size_t reference_max_sweeps = 1000;
  unsigned jobs = 1;  // threads for reference solves

  void validate() const;
};

struct DynamicResult {
  ExperimentSeries series;
  std::size_t reference_nonconverged = 0;  // samples whose reference did not converge
  std::size_t observation_changes = 0;
  std::size_t distinct_references = 0;
};

/// Asynchronous LBP while sensors re-observe. Each whole time step, every
/// live cluster redraws the reading of one random sensor with probability
/// observe_prob, replacing its previous value. Every sample_interval the
/// cluster beliefs are compared with synchronous LBP on the current
/// readings. At coincident times the sample precedes the churn.
DynamicResult run_dynamic(const SensorNetwork& net, const DynamicConfig& dcfg,
                          const SimConfig& cfg);

}  // namespace sensorbp
