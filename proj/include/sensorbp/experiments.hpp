#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sensorbp/lbp.hpp"
#include "sensorbp/model.hpp"
#include "sensorbp/netgen.hpp"
#include "sensorbp/rng.hpp"
#include "sensorbp/simulator.hpp"

namespace sensorbp {

enum class EvidenceDraw { ModelSample, Uniform };

/// One joint sample. Ancestral when every factor is a normalized CPT of its
/// last scope variable and those CPTs form a DAG; otherwise Gibbs sampling
/// (`gibbs_sweeps` sweeps from a uniform random start).
std::vector<std::size_t> sample_joint(const FactorGraphModel& fg, Rng& rng,
                                      std::size_t gibbs_sweeps = 50);

/// True when the factors form a Bayes net (see sample_joint).
bool is_bayes_net_shaped(const FactorGraphModel& fg);

/// Observes round(fraction · |candidates|) distinct candidates (all
/// variables when empty). Values come from one joint sample or uniformly.
Evidence sample_evidence(const FactorGraphModel& fg, double fraction, Rng& rng, EvidenceDraw draw,
                         std::span<const VarId> candidates = {});

struct Stats {
  std::size_t count = 0;
  double min = 0.0, median = 0.0, max = 0.0, mean = 0.0;
};
/// Empty input gives all zeros.
Stats summarize(std::vector<double> values);

/// One named condition of an experiment.
struct ConditionSummary {
  std::string condition;
  std::size_t trials = 0;
  std::size_t nonconverged = 0;
  Stats stats;  // of the condition's primary quantity
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

struct ExperimentSummary {
  std::string experiment;
  std::vector<ConditionSummary> conditions;
  std::vector<std::uint64_t> seeds;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  nlohmann::ordered_json results = nlohmann::ordered_json::object();

  nlohmann::ordered_json to_json() const;
};

/// Common settings shared by the static experiments.
struct TrialSettings {
  std::size_t trials = 30;
  std::uint64_t seed = 0;
  double evidence_fraction = 0.1;
  EvidenceDraw draw = EvidenceDraw::ModelSample;
  double message_tolerance = 1e-6;
  double incorrect_threshold = 1e-2;
  std::size_t max_sweeps = 1000;
  double max_time = 10000.0;
  unsigned jobs = 1;
};

// ---- convergence ----

struct ConvergenceRow {
  std::string mode;
  std::size_t trial = 0;
  std::size_t propagations = 0;
  bool converged = false;
};

struct ConvergenceOutput {
  std::vector<ConvergenceRow> rows;
  ExperimentSummary summary;
  // Derived quantities (0 when the needed modes are absent).
  double c = 0.0;                   // median sync propagations / n
  double uniform_ratio = 0.0;       // median uniform / (c · n · ln n)
  double split_ratio = 0.0;         // median split / median uniform
  double topk_vs_sync = 0.0;        // median top-k / median sync
};

/// Modes: "sync" or any RatePolicy text. Each trial draws one evidence set
/// shared by all modes.
ConvergenceOutput exp_convergence(const FactorGraphModel& model, const std::vector<std::string>& modes,
                                  const TrialSettings& settings);

// ---- degradation ----

struct DegradationRow {
  std::size_t dead_count = 0;
  std::size_t trial = 0;
  double affected_fraction = 0.0;
  double mean_tv_error = 0.0;
  double untouched_fraction = 0.0;
  bool converged = true;
};

struct DegradationOutput {
  std::vector<DegradationRow> rows;
  ExperimentSummary summary;
};

/// Kills `dead_count` random clusters at start, observes a fraction of the
/// live ones and compares the live beliefs with the intact network under
/// the same observations.
DegradationOutput exp_degradation(const SensorNetwork& net, const std::vector<std::size_t>& dead_counts,
                                  const TrialSettings& settings);

// ---- path blocking ----

struct PathblockRow {
  std::string placement;  // "row" or "random"
  std::size_t k = 0;
  std::size_t trial = 0;
  std::size_t affected = 0;
  double affected_fraction = 0.0;
  double mean_tv_error = 0.0;
};

struct PathblockOutput {
  std::vector<PathblockRow> rows;
  ExperimentSummary summary;
  std::vector<double> mean_row_affected;     // index k-1
  std::vector<double> mean_random_affected;  // index k-1
  // Whole-row block with every observation below it: per trial, fraction of
  // evidence-free clusters above the row whose belief is incorrect.
  std::vector<double> one_sided_incorrect;
};

/// Kills k = 1..cols clusters left to right in `row` of a lattice network and
/// compares with k random kills under the same protocol.
PathblockOutput exp_pathblock(const SensorNetwork& net, std::size_t row, const TrialSettings& settings);

// ---- dynamic ----

struct DynamicSettings {
  std::vector<double> p_values{0.005, 0.05};
  double duration = 100.0;
  double sample_interval = 0.1;
  std::uint64_t seed = 0;
  ReadingDraw draw = ReadingDraw::Marginal;
  double message_tolerance = 1e-6;
  double incorrect_threshold = 1e-2;
  unsigned jobs = 1;
};

struct SlopeFit {
  double slope = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t points = 0;
};

/// OLS slope of y on x with a Newey-West (Bartlett kernel) standard error
/// and a two-sided 95% Student-t interval. `lag` 0 picks
/// floor(4 (n/100)^(2/9)).
SlopeFit hac_slope(std::span<const double> x, std::span<const double> y, std::size_t lag = 0);

struct DynamicRunSummary {
  double p = 0.0;
  DynamicResult result;
  double steady_state = 0.0;  // mean incorrect fraction over the second half
  double burn_in = 0.0;       // first sample time at or below steady_state
  SlopeFit slope;             // per-time-step means over the second half
};

struct DynamicOutput {
  std::vector<DynamicRunSummary> runs;
  ExperimentSummary summary;
};

DynamicOutput exp_dynamic(const SensorNetwork& net, const DynamicSettings& settings);

/// Second-half statistics of a series (exposed for recomputation from CSV).
void analyze_series(const ExperimentSeries& series, double duration, DynamicRunSummary& out);

// ---- CSV ----

std::string convergence_csv(const std::vector<ConvergenceRow>& rows);
std::string degradation_csv(const std::vector<DegradationRow>& rows);
/// placement,k,trial,affected,affected_fraction,mean_tv_error
std::string pathblock_csv(const std::vector<PathblockRow>& rows);

}  // namespace sensorbp
