#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sensorbp/model.hpp"

namespace sensorbp {

/// Shape and parameters of one processing node's local Bayesian network:
/// FIRE -> TEMP-IN-ROOM, FIRE -> TEMP(S), FIRE -> BROKEN(S),
/// TEMP-IN-ROOM -> TEMP(S), TEMP(S) + BIAS(S) -> NOISY(S),
/// NOISY(S) + BROKEN(S) -> READING(S).
struct ClusterSpec {
  std::size_t sensors_per_cluster = 1;
  std::size_t temp_levels = 4;
  std::size_t bias_levels = 3;
  std::size_t reading_levels = 0;  // 0 means temp_levels

  double fire_prior = 0.04;
  double broken_prior = 0.005;
  double broken_given_fire = 0.3;
  // P(room temp | no fire) ∝ exp(-room_temp_decay * t);
  // P(room temp | fire) ∝ exp(-room_temp_rise * (T - 1 - t)).
  // The top level additionally gets exp(-hot_penalty) without fire.
  double room_temp_decay = 1.0;
  double room_temp_rise = 3.0;
  double hot_penalty = 4.0;
  // P(sensor temp | room temp) ∝ exp(-|s - r| / spread).
  double temp_spread = 0.2;
  double temp_spread_given_fire = 1.5;
  double bias_center_mass = 0.95;  // P(BIAS = 0 offset)
  // P(noisy | target) and P(reading | noisy, working) ∝ exp(-|x - target| / noise).
  double reading_noise = 0.25;

  // Fraction of clusters whose sensors get readings at generation time.
  double initial_reading_fraction = 0.0;

  // Generation fails unless P(fire) < max_prior_fire without readings and a
  // single top reading lifts it above min_alarm_fire.
  bool check_calibration = true;
  double max_prior_fire = 0.05;
  double min_alarm_fire = 0.5;

  std::size_t readings() const { return reading_levels == 0 ? temp_levels : reading_levels; }
  void validate() const;
};

/// Inter-cluster compatibility ψ((t,f),(t',f')) = exp(-β_T|t-t'|) · (f == f' ? 1 : exp(-β_F)).
struct CouplingSpec {
  double temp_agreement = 1.5;
  double fire_agreement = 1.5;

  void validate() const;
};

/// Local network shared by every cluster, plus the roles of its variables.
struct ClusterTemplate {
  BayesNet local_bn;
  std::vector<VarId> high_level;  // [TEMP-IN-ROOM, FIRE-IN-ROOM]
  std::vector<VarId> readings;    // READING(S) per sensor
};

struct Cluster {
  VarId node = 0;        // composite high-level variable in the lattice model
  FactorId phi = 0;      // its local-evidence factor
  std::optional<std::pair<std::size_t, std::size_t>> position;  // (row, col)
  std::vector<int> readings;  // per sensor, -1 when unobserved
};

/// Cluster-level pairwise model plus everything needed to recompute local
/// evidence from sensor readings.
struct SensorNetwork {
  FactorGraphModel model;
  ClusterSpec spec;
  CouplingSpec coupling;
  ClusterTemplate cluster;
  std::vector<Cluster> clusters;
  std::size_t rows = 0;  // 0 for non-lattice layouts
  std::size_t cols = 0;
  std::size_t raw_variable_count = 0;  // variables of all local networks

  /// Composite state index of (temperature level, fire flag).
  static std::size_t composite_state(std::size_t temp, bool fire) { return temp * 2 + (fire ? 1 : 0); }
  /// Local evidence φ for a cluster with the given readings.
  FactorTable phi_for(std::span<const int> readings, VarId node) const;
};

/// Local network for one cluster.
ClusterTemplate make_cluster_template(const ClusterSpec& spec);
/// 2·T × 2·T compatibility table over composite states.
struct Calibration {
  double prior_fire = 0.0;  // P(FIRE-IN-ROOM) with no readings
  double alarm_fire = 0.0;  // P(FIRE-IN-ROOM) with the first sensor at its top reading
};
Calibration cluster_calibration(const ClusterTemplate& t);

std::vector<double> coupling_table(const CouplingSpec& coupling, std::size_t temp_levels);

/// Undirected room graph. Positions are optional (row, col) labels.
struct FloorPlanSpec {
  std::size_t rooms = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<std::pair<std::size_t, std::size_t>> positions;
  bool allow_disconnected = false;
  ClusterSpec cluster;
  CouplingSpec coupling;
};

/// rows × cols lattice of clusters with 4-neighbour coupling.
SensorNetwork gen_firesensor(std::size_t rows, std::size_t cols, const ClusterSpec& cluster,
                             const CouplingSpec& coupling, std::uint64_t seed);

/// Clusters on an arbitrary room graph. Throws ModelError for a disconnected
/// graph unless the spec allows it.
SensorNetwork gen_floorplan(const FloorPlanSpec& spec, std::uint64_t seed);

/// Room graph of a rows × cols lattice (edges in generation order).
FloorPlanSpec lattice_floorplan(std::size_t rows, std::size_t cols);

/// The shipped 100-room building: two wings joined by two doorways, rooms
/// grouped into blocks along corridors.
FloorPlanSpec default_floorplan();

bool is_connected(std::size_t nodes, std::span<const std::pair<std::size_t, std::size_t>> edges);

/// Random tree-shaped pairwise model: node i > 0 attaches to a uniformly
/// chosen earlier node; cardinalities uniform in [2, max_card]; potentials
/// uniform in [0.05, 1].
PairwiseMarkovNet random_tree_pairwise(std::size_t n, std::size_t max_card, std::uint64_t seed);
FactorGraphModel gen_random_polytree(std::size_t n, std::size_t max_card, std::uint64_t seed);

/// Random connected pairwise model with `extra_edges` chords added to a
/// random tree. ψ entries are exp(strength · z) with z standard normal.
PairwiseMarkovNet random_loopy_pairwise(std::size_t n, std::size_t extra_edges,
                                        std::size_t max_card, double strength,
                                        std::uint64_t seed);

/// Random Bayes net over `n` variables with up to `max_parents` parents
/// among earlier variables and cardinalities in [2, max_card].
BayesNet random_bayes_net(std::size_t n, std::size_t max_parents, std::size_t max_card,
                          std::uint64_t seed);

}  // namespace sensorbp
