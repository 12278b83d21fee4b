#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sensorbp/errors.hpp"
#include "sensorbp/lbp.hpp"
#include "sensorbp/model.hpp"
#include "sensorbp/netgen.hpp"
#include "sensorbp/simulator.hpp"

namespace sensorbp {

// ---- BIF ----

struct BifOptions {
  // Rows off by more than 1e-9 but within this are renormalized with a warning.
  double renormalize_tolerance = 1e-2;
  std::size_t max_input_bytes = std::size_t{64} << 20;
  std::size_t max_variables = 100000;
  std::size_t max_cardinality = 10000;
  std::size_t max_table_entries = std::size_t{1} << 24;
};

struct BifWarning {
  std::size_t line = 0;
  std::size_t column = 0;
  std::string message;
};

struct BifDocument {
  std::string network_name;
  BayesNet net;
  std::vector<BifWarning> warnings;
};

/// Classic text BIF (network / variable / probability blocks). Rows are
/// placed by their parent-state labels; a conditional `table` lists parent
/// configurations with the last parent fastest and the child fastest within
/// a configuration. Throws ParseError with the offending line and column.
BifDocument parse_bif_document(std::string_view text, const BifOptions& options = {});
BayesNet parse_bif(std::string_view text, const BifOptions& options = {});

// ---- model JSON ----

struct ModelDocument {
  FactorGraphModel model;
  std::optional<SensorNetwork> network;  // from the "clusters" block
  std::optional<Evidence> evidence;
};

/// Throws ParseError for malformed JSON and SchemaError (JSON pointer path)
/// for schema violations, including unknown keys.
ModelDocument read_model_document(std::string_view text);
FactorGraphModel read_model(std::string_view text);
SensorNetwork read_sensor_network(std::string_view text);

std::string write_model(const ModelDocument& doc);
std::string write_model(const FactorGraphModel& model);
std::string write_model(const SensorNetwork& net);

/// Evidence as {"format_version": "1", "evidence": {name: state}}. States are
/// written by name when the variable has state names; either a name or an
/// index is accepted on read. A full model document is also accepted.
Evidence read_evidence(std::string_view text, const FactorGraphModel& model);
std::string write_evidence(const Evidence& e, const FactorGraphModel& model);

std::string write_beliefs(std::span<const DiscreteDistribution> beliefs,
                          const FactorGraphModel& model);
std::vector<DiscreteDistribution> read_beliefs(std::string_view text, const FactorGraphModel& model);

/// Floor plan as {"format_version": "1", "rooms", "edges": [[a, b]],
/// optional "positions": [[row, col]], "allow_disconnected", "cluster_spec",
/// "coupling"}.
FloorPlanSpec read_floorplan(std::string_view text);
std::string write_floorplan(const FloorPlanSpec& plan);

std::string write_report(const ConvergenceReport& report, std::string_view mode);

// ---- CSV ----

/// Shortest round-trip decimal, independent of the locale.
std::string format_number(double x);

/// Header row then one line per row, CRLF-free, fields quoted when needed.
std::string write_csv(std::span<const std::string> header,
                      std::span<const std::vector<std::string>> rows);

inline constexpr std::string_view kSeriesHeader = "time,incorrect_fraction,mean_tv_error,total_propagations";
inline constexpr std::string_view kConvergenceHeader = "mode,trial,propagations,converged";
inline constexpr std::string_view kDegradationHeader = "dead_count,trial,affected_fraction,mean_tv_error";

std::string write_series_csv(const ExperimentSeries& series);

/// Splits simple CSV text (as written above) into rows of fields.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace sensorbp
