// sensorbp command-line front end.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error, 3 non-convergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "sensorbp/exact.hpp"
#include "sensorbp/experiments.hpp"
#include "sensorbp/formats.hpp"
#include "sensorbp/lbp.hpp"
#include "sensorbp/netgen.hpp"
#include "sensorbp/simulator.hpp"

namespace fs = std::filesystem;
using namespace sensorbp;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitNonConvergence = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Files are staged and written together once the command has succeeded.
class Outputs {
 public:
  void add(std::string path, std::string content) { files_.emplace_back(std::move(path), std::move(content)); }

  void commit() const {
    for (const auto& [path, content] : files_) {
      const fs::path p(path);
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
      const fs::path tmp = p.string() + ".tmp";
      {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp.string() + "'");
        out << content;
        if (!out) throw Error("write failed for '" + tmp.string() + "'");
      }
      fs::rename(tmp, p);
    }
  }

 private:
  std::vector<std::pair<std::string, std::string>> files_;
};

template <class T>
std::vector<T> split_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw UsageError(std::string("empty entry in ") + what);
    if constexpr (std::is_same_v<T, std::string>) {
      out.push_back(item);
    } else {
      std::istringstream is(item);
      is.imbue(std::locale::classic());
      T v{};
      if (!(is >> v) || !is.eof()) throw UsageError(std::string("bad value '") + item + "' in " + what);
      out.push_back(v);
    }
  }
  if (out.empty()) throw UsageError(std::string("no values in ") + what);
  return out;
}

// ---------------------------------------------------------------- options

struct GenFiresensorOpts {
  std::size_t rows = 10, cols = 10, sensors = 1, temp_levels = 4;
  std::uint64_t seed = 0;
  double initial_reading_fraction = 0.0;
  double coupling_temp = CouplingSpec{}.temp_agreement;
  double coupling_fire = CouplingSpec{}.fire_agreement;
  bool no_check = false;
  std::string out;
};

struct GenFloorplanOpts {
  std::string plan;
  std::uint64_t seed = 0;
  std::string out;
};

struct RunOpts {
  std::string model, evidence, mode = "sync", rates = "uniform", out, report;
  double tol = 1e-6, max_time = 10000.0, damping = 0.0;
  std::size_t max_sweeps = 1000;
  std::uint64_t seed = 0;
};

struct OracleOpts {
  std::string model, evidence, out;
};

struct ExpOpts {
  std::string model, out_dir;
  std::size_t trials = 30;
  std::uint64_t seed = 0;
  double evidence_frac = 0.1, tol = 1e-6, threshold = 1e-2;
  bool uniform_evidence = false;
  unsigned jobs = 1;
  std::string modes = "sync,uniform,split:0.5x10";
  std::string dead_counts = "2,4,6,8,10,12,14,16,18,20";
  std::size_t row = 4;
  std::string p_values = "0.005,0.05";
  double duration = 100.0, sample_interval = 0.1;
  bool uniform_readings = false;
};

// --------------------------------------------------------------- commands

int cmd_gen_firesensor(const GenFiresensorOpts& o, Outputs& out) {
  ClusterSpec cs;
  cs.sensors_per_cluster = o.sensors;
  cs.temp_levels = o.temp_levels;
  cs.initial_reading_fraction = o.initial_reading_fraction;
  cs.check_calibration = !o.no_check;
  CouplingSpec cp{o.coupling_temp, o.coupling_fire};
  const auto net = gen_firesensor(o.rows, o.cols, cs, cp, o.seed);
  out.add(o.out, write_model(net));
  return 0;
}

int cmd_gen_floorplan(const GenFloorplanOpts& o, Outputs& out) {
  const auto plan = read_floorplan(read_file(o.plan));
  const auto net = gen_floorplan(plan, o.seed);
  out.add(o.out, write_model(net));
  return 0;
}

Evidence load_evidence(const std::string& path, const ModelDocument& doc) {
  if (path.empty()) return doc.evidence.value_or(Evidence{});
  return read_evidence(read_file(path), doc.model);
}

int cmd_run(const RunOpts& o, Outputs& out) {
  if (o.mode != "sync" && o.mode != "async") throw UsageError("--mode must be sync or async");
  RatePolicy policy;
  try {
    policy = RatePolicy::parse(o.rates);
  } catch (const ModelError& e) {
    throw UsageError(std::string("--rates: ") + e.what());
  }
  const auto doc = read_model_document(read_file(o.model));
  const auto e = load_evidence(o.evidence, doc);
  check_evidence(doc.model, e);

  std::vector<DiscreteDistribution> beliefs;
  ConvergenceReport report;
  if (o.mode == "sync") {
    LbpConfig cfg;
    cfg.message_tolerance = o.tol;
    cfg.max_sweeps = o.max_sweeps;
    cfg.damping = o.damping;
    auto r = run_synchronous(doc.model, e, cfg);
    beliefs = std::move(r.beliefs);
    report = std::move(r.report);
  } else {
    SimConfig cfg;
    cfg.seed = o.seed;
    cfg.rate_policy = policy;
    cfg.message_tolerance = o.tol;
    cfg.max_time = o.max_time;
    cfg.damping = o.damping;
    auto r = run_async(doc.model, e, cfg);
    beliefs = std::move(r.beliefs);
    report = std::move(r.report);
  }
  out.add(o.out, write_beliefs(beliefs, doc.model));
  if (!o.report.empty()) {
    out.add(o.report, write_report(report, o.mode == "sync" ? "sync" : "async " + policy.to_string()));
  }
  return report.converged ? 0 : kExitNonConvergence;
}

int cmd_oracle(const OracleOpts& o, Outputs& out) {
  const auto doc = read_model_document(read_file(o.model));
  const auto e = load_evidence(o.evidence, doc);
  check_evidence(doc.model, e);
  const auto ve = exact_marginals(doc.model, e);
  try {
    const auto bf = brute_force_marginals(doc.model, e);
    for (std::size_t v = 0; v < ve.size(); ++v) {
      for (std::size_t k = 0; k < ve[v].probs.size(); ++k) {
        if (std::abs(ve[v].probs[k] - bf.marginals[v].probs[k]) > 1e-9) {
          throw Error("variable elimination and enumeration disagree on '" + doc.model.variable(v).name + "'");
        }
      }
    }
  } catch (const SizeGuardError&) {
    // Too large to enumerate; variable elimination stands alone.
  }
  out.add(o.out, write_beliefs(ve, doc.model));
  return 0;
}

TrialSettings trial_settings(const ExpOpts& o) {
  TrialSettings s;
  s.trials = o.trials;
  s.seed = o.seed;
  s.evidence_fraction = o.evidence_frac;
  s.draw = o.uniform_evidence ? EvidenceDraw::Uniform : EvidenceDraw::ModelSample;
  s.message_tolerance = o.tol;
  s.incorrect_threshold = o.threshold;
  s.jobs = o.jobs;
  return s;
}

std::string in_dir(const ExpOpts& o, const std::string& name) { return (fs::path(o.out_dir) / name).string(); }

std::string summary_text(const ExperimentSummary& s) { return s.to_json().dump(2) + "\n"; }

SensorNetwork load_network(const ExpOpts& o) {
  auto doc = read_model_document(read_file(o.model));
  if (!doc.network) throw Error("model '" + o.model + "' has no cluster metadata");
  return std::move(*doc.network);
}

int cmd_exp(const std::string& which, const ExpOpts& o, Outputs& out) {
  if (o.trials == 0) throw UsageError("--trials must be positive");
  if (!(o.evidence_frac >= 0.0 && o.evidence_frac <= 0.2)) throw UsageError("--evidence-frac must lie in [0, 0.2]");
  if (which == "convergence") {
    const auto modes = split_list<std::string>(o.modes, "--modes");
    for (const auto& m : modes) {
      if (m == "sync") continue;
      try {
        RatePolicy::parse(m);
      } catch (const ModelError& e) {
        throw UsageError(std::string("--modes: ") + e.what());
      }
    }
    const auto model = read_model(read_file(o.model));
    const auto r = exp_convergence(model, modes, trial_settings(o));
    out.add(in_dir(o, "convergence.csv"), convergence_csv(r.rows));
    out.add(in_dir(o, "convergence_summary.json"), summary_text(r.summary));
  } else if (which == "degradation") {
    const auto counts = split_list<std::size_t>(o.dead_counts, "--dead-counts");
    const auto net = load_network(o);
    const auto r = exp_degradation(net, counts, trial_settings(o));
    out.add(in_dir(o, "degradation.csv"), degradation_csv(r.rows));
    out.add(in_dir(o, "degradation_summary.json"), summary_text(r.summary));
  } else if (which == "pathblock") {
    const auto net = load_network(o);
    const auto r = exp_pathblock(net, o.row, trial_settings(o));
    out.add(in_dir(o, "pathblock.csv"), pathblock_csv(r.rows));
    out.add(in_dir(o, "pathblock_summary.json"), summary_text(r.summary));
  } else {
    const auto ps = split_list<double>(o.p_values, "--p-values");
    for (double p : ps) {
      if (!(p >= 0.0 && p <= 1.0)) throw UsageError("--p-values entries must lie in [0, 1]");
    }
    if (!(o.duration > 0.0)) throw UsageError("--duration must be positive");
    if (!(o.sample_interval > 0.0)) throw UsageError("--sample-interval must be positive");
    const auto net = load_network(o);
    DynamicSettings d;
    d.p_values = ps;
    d.duration = o.duration;
    d.sample_interval = o.sample_interval;
    d.seed = o.seed;
    d.draw = o.uniform_readings ? ReadingDraw::Uniform : ReadingDraw::Marginal;
    d.message_tolerance = o.tol;
    d.incorrect_threshold = o.threshold;
    d.jobs = o.jobs;
    const auto r = exp_dynamic(net, d);
    for (const auto& run : r.runs) {
      out.add(in_dir(o, "dynamic_p" + format_number(run.p) + ".csv"), write_series_csv(run.result.series));
    }
    out.add(in_dir(o, "dynamic_summary.json"), summary_text(r.summary));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Loopy belief propagation on simulated sensor networks", "sensorbp"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "sensorbp 1.0");

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a model");
  gen->require_subcommand(1);
  GenFiresensorOpts gf;
  auto* gen_fs = gen->add_subcommand("firesensor", "Lattice of fire-sensor clusters");
  gen_fs->add_option("--rows", gf.rows, "Lattice rows")->check(CLI::PositiveNumber);
  gen_fs->add_option("--cols", gf.cols, "Lattice columns")->check(CLI::PositiveNumber);
  gen_fs->add_option("--sensors", gf.sensors, "Sensors per cluster")->check(CLI::Range(1, 16));
  gen_fs->add_option("--temp-levels", gf.temp_levels, "Temperature levels")->check(CLI::Range(2, 16));
  gen_fs->add_option("--initial-reading-fraction", gf.initial_reading_fraction,
                     "Fraction of clusters given readings")->check(CLI::Range(0.0, 1.0));
  gen_fs->add_option("--coupling-temp", gf.coupling_temp, "Temperature agreement strength")->check(CLI::PositiveNumber);
  gen_fs->add_option("--coupling-fire", gf.coupling_fire, "Fire agreement strength")->check(CLI::PositiveNumber);
  gen_fs->add_flag("--no-calibration-check", gf.no_check, "Skip the calibration self-check");
  gen_fs->add_option("--seed", gf.seed, "Random seed");
  gen_fs->add_option("-o,--output", gf.out, "Model JSON path")->required();

  GenFloorplanOpts gp;
  auto* gen_fp = gen->add_subcommand("floorplan", "Clusters on a room graph");
  gen_fp->add_option("--plan", gp.plan, "Floor plan JSON")->required();
  gen_fp->add_option("--seed", gp.seed, "Random seed");
  gen_fp->add_option("-o,--output", gp.out, "Model JSON path")->required();

  // run
  RunOpts ro;
  auto* run = app.add_subcommand("run", "Loopy belief propagation");
  run->add_option("--model", ro.model, "Model JSON")->required();
  run->add_option("--evidence", ro.evidence, "Evidence JSON (defaults to the model's evidence block)");
  run->add_option("--mode", ro.mode, "sync or async")->check(CLI::IsMember({"sync", "async"}));
  run->add_option("--rates", ro.rates, "uniform[:R], split:FxM or topk:KxM");
  run->add_option("--tol", ro.tol, "Message tolerance")->check(CLI::PositiveNumber);
  run->add_option("--max-sweeps", ro.max_sweeps, "Synchronous sweep limit")->check(CLI::PositiveNumber);
  run->add_option("--max-time", ro.max_time, "Asynchronous time limit")->check(CLI::PositiveNumber);
  run->add_option("--damping", ro.damping, "Message damping")->check(CLI::Range(0.0, 0.99));
  run->add_option("--seed", ro.seed, "Random seed");
  run->add_option("-o,--output", ro.out, "Beliefs JSON path")->required();
  run->add_option("--report", ro.report, "Convergence report JSON path");

  // oracle
  OracleOpts oo;
  auto* oracle = app.add_subcommand("oracle", "Exact marginals");
  oracle->add_option("--model", oo.model, "Model JSON")->required();
  oracle->add_option("--evidence", oo.evidence, "Evidence JSON (defaults to the model's evidence block)");
  oracle->add_option("-o,--output", oo.out, "Beliefs JSON path")->required();

  // exp
  auto* exp = app.add_subcommand("exp", "Experiments");
  exp->require_subcommand(1);
  ExpOpts eo;
  auto common = [&](CLI::App* c) {
    c->add_option("--model", eo.model, "Model JSON")->required();
    c->add_option("--out-dir", eo.out_dir, "Output directory")->required();
    c->add_option("--seed", eo.seed, "Random seed");
    c->add_option("--jobs", eo.jobs, "Worker threads")->check(CLI::Range(1, 256));
    c->add_option("--tol", eo.tol, "Message tolerance")->check(CLI::PositiveNumber);
    c->add_option("--threshold", eo.threshold, "Incorrect-belief threshold (total variation)")->check(CLI::PositiveNumber);
  };
  auto trials = [&](CLI::App* c) {
    c->add_option("--trials", eo.trials, "Trials per condition")->check(CLI::PositiveNumber);
    c->add_option("--evidence-frac", eo.evidence_frac, "Observed fraction of nodes")->check(CLI::Range(0.0, 0.2));
    c->add_flag("--uniform-evidence", eo.uniform_evidence, "Draw observed values uniformly");
  };
  auto* exp_conv = exp->add_subcommand("convergence", "Propagations to convergence");
  common(exp_conv);
  trials(exp_conv);
  exp_conv->add_option("--modes", eo.modes, "Comma-separated: sync and rate policies");
  auto* exp_deg = exp->add_subcommand("degradation", "Random cluster failures");
  common(exp_deg);
  trials(exp_deg);
  exp_deg->add_option("--dead-counts", eo.dead_counts, "Comma-separated dead counts");
  auto* exp_path = exp->add_subcommand("pathblock", "Row-by-row failures");
  common(exp_path);
  trials(exp_path);
  exp_path->add_option("--row", eo.row, "Blocked row (0-based)");
  auto* exp_dyn = exp->add_subcommand("dynamic", "Re-observing sensors");
  common(exp_dyn);
  exp_dyn->add_option("--p-values", eo.p_values, "Comma-separated observation probabilities");
  exp_dyn->add_option("--duration", eo.duration, "Run length in time steps");
  exp_dyn->add_option("--sample-interval", eo.sample_interval, "Sampling interval");
  exp_dyn->add_flag("--uniform-readings", eo.uniform_readings, "Redraw readings uniformly");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    Outputs out;
    int code = 0;
    if (gen_fs->parsed()) {
      code = cmd_gen_firesensor(gf, out);
    } else if (gen_fp->parsed()) {
      code = cmd_gen_floorplan(gp, out);
    } else if (run->parsed()) {
      code = cmd_run(ro, out);
    } else if (oracle->parsed()) {
      code = cmd_oracle(oo, out);
    } else if (exp_conv->parsed()) {
      code = cmd_exp("convergence", eo, out);
    } else if (exp_deg->parsed()) {
      code = cmd_exp("degradation", eo, out);
    } else if (exp_path->parsed()) {
      code = cmd_exp("pathblock", eo, out);
    } else if (exp_dyn->parsed()) {
      code = cmd_exp("dynamic", eo, out);
    }
    out.commit();
    if (code == kExitNonConvergence) std::cerr << "sensorbp: did not converge\n";
    return code;
  } catch (const UsageError& e) {
    std::cerr << "sensorbp: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "sensorbp: " << e.what() << "\n";
    return kExitRuntime;
  }
}
