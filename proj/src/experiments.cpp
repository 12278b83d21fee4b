#include "sensorbp/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <numeric>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

#include "sensorbp/errors.hpp"
#include "sensorbp/formats.hpp"

namespace sensorbp {

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kTagEvidence = 101;
constexpr std::uint64_t kTagSim = 102;
constexpr std::uint64_t kTagDead = 103;
constexpr std::uint64_t kTagRowEvidence = 104;
constexpr std::uint64_t kTagRandomEvidence = 105;
constexpr std::uint64_t kTagRandomDead = 106;
constexpr std::uint64_t kTagOneSided = 107;
constexpr std::uint64_t kTagDynamic = 108;

template <class F>
void parallel_for(std::size_t n, unsigned jobs, F&& body) {
  jobs = std::max(1u, jobs);
  if (jobs == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (unsigned j = 0; j < std::min<std::size_t>(jobs, n); ++j) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::size_t draw_index(std::span<const double> weights, Rng& rng) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw ZeroMassError("sampling from a zero-mass distribution");
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (u < acc) return k;
  }
  // Rounding can leave u just above the running sum; take the last positive entry.
  for (std::size_t k = weights.size(); k-- > 0;) {
    if (weights[k] > 0.0) return k;
  }
  return weights.size() - 1;
}

std::vector<bool> as_mask(std::size_t n, std::span<const VarId> ids) {
  std::vector<bool> m(n, false);
  for (VarId v : ids) m[v] = true;
  return m;
}

LbpResult solve_sync(const FactorGraphModel& fg, const Evidence& e, const TrialSettings& s,
                     const std::vector<bool>& dead) {
  LbpConfig cfg;
  cfg.message_tolerance = s.message_tolerance;
  cfg.incorrect_threshold = s.incorrect_threshold;
  cfg.max_sweeps = s.max_sweeps;
  std::unique_ptr<bool[]> mask(new bool[fg.num_variables()]);
  for (VarId v = 0; v < fg.num_variables(); ++v) mask[v] = v < dead.size() && dead[v];
  return run_synchronous(fg, e, cfg, {mask.get(), fg.num_variables()});
}

std::vector<VarId> choose(std::vector<VarId> pool, std::size_t k, Rng& rng) {
  if (k > pool.size()) throw ModelError("cannot choose more items than available");
  for (std::size_t m = 0; m < k; ++m) {
    const std::size_t pick = m + rng.below(pool.size() - m);
    std::swap(pool[m], pool[pick]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<VarId> all_ids(std::size_t n) {
  std::vector<VarId> ids(n);
  std::iota(ids.begin(), ids.end(), VarId{0});
  return ids;
}

nlohmann::ordered_json stats_json(const Stats& s) {
  return {{"count", s.count}, {"min", s.min}, {"median", s.median}, {"max", s.max}, {"mean", s.mean}};
}

nlohmann::ordered_json settings_json(const TrialSettings& s) {
  return {{"trials", s.trials},
          {"seed", s.seed},
          {"evidence_fraction", s.evidence_fraction},
          {"evidence_draw", s.draw == EvidenceDraw::ModelSample ? "model" : "uniform"},
          {"message_tolerance", s.message_tolerance},
          {"incorrect_threshold", s.incorrect_threshold},
          {"max_sweeps", s.max_sweeps},
          {"max_time", s.max_time}};
}

struct Comparison {
  std::size_t affected = 0;
  double mean_tv = 0.0;
  bool converged = true;
};

// Live-node beliefs of the degraded network against the intact one.
Comparison compare_degraded(const FactorGraphModel& fg, const Evidence& e, const std::vector<bool>& dead,
                            const TrialSettings& s) {
  const auto intact = solve_sync(fg, e, s, {});
  const auto degraded = solve_sync(fg, e, s, dead);
  std::vector<VarId> live;
  for (VarId v = 0; v < fg.num_variables(); ++v) {
    if (!dead[v]) live.push_back(v);
  }
  auto c = count_incorrect(degraded.beliefs, intact.beliefs, s.incorrect_threshold, live);
  return {c.count, c.mean_tv_error, intact.report.converged && degraded.report.converged};
}

}  // namespace

bool is_bayes_net_shaped(const FactorGraphModel& fg) {
  const std::size_t n = fg.num_variables();
  if (fg.num_factors() != n) return false;
  std::vector<int> owner(n, -1);
  for (FactorId f = 0; f < fg.num_factors(); ++f) {
    const auto& t = fg.factor(f);
    if (t.arity() == 0) return false;
    const VarId child = t.scope().back();
    if (owner[child] != -1) return false;
    owner[child] = static_cast<int>(f);
    const std::size_t card = t.cards().back();
    for (std::size_t r = 0; r < t.size() / card; ++r) {
      double sum = 0.0;
      for (std::size_t k = 0; k < card; ++k) sum += t.values()[r * card + k];
      if (std::abs(sum - 1.0) > 1e-6) return false;
    }
  }
  // Acyclic: Kahn over parent -> child edges.
  std::vector<std::size_t> indeg(n, 0);
  std::vector<std::vector<VarId>> kids(n);
  for (VarId v = 0; v < n; ++v) {
    const auto& scope = fg.factor(owner[v]).scope();
    for (std::size_t p = 0; p + 1 < scope.size(); ++p) {
      kids[scope[p]].push_back(v);
      ++indeg[v];
    }
  }
  std::vector<VarId> stack;
  for (VarId v = 0; v < n; ++v) {
    if (indeg[v] == 0) stack.push_back(v);
  }
  std::size_t seen = 0;
  while (!stack.empty()) {
    const VarId v = stack.back();
    stack.pop_back();
    ++seen;
    for (VarId c : kids[v]) {
      if (--indeg[c] == 0) stack.push_back(c);
    }
  }
  return seen == n;
}

std::vector<std::size_t> sample_joint(const FactorGraphModel& fg, Rng& rng, std::size_t gibbs_sweeps) {
  const std::size_t n = fg.num_variables();
  std::vector<std::size_t> x(n, 0);
  if (is_bayes_net_shaped(fg)) {
    std::vector<FactorId> owner(n);
    for (FactorId f = 0; f < n; ++f) owner[fg.factor(f).scope().back()] = f;
    std::vector<bool> done(n, false);
    std::size_t remaining = n;
    while (remaining > 0) {
      for (VarId v = 0; v < n; ++v) {
        if (done[v]) continue;
        const auto& t = fg.factor(owner[v]);
        bool ready = true;
        std::size_t offset = 0;
        for (std::size_t p = 0; p + 1 < t.arity(); ++p) {
          if (!done[t.scope()[p]]) {
            ready = false;
            break;
          }
          offset += x[t.scope()[p]] * t.stride(p);
        }
        if (!ready) continue;
        const std::size_t card = t.cards().back();
        x[v] = draw_index({t.values().data() + offset, card}, rng);
        done[v] = true;
        --remaining;
      }
    }
    return x;
  }
  for (VarId v = 0; v < n; ++v) x[v] = rng.below(fg.cardinality(v));
  std::vector<double> w;
  for (std::size_t s = 0; s < gibbs_sweeps; ++s) {
    for (VarId v = 0; v < n; ++v) {
      w.assign(fg.cardinality(v), 1.0);
      for (std::size_t k = 0; k < w.size(); ++k) {
        x[v] = k;
        for (FactorId f : fg.factors_of(v)) w[k] *= fg.factor(f).at_full(x);
      }
      x[v] = draw_index(w, rng);
    }
  }
  return x;
}

Evidence sample_evidence(const FactorGraphModel& fg, double fraction, Rng& rng, EvidenceDraw draw,
                         std::span<const VarId> candidates) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ModelError("evidence fraction must lie in [0, 1]");
  std::vector<VarId> pool = candidates.empty() ? all_ids(fg.num_variables())
                                               : std::vector<VarId>(candidates.begin(), candidates.end());
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool.size())));
  const auto chosen = choose(std::move(pool), k, rng);
  Evidence e;
  if (chosen.empty()) return e;
  if (draw == EvidenceDraw::ModelSample) {
    const auto x = sample_joint(fg, rng);
    for (VarId v : chosen) e[v] = x[v];
  } else {
    for (VarId v : chosen) e[v] = rng.below(fg.cardinality(v));
  }
  return e;
}

Stats summarize(std::vector<double> values) {
  Stats s;
  s.count = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  s.min = values.front();
  s.max = values.back();
  const std::size_t m = values.size() / 2;
  s.median = values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  return s;
}

nlohmann::ordered_json ExperimentSummary::to_json() const {
  nlohmann::ordered_json j;
  j["experiment"] = experiment;
  j["seeds"] = seeds;
  j["config"] = config;
  auto& conds = j["conditions"] = nlohmann::ordered_json::array();
  for (const auto& c : conditions) {
    nlohmann::ordered_json cj;
    cj["condition"] = c.condition;
    cj["trials"] = c.trials;
    cj["nonconverged"] = c.nonconverged;
    cj["stats"] = stats_json(c.stats);
    for (const auto& [k, v] : c.extra.items()) cj[k] = v;
    conds.push_back(std::move(cj));
  }
  j["results"] = results;
  return j;
}

ConvergenceOutput exp_convergence(const FactorGraphModel& model, const std::vector<std::string>& modes,
                                  const TrialSettings& s) {
  if (!(s.evidence_fraction >= 0.0 && s.evidence_fraction <= 0.2)) {
    throw ModelError("evidence fraction must lie in [0, 0.2]");
  }
  if (modes.empty()) throw ModelError("no modes given");
  std::vector<std::optional<RatePolicy>> policies;
  for (const auto& m : modes) {
    if (m == "sync") {
      policies.emplace_back();
    } else {
      policies.emplace_back(RatePolicy::parse(m));
    }
  }
  const std::size_t n = model.num_variables();
  ConvergenceOutput out;
  out.rows.resize(modes.size() * s.trials);
  parallel_for(s.trials, s.jobs, [&](std::size_t t) {
    Rng erng(derive_seed(s.seed, kTagEvidence, t));
    const auto e = sample_evidence(model, s.evidence_fraction, erng, s.draw);
    for (std::size_t m = 0; m < modes.size(); ++m) {
      ConvergenceRow row;
      row.mode = modes[m];
      row.trial = t;
      if (!policies[m]) {
        const auto r = solve_sync(model, e, s, {});
        row.propagations = r.report.total_propagations;
        row.converged = r.report.converged;
      } else {
        SimConfig cfg;
        cfg.seed = derive_seed(s.seed, kTagSim, t);
        cfg.rate_policy = *policies[m];
        cfg.message_tolerance = s.message_tolerance;
        cfg.incorrect_threshold = s.incorrect_threshold;
        cfg.max_time = s.max_time;
        const auto r = run_async(model, e, cfg);
        row.propagations = r.report.total_propagations;
        row.converged = r.report.converged;
      }
      out.rows[m * s.trials + t] = row;
    }
  });

  out.summary.experiment = "convergence";
  out.summary.config = settings_json(s);
  out.summary.config["modes"] = modes;
  out.summary.config["nodes"] = n;
  for (std::size_t t = 0; t < s.trials; ++t) out.summary.seeds.push_back(derive_seed(s.seed, kTagEvidence, t));
  std::map<std::string, double> medians;
  for (std::size_t m = 0; m < modes.size(); ++m) {
    ConditionSummary c;
    c.condition = modes[m];
    c.trials = s.trials;
    std::vector<double> props;
    for (std::size_t t = 0; t < s.trials; ++t) {
      const auto& r = out.rows[m * s.trials + t];
      if (r.converged) {
        props.push_back(static_cast<double>(r.propagations));
      } else {
        ++c.nonconverged;
      }
    }
    c.stats = summarize(props);
    medians[modes[m]] = c.stats.median;
    out.summary.conditions.push_back(std::move(c));
  }
  const double nln = static_cast<double>(n) * std::log(static_cast<double>(n));
  auto& res = out.summary.results;
  if (medians.count("sync")) {
    out.c = medians["sync"] / static_cast<double>(n);
    res["c"] = out.c;
    res["c_n_ln_n"] = out.c * nln;
  }
  for (std::size_t m = 0; m < modes.size(); ++m) {
    if (!policies[m]) continue;
    const auto& p = *policies[m];
    const double med = medians[modes[m]];
    if (p.kind == RatePolicy::Kind::Uniform && out.c > 0.0 && nln > 0.0) {
      out.uniform_ratio = med / (out.c * nln);
      res["uniform_vs_c_n_ln_n"] = out.uniform_ratio;
    }
  }
  for (std::size_t m = 0; m < modes.size(); ++m) {
    if (!policies[m]) continue;
    const auto& p = *policies[m];
    const double med = medians[modes[m]];
    if (p.kind == RatePolicy::Kind::Split) {
      for (std::size_t u = 0; u < modes.size(); ++u) {
        if (policies[u] && policies[u]->kind == RatePolicy::Kind::Uniform && medians[modes[u]] > 0.0) {
          out.split_ratio = med / medians[modes[u]];
          res["split_vs_uniform"] = out.split_ratio;
          break;
        }
      }
    }
    if (p.kind == RatePolicy::Kind::TopK && medians.count("sync") && medians["sync"] > 0.0) {
      out.topk_vs_sync = med / medians["sync"];
      res["topk_vs_sync"] = out.topk_vs_sync;
    }
  }
  return out;
}

DegradationOutput exp_degradation(const SensorNetwork& net, const std::vector<std::size_t>& dead_counts,
                                  const TrialSettings& s) {
  const auto& fg = net.model;
  const std::size_t n = fg.num_variables();
  for (std::size_t d : dead_counts) {
    if (d >= n) throw ModelError("dead count must be below the node count");
  }
  DegradationOutput out;
  out.rows.resize(dead_counts.size() * s.trials);
  parallel_for(dead_counts.size() * s.trials, s.jobs, [&](std::size_t idx) {
    const std::size_t ci = idx / s.trials, t = idx % s.trials;
    const std::size_t d = dead_counts[ci];
    Rng rng(derive_seed(s.seed, kTagDead, d * 1000003 + t));
    const auto dead_ids = choose(all_ids(n), d, rng);
    const auto dead = as_mask(n, dead_ids);
    std::vector<VarId> live;
    for (VarId v = 0; v < n; ++v) {
      if (!dead[v]) live.push_back(v);
    }
    const auto e = sample_evidence(fg, s.evidence_fraction, rng, s.draw, live);
    const auto cmp = compare_degraded(fg, e, dead, s);
    DegradationRow row;
    row.dead_count = d;
    row.trial = t;
    row.affected_fraction = static_cast<double>(cmp.affected) / static_cast<double>(n);
    row.untouched_fraction = static_cast<double>(live.size() - cmp.affected) / static_cast<double>(n);
    row.mean_tv_error = cmp.mean_tv;
    row.converged = cmp.converged;
    out.rows[idx] = row;
  });

  out.summary.experiment = "degradation";
  out.summary.config = settings_json(s);
  out.summary.config["dead_counts"] = dead_counts;
  out.summary.config["nodes"] = n;
  out.summary.seeds.push_back(s.seed);
  std::vector<double> tv_means;
  auto& res = out.summary.results;
  res["per_dead_count"] = nlohmann::ordered_json::array();
  for (std::size_t ci = 0; ci < dead_counts.size(); ++ci) {
    ConditionSummary c;
    c.condition = "dead=" + std::to_string(dead_counts[ci]);
    c.trials = s.trials;
    std::vector<double> aff, unt, tv;
    for (std::size_t t = 0; t < s.trials; ++t) {
      const auto& r = out.rows[ci * s.trials + t];
      if (!r.converged) ++c.nonconverged;
      aff.push_back(r.affected_fraction);
      unt.push_back(r.untouched_fraction);
      if (r.affected_fraction > 0.0) tv.push_back(r.mean_tv_error);
    }
    c.stats = summarize(aff);
    const auto us = summarize(unt);
    const auto ts = summarize(tv);
    c.extra["untouched_fraction"] = stats_json(us);
    c.extra["mean_tv_error"] = stats_json(ts);
    if (ts.count > 0) tv_means.push_back(ts.mean);
    res["per_dead_count"].push_back({{"dead_count", dead_counts[ci]},
                                     {"mean_affected_fraction", c.stats.mean},
                                     {"mean_untouched_fraction", us.mean},
                                     {"mean_tv_error", ts.mean}});
    out.summary.conditions.push_back(std::move(c));
  }
  if (!tv_means.empty()) {
    const auto [lo, hi] = std::minmax_element(tv_means.begin(), tv_means.end());
    res["tv_error_max_min_ratio"] = *lo > 0.0 ? *hi / *lo : std::numeric_limits<double>::infinity();
  }
  return out;
}

PathblockOutput exp_pathblock(const SensorNetwork& net, std::size_t row, const TrialSettings& s) {
  if (net.rows == 0 || net.cols == 0) throw ModelError("path blocking needs a lattice network");
  if (row >= net.rows) throw ModelError("blocking row outside the lattice");
  const auto& fg = net.model;
  const std::size_t n = fg.num_variables();
  const std::size_t cols = net.cols;
  auto id = [&](std::size_t r, std::size_t c) { return net.clusters[r * cols + c].node; };

  PathblockOutput out;
  // Layout: [placement][k-1][trial].
  out.rows.resize(2 * cols * s.trials);
  parallel_for(2 * cols * s.trials, s.jobs, [&](std::size_t idx) {
    const std::size_t placement = idx / (cols * s.trials);
    const std::size_t k = (idx / s.trials) % cols + 1;
    const std::size_t t = idx % s.trials;
    std::vector<VarId> dead_ids;
    Rng rng(derive_seed(s.seed, placement == 0 ? kTagRowEvidence : kTagRandomEvidence, k * 1000003 + t));
    if (placement == 0) {
      for (std::size_t c = 0; c < k; ++c) dead_ids.push_back(id(row, c));
    } else {
      Rng drng(derive_seed(s.seed, kTagRandomDead, k * 1000003 + t));
      dead_ids = choose(all_ids(n), k, drng);
    }
    const auto dead = as_mask(n, dead_ids);
    std::vector<VarId> live;
    for (VarId v = 0; v < n; ++v) {
      if (!dead[v]) live.push_back(v);
    }
    const auto e = sample_evidence(fg, s.evidence_fraction, rng, s.draw, live);
    const auto cmp = compare_degraded(fg, e, dead, s);
    PathblockRow r;
    r.placement = placement == 0 ? "row" : "random";
    r.k = k;
    r.trial = t;
    r.affected = cmp.affected;
    r.affected_fraction = static_cast<double>(cmp.affected) / static_cast<double>(n);
    r.mean_tv_error = cmp.mean_tv;
    out.rows[idx] = r;
  });

  // Whole row dead, all observations below it.
  out.one_sided_incorrect.resize(s.trials);
  std::vector<VarId> below, above;
  for (std::size_t r = 0; r < net.rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (r > row) below.push_back(id(r, c));
      if (r < row) above.push_back(id(r, c));
    }
  }
  std::vector<VarId> row_ids;
  for (std::size_t c = 0; c < cols; ++c) row_ids.push_back(id(row, c));
  const auto dead = as_mask(n, row_ids);
  const double below_fraction =
      below.empty() ? 0.0
                    : std::min(1.0, s.evidence_fraction * static_cast<double>(n - cols) /
                                        static_cast<double>(below.size()));
  parallel_for(s.trials, s.jobs, [&](std::size_t t) {
    Rng rng(derive_seed(s.seed, kTagOneSided, t));
    const auto e = sample_evidence(fg, below_fraction, rng, s.draw, below);
    const auto intact = solve_sync(fg, e, s, {});
    const auto degraded = solve_sync(fg, e, s, dead);
    std::vector<VarId> free_above;
    for (VarId v : above) {
      if (!e.count(v)) free_above.push_back(v);
    }
    const auto c = count_incorrect(degraded.beliefs, intact.beliefs, s.incorrect_threshold, free_above);
    out.one_sided_incorrect[t] =
        free_above.empty() ? 1.0 : static_cast<double>(c.count) / static_cast<double>(free_above.size());
  });

  out.summary.experiment = "pathblock";
  out.summary.config = settings_json(s);
  out.summary.config["row"] = row;
  out.summary.config["nodes"] = n;
  out.summary.seeds.push_back(s.seed);
  auto& res = out.summary.results;
  res["per_k"] = nlohmann::ordered_json::array();
  for (std::size_t placement = 0; placement < 2; ++placement) {
    for (std::size_t k = 1; k <= cols; ++k) {
      ConditionSummary c;
      c.condition = std::string(placement == 0 ? "row" : "random") + " k=" + std::to_string(k);
      c.trials = s.trials;
      std::vector<double> aff;
      for (std::size_t t = 0; t < s.trials; ++t) {
        aff.push_back(static_cast<double>(out.rows[(placement * cols + k - 1) * s.trials + t].affected));
      }
      c.stats = summarize(aff);
      (placement == 0 ? out.mean_row_affected : out.mean_random_affected).push_back(c.stats.mean);
      out.summary.conditions.push_back(std::move(c));
    }
  }
  for (std::size_t k = 1; k <= cols; ++k) {
    const double rnd = out.mean_random_affected[k - 1];
    res["per_k"].push_back({{"k", k},
                            {"mean_row_affected", out.mean_row_affected[k - 1]},
                            {"mean_random_affected", rnd},
                            {"row_vs_random", rnd > 0.0 ? out.mean_row_affected[k - 1] / rnd : 0.0}});
  }
  const auto os = summarize(out.one_sided_incorrect);
  res["one_sided_incorrect"] = stats_json(os);
  return out;
}

SlopeFit hac_slope(std::span<const double> x, std::span<const double> y, std::size_t lag) {
  if (x.size() != y.size()) throw ModelError("hac_slope: length mismatch");
  SlopeFit fit;
  const std::size_t n = x.size();
  fit.points = n;
  if (n < 3) {
    fit.ci_low = -std::numeric_limits<double>::infinity();
    fit.ci_high = std::numeric_limits<double>::infinity();
    return fit;
  }
  const double xb = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double yb = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    sxx += (x[t] - xb) * (x[t] - xb);
    sxy += (x[t] - xb) * (y[t] - yb);
  }
  if (!(sxx > 0.0)) throw ModelError("hac_slope: x has no spread");
  fit.slope = sxy / sxx;
  std::vector<double> u(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double resid = y[t] - yb - fit.slope * (x[t] - xb);
    u[t] = (x[t] - xb) * resid;
  }
  if (lag == 0) {
    lag = static_cast<std::size_t>(std::floor(4.0 * std::pow(static_cast<double>(n) / 100.0, 2.0 / 9.0)));
  }
  lag = std::min(lag, n - 1);
  double s = 0.0;
  for (std::size_t t = 0; t < n; ++t) s += u[t] * u[t];
  for (std::size_t l = 1; l <= lag; ++l) {
    const double w = 1.0 - static_cast<double>(l) / static_cast<double>(lag + 1);
    double acc = 0.0;
    for (std::size_t t = l; t < n; ++t) acc += u[t] * u[t - l];
    s += 2.0 * w * acc;
  }
  const double se = std::sqrt(std::max(s, 0.0)) / sxx;
  const boost::math::students_t dist(static_cast<double>(n - 2));
  const double q = boost::math::quantile(dist, 0.975);
  fit.ci_low = fit.slope - q * se;
  fit.ci_high = fit.slope + q * se;
  return fit;
}

void analyze_series(const ExperimentSeries& series, double duration, DynamicRunSummary& out) {
  const double half = duration / 2.0;
  std::vector<double> second;
  std::map<long long, std::pair<double, std::size_t>> per_step;
  for (const auto& r : series.rows) {
    if (r.time <= half + 1e-9) continue;
    second.push_back(r.incorrect_fraction);
    // Step s covers (s-1, s].
    const auto step = static_cast<long long>(std::ceil(r.time - 1e-9));
    auto& acc = per_step[step];
    acc.first += r.incorrect_fraction;
    ++acc.second;
  }
  out.steady_state = second.empty() ? 0.0
                                    : std::accumulate(second.begin(), second.end(), 0.0) /
                                          static_cast<double>(second.size());
  out.burn_in = series.rows.empty() ? 0.0 : series.rows.back().time;
  for (const auto& r : series.rows) {
    if (r.incorrect_fraction <= out.steady_state) {
      out.burn_in = r.time;
      break;
    }
  }
  std::vector<double> xs, ys;
  for (const auto& [step, acc] : per_step) {
    xs.push_back(static_cast<double>(step));
    ys.push_back(acc.first / static_cast<double>(acc.second));
  }
  out.slope = hac_slope(xs, ys);
}

DynamicOutput exp_dynamic(const SensorNetwork& net, const DynamicSettings& s) {
  DynamicOutput out;
  out.summary.experiment = "dynamic";
  out.summary.config = {{"p_values", s.p_values},
                        {"duration", s.duration},
                        {"sample_interval", s.sample_interval},
                        {"seed", s.seed},
                        {"reading_draw", s.draw == ReadingDraw::Marginal ? "marginal" : "uniform"},
                        {"message_tolerance", s.message_tolerance},
                        {"incorrect_threshold", s.incorrect_threshold}};
  out.summary.seeds.push_back(s.seed);
  auto& res = out.summary.results;
  res["per_p"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < s.p_values.size(); ++i) {
    DynamicConfig dcfg;
    dcfg.observe_prob = s.p_values[i];
    dcfg.duration = s.duration;
    dcfg.sample_interval = s.sample_interval;
    dcfg.draw = s.draw;
    dcfg.jobs = s.jobs;
    SimConfig cfg;
    cfg.seed = derive_seed(s.seed, kTagDynamic, i);
    cfg.message_tolerance = s.message_tolerance;
    cfg.incorrect_threshold = s.incorrect_threshold;
    cfg.max_time = s.duration + 1.0;
    DynamicRunSummary run;
    run.p = s.p_values[i];
    run.result = run_dynamic(net, dcfg, cfg);
    analyze_series(run.result.series, s.duration, run);
    ConditionSummary c;
    c.condition = "p=" + nlohmann::ordered_json(run.p).dump();
    c.trials = 1;
    c.nonconverged = run.result.reference_nonconverged;
    std::vector<double> fr;
    for (const auto& r : run.result.series.rows) fr.push_back(r.incorrect_fraction);
    c.stats = summarize(fr);
    out.summary.conditions.push_back(std::move(c));
    res["per_p"].push_back({{"p", run.p},
                            {"seed", cfg.seed},
                            {"steady_state_incorrect_fraction", run.steady_state},
                            {"burn_in", run.burn_in},
                            {"slope", run.slope.slope},
                            {"slope_ci_low", run.slope.ci_low},
                            {"slope_ci_high", run.slope.ci_high},
                            {"observation_changes", run.result.observation_changes},
                            {"distinct_references", run.result.distinct_references},
                            {"reference_nonconverged", run.result.reference_nonconverged}});
    out.runs.push_back(std::move(run));
  }
  return out;
}

std::string convergence_csv(const std::vector<ConvergenceRow>& rows) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows) {
    out.push_back({r.mode, std::to_string(r.trial), std::to_string(r.propagations), r.converged ? "true" : "false"});
  }
  const std::vector<std::string> header{"mode", "trial", "propagations", "converged"};
  return write_csv(header, out);
}

std::string degradation_csv(const std::vector<DegradationRow>& rows) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows) {
    out.push_back({std::to_string(r.dead_count), std::to_string(r.trial), format_number(r.affected_fraction),
                   format_number(r.mean_tv_error)});
  }
  const std::vector<std::string> header{"dead_count", "trial", "affected_fraction", "mean_tv_error"};
  return write_csv(header, out);
}

std::string pathblock_csv(const std::vector<PathblockRow>& rows) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows) {
    out.push_back({r.placement, std::to_string(r.k), std::to_string(r.trial), std::to_string(r.affected),
                   format_number(r.affected_fraction), format_number(r.mean_tv_error)});
  }
  const std::vector<std::string> header{"placement", "k", "trial", "affected", "affected_fraction", "mean_tv_error"};
  return write_csv(header, out);
}

}  // namespace sensorbp
