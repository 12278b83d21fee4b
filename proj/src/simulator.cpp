#include "sensorbp/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <queue>
#include <thread>

#include "sensorbp/errors.hpp"
#include "sensorbp/exact.hpp"

namespace sensorbp {

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kTagClocks = 1;
constexpr std::uint64_t kTagRates = 2;
constexpr std::uint64_t kTagChurn = 3;

struct Event {
  double time;
  VarId node;
  bool operator>(const Event& o) const { return time > o.time || (time == o.time && node > o.node); }
};

using EventQueue = std::priority_queue<Event, std::vector<Event>, std::greater<>>;

double parse_real(std::string_view s, std::string_view text) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ModelError("bad rate policy '" + std::string(text) + "'");
  }
  return v;
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::vector<bool> dead_mask(std::size_t n, const std::set<VarId>& dead) {
  std::vector<bool> mask(n, false);
  for (VarId v : dead) mask.at(v) = true;
  return mask;
}

// Bookkeeping for the quiet-run convergence rule.
class QuietTracker {
 public:
  QuietTracker(std::size_t n, std::size_t live, std::size_t window)
      : stamp_(n, 0), live_(live), window_(window) {}

  void record(VarId v, bool loud) {
    if (loud) {
      ++epoch_;
      run_ = 0;
      covered_ = 0;
      return;
    }
    ++run_;
    if (stamp_[v] != epoch_) {
      stamp_[v] = epoch_;
      ++covered_;
    }
  }

  void kill(VarId v) {
    if (stamp_[v] == epoch_) --covered_;
    stamp_[v] = 0;
    --live_;
  }

  bool converged() const { return live_ > 0 && run_ >= window_ && covered_ >= live_; }

 private:
  std::vector<std::size_t> stamp_;
  std::size_t epoch_ = 1;
  std::size_t run_ = 0;
  std::size_t covered_ = 0;
  std::size_t live_;
  std::size_t window_;
};

std::vector<bool> to_bool_vector(std::span<const bool> s, std::size_t n) {
  std::vector<bool> out(n, false);
  for (std::size_t i = 0; i < s.size() && i < n; ++i) out[i] = s[i];
  return out;
}

}  // namespace

RatePolicy RatePolicy::uniform(double rate) {
  RatePolicy p;
  p.kind = Kind::Uniform;
  p.base_rate = rate;
  return p;
}

RatePolicy RatePolicy::split(double fraction_fast, double multiplier) {
  RatePolicy p;
  p.kind = Kind::Split;
  p.fraction_fast = fraction_fast;
  p.multiplier = multiplier;
  return p;
}

RatePolicy RatePolicy::top_k(std::size_t k, double multiplier) {
  RatePolicy p;
  p.kind = Kind::TopK;
  p.k = k;
  p.multiplier = multiplier;
  return p;
}

RatePolicy RatePolicy::parse(std::string_view text) {
  auto colon = text.find(':');
  std::string_view head = text.substr(0, colon);
  std::string_view args = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  RatePolicy p;
  if (head == "uniform") {
    p = uniform(args.empty() ? 1.0 : parse_real(args, text));
  } else if (head == "split" || head == "topk") {
    auto x = args.find('x');
    if (x == std::string_view::npos) throw ModelError("bad rate policy '" + std::string(text) + "'");
    const double a = parse_real(args.substr(0, x), text);
    const double m = parse_real(args.substr(x + 1), text);
    if (head == "split") {
      p = split(a, m);
    } else {
      if (a < 0 || a != std::floor(a)) throw ModelError("top-k count must be a whole number");
      p = top_k(static_cast<std::size_t>(a), m);
    }
  } else {
    throw ModelError("unknown rate policy '" + std::string(text) + "'");
  }
  if (!(p.base_rate > 0.0) || !(p.multiplier > 0.0)) {
    throw ModelError("rates must be positive in '" + std::string(text) + "'");
  }
  if (p.kind == Kind::Split && !(p.fraction_fast > 0.0 && p.fraction_fast < 1.0)) {
    throw ModelError("split fraction must lie in (0, 1)");
  }
  return p;
}

std::string RatePolicy::to_string() const {
  switch (kind) {
    case Kind::Uniform:
      return base_rate == 1.0 ? "uniform" : "uniform:" + fmt(base_rate);
    case Kind::Split:
      return "split:" + fmt(fraction_fast) + "x" + fmt(multiplier);
    case Kind::TopK:
      return "topk:" + std::to_string(k) + "x" + fmt(multiplier);
  }
  return {};
}

void RatePolicy::validate(std::size_t node_count) const {
  if (!(base_rate > 0.0) || !(multiplier > 0.0)) throw ModelError("rates must be positive");
  if (kind == Kind::Split && !(fraction_fast > 0.0 && fraction_fast < 1.0)) {
    throw ModelError("split fraction must lie in (0, 1)");
  }
  if (kind == Kind::TopK && k > node_count) throw ModelError("top-k count exceeds node count");
}

std::vector<double> RatePolicy::rates(const FactorGraphModel& fg, std::span<const bool> dead,
                                      std::uint64_t seed) const {
  const std::size_t n = fg.num_variables();
  validate(n);
  const auto is_dead = to_bool_vector(dead, n);
  std::vector<VarId> live;
  for (VarId v = 0; v < n; ++v) {
    if (!is_dead[v]) live.push_back(v);
  }
  std::vector<double> r(n, 0.0);
  for (VarId v : live) r[v] = base_rate;
  if (kind == Kind::Split) {
    const auto fast = static_cast<std::size_t>(std::llround(fraction_fast * static_cast<double>(live.size())));
    Rng rng(derive_seed(seed, kTagRates));
    for (std::size_t m = 0; m < fast; ++m) {
      const std::size_t pick = m + rng.below(live.size() - m);
      std::swap(live[m], live[pick]);
      r[live[m]] = base_rate * multiplier;
    }
  } else if (kind == Kind::TopK) {
    std::stable_sort(live.begin(), live.end(), [&](VarId a, VarId b) {
      return fg.connectivity(a) > fg.connectivity(b);
    });
    for (std::size_t m = 0; m < std::min(k, live.size()); ++m) r[live[m]] = base_rate * multiplier;
  }
  return r;
}

void SimConfig::validate(std::size_t node_count) const {
  rate_policy.validate(node_count);
  if (!(message_tolerance >= 0.0)) throw ModelError("message_tolerance must be nonnegative");
  if (!(incorrect_threshold >= 0.0)) throw ModelError("incorrect_threshold must be nonnegative");
  if (!(max_time > 0.0)) throw ModelError("max_time must be positive");
  if (!(damping >= 0.0 && damping < 1.0)) throw ModelError("damping must lie in [0, 1)");
  for (VarId v : dead_nodes) {
    if (v >= node_count) throw ModelError("dead node id out of range");
  }
  if (death_mode == DeathMode::AtTime && !(death_time >= 0.0)) {
    throw ModelError("death_time must be nonnegative");
  }
}

double sample_interval(double rate, Rng& rng) {
  if (!(rate > 0.0)) throw ModelError("sample_interval needs a positive rate");
  return -std::log1p(-rng.uniform()) / rate;
}

double tv_error(std::span<const double> b, std::span<const double> ref) {
  if (b.size() != ref.size()) throw ModelError("tv_error: cardinality mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) s += std::abs(b[k] - ref[k]);
  return 0.5 * s;
}

double tv_error(const DiscreteDistribution& b, const DiscreteDistribution& ref) {
  return tv_error(b.probs, ref.probs);
}

IncorrectCount count_incorrect(std::span<const DiscreteDistribution> beliefs,
                               std::span<const DiscreteDistribution> reference, double threshold,
                               std::span<const VarId> only) {
  if (beliefs.size() != reference.size()) throw ModelError("count_incorrect: size mismatch");
  IncorrectCount out;
  double sum = 0.0;
  auto check = [&](VarId v) {
    const double d = tv_error(beliefs[v], reference[v]);
    if (d > threshold) {
      out.affected.push_back(v);
      sum += d;
    }
  };
  if (only.empty()) {
    for (VarId v = 0; v < beliefs.size(); ++v) check(v);
  } else {
    std::vector<VarId> sel(only.begin(), only.end());
    std::sort(sel.begin(), sel.end());
    for (VarId v : sel) check(v);
  }
  out.count = out.affected.size();
  out.mean_tv_error = out.count ? sum / static_cast<double>(out.count) : 0.0;
  return out;
}

namespace {

// Shared firing machinery for static and dynamic runs.
class AsyncEngine {
 public:
  AsyncEngine(const FactorGraphModel& fg, const Evidence& e, const SimConfig& cfg)
      : bp_(fg, e, cfg.damping),
        cfg_(cfg),
        clock_(derive_seed(cfg.seed, kTagClocks)),
        dead_(dead_mask(fg.num_variables(), cfg.dead_nodes)),
        alive_(fg.num_variables(), true),
        fires_(fg.num_variables(), 0) {
    cfg.validate(fg.num_variables());
    store_ = bp_.init_messages();
    const bool at_start = cfg.death_mode == DeathMode::AtStart;
    std::vector<bool> dead_now = at_start ? dead_ : std::vector<bool>(fg.num_variables(), false);
    std::unique_ptr<bool[]> mask(new bool[fg.num_variables()]);
    for (VarId v = 0; v < fg.num_variables(); ++v) {
      mask[v] = dead_now[v];
      alive_[v] = !dead_now[v];
    }
    rates_ = cfg.rate_policy.rates(fg, {mask.get(), fg.num_variables()}, cfg.seed);
    for (VarId v = 0; v < fg.num_variables(); ++v) {
      if (alive_[v]) queue_.push({sample_interval(rates_[v], clock_), v});
    }
  }

  std::size_t live_count() const {
    return static_cast<std::size_t>(std::count(alive_.begin(), alive_.end(), true));
  }
  bool empty() const { return queue_.empty(); }
  double next_time() const { return queue_.top().time; }

  struct Firing {
    VarId node;
    double delta;
    bool died;
  };

  /// Pops the next event. A node whose scheduled death has passed is removed
  /// instead of firing.
  Firing step() {
    const Event ev = queue_.top();
    queue_.pop();
    now_ = ev.time;
    if (cfg_.death_mode == DeathMode::AtTime && dead_[ev.node] && ev.time >= cfg_.death_time) {
      alive_[ev.node] = false;
      return {ev.node, 0.0, true};
    }
    const double delta = bp_.fire(ev.node, store_);
    ++fires_[ev.node];
    ++propagations_;
    queue_.push({ev.time + sample_interval(rates_[ev.node], clock_), ev.node});
    return {ev.node, delta, false};
  }

  LoopyBP& bp() { return bp_; }
  MessageStore& store() { return store_; }
  double now() const { return now_; }
  std::size_t propagations() const { return propagations_; }
  const std::vector<std::size_t>& fires() const { return fires_; }
  const std::vector<bool>& alive() const { return alive_; }

 private:
  LoopyBP bp_;
  const SimConfig& cfg_;
  Rng clock_;
  std::vector<bool> dead_;
  std::vector<bool> alive_;
  std::vector<double> rates_;
  std::vector<std::size_t> fires_;
  EventQueue queue_;
  MessageStore store_;
  double now_ = 0.0;
  std::size_t propagations_ = 0;
};

SeriesRow make_row(double t, const std::vector<DiscreteDistribution>& beliefs,
                   std::span<const DiscreteDistribution> reference, const std::vector<bool>& alive,
                   double threshold, std::size_t propagations) {
  std::vector<VarId> live;
  for (VarId v = 0; v < alive.size(); ++v) {
    if (alive[v]) live.push_back(v);
  }
  SeriesRow row;
  row.time = t;
  row.total_propagations = propagations;
  if (!live.empty()) {
    auto c = count_incorrect(beliefs, reference, threshold, live);
    row.incorrect_fraction = static_cast<double>(c.count) / static_cast<double>(beliefs.size());
    row.mean_tv_error = c.mean_tv_error;
  }
  return row;
}

}  // namespace

AsyncResult run_async(const FactorGraphModel& fg, const Evidence& e, const SimConfig& cfg,
                      std::span<const DiscreteDistribution> reference) {
  AsyncEngine engine(fg, e, cfg);
  if (!reference.empty() && reference.size() != fg.num_variables()) {
    throw ModelError("run_async: reference size mismatch");
  }
  const std::size_t live = engine.live_count();
  QuietTracker quiet(fg.num_variables(), live, cfg.window == 0 ? live : cfg.window);
  AsyncResult res;
  double next_row = 1.0;
  while (!engine.empty() && engine.next_time() <= cfg.max_time) {
    if (!reference.empty()) {
      while (next_row <= engine.next_time()) {
        res.series.rows.push_back(make_row(next_row, engine.store().beliefs(), reference,
                                           engine.alive(), cfg.incorrect_threshold,
                                           engine.propagations()));
        next_row += 1.0;
      }
    }
    const auto f = engine.step();
    if (f.died) {
      quiet.kill(f.node);
    } else {
      res.report.final_max_delta = f.delta;
      const bool loud = f.delta >= cfg.message_tolerance;
      quiet.record(f.node, loud);
      if (loud) {
        res.last_change_firing = engine.propagations();
        res.last_change_time = engine.now();
      }
    }
    if (quiet.converged()) {
      res.report.converged = true;
      break;
    }
  }
  res.end_time = engine.now();
  res.report.sweeps_or_firings = engine.propagations();
  res.report.total_propagations = engine.propagations();
  res.report.per_node_fire_count = engine.fires();
  res.beliefs = engine.store().beliefs();
  if (!reference.empty() && (res.series.rows.empty() || res.end_time > res.series.rows.back().time)) {
    res.series.rows.push_back(make_row(res.end_time, res.beliefs, reference, engine.alive(),
                                       cfg.incorrect_threshold, engine.propagations()));
  }
  return res;
}

void DynamicConfig::validate() const {
  if (!(observe_prob >= 0.0 && observe_prob <= 1.0)) throw ModelError("observe_prob must lie in [0, 1]");
  if (!(duration > 0.0)) throw ModelError("duration must be positive");
  if (!(sample_interval > 0.0)) throw ModelError("sample_interval must be positive");
  if (reference_max_sweeps == 0) throw ModelError("reference_max_sweeps must be positive");
}

DynamicResult run_dynamic(const SensorNetwork& net, const DynamicConfig& dcfg, const SimConfig& cfg) {
  dcfg.validate();
  const auto& fg = net.model;
  const std::size_t n_clusters = net.clusters.size();
  const std::size_t sensors = net.cluster.readings.size();
  if (sensors == 0) throw ModelError("run_dynamic: clusters have no sensors");

  // Per-sensor reading distributions used for redraws.
  std::vector<std::vector<double>> draw_dist;
  {
    const auto bn_fg = bn_to_factor_graph(net.cluster.local_bn);
    for (VarId r : net.cluster.readings) {
      const std::size_t card = net.cluster.local_bn.variables()[r].cardinality;
      if (dcfg.draw == ReadingDraw::Uniform) {
        draw_dist.emplace_back(card, 1.0 / static_cast<double>(card));
      } else {
        const VarId q[] = {r};
        draw_dist.push_back(variable_eliminate(bn_fg, q, {}).values());
      }
    }
  }

  AsyncEngine engine(fg, {}, cfg);
  Rng churn(derive_seed(cfg.seed, kTagChurn));

  std::vector<std::vector<int>> readings;
  for (const auto& c : net.clusters) readings.push_back(c.readings);
  std::map<std::vector<int>, FactorTable> phi_cache;
  auto phi_of = [&](std::size_t i) -> const FactorTable& {
    auto it = phi_cache.find(readings[i]);
    if (it == phi_cache.end()) {
      it = phi_cache.emplace(readings[i], net.phi_for(readings[i], 0)).first;
    }
    return it->second;
  };

  // Distinct observation states, each with the φ tables that define it.
  std::map<std::vector<int>, std::size_t> key_ids;
  std::vector<std::vector<FactorTable>> key_phis;
  auto current_key = [&]() {
    std::vector<int> key;
    key.reserve(n_clusters * sensors);
    for (const auto& r : readings) key.insert(key.end(), r.begin(), r.end());
    auto [it, inserted] = key_ids.emplace(std::move(key), key_phis.size());
    if (inserted) {
      std::vector<FactorTable> phis;
      for (std::size_t i = 0; i < n_clusters; ++i) {
        phis.push_back(engine.bp().model().factor(net.clusters[i].phi));
      }
      key_phis.push_back(std::move(phis));
    }
    return it->second;
  };

  struct Snapshot {
    double time;
    std::size_t key;
    std::vector<DiscreteDistribution> beliefs;
    std::vector<bool> alive;
    std::size_t propagations;
  };
  std::vector<Snapshot> snaps;
  DynamicResult out;

  const auto samples = static_cast<std::size_t>(std::floor(dcfg.duration / dcfg.sample_interval + 1e-9));
  std::size_t k = 1;  // next sample index
  std::size_t m = 1;  // next churn step
  constexpr double kEps = 1e-9;
  while (k <= samples) {
    const double ts = static_cast<double>(k) * dcfg.sample_interval;
    const double tc = static_cast<double>(m);
    const double tf = engine.empty() ? INFINITY : engine.next_time();
    if (ts <= tc + kEps && ts <= tf) {
      snaps.push_back({ts, current_key(), engine.store().beliefs(), engine.alive(),
                       engine.propagations()});
      ++k;
    } else if (tc <= tf) {
      for (std::size_t i = 0; i < n_clusters; ++i) {
        if (!engine.alive()[net.clusters[i].node]) continue;
        if (!(churn.uniform() < dcfg.observe_prob)) continue;
        const std::size_t s = sensors == 1 ? 0 : churn.below(sensors);
        const double u = churn.uniform();
        const auto& dist = draw_dist[s];
        std::size_t pick = dist.size() - 1;
        double acc = 0.0;
        for (std::size_t v = 0; v < dist.size(); ++v) {
          acc += dist[v];
          if (u < acc) {
            pick = v;
            break;
          }
        }
        readings[i][s] = static_cast<int>(pick);
        ++out.observation_changes;
        const auto& phi = phi_of(i);
        const VarId node = net.clusters[i].node;
        engine.bp().set_unary(net.clusters[i].phi, FactorTable({node}, {phi.values().size()}, phi.values()),
                              engine.store());
      }
      ++m;
    } else {
      const auto f = engine.step();
      (void)f;
    }
  }

  // Reference solves, one per distinct observation state.
  std::vector<LbpResult> refs(key_phis.size());
  LbpConfig lcfg;
  lcfg.message_tolerance = cfg.message_tolerance;
  lcfg.incorrect_threshold = cfg.incorrect_threshold;
  lcfg.max_sweeps = dcfg.reference_max_sweeps;
  std::vector<bool> dead_vec = cfg.death_mode == DeathMode::AtStart
                                   ? dead_mask(fg.num_variables(), cfg.dead_nodes)
                                   : std::vector<bool>(fg.num_variables(), false);
  std::unique_ptr<bool[]> dead(new bool[fg.num_variables()]);
  for (VarId v = 0; v < fg.num_variables(); ++v) dead[v] = dead_vec[v];
  auto solve = [&](std::size_t id) {
    FactorGraphModel model = fg;
    for (std::size_t i = 0; i < n_clusters; ++i) {
      model = model.with_factor(net.clusters[i].phi, key_phis[id][i]);
    }
    refs[id] = run_synchronous(model, {}, lcfg, {dead.get(), fg.num_variables()});
  };
  const unsigned jobs = std::max(1u, dcfg.jobs);
  if (jobs == 1 || refs.size() < 2) {
    for (std::size_t id = 0; id < refs.size(); ++id) solve(id);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < std::min<std::size_t>(jobs, refs.size()); ++j) {
      pool.emplace_back([&] {
        for (std::size_t id; (id = next.fetch_add(1)) < refs.size();) solve(id);
      });
    }
    for (auto& t : pool) t.join();
  }
  out.distinct_references = refs.size();

  for (const auto& s : snaps) {
    const auto& ref = refs[s.key];
    if (!ref.report.converged) ++out.reference_nonconverged;
    out.series.rows.push_back(
        make_row(s.time, s.beliefs, ref.beliefs, s.alive, cfg.incorrect_threshold, s.propagations));
  }
  return out;
}

}  // namespace sensorbp
