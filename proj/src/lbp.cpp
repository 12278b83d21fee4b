#include "sensorbp/lbp.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "sensorbp/errors.hpp"

namespace sensorbp {

namespace {

double linf(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a[k] - b[k]));
  return d;
}

}  // namespace

void LbpConfig::validate() const {
  if (!(message_tolerance > 0.0)) throw ModelError("message tolerance must be positive");
  if (!(incorrect_threshold > 0.0)) throw ModelError("incorrect threshold must be positive");
  if (!(damping >= 0.0 && damping < 1.0)) throw ModelError("damping must lie in [0, 1)");
  if (max_sweeps == 0) throw ModelError("max_sweeps must be positive");
}

// ------------------------------------------------------------ MessageStore

MessageStore::MessageStore(const FactorGraphModel& fg) {
  const std::size_t nf = fg.num_factors();
  factor_edge_.resize(nf);
  std::size_t offset = 0;
  for (FactorId f = 0; f < nf; ++f) {
    const auto& t = fg.factor(f);
    scopes_.push_back(t.scope());
    factor_edge_[f] = edge_card_.size();
    for (std::size_t p = 0; p < t.arity(); ++p) {
      edge_card_.push_back(t.cards()[p]);
      msg_offset_.push_back(offset);
      offset += t.cards()[p];
    }
  }
  v2f_.resize(offset);
  for (std::size_t e = 0; e < edge_card_.size(); ++e) {
    std::fill_n(v2f_.begin() + static_cast<std::ptrdiff_t>(msg_offset_[e]), edge_card_[e],
                1.0 / static_cast<double>(edge_card_[e]));
  }
  f2v_ = v2f_;

  const std::size_t nv = fg.num_variables();
  std::size_t boff = 0;
  for (VarId v = 0; v < nv; ++v) {
    belief_offset_.push_back(boff);
    belief_card_.push_back(fg.cardinality(v));
    boff += fg.cardinality(v);
  }
  beliefs_.assign(boff, 1.0);
  for (FactorId f = 0; f < nf; ++f) {
    const auto& t = fg.factor(f);
    if (t.arity() != 1) continue;
    auto msg = f2v(factor_edge_[f]);
    std::copy(t.values().begin(), t.values().end(), msg.begin());
    normalize_in_place(msg);
    auto b = belief_mut(t.scope()[0]);
    for (std::size_t k = 0; k < b.size(); ++k) b[k] *= msg[k];
  }
  for (VarId v = 0; v < nv; ++v) normalize_in_place(belief_mut(v));
}

std::span<const double> MessageStore::var_to_factor(VarId v, FactorId f) const {
  const auto& s = scopes_.at(f);
  auto it = std::find(s.begin(), s.end(), v);
  if (it == s.end()) throw ModelError("variable is not in the factor's scope");
  return v2f(edge(f, static_cast<std::size_t>(it - s.begin())));
}

std::span<const double> MessageStore::factor_to_var(FactorId f, VarId v) const {
  const auto& s = scopes_.at(f);
  auto it = std::find(s.begin(), s.end(), v);
  if (it == s.end()) throw ModelError("variable is not in the factor's scope");
  return f2v(edge(f, static_cast<std::size_t>(it - s.begin())));
}

std::span<const double> MessageStore::belief(VarId v) const {
  return {beliefs_.data() + belief_offset_.at(v), belief_card_[v]};
}

std::vector<DiscreteDistribution> MessageStore::beliefs() const {
  std::vector<DiscreteDistribution> out;
  out.reserve(belief_offset_.size());
  for (VarId v = 0; v < belief_offset_.size(); ++v) {
    auto b = belief(v);
    out.push_back({v, {b.begin(), b.end()}});
  }
  return out;
}

MessageStore init_messages(const FactorGraphModel& fg) { return MessageStore(fg); }

double max_message_delta(const MessageStore& a, const MessageStore& b) {
  if (a.edge_card_ != b.edge_card_) throw ModelError("message stores have different layouts");
  double d = 0.0;
  for (std::size_t k = 0; k < a.v2f_.size(); ++k) {
    d = std::max(d, std::abs(a.v2f_[k] - b.v2f_[k]));
    d = std::max(d, std::abs(a.f2v_[k] - b.f2v_[k]));
  }
  return d;
}

// ----------------------------------------------------------------- LoopyBP

LoopyBP::LoopyBP(FactorGraphModel fg, Evidence evidence, double damping)
    : fg_(std::move(fg)), evidence_(std::move(evidence)), damping_(damping) {
  check_evidence(fg_, evidence_);
  if (!(damping_ >= 0.0 && damping_ < 1.0)) throw ModelError("damping must lie in [0, 1)");
  const std::size_t nv = fg_.num_variables();
  mask_.resize(nv);
  for (VarId v = 0; v < nv; ++v) {
    mask_[v].assign(fg_.cardinality(v), 1.0);
    if (auto it = evidence_.find(v); it != evidence_.end()) {
      std::fill(mask_[v].begin(), mask_[v].end(), 0.0);
      mask_[v][it->second] = 1.0;
    }
  }
  incidence_.resize(nv);
  std::size_t edge = 0;
  for (FactorId f = 0; f < fg_.num_factors(); ++f) {
    const auto& scope = fg_.factor(f).scope();
    for (std::size_t p = 0; p < scope.size(); ++p) incidence_[scope[p]].push_back({f, p, edge++});
  }
}

void LoopyBP::var_message(VarId i, std::size_t skip_edge, const MessageStore& in,
                          std::span<double> out) const {
  std::copy(mask_[i].begin(), mask_[i].end(), out.begin());
  for (const auto& inc : incidence_[i]) {
    if (inc.edge == skip_edge) continue;
    auto m = in.f2v(inc.edge);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] *= m[k];
  }
  double s = 0.0;
  for (double x : out) s += x;
  if (!(s > 0.0)) {
    throw ZeroMassError("message from " + fg_.variable(i).name + " has zero mass");
  }
  for (double& x : out) x /= s;
}

void LoopyBP::factor_message(FactorId f, std::size_t target_pos, const MessageStore& in,
                             std::span<double> out) const {
  const auto& t = fg_.factor(f);
  const auto& vals = t.values();
  std::fill(out.begin(), out.end(), 0.0);
  if (t.arity() == 2) {
    const std::size_t c0 = t.cards()[0], c1 = t.cards()[1];
    if (target_pos == 1) {
      auto m = in.v2f(in.edge(f, 0));
      for (std::size_t a = 0; a < c0; ++a) {
        const double w = m[a];
        for (std::size_t b = 0; b < c1; ++b) out[b] += vals[a * c1 + b] * w;
      }
    } else {
      auto m = in.v2f(in.edge(f, 1));
      for (std::size_t a = 0; a < c0; ++a) {
        double acc = 0.0;
        for (std::size_t b = 0; b < c1; ++b) acc += vals[a * c1 + b] * m[b];
        out[a] = acc;
      }
    }
  } else {
    const std::size_t arity = t.arity();
    std::vector<std::span<const double>> msgs(arity);
    for (std::size_t r = 0; r < arity; ++r) msgs[r] = in.v2f(in.edge(f, r));
    std::vector<std::size_t> digits(arity, 0);
    for (std::size_t n = 0; n < vals.size(); ++n) {
      double w = vals[n];
      for (std::size_t r = 0; r < arity && w != 0.0; ++r) {
        if (r != target_pos) w *= msgs[r][digits[r]];
      }
      out[digits[target_pos]] += w;
      for (std::size_t r = arity; r-- > 0;) {
        if (++digits[r] < t.cards()[r]) break;
        digits[r] = 0;
      }
    }
  }
  double s = 0.0;
  for (double x : out) s += x;
  if (!(s > 0.0)) {
    throw ZeroMassError("factor " + std::to_string(f) + " message to " +
                        fg_.variable(t.scope()[target_pos]).name + " has zero mass");
  }
  for (double& x : out) x /= s;
}

double LoopyBP::write_factor_messages(FactorId f, std::size_t from_pos, MessageStore& store) const {
  const auto& t = fg_.factor(f);
  double delta = 0.0;
  std::vector<double> tmp;
  for (std::size_t q = 0; q < t.arity(); ++q) {
    if (q == from_pos) continue;
    tmp.resize(t.cards()[q]);
    factor_message(f, q, store, tmp);
    auto old = store.f2v(store.edge(f, q));
    if (damping_ > 0.0) {
      for (std::size_t k = 0; k < tmp.size(); ++k) tmp[k] = (1.0 - damping_) * tmp[k] + damping_ * old[k];
    }
    delta = std::max(delta, linf(tmp, old));
    std::copy(tmp.begin(), tmp.end(), old.begin());
  }
  return delta;
}

std::vector<double> LoopyBP::compute_belief(VarId i, const MessageStore& store) const {
  std::vector<double> b = mask_[i];
  for (const auto& inc : incidence_[i]) {
    auto m = store.f2v(inc.edge);
    for (std::size_t k = 0; k < b.size(); ++k) b[k] *= m[k];
  }
  double s = 0.0;
  for (double x : b) s += x;
  if (!(s > 0.0)) throw ZeroMassError("belief of " + fg_.variable(i).name + " has zero mass");
  for (double& x : b) x /= s;
  return b;
}

double LoopyBP::fire(VarId i, MessageStore& store) const {
  double delta = 0.0;
  std::vector<double> tmp(fg_.cardinality(i));
  // Messages into unary factors are never read, so they stay at their
  // initial value.
  for (const auto& inc : incidence_[i]) {
    if (fg_.factor(inc.factor).arity() < 2) continue;
    var_message(i, inc.edge, store, tmp);
    auto slot = store.v2f(inc.edge);
    delta = std::max(delta, linf(tmp, slot));
    std::copy(tmp.begin(), tmp.end(), slot.begin());
  }
  for (const auto& inc : incidence_[i]) {
    if (fg_.factor(inc.factor).arity() < 2) continue;
    delta = std::max(delta, write_factor_messages(inc.factor, inc.pos, store));
  }
  auto b = compute_belief(i, store);
  auto slot = store.belief_mut(i);
  delta = std::max(delta, linf(b, slot));
  std::copy(b.begin(), b.end(), slot.begin());
  return delta;
}

double LoopyBP::sweep(MessageStore& store, std::span<const bool> live) const {
  const std::size_t nv = fg_.num_variables();
  auto is_live = [&](VarId v) { return live.empty() || live[v]; };
  MessageStore next = store;
  for (VarId i = 0; i < nv; ++i) {
    if (!is_live(i)) continue;
    for (const auto& inc : incidence_[i]) {
      if (fg_.factor(inc.factor).arity() < 2) continue;
      var_message(i, inc.edge, store, next.v2f(inc.edge));
    }
  }
  std::vector<double> tmp;
  for (FactorId f = 0; f < fg_.num_factors(); ++f) {
    const auto& t = fg_.factor(f);
    if (t.arity() < 2) continue;
    std::size_t live_count = 0;
    for (VarId v : t.scope()) live_count += is_live(v) ? 1 : 0;
    for (std::size_t q = 0; q < t.arity(); ++q) {
      // Only a live variable other than the target can have sent this message.
      if (live_count - (is_live(t.scope()[q]) ? 1 : 0) == 0) continue;
      tmp.resize(t.cards()[q]);
      factor_message(f, q, next, tmp);
      auto old = store.f2v(store.edge(f, q));
      if (damping_ > 0.0) {
        for (std::size_t k = 0; k < tmp.size(); ++k) {
          tmp[k] = (1.0 - damping_) * tmp[k] + damping_ * old[k];
        }
      }
      auto slot = next.f2v(next.edge(f, q));
      std::copy(tmp.begin(), tmp.end(), slot.begin());
    }
  }
  for (VarId i = 0; i < nv; ++i) {
    if (!is_live(i)) continue;
    auto b = compute_belief(i, next);
    std::copy(b.begin(), b.end(), next.belief_mut(i).begin());
  }
  const double delta = max_message_delta(store, next);
  store = std::move(next);
  return delta;
}

void LoopyBP::set_unary(FactorId f, const FactorTable& table) {
  if (fg_.factor(f).arity() != 1) throw ModelError("set_unary needs a unary factor");
  fg_ = fg_.with_factor(f, table);
}

void LoopyBP::set_unary(FactorId f, const FactorTable& table, MessageStore& store) {
  set_unary(f, table);
  auto msg = store.f2v(store.edge(f, 0));
  std::copy(table.values().begin(), table.values().end(), msg.begin());
  normalize_in_place(msg);
}

double fire_node(VarId i, const FactorGraphModel& fg, MessageStore& store, const Evidence& e) {
  return LoopyBP(fg, e).fire(i, store);
}

LbpResult run_synchronous(const FactorGraphModel& fg, const Evidence& e, const LbpConfig& cfg,
                          std::span<const bool> dead) {
  cfg.validate();
  LoopyBP bp(fg, e, cfg.damping);
  const std::size_t nv = fg.num_variables();
  std::vector<bool> live_vec(nv, true);
  if (!dead.empty()) {
    for (VarId v = 0; v < nv; ++v) live_vec[v] = !dead[v];
  }
  // std::vector<bool> has no contiguous storage; copy into a plain array.
  std::unique_ptr<bool[]> live(new bool[nv]);
  std::size_t live_count = 0;
  for (VarId v = 0; v < nv; ++v) {
    live[v] = live_vec[v];
    live_count += live_vec[v] ? 1 : 0;
  }

  LbpResult result;
  result.store = bp.init_messages();
  auto& rep = result.report;
  for (std::size_t s = 1; s <= cfg.max_sweeps; ++s) {
    rep.final_max_delta = bp.sweep(result.store, {live.get(), nv});
    rep.sweeps_or_firings = s;
    if (rep.final_max_delta < cfg.message_tolerance) {
      rep.converged = true;
      break;
    }
  }
  rep.total_propagations = rep.sweeps_or_firings * live_count;
  rep.per_node_fire_count.assign(nv, 0);
  for (VarId v = 0; v < nv; ++v) {
    if (live_vec[v]) rep.per_node_fire_count[v] = rep.sweeps_or_firings;
  }
  result.beliefs = result.store.beliefs();
  return result;
}

// ------------------------------------------------------- pairwise updates

namespace {

std::size_t find_edge(const PairwiseMarkovNet& pmn, VarId i, VarId j) {
  for (std::size_t e : pmn.incident(i)) {
    const auto& edge = pmn.edges()[e];
    if ((edge.i == i && edge.j == j) || (edge.i == j && edge.j == i)) return e;
  }
  throw ModelError("nodes " + std::to_string(i) + " and " + std::to_string(j) + " are not adjacent");
}

// φ_i (evidence-restricted) times every incoming m_ki except from `skip`.
std::vector<double> local_product(VarId i, const PairwiseMarkovNet& pmn,
                                  const MessageStore& store, const Evidence& e,
                                  std::optional<VarId> skip) {
  auto phi = restrict_evidence(pmn.phi()[i], e).values();
  const std::size_t n = pmn.size();
  for (std::size_t edge : pmn.incident(i)) {
    const auto& ed = pmn.edges()[edge];
    VarId k = ed.i == i ? ed.j : ed.i;
    if (skip && k == *skip) continue;
    auto m = store.factor_to_var(n + edge, i);
    for (std::size_t a = 0; a < phi.size(); ++a) phi[a] *= m[a];
  }
  return phi;
}

}  // namespace

DiscreteDistribution pairwise_message(VarId i, VarId j, const PairwiseMarkovNet& pmn,
                                      const MessageStore& store, const Evidence& e) {
  const std::size_t edge = find_edge(pmn, i, j);
  auto local = local_product(i, pmn, store, e, j);
  auto psi = pmn.oriented_psi(edge, i);
  const std::size_t ci = pmn.nodes()[i].cardinality, cj = pmn.nodes()[j].cardinality;
  std::vector<double> out(cj, 0.0);
  for (std::size_t a = 0; a < ci; ++a) {
    for (std::size_t b = 0; b < cj; ++b) out[b] += psi[a * cj + b] * local[a];
  }
  normalize_in_place(out);
  return {j, std::move(out)};
}

DiscreteDistribution node_belief(VarId i, const PairwiseMarkovNet& pmn, const MessageStore& store,
                                 const Evidence& e) {
  auto b = local_product(i, pmn, store, e, std::nullopt);
  normalize_in_place(b);
  return {i, std::move(b)};
}

}  // namespace sensorbp
