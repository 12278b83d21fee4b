#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sensorbp/model.hpp"
#include "sensorbp/rng.hpp"

namespace testutil {

using namespace sensorbp;

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string data_file(const std::string& name) { return std::string(SENSORBP_DATA_DIR) + "/" + name; }

inline std::vector<Variable> binary_vars(std::size_t n, std::size_t card = 2) {
  std::vector<Variable> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back({i, "v" + std::to_string(i), card, {}});
  return v;
}

/// Advances a mixed-radix counter (last digit fastest); false on wrap.
inline bool next_assignment(std::vector<std::size_t>& a, const std::vector<std::size_t>& cards) {
  for (std::size_t k = a.size(); k-- > 0;) {
    if (++a[k] < cards[k]) return true;
    a[k] = 0;
  }
  return false;
}

/// Direct evaluation of a table entry from the row-major rule.
inline double entry(const FactorTable& f, const std::vector<std::size_t>& full) {
  std::size_t idx = 0;
  for (std::size_t k = 0; k < f.scope().size(); ++k) idx = idx * f.cards()[k] + full[f.scope()[k]];
  return f.values()[idx];
}

inline std::vector<double> random_values(std::size_t n, Rng& rng, double lo = 0.05) {
  std::vector<double> v(n);
  for (auto& x : v) x = lo + (1.0 - lo) * rng.uniform();
  return v;
}

/// Random model over `n` variables with unary and pairwise/triple factors.
inline FactorGraphModel random_model(std::size_t n, std::size_t factors, std::size_t max_card, Rng& rng) {
  std::vector<Variable> vars;
  for (std::size_t i = 0; i < n; ++i) vars.push_back({i, "x" + std::to_string(i), 2 + rng.below(max_card - 1), {}});
  std::vector<FactorTable> fs;
  for (std::size_t f = 0; f < factors; ++f) {
    const std::size_t arity = 1 + rng.below(std::min<std::size_t>(3, n));
    std::vector<VarId> scope;
    while (scope.size() < arity) {
      const VarId v = rng.below(n);
      if (std::find(scope.begin(), scope.end(), v) == scope.end()) scope.push_back(v);
    }
    std::vector<std::size_t> cards;
    std::size_t total = 1;
    for (VarId v : scope) {
      cards.push_back(vars[v].cardinality);
      total *= vars[v].cardinality;
    }
    fs.emplace_back(scope, cards, random_values(total, rng));
  }
  return FactorGraphModel(vars, fs);
}

/// Marginals by plain enumeration, written independently of the library's
/// exact module.
inline std::vector<std::vector<double>> enumerate_marginals(const FactorGraphModel& fg, const Evidence& e) {
  const auto cards = fg.cardinalities();
  std::vector<std::vector<double>> m(cards.size());
  for (std::size_t v = 0; v < cards.size(); ++v) m[v].assign(cards[v], 0.0);
  std::vector<std::size_t> a(cards.size(), 0);
  double z = 0.0;
  do {
    bool ok = true;
    for (auto [v, s] : e) ok = ok && a[v] == s;
    if (!ok) continue;
    double p = 1.0;
    for (const auto& f : fg.factors()) p *= entry(f, a);
    z += p;
    for (std::size_t v = 0; v < cards.size(); ++v) m[v][a[v]] += p;
  } while (next_assignment(a, cards));
  for (auto& row : m) {
    for (auto& x : row) x /= z;
  }
  return m;
}

/// One random edit of `text`: byte flip, deletion, insertion, duplication of
/// a span, truncation, or token swap with a BIF-significant symbol.
inline std::string mutate_text(std::string text, Rng& rng) {
  static const char* kSymbols[] = {"{", "}", "(", ")", "[", "]", ";", ",", "|", "//", "/*", "\"", "-1",
                                   "nan", "1e400", "table", "default", "variable", "probability"};
  const std::size_t edits = 1 + rng.below(4);
  for (std::size_t k = 0; k < edits && !text.empty(); ++k) {
    const std::size_t at = rng.below(text.size());
    switch (rng.below(6)) {
      case 0: text[at] = static_cast<char>(rng.below(256)); break;
      case 1: text.erase(at, 1 + rng.below(16)); break;
      case 2: text.insert(at, kSymbols[rng.below(std::size(kSymbols))]); break;
      case 3: {
        const std::size_t len = std::min<std::size_t>(1 + rng.below(200), text.size() - at);
        text.insert(rng.below(text.size()), text.substr(at, len));
        break;
      }
      case 4: text.resize(at); break;
      default: {
        const std::size_t len = std::min<std::size_t>(1 + rng.below(8), text.size() - at);
        text.replace(at, len, kSymbols[rng.below(std::size(kSymbols))]);
        break;
      }
    }
  }
  return text;
}

/// Random model whose variables carry state names on odd ids.
inline FactorGraphModel random_named_model(Rng& rng) {
  auto base = random_model(2 + rng.below(6), 1 + rng.below(8), 4, rng);
  auto vars = base.variables();
  for (auto& v : vars) {
    if (v.id % 2 == 1) {
      for (std::size_t s = 0; s < v.cardinality; ++s) v.state_names.push_back("s" + std::to_string(s));
    }
  }
  std::vector<FactorTable> fs = base.factors();
  // Values with awkward decimal expansions.
  for (auto& f : fs) {
    auto vals = f.values();
    for (auto& x : vals) x = x / 3.0 + 1e-300 * static_cast<double>(rng.below(2));
    f = FactorTable(f.scope(), f.cards(), vals);
  }
  return FactorGraphModel(vars, fs);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a[k] - b[k]));
  return a.size() == b.size() ? d : INFINITY;
}

}  // namespace testutil
