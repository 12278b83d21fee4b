#include "sensorbp/formats.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "sensorbp/exact.hpp"

namespace sensorbp {

namespace {

// ---------------------------------------------------------------- BIF lexer

struct Token {
  enum class Kind { Word, String, Punct, End };
  Kind kind = Kind::End;
  std::string text;
  std::size_t line = 1;
  std::size_t column = 1;
};

bool is_punct(char c) {
  return c == '{' || c == '}' || c == '(' || c == ')' || c == '[' || c == ']' || c == ';' ||
         c == ',' || c == '|';
}

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    for (;;) {
      skip_space_and_comments();
      Token t;
      t.line = line_;
      t.column = col_;
      if (pos_ >= text_.size()) {
        out.push_back(t);
        return out;
      }
      const char c = text_[pos_];
      if (is_punct(c)) {
        t.kind = Token::Kind::Punct;
        t.text = std::string(1, c);
        advance();
      } else if (c == '"') {
        t.kind = Token::Kind::String;
        advance();
        while (pos_ < text_.size() && text_[pos_] != '"') {
          if (text_[pos_] == '\n') throw ParseError("unterminated string", t.line, t.column);
          t.text += text_[pos_];
          advance();
        }
        if (pos_ >= text_.size()) throw ParseError("unterminated string", t.line, t.column);
        advance();
      } else if (static_cast<unsigned char>(c) < 0x20 && c != '\t') {
        throw ParseError("unexpected control character", line_, col_);
      } else {
        t.kind = Token::Kind::Word;
        while (pos_ < text_.size()) {
          const char d = text_[pos_];
          if (is_punct(d) || d == '"' || std::isspace(static_cast<unsigned char>(d)) ||
              (d == '/' && pos_ + 1 < text_.size() && (text_[pos_ + 1] == '/' || text_[pos_ + 1] == '*'))) {
            break;
          }
          if (static_cast<unsigned char>(d) < 0x20) break;
          t.text += d;
          advance();
        }
      }
      out.push_back(std::move(t));
    }
  }

 private:
  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_space_and_comments() {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else if (c == '/' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '/') {
        while (pos_ < text_.size() && text_[pos_] != '\n') advance();
      } else if (c == '/' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '*') {
        const std::size_t l = line_, k = col_;
        advance();
        advance();
        for (;;) {
          if (pos_ + 1 >= text_.size()) throw ParseError("unterminated comment", l, k);
          if (text_[pos_] == '*' && text_[pos_ + 1] == '/') {
            advance();
            advance();
            break;
          }
          advance();
        }
      } else {
        break;
      }
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t col_ = 1;
};

// --------------------------------------------------------------- BIF parser

struct BifVariable {
  std::string name;
  std::vector<std::string> states;
  std::size_t line = 0, column = 0;
};

struct BifBlock {
  std::size_t child = 0;
  std::vector<std::size_t> parents;
  std::vector<double> table;
  std::size_t line = 0, column = 0;
};

class BifParser {
 public:
  BifParser(std::vector<Token> tokens, const BifOptions& options)
      : toks_(std::move(tokens)), opt_(options) {}

  BifDocument parse() {
    BifDocument doc;
    while (peek().kind != Token::Kind::End) {
      const Token& t = peek();
      if (t.kind == Token::Kind::Word && t.text == "network") {
        next();
        doc.network_name = name("network name");
        skip_block();
      } else if (t.kind == Token::Kind::Word && t.text == "variable") {
        parse_variable();
      } else if (t.kind == Token::Kind::Word && t.text == "probability") {
        parse_probability(doc.warnings);
      } else {
        fail("expected 'network', 'variable' or 'probability'", t);
      }
    }
    doc.net = assemble();
    return doc;
  }

 private:
  [[noreturn]] static void fail(const std::string& what, const Token& at) {
    throw ParseError(what, at.line, at.column);
  }

  const Token& peek() const { return toks_[i_]; }
  const Token& next() {
    const Token& t = toks_[i_];
    if (t.kind != Token::Kind::End) ++i_;
    return t;
  }
  bool at_punct(char c) const { return peek().kind == Token::Kind::Punct && peek().text[0] == c; }
  void expect_punct(char c) {
    if (!at_punct(c)) fail(std::string("expected '") + c + "'", peek());
    next();
  }
  void expect_word(const std::string& w) {
    if (peek().kind != Token::Kind::Word || peek().text != w) fail("expected '" + w + "'", peek());
    next();
  }
  std::string name(const char* what) {
    const Token& t = peek();
    if (t.kind != Token::Kind::Word && t.kind != Token::Kind::String) {
      fail(std::string("expected ") + what, t);
    }
    if (t.text.empty()) fail(std::string("empty ") + what, t);
    return next().text;
  }
  std::size_t integer() {
    const Token& t = peek();
    std::size_t v = 0;
    if (t.kind != Token::Kind::Word) fail("expected an integer", t);
    auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec != std::errc() || p != t.text.data() + t.text.size()) fail("expected an integer", t);
    next();
    return v;
  }
  double number() {
    const Token& t = peek();
    double v = 0;
    if (t.kind != Token::Kind::Word) fail("expected a number", t);
    auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec != std::errc() || p != t.text.data() + t.text.size()) fail("expected a number", t);
    if (!std::isfinite(v) || v < 0.0) fail("probability must be finite and nonnegative", t);
    next();
    return v;
  }
  bool at_number() const {
    const Token& t = peek();
    if (t.kind != Token::Kind::Word) return false;
    double v = 0;
    auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    return ec == std::errc() && p == t.text.data() + t.text.size();
  }
  std::vector<double> numbers() {
    std::vector<double> out;
    out.push_back(number());
    for (;;) {
      if (at_punct(',')) {
        next();
        out.push_back(number());
      } else if (at_number()) {
        out.push_back(number());
      } else {
        return out;
      }
      if (out.size() > opt_.max_table_entries) fail("table too large", peek());
    }
  }

  // Skips a brace block (after the opening keyword and name).
  void skip_block() {
    expect_punct('{');
    std::size_t depth = 1;
    while (depth > 0) {
      const Token& t = peek();
      if (t.kind == Token::Kind::End) fail("unterminated block", t);
      if (t.kind == Token::Kind::Punct && t.text[0] == '{') ++depth;
      if (t.kind == Token::Kind::Punct && t.text[0] == '}') --depth;
      next();
    }
  }
  void skip_property() {
    next();  // 'property'
    while (!at_punct(';')) {
      if (peek().kind == Token::Kind::End || at_punct('}')) fail("expected ';' after property", peek());
      next();
    }
    next();
  }

  void parse_variable() {
    const Token& kw = next();
    BifVariable v;
    v.line = kw.line;
    v.column = kw.column;
    const Token& nt = peek();
    v.name = name("variable name");
    if (index_.count(v.name)) fail("variable '" + v.name + "' declared twice", nt);
    if (vars_.size() >= opt_.max_variables) fail("too many variables", nt);
    expect_punct('{');
    bool typed = false;
    while (!at_punct('}')) {
      const Token& t = peek();
      if (t.kind == Token::Kind::Word && t.text == "type") {
        if (typed) fail("duplicate type declaration", t);
        next();
        expect_word("discrete");
        expect_punct('[');
        const Token& ct = peek();
        const std::size_t card = integer();
        if (card == 0) fail("cardinality must be positive", ct);
        if (card > opt_.max_cardinality) fail("cardinality too large", ct);
        expect_punct(']');
        expect_punct('{');
        std::set<std::string> seen;
        for (;;) {
          const Token& st = peek();
          std::string s = name("state name");
          if (!seen.insert(s).second) fail("duplicate state '" + s + "'", st);
          v.states.push_back(std::move(s));
          if (at_punct(',')) {
            next();
            continue;
          }
          break;
        }
        expect_punct('}');
        if (v.states.size() != card) {
          fail("variable '" + v.name + "' declares " + std::to_string(card) + " states but lists " +
                   std::to_string(v.states.size()),
               ct);
        }
        expect_punct(';');
        typed = true;
      } else if (t.kind == Token::Kind::Word && t.text == "property") {
        skip_property();
      } else {
        fail("expected 'type' or 'property'", t);
      }
    }
    next();
    if (!typed) fail("variable '" + v.name + "' has no type declaration", kw);
    index_[v.name] = vars_.size();
    vars_.push_back(std::move(v));
    blocks_.emplace_back();
  }

  std::size_t lookup(const Token& t) {
    auto it = index_.find(t.text);
    if (it == index_.end()) fail("undeclared variable '" + t.text + "'", t);
    return it->second;
  }

  std::size_t state_index(std::size_t var, const Token& t) {
    const auto& st = vars_[var].states;
    auto it = std::find(st.begin(), st.end(), t.text);
    if (it == st.end()) fail("unknown state '" + t.text + "' of '" + vars_[var].name + "'", t);
    return static_cast<std::size_t>(it - st.begin());
  }

  void check_row(std::vector<double>& row, const Token& at, std::vector<BifWarning>& warnings) {
    double sum = 0.0;
    for (double x : row) sum += x;
    const double err = std::abs(sum - 1.0);
    if (err <= 1e-9) return;
    if (err <= opt_.renormalize_tolerance && sum > 0.0) {
      for (double& x : row) x /= sum;
      warnings.push_back({at.line, at.column, "row sums to " + format_number(sum) + "; renormalized"});
      return;
    }
    fail("CPT row sums to " + format_number(sum) + ", not 1", at);
  }

  void parse_probability(std::vector<BifWarning>& warnings) {
    const Token& kw = next();
    BifBlock b;
    b.line = kw.line;
    b.column = kw.column;
    expect_punct('(');
    const Token& ct = peek();
    name("variable name");
    b.child = lookup(ct);
    if (blocks_[b.child]) fail("second probability block for '" + vars_[b.child].name + "'", ct);
    if (at_punct('|')) {
      next();
      for (;;) {
        const Token& pt = peek();
        name("parent name");
        const std::size_t p = lookup(pt);
        if (p == b.child) fail("variable is its own parent", pt);
        if (std::find(b.parents.begin(), b.parents.end(), p) != b.parents.end()) {
          fail("parent listed twice", pt);
        }
        b.parents.push_back(p);
        if (at_punct(',')) {
          next();
          continue;
        }
        break;
      }
    }
    expect_punct(')');

    const std::size_t child_card = vars_[b.child].states.size();
    std::size_t configs = 1;
    for (std::size_t p : b.parents) {
      const std::size_t c = vars_[p].states.size();
      if (configs > opt_.max_table_entries / c) fail("table too large", kw);
      configs *= c;
    }
    if (configs > opt_.max_table_entries / child_card) fail("table too large", kw);
    b.table.assign(configs * child_card, 0.0);
    std::vector<char> filled(configs, 0);
    std::optional<std::vector<double>> default_row;

    auto take_row = [&](std::size_t config, std::vector<double> row, const Token& at) {
      if (row.size() != child_card) {
        fail("row has " + std::to_string(row.size()) + " entries, expected " + std::to_string(child_card), at);
      }
      if (filled[config]) fail("row given twice", at);
      check_row(row, at, warnings);
      std::copy(row.begin(), row.end(), b.table.begin() + static_cast<std::ptrdiff_t>(config * child_card));
      filled[config] = 1;
    };

    expect_punct('{');
    while (!at_punct('}')) {
      const Token& t = peek();
      if (t.kind == Token::Kind::End) fail("unterminated probability block", t);
      if (t.kind == Token::Kind::Word && t.text == "table") {
        next();
        auto vals = numbers();
        if (vals.size() != b.table.size()) {
          fail("table has " + std::to_string(vals.size()) + " entries, expected " + std::to_string(b.table.size()), t);
        }
        expect_punct(';');
        for (std::size_t c = 0; c < configs; ++c) {
          std::vector<double> row(vals.begin() + static_cast<std::ptrdiff_t>(c * child_card),
                                  vals.begin() + static_cast<std::ptrdiff_t>((c + 1) * child_card));
          take_row(c, std::move(row), t);
        }
      } else if (t.kind == Token::Kind::Word && t.text == "default") {
        next();
        if (default_row) fail("second default row", t);
        auto row = numbers();
        if (row.size() != child_card) {
          fail("row has " + std::to_string(row.size()) + " entries, expected " + std::to_string(child_card), t);
        }
        check_row(row, t, warnings);
        default_row = std::move(row);
        expect_punct(';');
      } else if (t.kind == Token::Kind::Word && t.text == "property") {
        skip_property();
      } else if (at_punct('(')) {
        next();
        std::size_t config = 0;
        for (std::size_t k = 0; k < b.parents.size(); ++k) {
          if (k > 0) expect_punct(',');
          const Token& st = peek();
          name("parent state");
          config = config * vars_[b.parents[k]].states.size() + state_index(b.parents[k], st);
        }
        if (b.parents.empty()) fail("conditional row in a block without parents", t);
        expect_punct(')');
        auto row = numbers();
        expect_punct(';');
        take_row(config, std::move(row), t);
      } else {
        fail("expected a row, 'table', 'default' or 'property'", t);
      }
    }
    next();
    for (std::size_t c = 0; c < configs; ++c) {
      if (filled[c]) continue;
      if (!default_row) fail("probability block for '" + vars_[b.child].name + "' is missing rows", kw);
      std::copy(default_row->begin(), default_row->end(),
                b.table.begin() + static_cast<std::ptrdiff_t>(c * child_card));
    }
    blocks_[b.child] = std::move(b);
  }

  BayesNet assemble() {
    for (std::size_t v = 0; v < vars_.size(); ++v) {
      if (!blocks_[v]) {
        throw ParseError("variable '" + vars_[v].name + "' has no probability block", vars_[v].line,
                         vars_[v].column);
      }
    }
    // Kahn's algorithm; leftovers sit on a cycle.
    std::vector<std::size_t> indegree(vars_.size(), 0);
    std::vector<std::vector<std::size_t>> kids(vars_.size());
    for (std::size_t v = 0; v < vars_.size(); ++v) {
      for (std::size_t p : blocks_[v]->parents) {
        kids[p].push_back(v);
        ++indegree[v];
      }
    }
    std::vector<std::size_t> stack;
    for (std::size_t v = 0; v < vars_.size(); ++v) {
      if (indegree[v] == 0) stack.push_back(v);
    }
    std::size_t done = 0;
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      ++done;
      for (std::size_t k : kids[v]) {
        if (--indegree[k] == 0) stack.push_back(k);
      }
    }
    if (done != vars_.size()) {
      for (std::size_t v = 0; v < vars_.size(); ++v) {
        if (indegree[v] > 0) {
          throw ParseError("directed cycle through '" + vars_[v].name + "'", blocks_[v]->line,
                           blocks_[v]->column);
        }
      }
    }

    std::vector<Variable> variables;
    std::vector<std::vector<VarId>> parents;
    std::vector<FactorTable> cpts;
    for (std::size_t v = 0; v < vars_.size(); ++v) {
      variables.push_back({v, vars_[v].name, vars_[v].states.size(), vars_[v].states});
      const auto& b = *blocks_[v];
      std::vector<VarId> scope(b.parents.begin(), b.parents.end());
      scope.push_back(v);
      std::vector<std::size_t> cards;
      for (VarId s : scope) cards.push_back(vars_[s].states.size());
      parents.emplace_back(b.parents.begin(), b.parents.end());
      cpts.emplace_back(std::move(scope), std::move(cards), b.table);
    }
    return BayesNet(std::move(variables), std::move(parents), std::move(cpts));
  }

  std::vector<Token> toks_;
  BifOptions opt_;
  std::size_t i_ = 0;
  std::vector<BifVariable> vars_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::optional<BifBlock>> blocks_;
};

// -------------------------------------------------------------- JSON helpers

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string escape_pointer(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

std::string at_key(const std::string& path, const std::string& key) { return path + "/" + escape_pointer(key); }
std::string at_index(const std::string& path, std::size_t i) { return path + "/" + std::to_string(i); }

json parse_json(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t stop = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < stop; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string msg = e.what();
    if (auto p = msg.find("parse error"); p != std::string::npos) msg = msg.substr(p);
    throw ParseError("invalid JSON: " + msg, line, col);
  }
}

const json& expect_object(const json& j, const std::string& path, std::initializer_list<const char*> allowed,
                          std::initializer_list<const char*> required) {
  if (!j.is_object()) throw SchemaError(path.empty() ? "/" : path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw SchemaError(at_key(path, it.key()), "unknown field");
  }
  for (const char* r : required) {
    if (!j.contains(r)) throw SchemaError(at_key(path, r), "missing required field");
  }
  return j;
}

const json& expect_array(const json& j, const std::string& path) {
  if (!j.is_array()) throw SchemaError(path, "expected an array");
  return j;
}

std::string expect_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw SchemaError(path, "expected a string");
  return j.get<std::string>();
}

std::size_t expect_size(const json& j, const std::string& path) {
  if (!j.is_number_unsigned()) throw SchemaError(path, "expected a nonnegative integer");
  return j.get<std::size_t>();
}

long long expect_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw SchemaError(path, "expected an integer");
  return j.get<long long>();
}

double expect_number(const json& j, const std::string& path) {
  if (!j.is_number()) throw SchemaError(path, "expected a number");
  return j.get<double>();
}

bool expect_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw SchemaError(path, "expected a boolean");
  return j.get<bool>();
}

void expect_version(const json& j, const std::string& path) {
  const std::string v = expect_string(j, at_key(path, "format_version"));
  if (v != "1") throw SchemaError(at_key(path, "format_version"), "unsupported format_version '" + v + "'");
}

std::optional<VarId> find_var(const FactorGraphModel& m, const std::string& name) { return m.find(name); }

Evidence parse_evidence_block(const json& j, const std::string& path, const FactorGraphModel& model) {
  if (!j.is_object()) throw SchemaError(path, "expected an object");
  Evidence e;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string p = at_key(path, it.key());
    auto v = find_var(model, it.key());
    if (!v) throw SchemaError(p, "unknown variable");
    const auto& var = model.variable(*v);
    std::size_t state = 0;
    if (it->is_string()) {
      const std::string s = it->get<std::string>();
      auto f = std::find(var.state_names.begin(), var.state_names.end(), s);
      if (f == var.state_names.end()) throw SchemaError(p, "unknown state '" + s + "'");
      state = static_cast<std::size_t>(f - var.state_names.begin());
    } else {
      state = expect_size(*it, p);
      if (state >= var.cardinality) throw SchemaError(p, "state index out of range");
    }
    e[*v] = state;
  }
  return e;
}

ojson evidence_block(const Evidence& e, const FactorGraphModel& model) {
  ojson j = ojson::object();
  for (auto [v, s] : e) {
    const auto& var = model.variable(v);
    if (var.state_names.size() == var.cardinality) {
      j[var.name] = var.state_names[s];
    } else {
      j[var.name] = s;
    }
  }
  return j;
}

ojson cluster_spec_json(const ClusterSpec& s) {
  ojson j;
  j["sensors_per_cluster"] = s.sensors_per_cluster;
  j["temp_levels"] = s.temp_levels;
  j["bias_levels"] = s.bias_levels;
  j["reading_levels"] = s.reading_levels;
  j["fire_prior"] = s.fire_prior;
  j["broken_prior"] = s.broken_prior;
  j["broken_given_fire"] = s.broken_given_fire;
  j["room_temp_decay"] = s.room_temp_decay;
  j["room_temp_rise"] = s.room_temp_rise;
  j["hot_penalty"] = s.hot_penalty;
  j["temp_spread"] = s.temp_spread;
  j["temp_spread_given_fire"] = s.temp_spread_given_fire;
  j["bias_center_mass"] = s.bias_center_mass;
  j["reading_noise"] = s.reading_noise;
  j["initial_reading_fraction"] = s.initial_reading_fraction;
  j["check_calibration"] = s.check_calibration;
  j["max_prior_fire"] = s.max_prior_fire;
  j["min_alarm_fire"] = s.min_alarm_fire;
  return j;
}

ClusterSpec read_cluster_spec(const json& j, const std::string& path) {
  expect_object(j, path,
                {"sensors_per_cluster", "temp_levels", "bias_levels", "reading_levels", "fire_prior",
                 "broken_prior", "broken_given_fire", "room_temp_decay", "room_temp_rise", "hot_penalty",
                 "temp_spread", "temp_spread_given_fire", "bias_center_mass", "reading_noise",
                 "initial_reading_fraction", "check_calibration", "max_prior_fire", "min_alarm_fire"},
                {});
  ClusterSpec s;
  auto size = [&](const char* k, std::size_t& out) {
    if (j.contains(k)) out = expect_size(j[k], at_key(path, k));
  };
  auto num = [&](const char* k, double& out) {
    if (j.contains(k)) out = expect_number(j[k], at_key(path, k));
  };
  size("sensors_per_cluster", s.sensors_per_cluster);
  size("temp_levels", s.temp_levels);
  size("bias_levels", s.bias_levels);
  size("reading_levels", s.reading_levels);
  num("fire_prior", s.fire_prior);
  num("broken_prior", s.broken_prior);
  num("broken_given_fire", s.broken_given_fire);
  num("room_temp_decay", s.room_temp_decay);
  num("room_temp_rise", s.room_temp_rise);
  num("hot_penalty", s.hot_penalty);
  num("temp_spread", s.temp_spread);
  num("temp_spread_given_fire", s.temp_spread_given_fire);
  num("bias_center_mass", s.bias_center_mass);
  num("reading_noise", s.reading_noise);
  num("initial_reading_fraction", s.initial_reading_fraction);
  num("max_prior_fire", s.max_prior_fire);
  num("min_alarm_fire", s.min_alarm_fire);
  if (j.contains("check_calibration")) s.check_calibration = expect_bool(j["check_calibration"], at_key(path, "check_calibration"));
  try {
    s.validate();
  } catch (const ModelError& e) {
    throw SchemaError(path, e.what());
  }
  if (s.temp_levels > 64 || s.bias_levels > 64 || s.readings() > 64 || s.sensors_per_cluster > 64) {
    throw SchemaError(path, "cluster dimensions too large");
  }
  return s;
}

SensorNetwork read_clusters(const json& j, const std::string& path, const FactorGraphModel& model) {
  expect_object(j, path, {"rows", "cols", "raw_variable_count", "cluster_spec", "coupling", "nodes"},
                {"cluster_spec", "coupling", "nodes"});
  SensorNetwork net;
  net.model = model;
  if (j.contains("rows")) net.rows = expect_size(j["rows"], at_key(path, "rows"));
  if (j.contains("cols")) net.cols = expect_size(j["cols"], at_key(path, "cols"));
  if (j.contains("raw_variable_count")) {
    net.raw_variable_count = expect_size(j["raw_variable_count"], at_key(path, "raw_variable_count"));
  }
  net.spec = read_cluster_spec(j["cluster_spec"], at_key(path, "cluster_spec"));
  {
    const std::string cp = at_key(path, "coupling");
    expect_object(j["coupling"], cp, {"temp_agreement", "fire_agreement"}, {"temp_agreement", "fire_agreement"});
    net.coupling.temp_agreement = expect_number(j["coupling"]["temp_agreement"], at_key(cp, "temp_agreement"));
    net.coupling.fire_agreement = expect_number(j["coupling"]["fire_agreement"], at_key(cp, "fire_agreement"));
    try {
      net.coupling.validate();
    } catch (const ModelError& e) {
      throw SchemaError(cp, e.what());
    }
  }
  net.cluster = make_cluster_template(net.spec);
  const std::size_t card = 2 * net.spec.temp_levels;
  const std::size_t sensors = net.cluster.readings.size();
  const int R = static_cast<int>(net.spec.readings());

  const std::string np = at_key(path, "nodes");
  const auto& nodes = expect_array(j["nodes"], np);
  std::set<VarId> used;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string p = at_index(np, i);
    expect_object(nodes[i], p, {"variable", "phi_factor", "position", "readings"}, {"variable", "phi_factor", "readings"});
    Cluster c;
    const std::string name = expect_string(nodes[i]["variable"], at_key(p, "variable"));
    auto v = model.find(name);
    if (!v) throw SchemaError(at_key(p, "variable"), "unknown variable '" + name + "'");
    if (model.cardinality(*v) != card) throw SchemaError(at_key(p, "variable"), "cardinality does not match the cluster spec");
    if (!used.insert(*v).second) throw SchemaError(at_key(p, "variable"), "variable used by two clusters");
    c.node = *v;
    c.phi = expect_size(nodes[i]["phi_factor"], at_key(p, "phi_factor"));
    if (c.phi >= model.num_factors() || model.factor(c.phi).scope() != std::vector<VarId>{c.node}) {
      throw SchemaError(at_key(p, "phi_factor"), "not a unary factor over the cluster variable");
    }
    if (nodes[i].contains("position")) {
      const std::string pp = at_key(p, "position");
      const auto& pos = expect_array(nodes[i]["position"], pp);
      if (pos.size() != 2) throw SchemaError(pp, "expected [row, col]");
      c.position = std::make_pair(expect_size(pos[0], at_index(pp, 0)), expect_size(pos[1], at_index(pp, 1)));
    }
    const std::string rp = at_key(p, "readings");
    const auto& rd = expect_array(nodes[i]["readings"], rp);
    if (rd.size() != sensors) throw SchemaError(rp, "expected one entry per sensor");
    for (std::size_t s = 0; s < rd.size(); ++s) {
      const long long r = expect_int(rd[s], at_index(rp, s));
      if (r < -1 || r >= R) throw SchemaError(at_index(rp, s), "reading out of range");
      c.readings.push_back(static_cast<int>(r));
    }
    const auto expected = net.phi_for(c.readings, c.node).values();
    const auto& got = model.factor(c.phi).values();
    for (std::size_t k = 0; k < expected.size(); ++k) {
      if (std::abs(expected[k] - got[k]) > 1e-9) {
        throw SchemaError(at_key(p, "phi_factor"), "local evidence does not match the readings");
      }
    }
    net.clusters.push_back(std::move(c));
  }
  return net;
}

ojson clusters_json(const SensorNetwork& net) {
  ojson j;
  j["rows"] = net.rows;
  j["cols"] = net.cols;
  j["raw_variable_count"] = net.raw_variable_count;
  j["cluster_spec"] = cluster_spec_json(net.spec);
  j["coupling"] = {{"temp_agreement", net.coupling.temp_agreement},
                   {"fire_agreement", net.coupling.fire_agreement}};
  ojson nodes = ojson::array();
  for (const auto& c : net.clusters) {
    ojson n;
    n["variable"] = net.model.variable(c.node).name;
    n["phi_factor"] = c.phi;
    if (c.position) n["position"] = {c.position->first, c.position->second};
    n["readings"] = c.readings;
    nodes.push_back(std::move(n));
  }
  j["nodes"] = std::move(nodes);
  return j;
}

std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

}  // namespace

// ------------------------------------------------------------------- BIF API

BifDocument parse_bif_document(std::string_view text, const BifOptions& options) {
  if (text.size() > options.max_input_bytes) throw ParseError("input too large", 1, 1);
  BifParser parser(Lexer(text).run(), options);
  return parser.parse();
}

BayesNet parse_bif(std::string_view text, const BifOptions& options) {
  return parse_bif_document(text, options).net;
}

// ------------------------------------------------------------------ JSON API

ModelDocument read_model_document(std::string_view text) {
  const json root = parse_json(text);
  expect_object(root, "", {"format_version", "variables", "factors", "clusters", "evidence"},
                {"format_version", "variables", "factors"});
  expect_version(root["format_version"], "");

  std::vector<Variable> vars;
  std::set<std::string> names;
  const auto& jv = expect_array(root["variables"], "/variables");
  for (std::size_t i = 0; i < jv.size(); ++i) {
    const std::string p = at_index("/variables", i);
    expect_object(jv[i], p, {"name", "cardinality", "states"}, {"name", "cardinality"});
    Variable v;
    v.id = i;
    v.name = expect_string(jv[i]["name"], at_key(p, "name"));
    if (v.name.empty()) throw SchemaError(at_key(p, "name"), "empty name");
    if (!names.insert(v.name).second) throw SchemaError(at_key(p, "name"), "duplicate variable name");
    v.cardinality = expect_size(jv[i]["cardinality"], at_key(p, "cardinality"));
    if (v.cardinality == 0) throw SchemaError(at_key(p, "cardinality"), "cardinality must be positive");
    if (jv[i].contains("states")) {
      const std::string sp = at_key(p, "states");
      const auto& st = expect_array(jv[i]["states"], sp);
      if (st.size() != v.cardinality) throw SchemaError(sp, "expected one name per state");
      std::set<std::string> seen;
      for (std::size_t k = 0; k < st.size(); ++k) {
        v.state_names.push_back(expect_string(st[k], at_index(sp, k)));
        if (!seen.insert(v.state_names.back()).second) throw SchemaError(at_index(sp, k), "duplicate state name");
      }
    }
    vars.push_back(std::move(v));
  }
  std::unordered_map<std::string, VarId> index;
  for (const auto& v : vars) index[v.name] = v.id;

  std::vector<FactorTable> factors;
  const auto& jf = expect_array(root["factors"], "/factors");
  for (std::size_t i = 0; i < jf.size(); ++i) {
    const std::string p = at_index("/factors", i);
    expect_object(jf[i], p, {"scope", "table"}, {"scope", "table"});
    const std::string sp = at_key(p, "scope");
    const auto& js = expect_array(jf[i]["scope"], sp);
    std::vector<VarId> scope;
    std::vector<std::size_t> cards;
    std::size_t total = 1;
    for (std::size_t k = 0; k < js.size(); ++k) {
      const std::string name = expect_string(js[k], at_index(sp, k));
      auto it = index.find(name);
      if (it == index.end()) throw SchemaError(at_index(sp, k), "unknown variable '" + name + "'");
      if (std::find(scope.begin(), scope.end(), it->second) != scope.end()) {
        throw SchemaError(at_index(sp, k), "variable repeated in scope");
      }
      scope.push_back(it->second);
      cards.push_back(vars[it->second].cardinality);
      if (total > (std::size_t{1} << 28) / cards.back()) throw SchemaError(sp, "factor table too large");
      total *= cards.back();
    }
    const std::string tp = at_key(p, "table");
    const auto& jt = expect_array(jf[i]["table"], tp);
    if (jt.size() != total) {
      throw SchemaError(tp, "factor " + std::to_string(i) + " has " + std::to_string(jt.size()) +
                                " entries, expected " + std::to_string(total));
    }
    std::vector<double> values;
    values.reserve(total);
    for (std::size_t k = 0; k < jt.size(); ++k) {
      const double x = expect_number(jt[k], at_index(tp, k));
      if (!(x >= 0.0) || !std::isfinite(x)) throw SchemaError(at_index(tp, k), "entries must be finite and nonnegative");
      values.push_back(x);
    }
    factors.emplace_back(std::move(scope), std::move(cards), std::move(values));
  }

  ModelDocument doc;
  try {
    doc.model = FactorGraphModel(std::move(vars), std::move(factors));
  } catch (const ModelError& e) {
    throw SchemaError("/factors", e.what());
  }
  if (root.contains("clusters")) doc.network = read_clusters(root["clusters"], "/clusters", doc.model);
  if (root.contains("evidence")) doc.evidence = parse_evidence_block(root["evidence"], "/evidence", doc.model);
  return doc;
}

FactorGraphModel read_model(std::string_view text) { return read_model_document(text).model; }

SensorNetwork read_sensor_network(std::string_view text) {
  auto doc = read_model_document(text);
  if (!doc.network) throw SchemaError("/clusters", "model has no cluster metadata");
  return std::move(*doc.network);
}

std::string write_model(const ModelDocument& doc) {
  const auto& m = doc.model;
  ojson root;
  root["format_version"] = "1";
  ojson vars = ojson::array();
  for (const auto& v : m.variables()) {
    ojson j;
    j["name"] = v.name;
    j["cardinality"] = v.cardinality;
    if (!v.state_names.empty()) j["states"] = v.state_names;
    vars.push_back(std::move(j));
  }
  root["variables"] = std::move(vars);
  ojson factors = ojson::array();
  for (const auto& f : m.factors()) {
    ojson j;
    ojson scope = ojson::array();
    for (VarId v : f.scope()) scope.push_back(m.variable(v).name);
    j["scope"] = std::move(scope);
    j["table"] = f.values();
    factors.push_back(std::move(j));
  }
  root["factors"] = std::move(factors);
  if (doc.network) root["clusters"] = clusters_json(*doc.network);
  if (doc.evidence) root["evidence"] = evidence_block(*doc.evidence, m);
  return dump(root);
}

std::string write_model(const FactorGraphModel& model) { return write_model(ModelDocument{model, std::nullopt, std::nullopt}); }

std::string write_model(const SensorNetwork& net) { return write_model(ModelDocument{net.model, net, std::nullopt}); }

Evidence read_evidence(std::string_view text, const FactorGraphModel& model) {
  const json root = parse_json(text);
  if (root.is_object() && root.contains("variables")) {
    if (!root.contains("evidence")) return {};
    return parse_evidence_block(root["evidence"], "/evidence", model);
  }
  expect_object(root, "", {"format_version", "evidence"}, {"format_version", "evidence"});
  expect_version(root["format_version"], "");
  return parse_evidence_block(root["evidence"], "/evidence", model);
}

std::string write_evidence(const Evidence& e, const FactorGraphModel& model) {
  ojson root;
  root["format_version"] = "1";
  root["evidence"] = evidence_block(e, model);
  return dump(root);
}

std::string write_beliefs(std::span<const DiscreteDistribution> beliefs, const FactorGraphModel& model) {
  ojson root;
  root["format_version"] = "1";
  ojson arr = ojson::array();
  for (const auto& b : beliefs) {
    ojson j;
    j["variable"] = model.variable(b.over).name;
    j["probs"] = b.probs;
    arr.push_back(std::move(j));
  }
  root["beliefs"] = std::move(arr);
  return dump(root);
}

std::vector<DiscreteDistribution> read_beliefs(std::string_view text, const FactorGraphModel& model) {
  const json root = parse_json(text);
  expect_object(root, "", {"format_version", "beliefs"}, {"format_version", "beliefs"});
  expect_version(root["format_version"], "");
  const auto& arr = expect_array(root["beliefs"], "/beliefs");
  std::vector<DiscreteDistribution> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string p = at_index("/beliefs", i);
    expect_object(arr[i], p, {"variable", "probs"}, {"variable", "probs"});
    const std::string name = expect_string(arr[i]["variable"], at_key(p, "variable"));
    auto v = model.find(name);
    if (!v) throw SchemaError(at_key(p, "variable"), "unknown variable '" + name + "'");
    const auto& pr = expect_array(arr[i]["probs"], at_key(p, "probs"));
    if (pr.size() != model.cardinality(*v)) throw SchemaError(at_key(p, "probs"), "length does not match cardinality");
    DiscreteDistribution d;
    d.over = *v;
    for (std::size_t k = 0; k < pr.size(); ++k) d.probs.push_back(expect_number(pr[k], at_index(at_key(p, "probs"), k)));
    out.push_back(std::move(d));
  }
  return out;
}

FloorPlanSpec read_floorplan(std::string_view text) {
  const json root = parse_json(text);
  expect_object(root, "", {"format_version", "rooms", "edges", "positions", "allow_disconnected", "cluster_spec", "coupling"},
                {"format_version", "rooms", "edges"});
  expect_version(root["format_version"], "");
  FloorPlanSpec plan;
  plan.rooms = expect_size(root["rooms"], "/rooms");
  auto pairs = [&](const char* key) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const std::string p = at_key("", key);
    const auto& arr = expect_array(root[key], p);
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string q = at_index(p, i);
      const auto& e = expect_array(arr[i], q);
      if (e.size() != 2) throw SchemaError(q, "expected a pair");
      out.emplace_back(expect_size(e[0], at_index(q, 0)), expect_size(e[1], at_index(q, 1)));
    }
    return out;
  };
  plan.edges = pairs("edges");
  if (root.contains("positions")) plan.positions = pairs("positions");
  if (root.contains("allow_disconnected")) plan.allow_disconnected = expect_bool(root["allow_disconnected"], "/allow_disconnected");
  if (root.contains("cluster_spec")) plan.cluster = read_cluster_spec(root["cluster_spec"], "/cluster_spec");
  if (root.contains("coupling")) {
    expect_object(root["coupling"], "/coupling", {"temp_agreement", "fire_agreement"}, {});
    if (root["coupling"].contains("temp_agreement")) {
      plan.coupling.temp_agreement = expect_number(root["coupling"]["temp_agreement"], "/coupling/temp_agreement");
    }
    if (root["coupling"].contains("fire_agreement")) {
      plan.coupling.fire_agreement = expect_number(root["coupling"]["fire_agreement"], "/coupling/fire_agreement");
    }
  }
  return plan;
}

std::string write_floorplan(const FloorPlanSpec& plan) {
  ojson root;
  root["format_version"] = "1";
  root["rooms"] = plan.rooms;
  ojson edges = ojson::array();
  for (auto [a, b] : plan.edges) edges.push_back({a, b});
  root["edges"] = std::move(edges);
  if (!plan.positions.empty()) {
    ojson pos = ojson::array();
    for (auto [r, c] : plan.positions) pos.push_back({r, c});
    root["positions"] = std::move(pos);
  }
  root["allow_disconnected"] = plan.allow_disconnected;
  root["cluster_spec"] = cluster_spec_json(plan.cluster);
  root["coupling"] = {{"temp_agreement", plan.coupling.temp_agreement},
                      {"fire_agreement", plan.coupling.fire_agreement}};
  return dump(root);
}

std::string write_report(const ConvergenceReport& report, std::string_view mode) {
  ojson root;
  root["format_version"] = "1";
  root["mode"] = std::string(mode);
  root["converged"] = report.converged;
  root["sweeps_or_firings"] = report.sweeps_or_firings;
  root["total_propagations"] = report.total_propagations;
  root["final_max_delta"] = report.final_max_delta;
  root["per_node_fire_count"] = report.per_node_fire_count;
  return dump(root);
}

// ----------------------------------------------------------------------- CSV

std::string format_number(double x) {
  if (x == 0.0) return "0";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

std::string write_csv(std::span<const std::string> header, std::span<const std::vector<std::string>> rows) {
  auto field = [](const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  std::string out;
  auto line = [&](std::span<const std::string> fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out += ',';
      out += field(fields[i]);
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

std::string write_series_csv(const ExperimentSeries& series) {
  const std::vector<std::string> header{"time", "incorrect_fraction", "mean_tv_error", "total_propagations"};
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : series.rows) {
    rows.push_back({format_number(r.time), format_number(r.incorrect_fraction), format_number(r.mean_tv_error),
                    std::to_string(r.total_propagations)});
  }
  return write_csv(header, rows);
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string cur;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
      continue;
    }
    any = true;
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(cur));
      cur.clear();
    } else if (c == '\n') {
      row.push_back(std::move(cur));
      cur.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (any) {
    row.push_back(std::move(cur));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace sensorbp
