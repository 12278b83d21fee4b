#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include <json.hpp>

#include "sensorbp/errors.hpp"
#include "sensorbp/exact.hpp"
#include "sensorbp/formats.hpp"
#include "sensorbp/netgen.hpp"
#include "test_util.hpp"

using namespace sensorbp;
using namespace testutil;

namespace {

const char* kTiny = R"(// comment
network tiny { property "x"; }
variable A { type discrete [ 2 ] { yes, no }; }
variable B { type discrete [ 3 ] { lo, mid, hi }; property "p"; }
/* block
   comment */
probability ( A ) { table 0.3, 0.7; }
probability ( B | A ) {
  (no) 0.1, 0.2, 0.7;
  (yes) 0.5, 0.25, 0.25;
}
)";

ParseError expect_parse_error(const std::string& text) {
  try {
    parse_bif(text);
  } catch (const ParseError& e) {
    return e;
  }
  FAIL("no ParseError for input:\n" << text);
  return ParseError("", 0, 0);
}

}  // namespace

TEST_CASE("parse a small BIF") {
  const auto doc = parse_bif_document(kTiny);
  CHECK(doc.network_name == "tiny");
  const auto& bn = doc.net;
  REQUIRE(bn.size() == 2);
  CHECK(bn.variables()[1].state_names == std::vector<std::string>{"lo", "mid", "hi"});
  CHECK(bn.parents()[1] == std::vector<VarId>{0});
  CHECK(bn.cpts()[0].values() == std::vector<double>{0.3, 0.7});
  // Rows placed by parent label: yes first.
  CHECK(bn.cpts()[1].values() == std::vector<double>{0.5, 0.25, 0.25, 0.1, 0.2, 0.7});
  CHECK(doc.warnings.empty());
}

TEST_CASE("conditional table and default rows") {
  const auto bn = parse_bif(R"(
variable A { type discrete [2] { a0, a1 }; }
variable C { type discrete [2] { c0, c1 }; }
variable B { type discrete [2] { b0, b1 }; }
probability (A) { table 0.5, 0.5; }
probability (C) { table 0.5, 0.5; }
probability (B | A, C) { table 0.1 0.9 0.2 0.8 0.3 0.7 0.4 0.6; }
)");
  CHECK(bn.cpts()[2].values() == std::vector<double>{0.1, 0.9, 0.2, 0.8, 0.3, 0.7, 0.4, 0.6});
  const auto d = parse_bif(R"(
variable A { type discrete [2] { a0, a1 }; }
variable B { type discrete [2] { b0, b1 }; }
probability (A) { table 0.5, 0.5; }
probability (B | A) { (a1) 0.9, 0.1; default 0.5, 0.5; }
)");
  CHECK(d.cpts()[1].values() == std::vector<double>{0.5, 0.5, 0.9, 0.1});
}

TEST_CASE("rounded rows are renormalized with a warning") {
  const auto doc = parse_bif_document(R"(
variable A { type discrete [2] { a0, a1 }; }
probability (A) { table 0.3333, 0.6666; }
)");
  REQUIRE(doc.warnings.size() == 1);
  CHECK(doc.warnings[0].line == 3);
  CHECK(doc.net.cpts()[0].values()[0] + doc.net.cpts()[0].values()[1] == doctest::Approx(1.0).epsilon(1e-15));
  const auto e = expect_parse_error(R"(
variable A { type discrete [2] { a0, a1 }; }
probability (A) { table 0.3, 0.6; }
)");
  CHECK(e.line() == 3);
}

TEST_CASE("located BIF errors") {
  struct Case {
    const char* text;
    std::size_t line;
  };
  const Case cases[] = {
      // truncated probability block
      {"variable A { type discrete [2] { a0, a1 }; }\nprobability (A) { table 0.5", 2},
      // row length
      {"variable A { type discrete [2] { a0, a1 }; }\nprobability (A) {\n table 0.5, 0.25, 0.25; }", 3},
      // undeclared variable
      {"variable A { type discrete [2] { a0, a1 }; }\nprobability (A | Z) { table 0.5, 0.5; }", 2},
      // duplicate state
      {"variable A { type discrete [2] { a0, a0 }; }", 1},
      // state count mismatch
      {"variable A { type discrete [3] { a0, a1 }; }", 1},
      // missing block
      {"variable A { type discrete [2] { a0, a1 }; }\n", 1},
      // lexical error
      {"variable A { type discrete [2] { a0, a1 }; }\nprobability (A) { table 0.5, 0.5; } @", 2},
      // unknown parent state label
      {"variable A { type discrete [2] { a0, a1 }; }\nvariable B { type discrete [2] { b0, b1 }; }\n"
       "probability (A) { table 0.5, 0.5; }\nprobability (B | A) { (a2) 0.5, 0.5; (a0) 0.5, 0.5; }",
       4},
      // missing row without default
      {"variable A { type discrete [2] { a0, a1 }; }\nvariable B { type discrete [2] { b0, b1 }; }\n"
       "probability (A) { table 0.5, 0.5; }\nprobability (B | A) { (a0) 0.5, 0.5; }",
       4},
  };
  for (const auto& c : cases) {
    CAPTURE(c.text);
    const auto e = expect_parse_error(c.text);
    CHECK(e.line() == c.line);
    CHECK(e.column() >= 1);
  }
  // cycle
  const auto cyc = expect_parse_error(
      "variable A { type discrete [2] { a0, a1 }; }\nvariable B { type discrete [2] { b0, b1 }; }\n"
      "probability (A | B) { table 0.5 0.5 0.5 0.5; }\nprobability (B | A) { table 0.5 0.5 0.5 0.5; }");
  CHECK(cyc.line() >= 3);
}

TEST_CASE("ALARM and HAILFINDER") {
  const auto alarm = parse_bif(slurp(data_file("alarm.bif")));
  const auto hail = parse_bif(slurp(data_file("hailfinder.bif")));
  CHECK(alarm.size() == 37);
  CHECK(hail.size() == 56);
  CHECK(alarm.find("HISTORY").has_value());
  for (const auto* bn : {&alarm, &hail}) {
    for (std::size_t v = 0; v < bn->size(); ++v) {
      const auto& t = bn->cpts()[v];
      const std::size_t card = bn->variables()[v].cardinality;
      for (std::size_t r = 0; r < t.size() / card; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < card; ++k) s += t.values()[r * card + k];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("repository networks: exact marginals on ancestral sub-networks") {
  // The prior marginal of v depends only on its ancestors, so the library's
  // elimination over the whole network must match enumeration over the
  // ancestral closure whenever that closure is small enough.
  for (const char* file : {"alarm.bif", "hailfinder.bif"}) {
    const auto bn = parse_bif(slurp(data_file(file)));
    const auto fg = bn_to_factor_graph(bn);
    const auto ve = exact_marginals(fg, {});
    std::size_t checked = 0;
    for (VarId v = 0; v < bn.size(); ++v) {
      std::set<VarId> anc{v};
      std::vector<VarId> stack{v};
      while (!stack.empty()) {
        const VarId u = stack.back();
        stack.pop_back();
        for (VarId p : bn.parents()[u]) {
          if (anc.insert(p).second) stack.push_back(p);
        }
      }
      double states = 1.0;
      for (VarId u : anc) states *= static_cast<double>(bn.variables()[u].cardinality);
      if (states > 1 << 16) continue;
      std::vector<VarId> ids(anc.begin(), anc.end());
      std::vector<std::size_t> remap(bn.size(), 0);
      std::vector<Variable> vars;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        remap[ids[k]] = k;
        auto var = bn.variables()[ids[k]];
        var.id = k;
        vars.push_back(var);
      }
      std::vector<FactorTable> fs;
      for (VarId u : ids) {
        const auto& t = bn.cpts()[u];
        std::vector<VarId> scope;
        for (VarId s : t.scope()) scope.push_back(remap[s]);
        fs.emplace_back(scope, t.cards(), t.values());
      }
      const auto m = enumerate_marginals(FactorGraphModel(vars, fs), {});
      CHECK(max_abs_diff(m[remap[v]], ve[v].probs) < 1e-9);
      ++checked;
    }
    CHECK(checked > bn.size() / 3);
  }
}

TEST_CASE("fuzzed BIF never crashes") {
  const auto base = slurp(data_file("alarm.bif"));
  Rng rng(2024);
  std::size_t errors = 0;
  for (int k = 0; k < 300; ++k) {
    const auto text = mutate_text(base, rng);
    try {
      parse_bif(text);
    } catch (const ParseError& e) {
      CHECK(e.line() >= 1);
      ++errors;
    }
  }
  CHECK(errors > 0);
}

TEST_CASE("model JSON round trip") {
  Rng rng(99);
  for (int k = 0; k < 100; ++k) {
    const auto m = random_named_model(rng);
    const auto text = write_model(m);
    const auto back = read_model(text);
    CHECK(back == m);
    CHECK(write_model(back) == text);
  }
  const auto net = gen_firesensor(3, 3, [] {
    ClusterSpec s;
    s.initial_reading_fraction = 0.5;
    return s;
  }(), CouplingSpec{}, 4);
  const auto text = write_model(net);
  const auto back = read_sensor_network(text);
  CHECK(back.model == net.model);
  CHECK(back.rows == 3);
  CHECK(back.clusters.size() == 9);
  for (std::size_t c = 0; c < 9; ++c) CHECK(back.clusters[c].readings == net.clusters[c].readings);
  CHECK(write_model(back) == text);
}

TEST_CASE("model JSON: factors in id order") {
  auto vars = binary_vars(2);
  const FactorGraphModel m(vars, {FactorTable({0}, {2}, {1, 2}), FactorTable({0, 1}, {2, 2}, {1, 2, 3, 4}),
                                  FactorTable({1}, {2}, {5, 6})});
  const auto j = nlohmann::json::parse(write_model(m));
  REQUIRE(j["factors"].size() == 3);
  CHECK(j["factors"][1]["scope"] == nlohmann::json::array({"v0", "v1"}));
  CHECK(j["factors"][2]["table"] == nlohmann::json::array({5, 6}));
}

TEST_CASE("model JSON schema errors") {
  const std::string good =
      R"({"format_version":"1","variables":[{"name":"a","cardinality":2}],)"
      R"("factors":[{"scope":["a"],"table":[1,2]}]})";
  CHECK_NOTHROW(read_model(good));
  auto schema_path = [](const std::string& text) {
    try {
      read_model(text);
    } catch (const SchemaError& e) {
      return e.path();
    }
    return std::string("<none>");
  };
  CHECK(schema_path(R"({"format_version":"1","variables":[{"name":"a","cardinality":2,"colour":1}],)"
                    R"("factors":[{"scope":["a"],"table":[1,2]}]})") == "/variables/0/colour");
  CHECK(schema_path(R"({"format_version":"1","variables":[{"name":"a","cardinality":2}],)"
                    R"("factors":[{"scope":["a"],"table":[1,2]}],"extra":0})") == "/extra");
  CHECK(schema_path(R"({"format_version":"1","variables":[{"name":"a","cardinality":2}],)"
                    R"("factors":[{"scope":["a"],"table":[1,2]},{"scope":["a"],"table":[1,2,3]}]})") ==
        "/factors/1/table");
  CHECK(schema_path(R"({"format_version":"2","variables":[],"factors":[]})") == "/format_version");
  CHECK(schema_path(R"({"format_version":"1","variables":[{"name":"a","cardinality":2}],)"
                    R"("factors":[{"scope":["b"],"table":[1,2]}]})") == "/factors/0/scope/0");
  try {
    read_model("{\n  \"format_version\": \"1\",\n  \"variables\": [\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() >= 3);
  }
}

TEST_CASE("evidence and beliefs JSON") {
  Variable a{0, "a", 3, {"x", "y", "z"}};
  Variable b{1, "b", 2, {}};
  const FactorGraphModel m({a, b}, {FactorTable({0, 1}, {3, 2}, {1, 2, 3, 4, 5, 6})});
  const Evidence e{{0, 2}, {1, 1}};
  const auto text = write_evidence(e, m);
  CHECK(nlohmann::json::parse(text)["evidence"]["a"] == "z");
  CHECK(read_evidence(text, m) == e);
  CHECK(read_evidence(R"({"format_version":"1","evidence":{"a":1}})", m) == Evidence{{0, 1}});
  CHECK_THROWS_AS(read_evidence(R"({"format_version":"1","evidence":{"a":"w"}})", m), SchemaError);
  CHECK_THROWS_AS(read_evidence(R"({"format_version":"1","evidence":{"b":2}})", m), SchemaError);
  CHECK_THROWS_AS(read_evidence(R"({"format_version":"1","evidence":{"q":0}})", m), SchemaError);

  std::vector<DiscreteDistribution> bel{{0, {0.1, 0.2, 0.7}}, {1, {1.0 / 3.0, 2.0 / 3.0}}};
  const auto bt = write_beliefs(bel, m);
  const auto back = read_beliefs(bt, m);
  REQUIRE(back.size() == 2);
  CHECK(back[1].probs == bel[1].probs);
}

TEST_CASE("floor plan JSON") {
  const auto plan = read_floorplan(slurp(data_file("floorplan100.json")));
  CHECK(plan.rooms == 100);
  CHECK(plan.edges == default_floorplan().edges);
  CHECK(read_floorplan(write_floorplan(plan)).edges == plan.edges);
  CHECK_THROWS_AS(read_floorplan(R"({"format_version":"1","rooms":2,"edges":[[0,1]],"doors":1})"), SchemaError);
}

TEST_CASE("CSV") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(0.0) == "0");
  CHECK(format_number(1e-7) == "1e-07");
  CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);

  ExperimentSeries empty;
  CHECK(write_series_csv(empty) == std::string(kSeriesHeader) + "\n");
  ExperimentSeries two;
  two.rows = {{0.0, 0.5, 0.25, 10}, {1.0, 0.0, 0.0, 20}};
  const auto text = write_series_csv(two);
  CHECK(text == "time,incorrect_fraction,mean_tv_error,total_propagations\n0,0.5,0.25,10\n1,0,0,20\n");
  CHECK(write_series_csv(two) == text);
  CHECK(parse_csv(text).size() == 3);

  const std::vector<std::string> header{"a", "b"};
  const std::vector<std::vector<std::string>> rows{{"x,y", "say \"hi\""}};
  const auto quoted = write_csv(header, rows);
  CHECK(quoted == "a,b\n\"x,y\",\"say \"\"hi\"\"\"\n");
  CHECK(parse_csv(quoted)[1] == rows[0]);
}
