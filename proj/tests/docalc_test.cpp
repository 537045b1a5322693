#include <string>
#include <vector>

#include "docalc.h"
#include "doctest.h"
#include "graph_core.h"
#include "scm_oracle.h"
#include "table_compare.h"

using docalc::Population;
using docalc::ProbExpr;
using docalc::ProbTerm;
using docalc::RuleDirection;
using graph_core::NodeSet;
using graph_core::SelectionDiagram;

namespace {

SelectionDiagram diag(const std::string& text) {
  return graph_core::parse_diagram_text(text).diagram;
}

ProbExpr term(NodeSet targets, NodeSet do_set, NodeSet conds,
              Population pop = Population::Source) {
  return ProbExpr::make_term(std::move(targets), std::move(do_set),
                             std::move(conds), pop);
}

}  // namespace

TEST_CASE("free and bound variables") {
  ProbExpr e = ProbExpr::make_sum_over(
      {"Z"}, ProbExpr::make_product(
                 {term({"Y"}, {"X"}, {"Z"}),
                  term({"Z"}, {}, {}, Population::Target)}));
  CHECK(docalc::free_vars(e) == NodeSet{"X", "Y"});
  CHECK(docalc::bound_vars(e) == NodeSet{"Z"});
  CHECK(docalc::free_vars(term({"Y"}, {"X"}, {"W"})) ==
        NodeSet{"W", "X", "Y"});
  CHECK_NOTHROW(docalc::check_well_formed(e));
}

TEST_CASE("well-formedness violations") {
  CHECK_THROWS_AS(docalc::check_well_formed(term({}, {"X"}, {})),
                  docalc::FreeVariableMismatch);
  CHECK_THROWS_AS(docalc::check_well_formed(term({"Y"}, {"Y"}, {})),
                  graph_core::OverlappingSets);
  CHECK_THROWS_AS(docalc::check_well_formed(term({"Y"}, {"X"}, {"X"})),
                  graph_core::OverlappingSets);
  CHECK_THROWS_AS(
      docalc::check_well_formed(ProbExpr::make_sum("Q", term({"Y"}, {}, {}))),
      docalc::FreeVariableMismatch);
  // A factor may not mention a variable another factor has bound.
  ProbExpr clash = ProbExpr::make_product(
      {ProbExpr::make_sum("Z", term({"Y"}, {}, {"Z"})), term({"Z"}, {}, {})});
  CHECK_THROWS_AS(docalc::check_well_formed(clash),
                  docalc::FreeVariableMismatch);
}

TEST_CASE("make_sum_over and singleton product collapse") {
  ProbExpr t = term({"Y"}, {}, {"A", "B"});
  ProbExpr s = ProbExpr::make_sum_over({"A", "B"}, t);
  CHECK(docalc::render_text(s) == "sum_a sum_b P(y|a,b)");
  CHECK(ProbExpr::make_product({t}) == t);
  CHECK(ProbExpr::make_sum_over({}, t) == t);
}

TEST_CASE("canonicalize sorts factors and sum chains and is idempotent") {
  ProbExpr messy = ProbExpr::make_sum(
      "B", ProbExpr::make_sum(
               "A", ProbExpr::make_product(
                        {term({"B"}, {}, {}, Population::Target),
                         ProbExpr::make_product(
                             {term({"A"}, {}, {"B"}, Population::Target),
                              term({"Y"}, {"X"}, {"A", "B"})})})));
  ProbExpr canon = docalc::canonicalize(messy);
  CHECK(docalc::render_text(canon) ==
        "sum_a sum_b P(y|do(x),a,b) P*(a|b) P*(b)");
  CHECK(docalc::canonicalize(canon) == canon);
  CHECK(canon == docalc::canonicalize(docalc::canonicalize(messy)));

  // Source terms sort ahead of starred terms, sums last.
  ProbExpr prod = ProbExpr::make_product(
      {term({"Z"}, {}, {}, Population::Target),
       ProbExpr::make_sum("W", term({"Y"}, {}, {"W"})),
       term({"Z"}, {"X"}, {})});
  CHECK(docalc::render_text(docalc::canonicalize(prod)) ==
        "P(z|do(x)) P*(z) sum_w P(y|w)");
}

TEST_CASE("text rendering") {
  CHECK(docalc::render_text(term({"Y"}, {"X"}, {"Z"})) == "P(y|do(x),z)");
  CHECK(docalc::render_text(term({"Y"}, {}, {}, Population::Target)) ==
        "P*(y)");
  CHECK(docalc::render_text(term({"Y", "W"}, {"A", "X"}, {})) ==
        "P(w,y|do(a,x))");
  CHECK(docalc::render_text(term({"Z"}, {}, {"X"}, Population::Target)) ==
        "P*(z|x)");
  ProbExpr e = ProbExpr::make_sum_over(
      {"Z"}, ProbExpr::make_product(
                 {term({"Y"}, {"X"}, {"Z"}),
                  term({"Z"}, {}, {}, Population::Target)}));
  CHECK(docalc::render_text(e) == "sum_z P(y|do(x),z) P*(z)");
  // A sum factor in non-final position is parenthesized.
  ProbExpr p = ProbExpr::make_product(
      {ProbExpr::make_sum("W", term({"Z"}, {}, {"W"})), term({"W"}, {}, {})});
  CHECK(docalc::render_text(p) == "(sum_w P(z|w)) P(w)");
}

TEST_CASE("latex rendering") {
  CHECK(docalc::render_latex(term({"Y"}, {"X"}, {"Z"})) ==
        "P(y \\mid \\mathrm{do}(x), z)");
  CHECK(docalc::render_latex(term({"Z"}, {}, {"X"}, Population::Target)) ==
        "P^{*}(z \\mid x)");
  ProbExpr e = ProbExpr::make_sum_over(
      {"Z"}, ProbExpr::make_product(
                 {term({"Y"}, {"X"}, {"Z"}),
                  term({"Z"}, {}, {}, Population::Target)}));
  CHECK(docalc::render_latex(e) ==
        "\\sum_{z} P(y \\mid \\mathrm{do}(x), z) \\, P^{*}(z)");
}

TEST_CASE("json round trip") {
  ProbExpr e = ProbExpr::make_sum_over(
      {"Z", "W"},
      ProbExpr::make_product({term({"Y"}, {"X"}, {"Z"}),
                              term({"Z"}, {}, {"W"}, Population::Target),
                              term({"W"}, {"X"}, {})}));
  nlohmann::json j = docalc::render_json(e);
  CHECK(docalc::parse_json(j) == e);
  CHECK(j.at("kind") == "sum");
  CHECK(j.at("var") == "W");

  nlohmann::json t = docalc::render_json(term({"Y"}, {"X"}, {}));
  CHECK(t.at("population") == "source");
  t["population"] = "elsewhere";
  CHECK_THROWS_AS(docalc::parse_json(t), docalc::FreeVariableMismatch);
  CHECK_THROWS_AS(docalc::parse_json(nlohmann::json{{"kind", "ratio"}}),
                  docalc::FreeVariableMismatch);
}

TEST_CASE("rule applicability on small graphs") {
  SelectionDiagram chain = diag("node X Y Z\nedge X -> Z\nedge Z -> Y\n");
  // Rule 1: (Y _||_ Z | X) fails in the chain, holds once Z is isolated.
  CHECK_FALSE(docalc::rule1_applicable(chain, {"Y"}, {"Z"}, {"X"}, {}));
  SelectionDiagram split = diag("node X Y Z\nedge X -> Y\n");
  CHECK(docalc::rule1_applicable(split, {"Y"}, {"Z"}, {"X"}, {}));

  // Rule 2: with only Z -> Y, cutting Z's outgoing edge separates them.
  SelectionDiagram zy = diag("node Z Y\nedge Z -> Y\n");
  CHECK(docalc::rule2_applicable(zy, {"Y"}, {"Z"}, {}, {}));
  SelectionDiagram conf = diag("node Z Y\nedge Z -> Y\nbidir Z <-> Y\n");
  CHECK_FALSE(docalc::rule2_applicable(conf, {"Y"}, {"Z"}, {}, {}));

  // Rule 3: deleting do(Z) needs (Y _||_ Z) once edges into Z are cut.
  CHECK(docalc::rule3_applicable(zy, {"Y"}, {"Z"}, {}, {}) == false);
  SelectionDiagram yz = diag("node Z Y\nedge Y -> Z\n");
  CHECK(docalc::rule3_applicable(yz, {"Y"}, {"Z"}, {}, {}));

  // Selection nodes ride along in the flattened graph.
  SelectionDiagram sel = diag("node X Y\nedge X -> Y\nsel S -> Y\n");
  CHECK_FALSE(docalc::rule1_applicable(sel, {"Y"}, {"S"}, {"X"}, {}));
  SelectionDiagram selx = diag("node X Y\nedge X -> Y\nsel S -> X\n");
  CHECK(docalc::rule1_applicable(selx, {"Y"}, {"S"}, {"X"}, {}));

  CHECK_THROWS_AS(docalc::rule1_applicable(chain, {"Y"}, {"Q"}, {"X"}, {}),
                  graph_core::UnknownNode);
  CHECK_THROWS_AS(docalc::rule1_applicable(chain, {"Y"}, {"Y"}, {"X"}, {}),
                  graph_core::OverlappingSets);
}

TEST_CASE("rule 3 mutilation spares actions that are ancestors of w") {
  SelectionDiagram d = diag("node W X Z\nedge Z -> W\nedge X -> Z\n");
  graph_core::Mutilation keep =
      docalc::rule_mutilation(3, d, {"Z"}, {}, {"W"});
  CHECK(keep.cut_incoming == NodeSet{});
  CHECK(keep.cut_outgoing == NodeSet{});
  graph_core::Mutilation cut = docalc::rule_mutilation(3, d, {"Z"}, {}, {});
  CHECK(cut.cut_incoming == NodeSet{"Z"});
  graph_core::Mutilation both =
      docalc::rule_mutilation(3, d, {"Z"}, {"X"}, {"W"});
  CHECK(both.cut_incoming == NodeSet{"X"});
  CHECK_THROWS_AS(docalc::rule_mutilation(4, d, {}, {}, {}),
                  graph_core::GraphError);
}

TEST_CASE("apply_rule rewrites the sited term and certifies the move") {
  SelectionDiagram split = diag("node X Y Z\nedge X -> Y\n");
  ProbExpr start = term({"Y"}, {"X"}, {"Z"});

  auto [deleted, step] = docalc::apply_rule(split, start, {}, 1,
                                            RuleDirection::Delete, {"Z"});
  CHECK(docalc::render_text(deleted) == "P(y|do(x))");
  CHECK(step.rule == 1);
  CHECK(docalc::direction_name(step.direction) == "delete");
  CHECK(step.certified_query ==
        dsep::SeparationQuery{{"Y"}, {"Z"}, {"X"}});
  CHECK(step.certified_mutilation ==
        graph_core::Mutilation{{"X"}, {}});
  CHECK(step.before == start);
  CHECK(step.after == deleted);

  auto [inserted, istep] = docalc::apply_rule(split, deleted, {}, 1,
                                              RuleDirection::Insert, {"Z"});
  CHECK(inserted == start);
  CHECK(istep.certified_query == step.certified_query);

  // Inside a nested expression only the sited factor changes.
  ProbExpr nested = ProbExpr::make_sum(
      "Z", ProbExpr::make_product(
               {term({"Y"}, {"X"}, {"Z"}), term({"Z"}, {}, {})}));
  auto [rew, rstep] = docalc::apply_rule(split, nested, {0, 0}, 1,
                                         RuleDirection::Delete, {"Z"});
  CHECK(docalc::render_text(rew) == "sum_z P(y|do(x)) P(z)");
  // before/after snapshot the whole expression, not just the sited factor.
  CHECK(rstep.before == nested);
  CHECK(rstep.after == rew);
}

TEST_CASE("apply_rule rejects bad sites directions and failed conditions") {
  SelectionDiagram chain = diag("node X Y Z\nedge X -> Z\nedge Z -> Y\n");
  ProbExpr start = term({"Y"}, {"X"}, {"Z"});
  CHECK_THROWS_AS(docalc::apply_rule(chain, start, {3}, 1,
                                     RuleDirection::Delete, {"Z"}),
                  docalc::BadSite);
  CHECK_THROWS_AS(docalc::apply_rule(chain, start, {}, 1,
                                     RuleDirection::Insert, {"W"}),
                  graph_core::UnknownNode);
  CHECK_THROWS_AS(docalc::apply_rule(chain, start, {}, 1,
                                     RuleDirection::ToAction, {"Z"}),
                  docalc::BadSite);
  CHECK_THROWS_AS(docalc::apply_rule(chain, start, {}, 2,
                                     RuleDirection::Delete, {"Z"}),
                  docalc::BadSite);
  CHECK_THROWS_AS(docalc::apply_rule(chain, term({"Y"}, {"X"}, {}), {}, 1,
                                     RuleDirection::Delete, {"Z"}),
                  docalc::BadSite);

  try {
    docalc::apply_rule(chain, start, {}, 1, RuleDirection::Delete, {"Z"});
    FAIL("rule 1 should not certify deleting z in the chain");
  } catch (const docalc::RuleNotApplicable& e) {
    CHECK(e.failing_query == dsep::SeparationQuery{{"Y"}, {"Z"}, {"X"}});
    CHECK(e.mutilation == graph_core::Mutilation{{"X"}, {}});
  }
}

TEST_CASE("population tag conversions") {
  NodeSet s_all{"S1", "S2"};
  ProbTerm starred{{"Y"}, {"X"}, {"Z"}, Population::Target};
  ProbTerm explicit_form = docalc::to_explicit(starred, s_all);
  CHECK(explicit_form.population == Population::Source);
  CHECK(explicit_form.conds == NodeSet{"S1", "S2", "Z"});
  CHECK(docalc::to_target_tagged(explicit_form, s_all) == starred);
}

TEST_CASE("certified rewrites preserve the evaluated distribution") {
  SelectionDiagram split = diag("node X Y Z\nedge X -> Y\nedge X -> Z\n");
  scm_oracle::ScmPair pair = scm_oracle::sample_pair(split, 7);

  // Rule 1: P(y | do(x), z) = P(y | do(x)) when (Y _||_ Z | X) in the cut.
  REQUIRE(docalc::rule1_applicable(split, {"Y"}, {"Z"}, {"X"}, {}));
  auto wide = scm_oracle::eval_expr(pair, term({"Y"}, {"X"}, {"Z"}));
  auto narrow = scm_oracle::eval_expr(pair, term({"Y"}, {"X"}, {}));
  CHECK(max_projected_gap(wide, narrow) < 1e-12);

  // Rule 2: P(y | do(z)) = P(y | z) in the unconfounded single edge.
  SelectionDiagram zy = diag("node Z Y\nedge Z -> Y\n");
  scm_oracle::ScmPair zy_pair = scm_oracle::sample_pair(zy, 11);
  REQUIRE(docalc::rule2_applicable(zy, {"Y"}, {"Z"}, {}, {}));
  auto acted = scm_oracle::eval_expr(zy_pair, term({"Y"}, {"Z"}, {}));
  auto observed = scm_oracle::eval_expr(zy_pair, term({"Y"}, {}, {"Z"}));
  CHECK(max_projected_gap(acted, observed) < 1e-12);

  // Rule 3: P(y | do(z)) = P(y) when Z has no open channel into Y.
  SelectionDiagram yz = diag("node Z Y\nedge Y -> Z\n");
  scm_oracle::ScmPair yz_pair = scm_oracle::sample_pair(yz, 13);
  REQUIRE(docalc::rule3_applicable(yz, {"Y"}, {"Z"}, {}, {}));
  auto dropped = scm_oracle::eval_expr(yz_pair, term({"Y"}, {"Z"}, {}));
  auto plain = scm_oracle::eval_expr(yz_pair, term({"Y"}, {}, {}));
  CHECK(max_projected_gap(dropped, plain) < 1e-12);
}
