#include <string>

#include "doctest.h"
#include "graph_core.h"

using graph_core::CausalDiagram;
using graph_core::Mutilation;
using graph_core::NodeSet;
using graph_core::ParsedDiagram;
using graph_core::SelectionDiagram;

namespace {

SelectionDiagram diag(const std::string& text) {
  return graph_core::parse_diagram_text(text).diagram;
}

}  // namespace

TEST_CASE("set helpers") {
  NodeSet a{"A", "B", "C"};
  NodeSet b{"B", "D"};
  CHECK(graph_core::set_union_of(a, b) == NodeSet{"A", "B", "C", "D"});
  CHECK(graph_core::set_minus(a, b) == NodeSet{"A", "C"});
  CHECK(graph_core::set_intersect(a, b) == NodeSet{"B"});
  CHECK_FALSE(graph_core::disjoint(a, b));
  CHECK(graph_core::disjoint(NodeSet{"A"}, NodeSet{"D"}));
  CHECK(graph_core::subset_of(NodeSet{"B"}, a));
  CHECK(graph_core::subset_of(NodeSet{}, NodeSet{}));
  CHECK_FALSE(graph_core::subset_of(b, a));
}

TEST_CASE("parser accepts the documented grammar") {
  ParsedDiagram pd = graph_core::parse_diagram_text(
      "# demo\n"
      "node X Y Z\n"
      "edge X -> Y   # trailing comment\n"
      "bidir Y <-> X\n"
      "sel S -> Z\n"
      "\n"
      "query effect Y do X strata Z\n");
  const SelectionDiagram& d = pd.diagram;
  CHECK(d.base.nodes == NodeSet{"X", "Y", "Z"});
  CHECK(d.base.directed_edges == graph_core::EdgeSet{{"X", "Y"}});
  CHECK(d.base.bidirected_edges == graph_core::EdgeSet{{"X", "Y"}});
  CHECK(d.selection_nodes == NodeSet{"S"});
  CHECK(d.selection_edges == graph_core::EdgeSet{{"S", "Z"}});
  REQUIRE(pd.query.has_value());
  CHECK(pd.query->effect == NodeSet{"Y"});
  CHECK(pd.query->interventions == NodeSet{"X"});
  CHECK(pd.query->strata == NodeSet{"Z"});
}

TEST_CASE("parser splits comma lists and allows primed names") {
  ParsedDiagram pd = graph_core::parse_diagram_text(
      "node X Y W'\n"
      "edge W' -> Y\n"
      "query effect Y,W' do X\n");
  CHECK(pd.query->effect == NodeSet{"W'", "Y"});
  CHECK(pd.query->strata.empty());
}

TEST_CASE("parser reports position and kind of each error") {
  auto expect_parse_error = [](const std::string& text, int line, int column) {
    try {
      graph_core::parse_diagram_text(text);
      FAIL("expected ParseError for: " << text);
    } catch (const graph_core::ParseError& e) {
      CHECK(e.line == line);
      CHECK(e.column == column);
    }
  };
  expect_parse_error("node X\nfoo X\n", 2, 1);
  expect_parse_error("node X Y\nedge X => Y\n", 2, 8);
  expect_parse_error("node X Y\nbidir X <-> X\n", 2, 7);
  expect_parse_error("node X Y\nedge X -> Y extra\n", 2, 1);
  expect_parse_error("node X 1bad\n", 1, 8);
  expect_parse_error("node X Y\nquery effect Y\n", 2, 1);
  expect_parse_error("node X Y\nquery effect Y do\n", 2, 16);
  expect_parse_error(
      "node X Y\nquery effect Y do X\nquery effect X do Y\n", 3, 1);
  CHECK_THROWS_AS(graph_core::load_diagram_file("/nonexistent/q.diag"),
                  graph_core::ParseError);
}

TEST_CASE("validate rejects malformed diagrams") {
  CHECK_THROWS_AS(diag("node X Y\nedge X -> Y\nedge Y -> X\n"),
                  graph_core::CycleError);
  CHECK_THROWS_AS(diag("node X\nedge X -> Y\n"), graph_core::DanglingEdge);
  CHECK_THROWS_AS(diag("node X\nbidir X <-> Y\n"), graph_core::DanglingEdge);
  CHECK_THROWS_AS(diag("node X Y\nsel S -> Q\n"), graph_core::DanglingEdge);
  CHECK_THROWS_AS(diag("node X S\nsel S -> X\n"),
                  graph_core::BadSelectionNode);
  CHECK_THROWS_AS(diag("node X\nsel S -> X\nsel T -> S\n"),
                  graph_core::BadSelectionNode);
}

TEST_CASE("validate flags selection nodes in ordinary edges before dangling") {
  SelectionDiagram d;
  d.base.nodes = {"W", "Z"};
  d.base.directed_edges = {{"W", "S"}};
  d.selection_nodes = {"S"};
  d.selection_edges = {{"S", "Z"}};
  CHECK_THROWS_AS(graph_core::validate(d), graph_core::BadSelectionNode);

  SelectionDiagram b;
  b.base.nodes = {"W", "Z"};
  b.base.bidirected_edges = {{"S", "W"}};
  b.selection_nodes = {"S"};
  b.selection_edges = {{"S", "Z"}};
  CHECK_THROWS_AS(graph_core::validate(b), graph_core::BadSelectionNode);
}

TEST_CASE("validate requires canonical bidirected order and outgoing sel") {
  SelectionDiagram d;
  d.base.nodes = {"A", "B"};
  d.base.bidirected_edges = {{"B", "A"}};
  CHECK_THROWS_AS(graph_core::validate(d), graph_core::DanglingEdge);

  SelectionDiagram s;
  s.base.nodes = {"A"};
  s.selection_nodes = {"S"};
  CHECK_THROWS_AS(graph_core::validate(s), graph_core::BadSelectionNode);
}

TEST_CASE("mutilate cuts incoming arrowheads including bidirected ones") {
  SelectionDiagram d = diag(
      "node W X Y Z\n"
      "edge W -> X\n"
      "edge X -> Y\n"
      "edge Z -> Y\n"
      "bidir X <-> Z\n"
      "bidir Y <-> Z\n");
  CausalDiagram cut = graph_core::mutilate(d.base, Mutilation{{"X"}, {}});
  CHECK(cut.directed_edges == graph_core::EdgeSet{{"X", "Y"}, {"Z", "Y"}});
  CHECK(cut.bidirected_edges == graph_core::EdgeSet{{"Y", "Z"}});
  CHECK(cut.nodes == d.base.nodes);

  CausalDiagram out = graph_core::mutilate(d.base, Mutilation{{}, {"X"}});
  CHECK(out.directed_edges == graph_core::EdgeSet{{"W", "X"}, {"Z", "Y"}});
  CHECK(out.bidirected_edges == d.base.bidirected_edges);

  CHECK_THROWS_AS(graph_core::mutilate(d.base, Mutilation{{"Q"}, {}}),
                  graph_core::UnknownNode);
}

TEST_CASE("ancestors and descendants are reflexive closures") {
  SelectionDiagram d = diag(
      "node A B C D E\n"
      "edge A -> B\n"
      "edge B -> C\n"
      "edge D -> C\n"
      "bidir A <-> E\n");
  CHECK(graph_core::ancestors(d.base, {"C"}) == NodeSet{"A", "B", "C", "D"});
  CHECK(graph_core::ancestors(d.base, {"A"}) == NodeSet{"A"});
  CHECK(graph_core::descendants(d.base, {"A"}) == NodeSet{"A", "B", "C"});
  CHECK(graph_core::descendants(d.base, {"E"}) == NodeSet{"E"});
  CHECK(graph_core::ancestors(d.base, {}).empty());
  CHECK_THROWS_AS(graph_core::ancestors(d.base, {"Q"}),
                  graph_core::UnknownNode);
}

TEST_CASE("z_outside_ancestors_of_w respects the incoming cut") {
  SelectionDiagram d = diag(
      "node W X Z\n"
      "edge Z -> X\n"
      "edge X -> W\n");
  CHECK(graph_core::z_outside_ancestors_of_w(d.base, {"Z"}, {"W"}, {}) ==
        NodeSet{});
  CHECK(graph_core::z_outside_ancestors_of_w(d.base, {"Z"}, {"W"}, {"X"}) ==
        NodeSet{"Z"});
  CHECK(graph_core::z_outside_ancestors_of_w(d.base, {"Z"}, {}, {}) ==
        NodeSet{"Z"});
}

TEST_CASE("flatten folds selection nodes in as directed roots") {
  SelectionDiagram d = diag(
      "node X Y\n"
      "edge X -> Y\n"
      "sel S -> X\n");
  CausalDiagram flat = graph_core::flatten(d);
  CHECK(flat.nodes == NodeSet{"S", "X", "Y"});
  CHECK(flat.directed_edges == graph_core::EdgeSet{{"S", "X"}, {"X", "Y"}});
  CHECK(flat.bidirected_edges.empty());
}

TEST_CASE("drop_selection_nodes removes nodes with their edges") {
  SelectionDiagram d = diag(
      "node X Y Z\n"
      "edge X -> Y\n"
      "sel S1 -> X\n"
      "sel S2 -> Z\n");
  SelectionDiagram kept = graph_core::drop_selection_nodes(d, {"S1"});
  CHECK(kept.selection_nodes == NodeSet{"S2"});
  CHECK(kept.selection_edges == graph_core::EdgeSet{{"S2", "Z"}});
  CHECK(kept.base.nodes == d.base.nodes);
  CHECK_THROWS_AS(graph_core::drop_selection_nodes(d, {"X"}),
                  graph_core::UnknownNode);
}
