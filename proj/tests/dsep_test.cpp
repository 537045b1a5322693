#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "dsep.h"
#include "dsep_enum_oracle.h"
#include "graph_core.h"

using dsep::LinkKind;
using dsep::SeparationQuery;
using graph_core::CausalDiagram;
using graph_core::Mutilation;
using graph_core::NodeSet;

namespace {

CausalDiagram base(const std::string& text) {
  return graph_core::parse_diagram_text(text).diagram.base;
}

dsep_oracle::Trail to_trail(const dsep::Path& p) {
  dsep_oracle::Trail t;
  t.nodes = p.nodes;
  for (LinkKind l : p.links) {
    t.links.push_back(l == LinkKind::Forward    ? dsep_oracle::Link::Forward
                      : l == LinkKind::Backward ? dsep_oracle::Link::Backward
                                                : dsep_oracle::Link::Bidir);
  }
  return t;
}

// Witness must exist exactly when connected, and must check out as an active
// walk of the graph.
void check_consistent(const CausalDiagram& g, const SeparationQuery& q) {
  bool sep = dsep::d_separated(g, q);
  auto wit = dsep::witness_path(g, q);
  CHECK(sep == !wit.has_value());
  if (wit) {
    CAPTURE(dsep::render_path(*wit));
    CHECK(dsep_oracle::valid_witness(g, q, to_trail(*wit)));
  }
}

}  // namespace

TEST_CASE("chains forks and colliders") {
  CausalDiagram chain = base("node X Y Z\nedge X -> Z\nedge Z -> Y\n");
  CHECK_FALSE(dsep::d_separated(chain, {{"X"}, {"Y"}, {}}));
  CHECK(dsep::d_separated(chain, {{"X"}, {"Y"}, {"Z"}}));

  CausalDiagram fork = base("node X Y Z\nedge Z -> X\nedge Z -> Y\n");
  CHECK_FALSE(dsep::d_separated(fork, {{"X"}, {"Y"}, {}}));
  CHECK(dsep::d_separated(fork, {{"X"}, {"Y"}, {"Z"}}));

  CausalDiagram coll =
      base("node X Y Z W\nedge X -> Z\nedge Y -> Z\nedge Z -> W\n");
  CHECK(dsep::d_separated(coll, {{"X"}, {"Y"}, {}}));
  CHECK_FALSE(dsep::d_separated(coll, {{"X"}, {"Y"}, {"Z"}}));
  CHECK_FALSE(dsep::d_separated(coll, {{"X"}, {"Y"}, {"W"}}));
}

TEST_CASE("bidirected edges carry arrowheads at both ends") {
  CausalDiagram g = base("node X Y Z\nbidir X <-> Z\nbidir Z <-> Y\n");
  CHECK(dsep::d_separated(g, {{"X"}, {"Y"}, {}}));
  CHECK_FALSE(dsep::d_separated(g, {{"X"}, {"Y"}, {"Z"}}));
  CHECK_FALSE(dsep::d_separated(g, {{"X"}, {"Z"}, {}}));
}

TEST_CASE("set queries and empty sides") {
  CausalDiagram g = base("node A B C D\nedge A -> B\nedge C -> D\n");
  CHECK(dsep::d_separated(g, {{"A", "B"}, {"C", "D"}, {}}));
  CHECK_FALSE(dsep::d_separated(g, {{"A", "C"}, {"B"}, {}}));
  CHECK(dsep::d_separated(g, {{}, {"A"}, {}}));
  CHECK(dsep::d_separated(g, {{"A"}, {}, {}}));
  CHECK(dsep::d_separated(g, {{}, {}, {"A"}}));
  CHECK_FALSE(dsep::witness_path(g, {{}, {"A"}, {}}).has_value());
}

TEST_CASE("query validation") {
  CausalDiagram g = base("node A B\nedge A -> B\n");
  CHECK_THROWS_AS(dsep::d_separated(g, {{"A"}, {"Q"}, {}}),
                  graph_core::UnknownNode);
  CHECK_THROWS_AS(dsep::d_separated(g, {{"A"}, {"A"}, {}}),
                  graph_core::OverlappingSets);
  CHECK_THROWS_AS(dsep::d_separated(g, {{"A"}, {"B"}, {"A"}}),
                  graph_core::OverlappingSets);
}

TEST_CASE("conditioning on a collider ancestor of z opens the trail") {
  CausalDiagram g = base(
      "node X Y C D\n"
      "edge X -> C\n"
      "edge Y -> C\n"
      "edge C -> D\n");
  CHECK(dsep::d_separated(g, {{"X"}, {"Y"}, {}}));
  CHECK_FALSE(dsep::d_separated(g, {{"X"}, {"Y"}, {"D"}}));
  auto wit = dsep::witness_path(g, {{"X"}, {"Y"}, {"D"}});
  REQUIRE(wit.has_value());
  CHECK(dsep_oracle::valid_witness(g, {{"X"}, {"Y"}, {"D"}}, to_trail(*wit)));
}

TEST_CASE("witness under an incoming cut keeps only the surviving trails") {
  // Z -> X, Z -> Y, X -> Y, Z <-> Y with root S -> Z; cutting into X leaves
  // exactly one active trail from S to Y for each conditioning choice below.
  graph_core::SelectionDiagram d =
      graph_core::parse_diagram_text(
          "node X Y Z\n"
          "edge Z -> X\n"
          "edge Z -> Y\n"
          "edge X -> Y\n"
          "bidir Z <-> Y\n"
          "sel S -> Z\n")
          .diagram;
  CausalDiagram cut =
      graph_core::mutilate(graph_core::flatten(d), Mutilation{{"X"}, {}});

  SeparationQuery q1{{"S"}, {"Y"}, {"X"}};
  CHECK_FALSE(dsep::d_separated(cut, q1));
  auto w1 = dsep::witness_path(cut, q1);
  REQUIRE(w1.has_value());
  CHECK(w1->nodes == std::vector<std::string>{"S", "Z", "Y"});
  CHECK(w1->links == std::vector<LinkKind>{LinkKind::Forward,
                                           LinkKind::Forward});
  CHECK(dsep_oracle::valid_witness(cut, q1, to_trail(*w1)));

  SeparationQuery q2{{"S"}, {"Y"}, {"X", "Z"}};
  CHECK_FALSE(dsep::d_separated(cut, q2));
  auto w2 = dsep::witness_path(cut, q2);
  REQUIRE(w2.has_value());
  CHECK(w2->nodes == std::vector<std::string>{"S", "Z", "Y"});
  CHECK(w2->links == std::vector<LinkKind>{LinkKind::Forward,
                                           LinkKind::Bidirected});
  CHECK(dsep_oracle::valid_witness(cut, q2, to_trail(*w2)));
  CHECK(dsep::render_path(*w2) == "S -> Z <-> Y");
}

TEST_CASE("reachability agrees with trail enumeration on random graphs") {
  std::mt19937_64 rng(20260821);
  auto coin = [&](double p) {
    return static_cast<double>(rng() >> 11) * 0x1p-53 < p;
  };
  for (int round = 0; round < 80; round++) {
    int n = 3 + static_cast<int>(rng() % 4);
    std::vector<std::string> names;
    CausalDiagram g;
    for (int i = 0; i < n; i++) {
      names.emplace_back(1, static_cast<char>('A' + i));
      g.nodes.insert(names.back());
    }
    for (int i = 0; i < n; i++) {
      for (int j = i + 1; j < n; j++) {
        if (coin(0.35)) {
          g.directed_edges.emplace(names[i], names[j]);
        } else if (coin(0.2)) {
          g.bidirected_edges.emplace(names[i], names[j]);
        }
      }
    }
    for (int trial = 0; trial < 8; trial++) {
      std::size_t a = rng() % names.size();
      std::size_t b = rng() % names.size();
      if (a == b) continue;
      SeparationQuery q;
      q.x = {names[a]};
      q.y = {names[b]};
      for (const auto& m : names) {
        if (m != names[a] && m != names[b] && coin(0.3)) q.z.insert(m);
      }
      CAPTURE(round);
      CAPTURE(trial);
      bool reach = dsep::d_separated(g, q);
      bool enumerated = dsep_oracle::separated(g, q);
      CHECK(reach == enumerated);
      check_consistent(g, q);
    }
  }
}
