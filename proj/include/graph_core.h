#pragma once

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace graph_core {

using NodeSet = std::set<std::string>;
using Edge = std::pair<std::string, std::string>;
using EdgeSet = std::set<Edge>;

struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CycleError : GraphError {
  using GraphError::GraphError;
};
struct DanglingEdge : GraphError {
  using GraphError::GraphError;
};
struct BadSelectionNode : GraphError {
  using GraphError::GraphError;
};
struct UnknownNode : GraphError {
  using GraphError::GraphError;
};
struct OverlappingSets : GraphError {
  using GraphError::GraphError;
};
struct ParseError : GraphError {
  ParseError(int line_no, int column_no, const std::string& what_arg);
  int line;
  int column;
};

// Directed acyclic graph over observed nodes; a bidirected edge stands for a
// shared latent cause of its two endpoints and is stored with first < second.
struct CausalDiagram {
  NodeSet nodes;
  EdgeSet directed_edges;
  EdgeSet bidirected_edges;
};

// Causal diagram plus selection nodes. Selection nodes are roots: they carry
// no incoming edges and no bidirected incidences, and each points to at least
// one observed node.
struct SelectionDiagram {
  CausalDiagram base;
  NodeSet selection_nodes;
  EdgeSet selection_edges;
};

// cut_incoming removes directed edges into the set and bidirected edges
// incident to it (a bidirected edge carries an arrowhead at both endpoints);
// cut_outgoing removes directed edges out of the set only.
struct Mutilation {
  NodeSet cut_incoming;
  NodeSet cut_outgoing;

  bool operator==(const Mutilation& other) const = default;
};

NodeSet set_union_of(const NodeSet& a, const NodeSet& b);
NodeSet set_minus(const NodeSet& a, const NodeSet& b);
NodeSet set_intersect(const NodeSet& a, const NodeSet& b);
bool disjoint(const NodeSet& a, const NodeSet& b);
bool subset_of(const NodeSet& a, const NodeSet& b);

void validate(const SelectionDiagram& diagram);

CausalDiagram mutilate(const CausalDiagram& graph, const Mutilation& m);

// Reflexive-transitive closure over reversed directed edges; bidirected edges
// contribute no ancestry.
NodeSet ancestors(const CausalDiagram& graph, const NodeSet& nodes);
NodeSet descendants(const CausalDiagram& graph, const NodeSet& nodes);

// Z(W): the Z-nodes that are not ancestors of any W-node once incoming edges
// into X are cut.
NodeSet z_outside_ancestors_of_w(const CausalDiagram& graph, const NodeSet& z,
                                 const NodeSet& w, const NodeSet& x);

// Selection nodes folded in as ordinary root nodes with directed edges.
CausalDiagram flatten(const SelectionDiagram& diagram);

SelectionDiagram drop_selection_nodes(const SelectionDiagram& diagram,
                                      const NodeSet& drop);

struct QueryLine {
  NodeSet effect;
  NodeSet interventions;
  NodeSet strata;
};

struct ParsedDiagram {
  SelectionDiagram diagram;
  std::optional<QueryLine> query;
};

// Text format, one declaration per line, '#' starts a comment:
//   node <name> [<name>...]
//   edge <a> -> <b>
//   bidir <a> <-> <b>
//   sel <S-name> -> <b>
//   query effect <set> do <set> [strata <set>]
ParsedDiagram parse_diagram_text(const std::string& text);
ParsedDiagram load_diagram_file(const std::string& path);

}  // namespace graph_core
