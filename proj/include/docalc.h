#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dsep.h"
#include "graph_core.h"
#include "json.hpp"

namespace docalc {

enum class Population { Source, Target };

// A primitive probability term P(targets | do(do_set), conds). A Target
// population tag means the term is implicitly conditioned on S = s* and is
// rendered starred.
struct ProbTerm {
  graph_core::NodeSet targets;
  graph_core::NodeSet do_set;
  graph_core::NodeSet conds;
  Population population = Population::Source;

  bool operator==(const ProbTerm& other) const = default;
};

// Expression tree: Term | Product(factors) | SumOver(variable, body).
struct ProbExpr {
  enum class Kind { Term, Product, Sum };

  Kind kind = Kind::Term;
  ProbTerm term;                   // Kind::Term
  std::vector<ProbExpr> children;  // Product factors; Sum holds one body
  std::string sum_var;             // Kind::Sum

  static ProbExpr make_term(ProbTerm t);
  static ProbExpr make_term(graph_core::NodeSet targets,
                            graph_core::NodeSet do_set,
                            graph_core::NodeSet conds, Population population);
  static ProbExpr make_product(std::vector<ProbExpr> factors);
  static ProbExpr make_sum(const std::string& var, ProbExpr body);
  static ProbExpr make_sum_over(const graph_core::NodeSet& vars,
                                ProbExpr body);

  bool operator==(const ProbExpr& other) const;
};

struct FreeVariableMismatch : graph_core::GraphError {
  using GraphError::GraphError;
};
struct BadSite : graph_core::GraphError {
  using GraphError::GraphError;
};
struct RuleNotApplicable : graph_core::GraphError {
  RuleNotApplicable(const std::string& what_arg, dsep::SeparationQuery query,
                    graph_core::Mutilation mut)
      : GraphError(what_arg),
        failing_query(std::move(query)),
        mutilation(std::move(mut)) {}
  dsep::SeparationQuery failing_query;
  graph_core::Mutilation mutilation;
};

graph_core::NodeSet free_vars(const ProbExpr& expr);
graph_core::NodeSet bound_vars(const ProbExpr& expr);

// Enforces: every SumOver variable appears free in its body; no variable is
// both bound in one product factor and mentioned in a sibling factor; term
// sets are disjoint and targets nonempty.
void check_well_formed(const ProbExpr& expr);

// Deterministic normal form: products flattened and factor-sorted, adjacent
// sums ordered by variable name. Idempotent; value-preserving.
ProbExpr canonicalize(const ProbExpr& expr);

std::string render_text(const ProbExpr& expr);
std::string render_latex(const ProbExpr& expr);
nlohmann::json render_json(const ProbExpr& expr);
ProbExpr parse_json(const nlohmann::json& j);

// Rule 1, insertion/deletion of observations:
//   (Y _||_ Z | X, W) in the diagram with incoming edges into X cut.
bool rule1_applicable(const graph_core::SelectionDiagram& d,
                      const graph_core::NodeSet& y,
                      const graph_core::NodeSet& z,
                      const graph_core::NodeSet& x,
                      const graph_core::NodeSet& w);

// Rule 2, action/observation exchange:
//   (Y _||_ Z | X, W) with incoming edges into X and outgoing edges of Z cut.
bool rule2_applicable(const graph_core::SelectionDiagram& d,
                      const graph_core::NodeSet& y,
                      const graph_core::NodeSet& z,
                      const graph_core::NodeSet& x,
                      const graph_core::NodeSet& w);

// Rule 3, insertion/deletion of actions:
//   (Y _||_ Z | X, W) with incoming edges into X and into Z(W) cut, where
//   Z(W) is the set of Z-nodes that are not ancestors of any W-node once
//   incoming edges into X are cut.
bool rule3_applicable(const graph_core::SelectionDiagram& d,
                      const graph_core::NodeSet& y,
                      const graph_core::NodeSet& z,
                      const graph_core::NodeSet& x,
                      const graph_core::NodeSet& w);

// Mutilation each rule certifies its separation under.
graph_core::Mutilation rule_mutilation(int rule,
                                       const graph_core::SelectionDiagram& d,
                                       const graph_core::NodeSet& z,
                                       const graph_core::NodeSet& x,
                                       const graph_core::NodeSet& w);

enum class RuleDirection { Insert, Delete, ToObservation, ToAction };

std::string direction_name(RuleDirection direction);

struct RuleStep {
  int rule = 0;
  RuleDirection direction = RuleDirection::Delete;
  dsep::SeparationQuery certified_query;
  graph_core::Mutilation certified_mutilation;
  ProbExpr before;
  ProbExpr after;
};

// Child-index path from the root to a Term node.
using Site = std::vector<std::size_t>;

// Rewrites the term at `site` by the given rule over the moved set z,
// certifying applicability first. Rewriting is local to the site.
std::pair<ProbExpr, RuleStep> apply_rule(const graph_core::SelectionDiagram& d,
                                         const ProbExpr& expr,
                                         const Site& site, int rule,
                                         RuleDirection direction,
                                         const graph_core::NodeSet& z);

// A Target-tagged term equals the Source term conditioned on every selection
// node; these convert between the two readings.
ProbTerm to_explicit(const ProbTerm& term, const graph_core::NodeSet& s_all);
ProbTerm to_target_tagged(const ProbTerm& term,
                          const graph_core::NodeSet& s_all);

}  // namespace docalc
