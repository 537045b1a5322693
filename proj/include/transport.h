#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "docalc.h"
#include "dsep.h"
#include "graph_core.h"
#include "json.hpp"

// Decides whether a target-population causal effect can be expressed from
// source experiments plus target observations, and synthesizes the formula
// together with a replayable certificate trace.

namespace transport {

// Target-population query P*(effect | do(interventions), strata).
struct Query {
  graph_core::NodeSet effect;
  graph_core::NodeSet interventions;
  graph_core::NodeSet strata;

  bool operator==(const Query&) const = default;
};

enum class CandidatePool { Pretreatment, AnyObserved };

struct Options {
  // Cap on candidate covariate-set size; unlimited by default.
  std::size_t max_set_size = static_cast<std::size_t>(-1);
  // Keep searching past the first derivation and pick the formula with the
  // fewest source interventional factors.
  bool prefer_observational = false;
};

// Per-selection-node certificate inside an elimination step. A node pointing
// only into the intervention set needs no separation witness.
struct NodeCert {
  std::string node;
  bool only_into_do = false;
  std::optional<dsep::SeparationQuery> separation;
  std::optional<graph_core::Mutilation> mutilation;
};

struct DerivationStep {
  // One of: ignore_selection, source_effect, condition_1, condition_2,
  // condition_3, strata, rule, backdoor.
  std::string kind;
  graph_core::NodeSet effect;
  graph_core::NodeSet do_set;
  graph_core::NodeSet chosen;
  graph_core::NodeSet dropped;
  std::vector<NodeCert> certs;
  std::optional<dsep::SeparationQuery> separation;
  std::optional<graph_core::Mutilation> mutilation;
  std::optional<dsep::SeparationQuery> separation_s;
  std::optional<graph_core::Mutilation> mutilation_s;
  std::string graph;  // "selection" or "target"
  int rule = 0;
  std::optional<docalc::RuleDirection> direction;
  std::optional<docalc::ProbExpr> before;
  std::optional<docalc::ProbExpr> after;
  std::vector<DerivationStep> substeps;
};

struct Derivation {
  Query query;
  bool transportable = false;
  std::optional<docalc::ProbExpr> formula;
  std::vector<DerivationStep> steps;
  std::string reason;
};

// Throws UnknownNode / BadSelectionNode / OverlappingSets / GraphError when
// the query does not fit the diagram's observed nodes.
void validate_query(const graph_core::SelectionDiagram& d, const Query& q);

// (S_all ⊥ effect | t ∪ x) in the diagram with incoming edges of x cut.
bool s_admissible(const graph_core::SelectionDiagram& d,
                  const graph_core::NodeSet& t, const graph_core::NodeSet& x,
                  const graph_core::NodeSet& y);

// Smallest admissible covariate set in (size, lexicographic) order, if any.
std::optional<graph_core::NodeSet> find_s_admissible(
    const graph_core::SelectionDiagram& d, const graph_core::NodeSet& x,
    const graph_core::NodeSet& y,
    std::size_t max_size = static_cast<std::size_t>(-1),
    CandidatePool pool = CandidatePool::Pretreatment);

// The source relation P(effect | do(x), strata) carries over verbatim.
bool directly_transportable(const graph_core::SelectionDiagram& d,
                            const Query& q);

struct TrivialResult {
  docalc::ProbExpr formula;
  std::vector<DerivationStep> steps;
};

// Identification of P*(y|do(x)) from target observations alone, on the
// shared causal graph: whole-set action deletion, whole-set exchange, or
// back-door adjustment over pretreatment sets, in that order.
std::optional<TrivialResult> trivially_transportable(
    const graph_core::CausalDiagram& target_graph,
    const graph_core::NodeSet& x, const graph_core::NodeSet& y,
    std::size_t max_set_size = static_cast<std::size_t>(-1));

// Selection nodes that point only into x or are d-separated from y given x
// in the incoming-cut diagram; they cannot affect the queried effect.
graph_core::NodeSet ignorable_selection_nodes(
    const graph_core::SelectionDiagram& d, const graph_core::NodeSet& x,
    const graph_core::NodeSet& y);

// Stratum-specific effect: the source term carries over iff the strata form
// an admissible set.
Derivation transport_strata(const graph_core::SelectionDiagram& d,
                            const Query& q);

// Average effect: eliminates ignorable selection nodes, then recursively
// applies the three derivation conditions, first success per goal.
Derivation transport_effect(const graph_core::SelectionDiagram& d,
                            const Query& q, const Options& opts = {});

nlohmann::json derivation_json(const Derivation& der);

// Audits a recorded trace against the diagram: recomputes every expected
// certificate from the step's stated sets and re-checks the separations.
// Returns an error description, or nullopt when the trace replays cleanly.
std::optional<std::string> replay_error(const nlohmann::json& trace,
                                        const graph_core::SelectionDiagram& d);

}  // namespace transport
