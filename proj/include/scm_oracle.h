#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "docalc.h"
#include "graph_core.h"

// Brute-force ground truth for small discrete structural causal models.
// Joint and interventional distributions are computed by exact enumeration
// over exogenous assignments, so every probability is correct up to floating
// point rounding.

namespace scm_oracle {

struct BadValue : graph_core::GraphError {
  using GraphError::GraphError;
};
struct DomainOverflow : graph_core::GraphError {
  using GraphError::GraphError;
};
struct UnresolvableTerm : graph_core::GraphError {
  using GraphError::GraphError;
};
struct DivisionUndefined : graph_core::GraphError {
  using GraphError::GraphError;
};

// Independent exogenous variable with an explicit distribution over
// {0, ..., probs.size()-1}.
struct ExoVar {
  std::string name;
  std::vector<double> probs;
};

// Deterministic mechanism for one endogenous variable. The table is indexed
// in mixed radix over (endo_inputs, exo_inputs) with the LAST input varying
// fastest.
struct Mechanism {
  std::vector<std::string> endo_inputs;
  std::vector<std::string> exo_inputs;
  std::vector<int> table;
};

// variables holds (name, domain size) sorted by name. Every endogenous
// variable has exactly one mechanism.
struct DiscreteScm {
  std::vector<std::pair<std::string, int>> variables;
  std::vector<ExoVar> exogenous;
  std::map<std::string, Mechanism> mechanisms;

  int domain_of(const std::string& name) const;
};

// Two models over the observed nodes of one selection diagram. Shared
// structure, mechanisms redrawn for selection-pointed variables.
struct ScmPair {
  DiscreteScm source;
  DiscreteScm target;
  graph_core::SelectionDiagram diagram;
};

// Dense table over vars (sorted by name); the last variable varies fastest.
struct Dist {
  std::vector<std::pair<std::string, int>> vars;
  std::vector<double> p;

  std::size_t states() const;
  std::size_t index_of(const std::vector<int>& assignment) const;
};

using ValueTable = Dist;

// Exact observational joint over all endogenous variables.
Dist joint(const DiscreteScm& scm);

// Exact joint under do(assignment): intervened mechanisms are replaced by
// constants. Throws UnknownNode for names outside the model and BadValue for
// out-of-range values.
Dist interventional(const DiscreteScm& scm,
                    const std::map<std::string, int>& assignment);

// Marginal of dist onto keep (a subset of its variables), summing the rest.
Dist marginal(const Dist& dist, const graph_core::NodeSet& keep);

// Evaluates a probability expression against the pair, returning a table
// over the expression's free variables. Source terms read scm.source, target
// terms read scm.target; terms with a do() set are interventional queries.
// Target-population terms with a nonempty do() set throw UnresolvableTerm,
// as do terms naming a selection node. Conditional terms whose conditioning
// event has probability below 1e-300 throw DivisionUndefined.
ValueTable eval_expr(const ScmPair& pair, const docalc::ProbExpr& expr);

// Ground truth P*(effect | do(x), strata) for the pair's target model, as a
// table over sorted(effect ∪ do ∪ strata).
Dist direct_effect(const ScmPair& pair, const graph_core::NodeSet& effect,
                   const graph_core::NodeSet& do_set,
                   const graph_core::NodeSet& strata);

// Largest pointwise |eval_expr(formula) − direct_effect| over the effect
// grid. The formula's free variables must lie inside effect ∪ do ∪ strata.
double max_formula_deviation(const ScmPair& pair,
                             const docalc::ProbExpr& formula,
                             const graph_core::NodeSet& effect,
                             const graph_core::NodeSet& do_set,
                             const graph_core::NodeSet& strata);

struct SampleConfig {
  int domain_size = 2;
  int noise_domain = 4;
  int latent_domain = 2;
  double positivity_floor = 0.05;
  std::size_t max_states = std::size_t{1} << 20;
};

// Deterministically samples a source/target model pair consistent with the
// diagram: bidirected edges become shared latent exogenous parents, selection
// nodes mark which mechanisms and noises differ across populations. Noise
// tables are built so every endogenous value stays reachable, which with a
// positive floor keeps all joints strictly positive.
ScmPair sample_pair(const graph_core::SelectionDiagram& d, std::uint64_t seed,
                    const SampleConfig& cfg = {});

// Loads a single model from JSON: {"variables": {name: domain},
// "exogenous": [{"name", "probs"}], "mechanisms": [{"variable", "inputs",
// "exo_inputs", "table"}]}.
DiscreteScm load_scm_json(const std::string& path);

}  // namespace scm_oracle
