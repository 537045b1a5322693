#include "docalc.h"

#include <algorithm>
#include <cctype>

namespace docalc {

using graph_core::CausalDiagram;
using graph_core::Mutilation;
using graph_core::NodeSet;
using graph_core::SelectionDiagram;

ProbExpr ProbExpr::make_term(ProbTerm t) {
  ProbExpr e;
  e.kind = Kind::Term;
  e.term = std::move(t);
  return e;
}

ProbExpr ProbExpr::make_term(NodeSet targets, NodeSet do_set, NodeSet conds,
                             Population population) {
  return make_term(ProbTerm{std::move(targets), std::move(do_set),
                            std::move(conds), population});
}

ProbExpr ProbExpr::make_product(std::vector<ProbExpr> factors) {
  if (factors.size() == 1) return factors[0];
  ProbExpr e;
  e.kind = Kind::Product;
  e.children = std::move(factors);
  return e;
}

ProbExpr ProbExpr::make_sum(const std::string& var, ProbExpr body) {
  ProbExpr e;
  e.kind = Kind::Sum;
  e.sum_var = var;
  e.children.push_back(std::move(body));
  return e;
}

ProbExpr ProbExpr::make_sum_over(const NodeSet& vars, ProbExpr body) {
  ProbExpr e = std::move(body);
  for (auto it = vars.rbegin(); it != vars.rend(); ++it) {
    e = make_sum(*it, std::move(e));
  }
  return e;
}

bool ProbExpr::operator==(const ProbExpr& other) const {
  if (kind != other.kind) return false;
  switch (kind) {
    case Kind::Term:
      return term == other.term;
    case Kind::Sum:
      if (sum_var != other.sum_var) return false;
      [[fallthrough]];
    case Kind::Product:
      return children == other.children;
  }
  return false;
}

namespace {

void collect_free(const ProbExpr& e, NodeSet& out, NodeSet bound) {
  switch (e.kind) {
    case ProbExpr::Kind::Term:
      for (const NodeSet* s : {&e.term.targets, &e.term.do_set, &e.term.conds}) {
        for (const auto& n : *s) {
          if (!bound.count(n)) out.insert(n);
        }
      }
      break;
    case ProbExpr::Kind::Product:
      for (const auto& c : e.children) collect_free(c, out, bound);
      break;
    case ProbExpr::Kind::Sum:
      bound.insert(e.sum_var);
      collect_free(e.children[0], out, bound);
      break;
  }
}

void collect_bound(const ProbExpr& e, NodeSet& out) {
  if (e.kind == ProbExpr::Kind::Sum) out.insert(e.sum_var);
  for (const auto& c : e.children) collect_bound(c, out);
}

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

std::string join_lower(const NodeSet& s) {
  std::string out;
  for (const auto& n : s) {
    if (!out.empty()) out += ",";
    out += lower(n);
  }
  return out;
}

}  // namespace

NodeSet free_vars(const ProbExpr& expr) {
  NodeSet out;
  collect_free(expr, out, {});
  return out;
}

NodeSet bound_vars(const ProbExpr& expr) {
  NodeSet out;
  collect_bound(expr, out);
  return out;
}

void check_well_formed(const ProbExpr& expr) {
  switch (expr.kind) {
    case ProbExpr::Kind::Term: {
      const ProbTerm& t = expr.term;
      if (t.targets.empty()) {
        throw FreeVariableMismatch("term has no target variables");
      }
      if (!graph_core::disjoint(t.targets, t.do_set) ||
          !graph_core::disjoint(t.targets, t.conds) ||
          !graph_core::disjoint(t.do_set, t.conds)) {
        throw graph_core::OverlappingSets(
            "term target/do/conditioning sets overlap");
      }
      break;
    }
    case ProbExpr::Kind::Product: {
      if (expr.children.empty()) {
        throw FreeVariableMismatch("empty product");
      }
      for (std::size_t i = 0; i < expr.children.size(); i++) {
        NodeSet bound_i = bound_vars(expr.children[i]);
        for (std::size_t j = 0; j < expr.children.size(); j++) {
          if (i == j || bound_i.empty()) continue;
          NodeSet mentioned = free_vars(expr.children[j]);
          NodeSet bound_j = bound_vars(expr.children[j]);
          mentioned.insert(bound_j.begin(), bound_j.end());
          if (!graph_core::disjoint(bound_i, mentioned)) {
            throw FreeVariableMismatch(
                "variable is bound in one factor and used in a sibling");
          }
        }
        check_well_formed(expr.children[i]);
      }
      break;
    }
    case ProbExpr::Kind::Sum: {
      if (expr.children.size() != 1) {
        throw FreeVariableMismatch("sum must have exactly one body");
      }
      if (!free_vars(expr.children[0]).count(expr.sum_var)) {
        throw FreeVariableMismatch("sum variable '" + expr.sum_var +
                                   "' does not appear free in its body");
      }
      check_well_formed(expr.children[0]);
      break;
    }
  }
}

ProbExpr canonicalize(const ProbExpr& expr) {
  switch (expr.kind) {
    case ProbExpr::Kind::Term:
      return expr;
    case ProbExpr::Kind::Product: {
      std::vector<ProbExpr> flat;
      for (const auto& c : expr.children) {
        ProbExpr cc = canonicalize(c);
        if (cc.kind == ProbExpr::Kind::Product) {
          for (auto& g : cc.children) flat.push_back(std::move(g));
        } else {
          flat.push_back(std::move(cc));
        }
      }
      std::stable_sort(flat.begin(), flat.end(),
                       [](const ProbExpr& a, const ProbExpr& b) {
                         return render_text(a) < render_text(b);
                       });
      return ProbExpr::make_product(std::move(flat));
    }
    case ProbExpr::Kind::Sum: {
      std::vector<std::string> vars;
      const ProbExpr* cur = &expr;
      while (cur->kind == ProbExpr::Kind::Sum) {
        vars.push_back(cur->sum_var);
        cur = &cur->children[0];
      }
      ProbExpr body = canonicalize(*cur);
      std::sort(vars.begin(), vars.end());
      for (auto it = vars.rbegin(); it != vars.rend(); ++it) {
        body = ProbExpr::make_sum(*it, std::move(body));
      }
      return body;
    }
  }
  return expr;
}

namespace {

std::string render_term_text(const ProbTerm& t) {
  std::string out = "P";
  if (t.population == Population::Target) out += "*";
  out += "(" + join_lower(t.targets);
  if (!t.do_set.empty() || !t.conds.empty()) {
    out += "|";
    if (!t.do_set.empty()) out += "do(" + join_lower(t.do_set) + ")";
    if (!t.do_set.empty() && !t.conds.empty()) out += ",";
    out += join_lower(t.conds);
  }
  out += ")";
  return out;
}

std::string render_term_latex(const ProbTerm& t) {
  std::string out = t.population == Population::Target ? "P^{*}" : "P";
  out += "(" + join_lower(t.targets);
  if (!t.do_set.empty() || !t.conds.empty()) {
    out += " \\mid ";
    if (!t.do_set.empty()) out += "\\mathrm{do}(" + join_lower(t.do_set) + ")";
    if (!t.do_set.empty() && !t.conds.empty()) out += ", ";
    out += join_lower(t.conds);
  }
  out += ")";
  return out;
}

}  // namespace

std::string render_text(const ProbExpr& expr) {
  switch (expr.kind) {
    case ProbExpr::Kind::Term:
      return render_term_text(expr.term);
    case ProbExpr::Kind::Product: {
      std::string out;
      for (std::size_t i = 0; i < expr.children.size(); i++) {
        const ProbExpr& c = expr.children[i];
        std::string part = render_text(c);
        bool needs_parens =
            c.kind == ProbExpr::Kind::Sum && i + 1 < expr.children.size();
        if (!out.empty()) out += " ";
        out += needs_parens ? "(" + part + ")" : part;
      }
      return out;
    }
    case ProbExpr::Kind::Sum:
      return "sum_" + lower(expr.sum_var) + " " + render_text(expr.children[0]);
  }
  return {};
}

std::string render_latex(const ProbExpr& expr) {
  switch (expr.kind) {
    case ProbExpr::Kind::Term:
      return render_term_latex(expr.term);
    case ProbExpr::Kind::Product: {
      std::string out;
      for (std::size_t i = 0; i < expr.children.size(); i++) {
        const ProbExpr& c = expr.children[i];
        std::string part = render_latex(c);
        bool needs_parens =
            c.kind == ProbExpr::Kind::Sum && i + 1 < expr.children.size();
        if (!out.empty()) out += " \\, ";
        out += needs_parens ? "\\left(" + part + "\\right)" : part;
      }
      return out;
    }
    case ProbExpr::Kind::Sum:
      return "\\sum_{" + lower(expr.sum_var) + "} " +
             render_latex(expr.children[0]);
  }
  return {};
}

nlohmann::json render_json(const ProbExpr& expr) {
  nlohmann::json j;
  switch (expr.kind) {
    case ProbExpr::Kind::Term:
      j["kind"] = "term";
      j["population"] =
          expr.term.population == Population::Target ? "target" : "source";
      j["targets"] = expr.term.targets;
      j["do"] = expr.term.do_set;
      j["given"] = expr.term.conds;
      break;
    case ProbExpr::Kind::Product: {
      j["kind"] = "product";
      nlohmann::json factors = nlohmann::json::array();
      for (const auto& c : expr.children) factors.push_back(render_json(c));
      j["factors"] = factors;
      break;
    }
    case ProbExpr::Kind::Sum:
      j["kind"] = "sum";
      j["var"] = expr.sum_var;
      j["body"] = render_json(expr.children[0]);
      break;
  }
  return j;
}

namespace {

NodeSet node_set_from_json(const nlohmann::json& j) {
  NodeSet out;
  for (const auto& v : j) out.insert(v.get<std::string>());
  return out;
}

}  // namespace

ProbExpr parse_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "term") {
    ProbTerm t;
    t.targets = node_set_from_json(j.at("targets"));
    t.do_set = node_set_from_json(j.at("do"));
    t.conds = node_set_from_json(j.at("given"));
    const std::string pop = j.at("population").get<std::string>();
    if (pop != "source" && pop != "target") {
      throw FreeVariableMismatch("unknown population tag '" + pop + "'");
    }
    t.population = pop == "target" ? Population::Target : Population::Source;
    return ProbExpr::make_term(std::move(t));
  }
  if (kind == "product") {
    std::vector<ProbExpr> factors;
    for (const auto& f : j.at("factors")) factors.push_back(parse_json(f));
    if (factors.empty()) throw FreeVariableMismatch("empty product");
    return ProbExpr::make_product(std::move(factors));
  }
  if (kind == "sum") {
    return ProbExpr::make_sum(j.at("var").get<std::string>(),
                              parse_json(j.at("body")));
  }
  throw FreeVariableMismatch("unknown expression kind '" + kind + "'");
}

namespace {

void check_rule_sets(const CausalDiagram& flat, const NodeSet& y,
                     const NodeSet& z, const NodeSet& x, const NodeSet& w) {
  const NodeSet* sets[4] = {&y, &z, &x, &w};
  const char* names[4] = {"Y", "Z", "X", "W"};
  for (int i = 0; i < 4; i++) {
    for (const auto& n : *sets[i]) {
      if (!flat.nodes.count(n)) {
        throw graph_core::UnknownNode(std::string("rule set ") + names[i] +
                                      ": unknown node '" + n + "'");
      }
    }
    for (int j = i + 1; j < 4; j++) {
      if (!graph_core::disjoint(*sets[i], *sets[j])) {
        throw graph_core::OverlappingSets(std::string("rule sets ") +
                                          names[i] + " and " + names[j] +
                                          " overlap");
      }
    }
  }
}

}  // namespace

Mutilation rule_mutilation(int rule, const SelectionDiagram& d,
                           const NodeSet& z, const NodeSet& x,
                           const NodeSet& w) {
  switch (rule) {
    case 1:
      return Mutilation{x, {}};
    case 2:
      return Mutilation{x, z};
    case 3: {
      CausalDiagram flat = flatten(d);
      NodeSet zw = graph_core::z_outside_ancestors_of_w(flat, z, w, x);
      return Mutilation{graph_core::set_union_of(x, zw), {}};
    }
    default:
      throw graph_core::GraphError("unknown rule number " +
                                   std::to_string(rule));
  }
}

namespace {

bool rule_applicable(int rule, const SelectionDiagram& d, const NodeSet& y,
                     const NodeSet& z, const NodeSet& x, const NodeSet& w) {
  CausalDiagram flat = flatten(d);
  check_rule_sets(flat, y, z, x, w);
  Mutilation mut = rule_mutilation(rule, d, z, x, w);
  dsep::SeparationQuery q{y, z, graph_core::set_union_of(x, w)};
  return dsep::d_separated(graph_core::mutilate(flat, mut), q);
}

}  // namespace

bool rule1_applicable(const SelectionDiagram& d, const NodeSet& y,
                      const NodeSet& z, const NodeSet& x, const NodeSet& w) {
  return rule_applicable(1, d, y, z, x, w);
}

bool rule2_applicable(const SelectionDiagram& d, const NodeSet& y,
                      const NodeSet& z, const NodeSet& x, const NodeSet& w) {
  return rule_applicable(2, d, y, z, x, w);
}

bool rule3_applicable(const SelectionDiagram& d, const NodeSet& y,
                      const NodeSet& z, const NodeSet& x, const NodeSet& w) {
  return rule_applicable(3, d, y, z, x, w);
}

std::string direction_name(RuleDirection direction) {
  switch (direction) {
    case RuleDirection::Insert:
      return "insert";
    case RuleDirection::Delete:
      return "delete";
    case RuleDirection::ToObservation:
    case RuleDirection::ToAction:
      return "exchange";
  }
  return {};
}

namespace {

const ProbTerm& term_at(const ProbExpr& expr, const Site& site) {
  const ProbExpr* cur = &expr;
  for (std::size_t idx : site) {
    if (idx >= cur->children.size()) {
      throw BadSite("site index out of range");
    }
    cur = &cur->children[idx];
  }
  if (cur->kind != ProbExpr::Kind::Term) {
    throw BadSite("site does not locate a primitive term");
  }
  return cur->term;
}

ProbExpr replace_at(const ProbExpr& expr, const Site& site,
                    std::size_t depth, const ProbTerm& replacement) {
  if (depth == site.size()) {
    return ProbExpr::make_term(replacement);
  }
  ProbExpr out = expr;
  out.children[site[depth]] =
      replace_at(expr.children[site[depth]], site, depth + 1, replacement);
  return out;
}

}  // namespace

std::pair<ProbExpr, RuleStep> apply_rule(const SelectionDiagram& d,
                                         const ProbExpr& expr,
                                         const Site& site, int rule,
                                         RuleDirection direction,
                                         const NodeSet& z) {
  const ProbTerm& t = term_at(expr, site);
  ProbTerm after = t;
  NodeSet rule_x;  // X-sets of the rule statement, per direction
  NodeSet rule_w;
  switch (rule) {
    case 1:
      if (direction == RuleDirection::Delete) {
        if (!graph_core::subset_of(z, t.conds)) {
          throw BadSite("rule 1 delete: z is not among the observations");
        }
        after.conds = graph_core::set_minus(t.conds, z);
      } else if (direction == RuleDirection::Insert) {
        after.conds = graph_core::set_union_of(t.conds, z);
      } else {
        throw BadSite("rule 1 supports insert/delete only");
      }
      rule_x = t.do_set;
      rule_w = graph_core::set_minus(after.conds, z);
      break;
    case 2:
      if (direction == RuleDirection::ToObservation) {
        if (!graph_core::subset_of(z, t.do_set)) {
          throw BadSite("rule 2 exchange: z is not among the actions");
        }
        after.do_set = graph_core::set_minus(t.do_set, z);
        after.conds = graph_core::set_union_of(t.conds, z);
      } else if (direction == RuleDirection::ToAction) {
        if (!graph_core::subset_of(z, t.conds)) {
          throw BadSite("rule 2 exchange: z is not among the observations");
        }
        after.do_set = graph_core::set_union_of(t.do_set, z);
        after.conds = graph_core::set_minus(t.conds, z);
      } else {
        throw BadSite("rule 2 supports exchange directions only");
      }
      rule_x = graph_core::set_minus(t.do_set, z);
      rule_w = graph_core::set_minus(t.conds, z);
      break;
    case 3:
      if (direction == RuleDirection::Delete) {
        if (!graph_core::subset_of(z, t.do_set)) {
          throw BadSite("rule 3 delete: z is not among the actions");
        }
        after.do_set = graph_core::set_minus(t.do_set, z);
      } else if (direction == RuleDirection::Insert) {
        after.do_set = graph_core::set_union_of(t.do_set, z);
      } else {
        throw BadSite("rule 3 supports insert/delete only");
      }
      rule_x = graph_core::set_minus(after.do_set, z);
      rule_w = t.conds;
      break;
    default:
      throw graph_core::GraphError("unknown rule number " +
                                   std::to_string(rule));
  }

  Mutilation mut = rule_mutilation(rule, d, z, rule_x, rule_w);
  dsep::SeparationQuery query{t.targets, z,
                              graph_core::set_union_of(rule_x, rule_w)};
  bool ok = false;
  switch (rule) {
    case 1:
      ok = rule1_applicable(d, t.targets, z, rule_x, rule_w);
      break;
    case 2:
      ok = rule2_applicable(d, t.targets, z, rule_x, rule_w);
      break;
    case 3:
      ok = rule3_applicable(d, t.targets, z, rule_x, rule_w);
      break;
  }
  if (!ok) {
    throw RuleNotApplicable("rule " + std::to_string(rule) +
                                " condition does not hold",
                            query, mut);
  }

  RuleStep step;
  step.rule = rule;
  step.direction = direction;
  step.certified_query = query;
  step.certified_mutilation = mut;
  step.before = expr;
  step.after = replace_at(expr, site, 0, after);
  return {step.after, step};
}

ProbTerm to_explicit(const ProbTerm& term, const NodeSet& s_all) {
  if (term.population != Population::Target) return term;
  ProbTerm out = term;
  out.population = Population::Source;
  out.conds = graph_core::set_union_of(out.conds, s_all);
  return out;
}

ProbTerm to_target_tagged(const ProbTerm& term, const NodeSet& s_all) {
  if (term.population == Population::Target) return term;
  if (!graph_core::subset_of(s_all, term.conds)) {
    throw FreeVariableMismatch(
        "term does not condition on every selection node");
  }
  ProbTerm out = term;
  out.population = Population::Target;
  out.conds = graph_core::set_minus(out.conds, s_all);
  return out;
}

}  // namespace docalc
