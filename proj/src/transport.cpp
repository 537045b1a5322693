#include "transport.h"

#include <algorithm>
#include <map>
#include <set>
#include <utility>

namespace transport {

using docalc::Population;
using docalc::ProbExpr;
using graph_core::CausalDiagram;
using graph_core::Mutilation;
using graph_core::NodeSet;
using graph_core::SelectionDiagram;
using graph_core::set_minus;
using graph_core::set_union_of;
using graph_core::subset_of;

namespace {

SelectionDiagram wrap_base(const CausalDiagram& g) {
  return SelectionDiagram{g, {}, {}};
}

std::string set_text(const NodeSet& s) {
  std::string out = "{";
  for (const auto& n : s) {
    if (out.size() > 1) out += ", ";
    out += n;
  }
  return out + "}";
}

std::vector<NodeSet> subsets_by_size(const NodeSet& pool,
                                     std::size_t min_size,
                                     std::size_t max_size) {
  std::vector<std::string> items(pool.begin(), pool.end());
  std::vector<NodeSet> out;
  max_size = std::min(max_size, items.size());
  for (std::size_t k = min_size; k <= max_size; k++) {
    if (k == 0) {
      out.emplace_back();
      continue;
    }
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; i++) idx[i] = i;
    for (;;) {
      NodeSet s;
      for (std::size_t i : idx) s.insert(items[i]);
      out.push_back(std::move(s));
      std::size_t i = k;
      while (i > 0) {
        i--;
        if (idx[i] != i + items.size() - k) break;
        if (i == 0) goto next_size;
      }
      idx[i]++;
      for (std::size_t j = i + 1; j < k; j++) idx[j] = idx[j - 1] + 1;
    }
  next_size:;
  }
  return out;
}

NodeSet selection_targets(const SelectionDiagram& d, const std::string& s) {
  NodeSet out;
  for (const auto& [from, to] : d.selection_edges) {
    if (from == s) out.insert(to);
  }
  return out;
}

struct IgnorableCerts {
  NodeSet dropped;
  std::vector<NodeCert> certs;
};

IgnorableCerts compute_ignorable(const SelectionDiagram& d, const NodeSet& x,
                                 const NodeSet& y) {
  IgnorableCerts out;
  CausalDiagram cut = graph_core::mutilate(graph_core::flatten(d),
                                           Mutilation{x, {}});
  for (const auto& s : d.selection_nodes) {
    NodeCert cert;
    cert.node = s;
    if (subset_of(selection_targets(d, s), x)) {
      cert.only_into_do = true;
      out.dropped.insert(s);
      out.certs.push_back(std::move(cert));
      continue;
    }
    dsep::SeparationQuery q{{s}, y, x};
    if (dsep::d_separated(cut, q)) {
      cert.only_into_do = false;
      cert.separation = q;
      cert.mutilation = Mutilation{x, {}};
      out.dropped.insert(s);
      out.certs.push_back(std::move(cert));
    }
  }
  return out;
}

int count_do_terms(const ProbExpr& e) {
  if (e.kind == ProbExpr::Kind::Term) {
    return e.term.population == Population::Source && !e.term.do_set.empty()
               ? 1
               : 0;
  }
  int n = 0;
  for (const auto& c : e.children) n += count_do_terms(c);
  return n;
}

void check_estimable(const ProbExpr& e, const NodeSet& selection_nodes) {
  if (e.kind == ProbExpr::Kind::Term) {
    if (e.term.population == Population::Target && !e.term.do_set.empty()) {
      throw graph_core::GraphError(
          "derived formula contains a target interventional term");
    }
    for (const NodeSet* s : {&e.term.targets, &e.term.do_set, &e.term.conds}) {
      for (const auto& n : *s) {
        if (selection_nodes.count(n)) {
          throw graph_core::GraphError(
              "derived formula mentions a selection node");
        }
      }
    }
    return;
  }
  for (const auto& c : e.children) check_estimable(c, selection_nodes);
}

struct RecResult {
  bool ok = false;
  bool tainted = false;
  std::optional<ProbExpr> expr;
  std::vector<DerivationStep> steps;
  std::string reason;
};

struct RecEngine {
  const SelectionDiagram& d;
  const Options& opts;
  NodeSet s_all;
  CausalDiagram flat;
  std::map<std::pair<NodeSet, NodeSet>, RecResult> memo;
  std::set<std::pair<NodeSet, NodeSet>> in_progress;

  RecEngine(const SelectionDiagram& diagram, const Options& options)
      : d(diagram), opts(options), s_all(diagram.selection_nodes),
        flat(graph_core::flatten(diagram)) {}

  bool admissible(const NodeSet& t, const NodeSet& x, const NodeSet& y) {
    CausalDiagram cut = graph_core::mutilate(flat, Mutilation{x, {}});
    return dsep::d_separated(cut, {s_all, y, set_union_of(t, x)});
  }

  RecResult rec(const NodeSet& effect, const NodeSet& do_set) {
    auto key = std::make_pair(effect, do_set);
    auto mit = memo.find(key);
    if (mit != memo.end()) return mit->second;
    if (in_progress.count(key)) {
      RecResult r;
      r.tainted = true;
      r.reason = "goal already under derivation";
      return r;
    }
    in_progress.insert(key);
    RecResult res = opts.prefer_observational ? rec_ranked(effect, do_set)
                                              : rec_first(effect, do_set);
    in_progress.erase(key);
    if (res.ok || !res.tainted) memo.emplace(std::move(key), res);
    return res;
  }

  RecResult source_effect(const NodeSet& effect, const NodeSet& do_set) {
    DerivationStep st;
    st.kind = "source_effect";
    st.effect = effect;
    st.do_set = do_set;
    st.separation = dsep::SeparationQuery{{}, effect, do_set};
    st.mutilation = Mutilation{do_set, {}};
    st.graph = "selection";
    RecResult res;
    res.ok = true;
    res.expr = ProbExpr::make_term(effect, do_set, {}, Population::Source);
    res.steps = {std::move(st)};
    return res;
  }

  std::optional<RecResult> try_condition_1(const NodeSet& effect,
                                           const NodeSet& do_set) {
    auto triv =
        trivially_transportable(d.base, do_set, effect, opts.max_set_size);
    if (!triv) return std::nullopt;
    DerivationStep st;
    st.kind = "condition_1";
    st.effect = effect;
    st.do_set = do_set;
    st.substeps = std::move(triv->steps);
    RecResult res;
    res.ok = true;
    res.expr = std::move(triv->formula);
    res.steps = {std::move(st)};
    return res;
  }

  RecResult make_condition_2(const NodeSet& effect, const NodeSet& do_set,
                             const NodeSet& z, RecResult&& sub) {
    DerivationStep st;
    st.kind = "condition_2";
    st.effect = effect;
    st.do_set = do_set;
    st.chosen = z;
    st.separation =
        dsep::SeparationQuery{s_all, effect, set_union_of(do_set, z)};
    st.mutilation = Mutilation{do_set, {}};
    st.graph = "selection";
    RecResult res;
    res.ok = true;
    if (z.empty()) {
      res.expr = ProbExpr::make_term(effect, do_set, {}, Population::Source);
    } else {
      st.substeps = std::move(sub.steps);
      res.expr = ProbExpr::make_sum_over(
          z, ProbExpr::make_product(
                 {ProbExpr::make_term(effect, do_set, z, Population::Source),
                  std::move(*sub.expr)}));
    }
    res.steps = {std::move(st)};
    return res;
  }

  RecResult make_condition_3(const NodeSet& effect, const NodeSet& do_set,
                             const NodeSet& w, RecResult&& sub) {
    Mutilation mut = docalc::rule_mutilation(3, d, do_set, {}, w);
    DerivationStep st;
    st.kind = "condition_3";
    st.effect = effect;
    st.do_set = do_set;
    st.chosen = w;
    st.separation = dsep::SeparationQuery{effect, do_set, w};
    st.mutilation = mut;
    st.separation_s =
        dsep::SeparationQuery{effect, do_set, set_union_of(w, s_all)};
    st.mutilation_s = mut;
    st.graph = "selection";
    st.substeps = std::move(sub.steps);
    RecResult res;
    res.ok = true;
    res.expr = ProbExpr::make_sum_over(
        w, ProbExpr::make_product(
               {ProbExpr::make_term(effect, {}, w, Population::Target),
                std::move(*sub.expr)}));
    res.steps = {std::move(st)};
    return res;
  }

  bool condition_3_certified(const NodeSet& effect, const NodeSet& do_set,
                             const NodeSet& w) {
    return docalc::rule3_applicable(d, effect, do_set, {}, w) &&
           docalc::rule3_applicable(d, effect, do_set, {},
                                    set_union_of(w, s_all));
  }

  RecResult rec_first(const NodeSet& effect, const NodeSet& do_set) {
    if (s_all.empty()) return source_effect(effect, do_set);
    if (auto res = try_condition_1(effect, do_set)) return std::move(*res);

    bool tainted = false;
    NodeSet pool = set_minus(d.base.nodes, set_union_of(effect, do_set));
    std::vector<NodeSet> candidates =
        subsets_by_size(pool, 0, opts.max_set_size);
    std::size_t admissible_found = 0;
    std::vector<std::string> unresolved;
    for (const auto& z : candidates) {
      if (!admissible(z, do_set, effect)) continue;
      admissible_found++;
      if (z.empty()) return make_condition_2(effect, do_set, z, RecResult{});
      RecResult sub = rec(z, do_set);
      if (sub.ok) return make_condition_2(effect, do_set, z, std::move(sub));
      tainted = tainted || sub.tainted;
      if (unresolved.size() < 8) unresolved.push_back(set_text(z));
    }

    std::vector<NodeSet> witnesses = subsets_by_size(pool, 1, opts.max_set_size);
    std::size_t certified_found = 0;
    for (const auto& w : witnesses) {
      if (!condition_3_certified(effect, do_set, w)) continue;
      certified_found++;
      RecResult sub = rec(w, do_set);
      if (sub.ok) return make_condition_3(effect, do_set, w, std::move(sub));
      tainted = tainted || sub.tainted;
    }

    RecResult res;
    res.tainted = tainted;
    res.reason =
        "P*(" + set_text(effect) + " | do" + set_text(do_set) +
        ") is not derivable: condition 1 failed (no whole-set action "
        "deletion, no whole-set exchange, no back-door adjustment set); "
        "condition 2 failed (" +
        std::to_string(candidates.size()) + " candidate sets, " +
        std::to_string(admissible_found) +
        " admissible but with underivable remainder" +
        (unresolved.empty() ? std::string()
                            : ": " + [&] {
                                std::string s;
                                for (const auto& u : unresolved) {
                                  if (!s.empty()) s += ", ";
                                  s += u;
                                }
                                return s;
                              }()) +
        "); condition 3 failed (" + std::to_string(witnesses.size()) +
        " candidate sets, " + std::to_string(certified_found) +
        " certified but with underivable remainder)";
    return res;
  }

  RecResult rec_ranked(const NodeSet& effect, const NodeSet& do_set) {
    if (s_all.empty()) return source_effect(effect, do_set);
    if (auto res = try_condition_1(effect, do_set)) return std::move(*res);

    bool tainted = false;
    std::optional<RecResult> best;
    int best_count = 0;
    NodeSet pool = set_minus(d.base.nodes, set_union_of(effect, do_set));
    std::vector<NodeSet> candidates =
        subsets_by_size(pool, 0, opts.max_set_size);
    std::size_t admissible_found = 0;
    for (const auto& z : candidates) {
      if (!admissible(z, do_set, effect)) continue;
      admissible_found++;
      RecResult cand;
      if (z.empty()) {
        cand = make_condition_2(effect, do_set, z, RecResult{});
      } else {
        RecResult sub = rec(z, do_set);
        if (!sub.ok) {
          tainted = tainted || sub.tainted;
          continue;
        }
        cand = make_condition_2(effect, do_set, z, std::move(sub));
      }
      int n = count_do_terms(*cand.expr);
      if (!best || n < best_count) {
        best_count = n;
        best = std::move(cand);
      }
    }
    std::vector<NodeSet> witnesses = subsets_by_size(pool, 1, opts.max_set_size);
    std::size_t certified_found = 0;
    for (const auto& w : witnesses) {
      if (!condition_3_certified(effect, do_set, w)) continue;
      certified_found++;
      RecResult sub = rec(w, do_set);
      if (!sub.ok) {
        tainted = tainted || sub.tainted;
        continue;
      }
      RecResult cand = make_condition_3(effect, do_set, w, std::move(sub));
      int n = count_do_terms(*cand.expr);
      if (!best || n < best_count) {
        best_count = n;
        best = std::move(cand);
      }
    }
    if (best) return std::move(*best);
    RecResult res;
    res.tainted = tainted;
    res.reason = "P*(" + set_text(effect) + " | do" + set_text(do_set) +
                 ") is not derivable: condition 1 failed; condition 2 failed "
                 "(" +
                 std::to_string(candidates.size()) + " candidate sets, " +
                 std::to_string(admissible_found) +
                 " admissible); condition 3 failed (" +
                 std::to_string(witnesses.size()) + " candidate sets, " +
                 std::to_string(certified_found) + " certified)";
    return res;
  }
};

}  // namespace

void validate_query(const SelectionDiagram& d, const Query& q) {
  if (q.effect.empty()) {
    throw graph_core::GraphError("query effect set is empty");
  }
  for (const NodeSet* s : {&q.effect, &q.interventions, &q.strata}) {
    for (const auto& n : *s) {
      if (d.selection_nodes.count(n)) {
        throw graph_core::BadSelectionNode(
            "query mentions selection node '" + n + "'");
      }
      if (!d.base.nodes.count(n)) {
        throw graph_core::UnknownNode("query mentions unknown node '" + n +
                                      "'");
      }
    }
  }
  if (!graph_core::disjoint(q.effect, q.interventions) ||
      !graph_core::disjoint(q.effect, q.strata) ||
      !graph_core::disjoint(q.interventions, q.strata)) {
    throw graph_core::OverlappingSets("query sets overlap");
  }
}

bool s_admissible(const SelectionDiagram& d, const NodeSet& t,
                  const NodeSet& x, const NodeSet& y) {
  graph_core::validate(d);
  for (const NodeSet* s : {&t, &x, &y}) {
    for (const auto& n : *s) {
      if (!d.base.nodes.count(n)) {
        throw graph_core::UnknownNode("set mentions unknown node '" + n + "'");
      }
    }
  }
  CausalDiagram cut =
      graph_core::mutilate(graph_core::flatten(d), Mutilation{x, {}});
  return dsep::d_separated(cut, {d.selection_nodes, y, set_union_of(t, x)});
}

std::optional<NodeSet> find_s_admissible(const SelectionDiagram& d,
                                         const NodeSet& x, const NodeSet& y,
                                         std::size_t max_size,
                                         CandidatePool pool) {
  NodeSet candidates = set_minus(d.base.nodes, set_union_of(x, y));
  if (pool == CandidatePool::Pretreatment) {
    candidates = set_minus(candidates, graph_core::descendants(d.base, x));
  }
  for (const auto& t : subsets_by_size(candidates, 0, max_size)) {
    if (s_admissible(d, t, x, y)) return t;
  }
  return std::nullopt;
}

bool directly_transportable(const SelectionDiagram& d, const Query& q) {
  validate_query(d, q);
  return s_admissible(d, q.strata, q.interventions, q.effect);
}

std::optional<TrivialResult> trivially_transportable(
    const CausalDiagram& target_graph, const NodeSet& x, const NodeSet& y,
    std::size_t max_set_size) {
  SelectionDiagram wrapped = wrap_base(target_graph);
  ProbExpr start = ProbExpr::make_term(y, x, {}, Population::Target);
  if (x.empty()) {
    return TrivialResult{start, {}};
  }
  if (docalc::rule3_applicable(wrapped, y, x, {}, {})) {
    auto [after, rule] = docalc::apply_rule(wrapped, start, {}, 3,
                                            docalc::RuleDirection::Delete, x);
    DerivationStep st;
    st.kind = "rule";
    st.rule = 3;
    st.direction = docalc::RuleDirection::Delete;
    st.chosen = x;
    st.separation = rule.certified_query;
    st.mutilation = rule.certified_mutilation;
    st.graph = "target";
    st.before = start;
    st.after = after;
    return TrivialResult{after, {std::move(st)}};
  }
  if (docalc::rule2_applicable(wrapped, y, x, {}, {})) {
    auto [after, rule] = docalc::apply_rule(
        wrapped, start, {}, 2, docalc::RuleDirection::ToObservation, x);
    DerivationStep st;
    st.kind = "rule";
    st.rule = 2;
    st.direction = docalc::RuleDirection::ToObservation;
    st.chosen = x;
    st.separation = rule.certified_query;
    st.mutilation = rule.certified_mutilation;
    st.graph = "target";
    st.before = start;
    st.after = after;
    return TrivialResult{after, {std::move(st)}};
  }
  NodeSet pool = set_minus(set_minus(target_graph.nodes, set_union_of(x, y)),
                           graph_core::descendants(target_graph, x));
  CausalDiagram cut = graph_core::mutilate(target_graph, Mutilation{{}, x});
  for (const auto& zp : subsets_by_size(pool, 1, max_set_size)) {
    dsep::SeparationQuery q{y, x, zp};
    if (!dsep::d_separated(cut, q)) continue;
    ProbExpr after = ProbExpr::make_sum_over(
        zp,
        ProbExpr::make_product(
            {ProbExpr::make_term(y, {}, set_union_of(x, zp),
                                 Population::Target),
             ProbExpr::make_term(zp, {}, {}, Population::Target)}));
    DerivationStep st;
    st.kind = "backdoor";
    st.chosen = zp;
    st.separation = q;
    st.mutilation = Mutilation{{}, x};
    st.graph = "target";
    st.before = start;
    st.after = after;
    return TrivialResult{after, {std::move(st)}};
  }
  return std::nullopt;
}

NodeSet ignorable_selection_nodes(const SelectionDiagram& d, const NodeSet& x,
                                  const NodeSet& y) {
  graph_core::validate(d);
  return compute_ignorable(d, x, y).dropped;
}

Derivation transport_strata(const SelectionDiagram& d, const Query& q) {
  graph_core::validate(d);
  validate_query(d, q);
  Derivation der;
  der.query = q;
  if (s_admissible(d, q.strata, q.interventions, q.effect)) {
    der.transportable = true;
    der.formula = ProbExpr::make_term(q.effect, q.interventions, q.strata,
                                      Population::Source);
    DerivationStep st;
    st.kind = "strata";
    st.effect = q.effect;
    st.do_set = q.interventions;
    st.chosen = q.strata;
    st.separation = dsep::SeparationQuery{
        d.selection_nodes, q.effect, set_union_of(q.interventions, q.strata)};
    st.mutilation = Mutilation{q.interventions, {}};
    st.graph = "selection";
    der.steps = {std::move(st)};
  } else {
    der.reason = "strata " + set_text(q.strata) +
                 " are not admissible: the selection nodes stay connected to " +
                 set_text(q.effect) + " given " +
                 set_text(set_union_of(q.interventions, q.strata)) +
                 " after cutting edges into " + set_text(q.interventions);
  }
  return der;
}

Derivation transport_effect(const SelectionDiagram& d, const Query& q,
                            const Options& opts) {
  graph_core::validate(d);
  validate_query(d, q);
  if (!q.strata.empty()) {
    throw graph_core::GraphError(
        "stratified queries use the strata deriver, not transport_effect");
  }
  Derivation der;
  der.query = q;

  IgnorableCerts ign = compute_ignorable(d, q.interventions, q.effect);
  SelectionDiagram reduced =
      ign.dropped.empty() ? d : graph_core::drop_selection_nodes(d, ign.dropped);
  if (!ign.dropped.empty()) {
    DerivationStep st;
    st.kind = "ignore_selection";
    st.effect = q.effect;
    st.do_set = q.interventions;
    st.dropped = ign.dropped;
    st.certs = std::move(ign.certs);
    st.graph = "selection";
    der.steps.push_back(std::move(st));
  }

  RecEngine engine(reduced, opts);
  RecResult res = engine.rec(q.effect, q.interventions);
  if (res.ok) {
    der.transportable = true;
    der.formula = docalc::canonicalize(*res.expr);
    check_estimable(*der.formula, d.selection_nodes);
    for (auto& st : res.steps) der.steps.push_back(std::move(st));
  } else {
    der.reason = res.reason;
  }
  return der;
}

namespace {

nlohmann::json separation_json(const dsep::SeparationQuery& q) {
  return {{"x", q.x}, {"y", q.y}, {"z", q.z}};
}

nlohmann::json mutilation_json(const Mutilation& m) {
  return {{"cut_incoming", m.cut_incoming}, {"cut_outgoing", m.cut_outgoing}};
}

nlohmann::json step_json(const DerivationStep& st) {
  nlohmann::json j;
  j["kind"] = st.kind;
  if (st.kind != "rule" && st.kind != "backdoor") {
    j["effect"] = st.effect;
    j["do"] = st.do_set;
  }
  if (st.kind == "ignore_selection") {
    j["dropped"] = st.dropped;
    nlohmann::json certs = nlohmann::json::array();
    for (const auto& c : st.certs) {
      nlohmann::json cj;
      cj["node"] = c.node;
      cj["only_into_do"] = c.only_into_do;
      if (!c.only_into_do) {
        cj["separation"] = separation_json(*c.separation);
        cj["mutilation"] = mutilation_json(*c.mutilation);
        cj["graph"] = "selection";
      }
      certs.push_back(std::move(cj));
    }
    j["certs"] = std::move(certs);
  }
  if (!st.chosen.empty() || st.kind == "condition_2" ||
      st.kind == "backdoor" || st.kind == "rule" || st.kind == "strata" ||
      st.kind == "condition_3") {
    j["chosen"] = st.chosen;
  }
  if (st.rule != 0) j["rule"] = st.rule;
  if (st.direction) j["direction"] = docalc::direction_name(*st.direction);
  if (st.separation) j["separation"] = separation_json(*st.separation);
  if (st.mutilation) j["mutilation"] = mutilation_json(*st.mutilation);
  if (st.separation_s) j["separation_s"] = separation_json(*st.separation_s);
  if (st.mutilation_s) j["mutilation_s"] = mutilation_json(*st.mutilation_s);
  if (!st.graph.empty()) j["graph"] = st.graph;
  if (st.before) {
    j["before"] = docalc::render_json(*st.before);
    j["before_text"] = docalc::render_text(*st.before);
  }
  if (st.after) {
    j["after"] = docalc::render_json(*st.after);
    j["after_text"] = docalc::render_text(*st.after);
  }
  if (!st.substeps.empty()) {
    nlohmann::json subs = nlohmann::json::array();
    for (const auto& s : st.substeps) subs.push_back(step_json(s));
    j["substeps"] = std::move(subs);
  }
  return j;
}

}  // namespace

nlohmann::json derivation_json(const Derivation& der) {
  nlohmann::json j;
  j["schema"] = 1;
  j["query"] = {{"effect", der.query.effect},
                {"do", der.query.interventions},
                {"strata", der.query.strata}};
  j["transportable"] = der.transportable;
  if (der.transportable) {
    j["formula"] = docalc::render_json(*der.formula);
    j["formula_text"] = docalc::render_text(*der.formula);
  } else {
    j["reason"] = der.reason;
  }
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& st : der.steps) steps.push_back(step_json(st));
  j["steps"] = std::move(steps);
  return j;
}

namespace {

struct ReplayFailure {
  std::string message;
};

NodeSet set_from_json(const nlohmann::json& j) {
  NodeSet out;
  for (const auto& v : j) out.insert(v.get<std::string>());
  return out;
}

dsep::SeparationQuery separation_from_json(const nlohmann::json& j) {
  return {set_from_json(j.at("x")), set_from_json(j.at("y")),
          set_from_json(j.at("z"))};
}

Mutilation mutilation_from_json(const nlohmann::json& j) {
  return {set_from_json(j.at("cut_incoming")),
          set_from_json(j.at("cut_outgoing"))};
}

std::string query_text(const dsep::SeparationQuery& q) {
  return "(" + set_text(q.x) + " _||_ " + set_text(q.y) + " | " +
         set_text(q.z) + ")";
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ReplayFailure{message};
}

void check_separation(const nlohmann::json& step, const char* sep_key,
                      const char* mut_key,
                      const dsep::SeparationQuery& expected_sep,
                      const Mutilation& expected_mut,
                      const CausalDiagram& graph, const std::string& where) {
  dsep::SeparationQuery stored_sep =
      separation_from_json(step.at(sep_key));
  Mutilation stored_mut = mutilation_from_json(step.at(mut_key));
  require(stored_sep == expected_sep,
          where + ": stored separation " + query_text(stored_sep) +
              " differs from expected " + query_text(expected_sep));
  require(stored_mut == expected_mut,
          where + ": stored mutilation differs from expected");
  require(dsep::d_separated(graph_core::mutilate(graph, expected_mut),
                            expected_sep),
          where + ": separation " + query_text(expected_sep) +
              " does not hold");
}

docalc::RuleDirection direction_for(int rule, const std::string& name,
                                    const docalc::ProbTerm& before,
                                    const NodeSet& chosen) {
  if (name == "insert") return docalc::RuleDirection::Insert;
  if (name == "delete") return docalc::RuleDirection::Delete;
  if (name == "exchange" && rule == 2) {
    return subset_of(chosen, before.do_set)
               ? docalc::RuleDirection::ToObservation
               : docalc::RuleDirection::ToAction;
  }
  throw ReplayFailure{"step uses unknown rule direction '" + name + "'"};
}

class Replayer {
 public:
  explicit Replayer(const SelectionDiagram& d) : d_(d) {}

  void run(const nlohmann::json& trace) {
    require(trace.at("schema").get<int>() == 1, "unsupported trace schema");
    Query q;
    q.effect = set_from_json(trace.at("query").at("effect"));
    q.interventions = set_from_json(trace.at("query").at("do"));
    q.strata = set_from_json(trace.at("query").at("strata"));
    validate_query(d_, q);
    const nlohmann::json& steps = trace.at("steps");
    bool transportable = trace.at("transportable").get<bool>();

    if (!q.strata.empty()) {
      if (!transportable) {
        require(steps.empty(), "non-transportable stratified trace has steps");
        return;
      }
      require(steps.size() == 1 && steps[0].at("kind") == "strata",
              "stratified trace must hold exactly one strata step");
      replay_strata(steps[0], q);
      check_formula(trace,
                    ProbExpr::make_term(q.effect, q.interventions, q.strata,
                                        Population::Source));
      return;
    }

    std::size_t idx = 0;
    SelectionDiagram current = d_;
    IgnorableCerts expected = compute_ignorable(d_, q.interventions, q.effect);
    if (idx < steps.size() && steps[idx].at("kind") == "ignore_selection") {
      replay_ignore(steps[idx], q, expected);
      current = graph_core::drop_selection_nodes(d_, expected.dropped);
      idx++;
    } else {
      require(expected.dropped.empty(),
              "trace omits the selection-node elimination step");
    }
    if (!transportable) {
      require(steps.size() == idx,
              "non-transportable trace carries derivation steps");
      return;
    }
    require(steps.size() == idx + 1,
            "trace must hold exactly one goal step per level");
    ProbExpr rebuilt =
        replay_goal(steps[idx], q.effect, q.interventions, current);
    check_formula(trace, rebuilt);
  }

 private:
  const SelectionDiagram& d_;

  // The trace's formula is redundant with its steps; it must match the
  // expression the replayed steps rebuild.
  void check_formula(const nlohmann::json& trace, const ProbExpr& rebuilt) {
    ProbExpr stored = [&] {
      try {
        return docalc::parse_json(trace.at("formula"));
      } catch (const std::exception& e) {
        throw ReplayFailure{std::string("stored formula is malformed: ") +
                            e.what()};
      }
    }();
    require(stored == docalc::canonicalize(rebuilt),
            "stored formula differs from the one the steps rebuild");
    require(trace.at("formula_text").get<std::string>() ==
                docalc::render_text(stored),
            "stored formula text does not render the stored formula");
  }

  void replay_strata(const nlohmann::json& step, const Query& q) {
    require(set_from_json(step.at("effect")) == q.effect &&
                set_from_json(step.at("do")) == q.interventions,
            "strata step does not match the query goal");
    require(set_from_json(step.at("chosen")) == q.strata,
            "strata step does not record the query strata");
    dsep::SeparationQuery expected{
        d_.selection_nodes, q.effect,
        set_union_of(q.interventions, q.strata)};
    check_separation(step, "separation", "mutilation", expected,
                     Mutilation{q.interventions, {}},
                     graph_core::flatten(d_), "strata step");
  }

  void replay_ignore(const nlohmann::json& step, const Query& q,
                     const IgnorableCerts& expected) {
    require(set_from_json(step.at("effect")) == q.effect &&
                set_from_json(step.at("do")) == q.interventions,
            "elimination step does not match the query goal");
    require(set_from_json(step.at("dropped")) == expected.dropped,
            "stored dropped set " +
                set_text(set_from_json(step.at("dropped"))) +
                " differs from the recomputed ignorable set " +
                set_text(expected.dropped));
    const nlohmann::json& certs = step.at("certs");
    require(certs.size() == expected.certs.size(),
            "elimination step has a wrong number of certificates");
    for (std::size_t i = 0; i < expected.certs.size(); i++) {
      const NodeCert& exp = expected.certs[i];
      const nlohmann::json& got = certs[i];
      require(got.at("node").get<std::string>() == exp.node,
              "certificate order differs from the recomputed one");
      require(got.at("only_into_do").get<bool>() == exp.only_into_do,
              "certificate for '" + exp.node + "' has the wrong kind");
      if (!exp.only_into_do) {
        check_separation(got, "separation", "mutilation", *exp.separation,
                         *exp.mutilation, graph_core::flatten(d_),
                         "certificate for '" + exp.node + "'");
      }
    }
  }

  ProbExpr replay_goal(const nlohmann::json& step, const NodeSet& effect,
                       const NodeSet& do_set,
                       const SelectionDiagram& current) {
    const std::string kind = step.at("kind").get<std::string>();
    require(kind != "ignore_selection",
            "selection-node elimination below the root goal");
    require(set_from_json(step.at("effect")) == effect &&
                set_from_json(step.at("do")) == do_set,
            "step goal does not match the derivation position");
    if (kind == "source_effect") {
      require(current.selection_nodes.empty(),
              "source_effect claimed while selection nodes remain");
      check_separation(step, "separation", "mutilation",
                       dsep::SeparationQuery{{}, effect, do_set},
                       Mutilation{do_set, {}}, graph_core::flatten(current),
                       "source_effect step");
      return ProbExpr::make_term(effect, do_set, {}, Population::Source);
    }
    if (kind == "condition_1") {
      return replay_condition_1(step, effect, do_set, current);
    }
    if (kind == "condition_2") {
      NodeSet chosen = set_from_json(step.at("chosen"));
      require(graph_core::disjoint(chosen, set_union_of(effect, do_set)) &&
                  subset_of(chosen, current.base.nodes),
              "condition 2 covariates must be fresh observed nodes");
      dsep::SeparationQuery expected{current.selection_nodes, effect,
                                     set_union_of(do_set, chosen)};
      check_separation(step, "separation", "mutilation", expected,
                       Mutilation{do_set, {}}, graph_core::flatten(current),
                       "condition 2 step");
      if (chosen.empty()) {
        require(!step.contains("substeps"),
                "empty condition 2 covariate set cannot have a remainder");
        return ProbExpr::make_term(effect, do_set, {}, Population::Source);
      }
      const nlohmann::json& subs = step.at("substeps");
      require(subs.size() == 1, "condition 2 remainder must be one step");
      ProbExpr sub = replay_goal(subs[0], chosen, do_set, current);
      return ProbExpr::make_sum_over(
          chosen,
          ProbExpr::make_product(
              {ProbExpr::make_term(effect, do_set, chosen,
                                   Population::Source),
               std::move(sub)}));
    }
    if (kind == "condition_3") {
      NodeSet chosen = set_from_json(step.at("chosen"));
      require(!chosen.empty(), "condition 3 requires a nonempty witness set");
      require(graph_core::disjoint(chosen, set_union_of(effect, do_set)) &&
                  subset_of(chosen, current.base.nodes),
              "condition 3 witnesses must be fresh observed nodes");
      CausalDiagram flat = graph_core::flatten(current);
      Mutilation mut = docalc::rule_mutilation(3, current, do_set, {}, chosen);
      check_separation(step, "separation", "mutilation",
                       dsep::SeparationQuery{effect, do_set, chosen}, mut,
                       flat, "condition 3 step");
      check_separation(
          step, "separation_s", "mutilation_s",
          dsep::SeparationQuery{effect, do_set,
                                set_union_of(chosen,
                                             current.selection_nodes)},
          mut, flat, "condition 3 step (selection form)");
      const nlohmann::json& subs = step.at("substeps");
      require(subs.size() == 1, "condition 3 remainder must be one step");
      ProbExpr sub = replay_goal(subs[0], chosen, do_set, current);
      return ProbExpr::make_sum_over(
          chosen,
          ProbExpr::make_product(
              {ProbExpr::make_term(effect, {}, chosen, Population::Target),
               std::move(sub)}));
    }
    throw ReplayFailure{"unknown step kind '" + kind + "'"};
  }

  ProbExpr replay_condition_1(const nlohmann::json& step,
                              const NodeSet& effect, const NodeSet& do_set,
                              const SelectionDiagram& current) {
    ProbExpr cur = ProbExpr::make_term(effect, do_set, {}, Population::Target);
    if (!step.contains("substeps")) {
      require(do_set.empty(),
              "condition 1 without rewrites needs an empty intervention set");
      return cur;
    }
    const nlohmann::json& subs = step.at("substeps");
    require(!subs.empty(), "condition 1 carries no rewrite steps");
    SelectionDiagram wrapped = wrap_base(current.base);
    for (const auto& sub : subs) {
      const std::string kind = sub.at("kind").get<std::string>();
      ProbExpr before = docalc::parse_json(sub.at("before"));
      require(before == cur,
              "rewrite starts from an expression that is not the current one");
      NodeSet chosen = set_from_json(sub.at("chosen"));
      if (kind == "rule") {
        int rule = sub.at("rule").get<int>();
        require(rule >= 1 && rule <= 3, "unknown rule number");
        require(before.kind == ProbExpr::Kind::Term,
                "rule rewrite applies to a primitive term");
        docalc::RuleDirection direction = direction_for(
            rule, sub.at("direction").get<std::string>(), before.term, chosen);
        std::pair<ProbExpr, docalc::RuleStep> applied = [&] {
          try {
            return docalc::apply_rule(wrapped, cur, {}, rule, direction,
                                      chosen);
          } catch (const docalc::RuleNotApplicable& e) {
            throw ReplayFailure{std::string("rule rewrite is not licensed: ") +
                                e.what()};
          } catch (const docalc::BadSite& e) {
            throw ReplayFailure{std::string("rule rewrite is malformed: ") +
                                e.what()};
          }
        }();
        require(separation_from_json(sub.at("separation")) ==
                    applied.second.certified_query,
                "rule step stores a separation it did not certify");
        require(mutilation_from_json(sub.at("mutilation")) ==
                    applied.second.certified_mutilation,
                "rule step stores a mutilation it did not use");
        ProbExpr after = docalc::parse_json(sub.at("after"));
        require(after == applied.first,
                "rule step's recorded result differs from the rewrite");
        cur = applied.first;
      } else if (kind == "backdoor") {
        require(before.kind == ProbExpr::Kind::Term &&
                    before.term.conds.empty(),
                "adjustment applies to an unconditional term");
        require(!chosen.empty(), "adjustment set is empty");
        NodeSet down = graph_core::descendants(current.base, do_set);
        for (const auto& c : chosen) {
          require(current.base.nodes.count(c) > 0 && !down.count(c) &&
                      !effect.count(c),
                  "adjustment variable '" + c + "' is not pretreatment");
        }
        check_separation(sub, "separation", "mutilation",
                         dsep::SeparationQuery{effect, do_set, chosen},
                         Mutilation{{}, do_set}, current.base,
                         "adjustment step");
        ProbExpr expected_after = ProbExpr::make_sum_over(
            chosen,
            ProbExpr::make_product(
                {ProbExpr::make_term(effect, {}, set_union_of(do_set, chosen),
                                     Population::Target),
                 ProbExpr::make_term(chosen, {}, {}, Population::Target)}));
        ProbExpr after = docalc::parse_json(sub.at("after"));
        require(after == expected_after,
                "adjustment step's recorded result differs from the rewrite");
        cur = after;
      } else {
        throw ReplayFailure{"unknown rewrite kind '" + kind + "'"};
      }
    }
    return cur;
  }
};

}  // namespace

std::optional<std::string> replay_error(const nlohmann::json& trace,
                                        const SelectionDiagram& d) {
  try {
    graph_core::validate(d);
    Replayer replayer(d);
    replayer.run(trace);
    return std::nullopt;
  } catch (const ReplayFailure& f) {
    return f.message;
  } catch (const std::exception& e) {
    return std::string("trace is malformed: ") + e.what();
  }
}

}  // namespace transport
