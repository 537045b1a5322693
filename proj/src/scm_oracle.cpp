#include "scm_oracle.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <random>
#include <tuple>

#include "dsep.h"
#include "json.hpp"

namespace scm_oracle {

using graph_core::NodeSet;
using graph_core::SelectionDiagram;

int DiscreteScm::domain_of(const std::string& name) const {
  auto it = std::lower_bound(
      variables.begin(), variables.end(), name,
      [](const std::pair<std::string, int>& v, const std::string& n) {
        return v.first < n;
      });
  if (it == variables.end() || it->first != name) {
    throw graph_core::UnknownNode("unknown model variable '" + name + "'");
  }
  return it->second;
}

std::size_t Dist::states() const {
  std::size_t n = 1;
  for (const auto& v : vars) n *= static_cast<std::size_t>(v.second);
  return n;
}

std::size_t Dist::index_of(const std::vector<int>& assignment) const {
  std::size_t idx = 0;
  for (std::size_t i = 0; i < vars.size(); i++) {
    idx = idx * static_cast<std::size_t>(vars[i].second) +
          static_cast<std::size_t>(assignment[i]);
  }
  return idx;
}

namespace {

constexpr double kEventFloor = 1e-300;

std::vector<std::string> topo_order(const DiscreteScm& scm) {
  std::map<std::string, int> indegree;
  std::map<std::string, std::vector<std::string>> out_edges;
  for (const auto& v : scm.variables) indegree[v.first] = 0;
  for (const auto& [name, mech] : scm.mechanisms) {
    for (const auto& in : mech.endo_inputs) {
      out_edges[in].push_back(name);
      indegree[name]++;
    }
  }
  std::deque<std::string> ready;
  for (const auto& [name, deg] : indegree) {
    if (deg == 0) ready.push_back(name);
  }
  std::vector<std::string> order;
  while (!ready.empty()) {
    std::string n = ready.front();
    ready.pop_front();
    order.push_back(n);
    for (const auto& m : out_edges[n]) {
      if (--indegree[m] == 0) ready.push_back(m);
    }
  }
  if (order.size() != scm.variables.size()) {
    throw graph_core::CycleError("mechanism dependencies contain a cycle");
  }
  return order;
}

struct CompiledMechanism {
  std::vector<int> endo_pos;
  std::vector<int> endo_card;
  std::vector<int> exo_pos;
  std::vector<int> exo_card;
  const std::vector<int>* table;
};

Dist enumerate_joint(const DiscreteScm& scm) {
  Dist out;
  out.vars = scm.variables;
  out.p.assign(out.states(), 0.0);

  std::map<std::string, int> var_pos;
  for (std::size_t i = 0; i < scm.variables.size(); i++) {
    var_pos[scm.variables[i].first] = static_cast<int>(i);
  }
  std::map<std::string, int> exo_pos;
  for (std::size_t i = 0; i < scm.exogenous.size(); i++) {
    exo_pos[scm.exogenous[i].name] = static_cast<int>(i);
  }

  std::vector<std::string> order = topo_order(scm);
  std::vector<CompiledMechanism> program;
  std::vector<int> program_target;
  program.reserve(order.size());
  for (const auto& name : order) {
    auto mit = scm.mechanisms.find(name);
    if (mit == scm.mechanisms.end()) {
      throw graph_core::UnknownNode("variable '" + name + "' has no mechanism");
    }
    CompiledMechanism cm;
    for (const auto& in : mit->second.endo_inputs) {
      auto pit = var_pos.find(in);
      if (pit == var_pos.end()) {
        throw graph_core::UnknownNode("mechanism input '" + in +
                                      "' is not a model variable");
      }
      cm.endo_pos.push_back(pit->second);
      cm.endo_card.push_back(scm.variables[pit->second].second);
    }
    for (const auto& in : mit->second.exo_inputs) {
      auto pit = exo_pos.find(in);
      if (pit == exo_pos.end()) {
        throw graph_core::UnknownNode("mechanism noise input '" + in +
                                      "' is not an exogenous variable");
      }
      cm.exo_pos.push_back(pit->second);
      cm.exo_card.push_back(
          static_cast<int>(scm.exogenous[pit->second].probs.size()));
    }
    cm.table = &mit->second.table;
    program.push_back(std::move(cm));
    program_target.push_back(var_pos[name]);
  }

  std::vector<int> exo_vals(scm.exogenous.size(), 0);
  std::vector<int> endo_vals(scm.variables.size(), 0);
  for (;;) {
    double weight = 1.0;
    for (std::size_t i = 0; i < exo_vals.size(); i++) {
      weight *= scm.exogenous[i].probs[static_cast<std::size_t>(exo_vals[i])];
    }
    if (weight > 0.0) {
      for (std::size_t s = 0; s < program.size(); s++) {
        const CompiledMechanism& cm = program[s];
        std::size_t idx = 0;
        for (std::size_t i = 0; i < cm.endo_pos.size(); i++) {
          idx = idx * static_cast<std::size_t>(cm.endo_card[i]) +
                static_cast<std::size_t>(endo_vals[cm.endo_pos[i]]);
        }
        for (std::size_t i = 0; i < cm.exo_pos.size(); i++) {
          idx = idx * static_cast<std::size_t>(cm.exo_card[i]) +
                static_cast<std::size_t>(exo_vals[cm.exo_pos[i]]);
        }
        endo_vals[program_target[s]] = (*cm.table)[idx];
      }
      out.p[out.index_of(endo_vals)] += weight;
    }
    std::size_t k = exo_vals.size();
    while (k > 0) {
      k--;
      exo_vals[k]++;
      if (exo_vals[k] <
          static_cast<int>(scm.exogenous[k].probs.size())) {
        break;
      }
      exo_vals[k] = 0;
      if (k == 0) return out;
    }
    if (exo_vals.empty()) return out;
    bool wrapped = true;
    for (int v : exo_vals) {
      if (v != 0) {
        wrapped = false;
        break;
      }
    }
    if (wrapped) return out;
  }
}

}  // namespace

Dist joint(const DiscreteScm& scm) { return enumerate_joint(scm); }

Dist interventional(const DiscreteScm& scm,
                    const std::map<std::string, int>& assignment) {
  DiscreteScm cut = scm;
  for (const auto& [name, value] : assignment) {
    int domain = cut.domain_of(name);
    if (value < 0 || value >= domain) {
      throw BadValue("intervention value " + std::to_string(value) +
                     " is outside the domain of '" + name + "'");
    }
    Mechanism constant;
    constant.table = {value};
    cut.mechanisms[name] = std::move(constant);
  }
  return enumerate_joint(cut);
}

Dist marginal(const Dist& dist, const NodeSet& keep) {
  Dist out;
  std::vector<int> kept_pos;
  for (std::size_t i = 0; i < dist.vars.size(); i++) {
    if (keep.count(dist.vars[i].first)) {
      out.vars.push_back(dist.vars[i]);
      kept_pos.push_back(static_cast<int>(i));
    }
  }
  if (out.vars.size() != keep.size()) {
    throw graph_core::UnknownNode(
        "marginal over a variable outside the distribution");
  }
  out.p.assign(out.states(), 0.0);

  std::vector<int> vals(dist.vars.size(), 0);
  std::vector<int> kept_vals(kept_pos.size(), 0);
  for (std::size_t idx = 0; idx < dist.p.size(); idx++) {
    for (std::size_t i = 0; i < kept_pos.size(); i++) {
      kept_vals[i] = vals[static_cast<std::size_t>(kept_pos[i])];
    }
    out.p[out.index_of(kept_vals)] += dist.p[idx];
    std::size_t k = vals.size();
    while (k > 0) {
      k--;
      vals[k]++;
      if (vals[k] < dist.vars[k].second) break;
      vals[k] = 0;
    }
  }
  return out;
}

namespace {

using DoAssign = std::vector<std::pair<std::string, int>>;

struct Evaluator {
  const ScmPair& pair;
  std::map<std::pair<bool, DoAssign>, Dist> dist_cache;
  std::map<std::tuple<bool, DoAssign, NodeSet, NodeSet>, Dist> cond_cache;

  explicit Evaluator(const ScmPair& p) : pair(p) {}

  const DiscreteScm& model(bool target_pop) const {
    return target_pop ? pair.target : pair.source;
  }

  const Dist& dist_for(bool target_pop, const DoAssign& do_assign) {
    auto key = std::make_pair(target_pop, do_assign);
    auto it = dist_cache.find(key);
    if (it != dist_cache.end()) return it->second;
    Dist d;
    if (do_assign.empty()) {
      d = joint(model(target_pop));
    } else {
      std::map<std::string, int> assignment(do_assign.begin(),
                                            do_assign.end());
      d = interventional(model(target_pop), assignment);
    }
    return dist_cache.emplace(std::move(key), std::move(d)).first->second;
  }

  // Table over sorted(targets ∪ conds): P(targets | conds) under the given
  // regime. Computed once per (population, do, targets, conds) key.
  const Dist& cond_table(bool target_pop, const DoAssign& do_assign,
                         const NodeSet& targets, const NodeSet& conds) {
    auto key = std::make_tuple(target_pop, do_assign, targets, conds);
    auto it = cond_cache.find(key);
    if (it != cond_cache.end()) return it->second;

    const Dist& full = dist_for(target_pop, do_assign);
    Dist num = marginal(full, graph_core::set_union_of(targets, conds));
    if (!conds.empty()) {
      Dist den = marginal(full, conds);
      std::vector<int> den_pos;
      for (std::size_t i = 0; i < num.vars.size(); i++) {
        if (conds.count(num.vars[i].first)) {
          den_pos.push_back(static_cast<int>(i));
        }
      }
      std::vector<int> vals(num.vars.size(), 0);
      std::vector<int> den_vals(den_pos.size(), 0);
      for (std::size_t idx = 0; idx < num.p.size(); idx++) {
        for (std::size_t i = 0; i < den_pos.size(); i++) {
          den_vals[i] = vals[static_cast<std::size_t>(den_pos[i])];
        }
        double d = den.p[den.index_of(den_vals)];
        if (d < kEventFloor) {
          throw DivisionUndefined(
              "conditioning event has zero probability");
        }
        num.p[idx] /= d;
        std::size_t k = vals.size();
        while (k > 0) {
          k--;
          vals[k]++;
          if (vals[k] < num.vars[k].second) break;
          vals[k] = 0;
        }
      }
    }
    return cond_cache.emplace(std::move(key), std::move(num)).first->second;
  }

  Dist eval(const docalc::ProbExpr& expr) {
    switch (expr.kind) {
      case docalc::ProbExpr::Kind::Term:
        return eval_term(expr.term);
      case docalc::ProbExpr::Kind::Product:
        return eval_product(expr);
      case docalc::ProbExpr::Kind::Sum:
        return eval_sum(expr);
    }
    throw graph_core::GraphError("unreachable expression kind");
  }

  Dist eval_term(const docalc::ProbTerm& term) {
    bool target_pop = term.population == docalc::Population::Target;
    if (target_pop && !term.do_set.empty()) {
      throw UnresolvableTerm(
          "interventional term in the target population is not measurable");
    }
    NodeSet all = graph_core::set_union_of(
        graph_core::set_union_of(term.targets, term.do_set), term.conds);
    Dist out;
    const DiscreteScm& m = model(target_pop);
    for (const auto& n : all) out.vars.emplace_back(n, m.domain_of(n));
    out.p.assign(out.states(), 0.0);

    std::vector<int> do_pos;
    std::vector<int> tc_pos;
    for (std::size_t i = 0; i < out.vars.size(); i++) {
      if (term.do_set.count(out.vars[i].first)) {
        do_pos.push_back(static_cast<int>(i));
      } else {
        tc_pos.push_back(static_cast<int>(i));
      }
    }

    std::vector<int> vals(out.vars.size(), 0);
    std::vector<int> tc_vals(tc_pos.size(), 0);
    for (std::size_t idx = 0; idx < out.p.size(); idx++) {
      DoAssign do_assign;
      for (int p : do_pos) {
        do_assign.emplace_back(out.vars[static_cast<std::size_t>(p)].first,
                               vals[static_cast<std::size_t>(p)]);
      }
      const Dist& table =
          cond_table(target_pop, do_assign, term.targets, term.conds);
      for (std::size_t i = 0; i < tc_pos.size(); i++) {
        tc_vals[i] = vals[static_cast<std::size_t>(tc_pos[i])];
      }
      out.p[idx] = table.p[table.index_of(tc_vals)];
      std::size_t k = vals.size();
      while (k > 0) {
        k--;
        vals[k]++;
        if (vals[k] < out.vars[k].second) break;
        vals[k] = 0;
      }
    }
    return out;
  }

  Dist eval_product(const docalc::ProbExpr& expr) {
    std::vector<Dist> parts;
    parts.reserve(expr.children.size());
    NodeSet all;
    for (const auto& c : expr.children) {
      parts.push_back(eval(c));
      for (const auto& v : parts.back().vars) all.insert(v.first);
    }
    Dist out;
    const DiscreteScm& m = pair.source;
    for (const auto& n : all) out.vars.emplace_back(n, m.domain_of(n));
    out.p.assign(out.states(), 1.0);

    std::map<std::string, int> pos;
    for (std::size_t i = 0; i < out.vars.size(); i++) {
      pos[out.vars[i].first] = static_cast<int>(i);
    }
    std::vector<std::vector<int>> part_pos(parts.size());
    for (std::size_t pi = 0; pi < parts.size(); pi++) {
      for (const auto& v : parts[pi].vars) {
        part_pos[pi].push_back(pos[v.first]);
      }
    }

    std::vector<int> vals(out.vars.size(), 0);
    for (std::size_t idx = 0; idx < out.p.size(); idx++) {
      double prod = 1.0;
      for (std::size_t pi = 0; pi < parts.size(); pi++) {
        std::vector<int> sub(part_pos[pi].size());
        for (std::size_t i = 0; i < sub.size(); i++) {
          sub[i] = vals[static_cast<std::size_t>(part_pos[pi][i])];
        }
        prod *= parts[pi].p[parts[pi].index_of(sub)];
      }
      out.p[idx] = prod;
      std::size_t k = vals.size();
      while (k > 0) {
        k--;
        vals[k]++;
        if (vals[k] < out.vars[k].second) break;
        vals[k] = 0;
      }
    }
    return out;
  }

  Dist eval_sum(const docalc::ProbExpr& expr) {
    Dist body = eval(expr.children[0]);
    NodeSet keep;
    for (const auto& v : body.vars) {
      if (v.first != expr.sum_var) keep.insert(v.first);
    }
    Dist out;
    std::vector<int> kept_pos;
    for (std::size_t i = 0; i < body.vars.size(); i++) {
      if (body.vars[i].first != expr.sum_var) {
        out.vars.push_back(body.vars[i]);
        kept_pos.push_back(static_cast<int>(i));
      }
    }
    out.p.assign(out.states(), 0.0);
    std::vector<int> vals(body.vars.size(), 0);
    std::vector<int> kept_vals(kept_pos.size(), 0);
    for (std::size_t idx = 0; idx < body.p.size(); idx++) {
      for (std::size_t i = 0; i < kept_pos.size(); i++) {
        kept_vals[i] = vals[static_cast<std::size_t>(kept_pos[i])];
      }
      out.p[out.index_of(kept_vals)] += body.p[idx];
      std::size_t k = vals.size();
      while (k > 0) {
        k--;
        vals[k]++;
        if (vals[k] < body.vars[k].second) break;
        vals[k] = 0;
      }
    }
    return out;
  }
};

void validate_expr_names(const ScmPair& pair, const docalc::ProbExpr& expr) {
  switch (expr.kind) {
    case docalc::ProbExpr::Kind::Term:
      for (const NodeSet* s :
           {&expr.term.targets, &expr.term.do_set, &expr.term.conds}) {
        for (const auto& n : *s) {
          if (pair.diagram.selection_nodes.count(n)) {
            throw UnresolvableTerm("term mentions selection node '" + n +
                                   "', which has no distribution");
          }
          pair.source.domain_of(n);
        }
      }
      break;
    default:
      for (const auto& c : expr.children) validate_expr_names(pair, c);
      break;
  }
}

}  // namespace

ValueTable eval_expr(const ScmPair& pair, const docalc::ProbExpr& expr) {
  docalc::check_well_formed(expr);
  validate_expr_names(pair, expr);
  Evaluator ev(pair);
  return ev.eval(expr);
}

namespace {

std::string uniquify(std::string name, std::set<std::string>& used) {
  while (used.count(name)) name += "_";
  used.insert(name);
  return name;
}

struct PairSampler {
  std::mt19937_64 rng;
  const SampleConfig& cfg;

  PairSampler(std::uint64_t seed, const SampleConfig& c) : rng(seed), cfg(c) {}

  int rnd_int(int n) {
    return static_cast<int>((rng() >> 33) % static_cast<std::uint64_t>(n));
  }

  double rnd_prob() {
    double u = static_cast<double>(rng() >> 11) * 0x1p-53;
    return cfg.positivity_floor + (0.95 - cfg.positivity_floor) * u;
  }

  std::vector<double> draw_probs(int k) {
    std::vector<double> w(static_cast<std::size_t>(k));
    double total = 0.0;
    for (auto& v : w) {
      v = rnd_prob();
      total += v;
    }
    for (auto& v : w) v /= total;
    return w;
  }

  // One output value per (parent, latent, noise) combination; for each fixed
  // parent-and-latent row the first `domain` noise values enumerate a
  // permutation of the domain, so every value stays reachable.
  std::vector<int> draw_table(int domain, const std::vector<int>& input_cards,
                              int noise_card) {
    std::size_t rows = 1;
    for (int c : input_cards) rows *= static_cast<std::size_t>(c);
    std::vector<int> table;
    table.reserve(rows * static_cast<std::size_t>(noise_card));
    std::vector<int> perm(static_cast<std::size_t>(domain));
    for (std::size_t r = 0; r < rows; r++) {
      for (int i = 0; i < domain; i++) perm[static_cast<std::size_t>(i)] = i;
      for (int i = domain - 1; i > 0; i--) {
        int j = rnd_int(i + 1);
        std::swap(perm[static_cast<std::size_t>(i)],
                  perm[static_cast<std::size_t>(j)]);
      }
      for (int i = 0; i < domain; i++) {
        table.push_back(perm[static_cast<std::size_t>(i)]);
      }
      for (int i = domain; i < noise_card; i++) {
        table.push_back(rnd_int(domain));
      }
    }
    return table;
  }
};

}  // namespace

ScmPair sample_pair(const SelectionDiagram& d, std::uint64_t seed,
                    const SampleConfig& cfg) {
  graph_core::validate(d);
  if (cfg.domain_size < 2 || cfg.latent_domain < 1) {
    throw BadValue("domain sizes must allow at least two outcomes");
  }
  if (cfg.positivity_floor <= 0.0 || cfg.positivity_floor >= 0.95) {
    throw BadValue("positivity floor must lie in (0, 0.95)");
  }
  const int noise_card = std::max(cfg.noise_domain, cfg.domain_size);

  const NodeSet& observed = d.base.nodes;
  double endo_states = 1.0;
  double exo_states = 1.0;
  for (std::size_t i = 0; i < observed.size(); i++) {
    endo_states *= cfg.domain_size;
    exo_states *= noise_card;
  }
  for (std::size_t i = 0; i < d.base.bidirected_edges.size(); i++) {
    exo_states *= cfg.latent_domain;
  }
  if (endo_states > static_cast<double>(cfg.max_states) ||
      exo_states > static_cast<double>(cfg.max_states)) {
    throw DomainOverflow("model state space exceeds the enumeration cap");
  }

  PairSampler sampler(seed, cfg);
  ScmPair out;
  out.diagram = d;

  std::set<std::string> used_names(observed.begin(), observed.end());
  std::map<std::string, std::string> noise_name;
  std::map<graph_core::Edge, std::string> latent_name;
  DiscreteScm& src = out.source;
  for (const auto& v : observed) {
    src.variables.emplace_back(v, cfg.domain_size);
  }

  for (const auto& v : observed) {
    noise_name[v] = uniquify("u_" + v, used_names);
    src.exogenous.push_back({noise_name[v], sampler.draw_probs(noise_card)});
  }
  for (const auto& e : d.base.bidirected_edges) {
    latent_name[e] = uniquify("l_" + e.first + "_" + e.second, used_names);
    src.exogenous.push_back(
        {latent_name[e], sampler.draw_probs(cfg.latent_domain)});
  }

  std::map<std::string, NodeSet> parents;
  for (const auto& [a, b] : d.base.directed_edges) parents[b].insert(a);
  std::map<std::string, std::vector<graph_core::Edge>> incident;
  for (const auto& e : d.base.bidirected_edges) {
    incident[e.first].push_back(e);
    incident[e.second].push_back(e);
  }

  auto build_mechanism = [&](const std::string& v) {
    Mechanism mech;
    std::vector<int> input_cards;
    for (const auto& p : parents[v]) {
      mech.endo_inputs.push_back(p);
      input_cards.push_back(cfg.domain_size);
    }
    for (const auto& e : incident[v]) {
      mech.exo_inputs.push_back(latent_name[e]);
      input_cards.push_back(cfg.latent_domain);
    }
    mech.exo_inputs.push_back(noise_name[v]);
    mech.table = sampler.draw_table(cfg.domain_size, input_cards, noise_card);
    return mech;
  };

  for (const auto& v : observed) {
    src.mechanisms[v] = build_mechanism(v);
  }

  NodeSet shifted;
  for (const auto& [s, t] : d.selection_edges) {
    (void)s;
    shifted.insert(t);
  }

  out.target = src;
  std::map<std::string, std::size_t> exo_index;
  for (std::size_t i = 0; i < src.exogenous.size(); i++) {
    exo_index[src.exogenous[i].name] = i;
  }
  for (const auto& v : shifted) {
    out.target.exogenous[exo_index[noise_name[v]]].probs =
        sampler.draw_probs(noise_card);
    out.target.mechanisms[v] = build_mechanism(v);
  }
  for (const auto& e : d.base.bidirected_edges) {
    if (shifted.count(e.first) && shifted.count(e.second)) {
      out.target.exogenous[exo_index[latent_name[e]]].probs =
          sampler.draw_probs(cfg.latent_domain);
    }
  }
  return out;
}

DiscreteScm load_scm_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw graph_core::GraphError("cannot open model file '" + path + "'");
  }
  nlohmann::json j = nlohmann::json::parse(in);

  DiscreteScm scm;
  for (const auto& [name, dom] : j.at("variables").items()) {
    int d = dom.get<int>();
    if (d < 1) throw BadValue("variable '" + name + "' has empty domain");
    scm.variables.emplace_back(name, d);
  }
  std::sort(scm.variables.begin(), scm.variables.end());

  std::set<std::string> exo_names;
  for (const auto& e : j.at("exogenous")) {
    ExoVar v;
    v.name = e.at("name").get<std::string>();
    if (!exo_names.insert(v.name).second) {
      throw BadValue("duplicate exogenous variable '" + v.name + "'");
    }
    double total = 0.0;
    for (const auto& p : e.at("probs")) {
      double x = p.get<double>();
      if (x < 0.0) throw BadValue("negative probability for '" + v.name + "'");
      v.probs.push_back(x);
      total += x;
    }
    if (v.probs.empty() || std::abs(total - 1.0) > 1e-12) {
      throw BadValue("probabilities for '" + v.name + "' do not sum to one");
    }
    scm.exogenous.push_back(std::move(v));
  }

  for (const auto& m : j.at("mechanisms")) {
    const std::string var = m.at("variable").get<std::string>();
    int domain = scm.domain_of(var);
    if (scm.mechanisms.count(var)) {
      throw BadValue("variable '" + var + "' has two mechanisms");
    }
    Mechanism mech;
    std::size_t rows = 1;
    if (m.contains("inputs")) {
      for (const auto& in : m.at("inputs")) {
        const std::string name = in.get<std::string>();
        rows *= static_cast<std::size_t>(scm.domain_of(name));
        mech.endo_inputs.push_back(name);
      }
    }
    if (m.contains("exo_inputs")) {
      for (const auto& in : m.at("exo_inputs")) {
        const std::string name = in.get<std::string>();
        bool found = false;
        for (const auto& e : scm.exogenous) {
          if (e.name == name) {
            rows *= e.probs.size();
            found = true;
            break;
          }
        }
        if (!found) {
          throw graph_core::UnknownNode("unknown exogenous input '" + name +
                                        "'");
        }
        mech.exo_inputs.push_back(name);
      }
    }
    for (const auto& t : m.at("table")) {
      int v = t.get<int>();
      if (v < 0 || v >= domain) {
        throw BadValue("table entry for '" + var + "' is out of range");
      }
      mech.table.push_back(v);
    }
    if (mech.table.size() != rows) {
      throw BadValue("table for '" + var +
                     "' does not cover every input combination");
    }
    scm.mechanisms[var] = std::move(mech);
  }

  for (const auto& v : scm.variables) {
    if (!scm.mechanisms.count(v.first)) {
      throw BadValue("variable '" + v.first + "' has no mechanism");
    }
  }
  topo_order(scm);

  double endo_states = 1.0;
  double exo_states = 1.0;
  for (const auto& v : scm.variables) endo_states *= v.second;
  for (const auto& e : scm.exogenous) {
    exo_states *= static_cast<double>(e.probs.size());
  }
  SampleConfig caps;
  if (endo_states > static_cast<double>(caps.max_states) ||
      exo_states > static_cast<double>(caps.max_states)) {
    throw DomainOverflow("model state space exceeds the enumeration cap");
  }
  return scm;
}

Dist direct_effect(const ScmPair& pair, const graph_core::NodeSet& effect,
                   const graph_core::NodeSet& do_set,
                   const graph_core::NodeSet& strata) {
  graph_core::NodeSet all = graph_core::set_union_of(
      graph_core::set_union_of(effect, do_set), strata);
  Dist out;
  for (const auto& n : all) {
    out.vars.emplace_back(n, pair.target.domain_of(n));
  }
  out.p.assign(out.states(), 0.0);

  std::vector<int> do_pos;
  std::vector<int> es_pos;
  std::vector<int> strata_pos;
  for (std::size_t i = 0; i < out.vars.size(); i++) {
    if (do_set.count(out.vars[i].first)) {
      do_pos.push_back(static_cast<int>(i));
    } else {
      es_pos.push_back(static_cast<int>(i));
      if (strata.count(out.vars[i].first)) {
        strata_pos.push_back(static_cast<int>(i));
      }
    }
  }

  std::map<std::map<std::string, int>, Dist> cache;
  graph_core::NodeSet keep = graph_core::set_union_of(effect, strata);
  std::vector<int> vals(out.vars.size(), 0);
  for (std::size_t idx = 0; idx < out.p.size(); idx++) {
    std::map<std::string, int> assign;
    for (int p : do_pos) {
      assign[out.vars[static_cast<std::size_t>(p)].first] =
          vals[static_cast<std::size_t>(p)];
    }
    auto it = cache.find(assign);
    if (it == cache.end()) {
      it = cache
               .emplace(assign,
                        marginal(interventional(pair.target, assign), keep))
               .first;
    }
    const Dist& table = it->second;
    std::vector<int> sub(es_pos.size());
    for (std::size_t i = 0; i < es_pos.size(); i++) {
      sub[i] = vals[static_cast<std::size_t>(es_pos[i])];
    }
    double num = table.p[table.index_of(sub)];
    if (strata.empty()) {
      out.p[idx] = num;
    } else {
      Dist den = marginal(table, strata);
      std::vector<int> svals(strata_pos.size());
      {
        std::size_t si = 0;
        for (std::size_t i = 0; i < out.vars.size(); i++) {
          if (strata.count(out.vars[i].first)) {
            svals[si++] = vals[i];
          }
        }
      }
      double d = den.p[den.index_of(svals)];
      if (d < kEventFloor) {
        throw DivisionUndefined(
            "stratum has zero probability under intervention");
      }
      out.p[idx] = num / d;
    }
    std::size_t k = vals.size();
    while (k > 0) {
      k--;
      vals[k]++;
      if (vals[k] < out.vars[k].second) break;
      vals[k] = 0;
    }
  }
  return out;
}

double max_formula_deviation(const ScmPair& pair,
                             const docalc::ProbExpr& formula,
                             const graph_core::NodeSet& effect,
                             const graph_core::NodeSet& do_set,
                             const graph_core::NodeSet& strata) {
  Dist direct = direct_effect(pair, effect, do_set, strata);
  ValueTable table = eval_expr(pair, formula);

  std::vector<int> table_pos;
  for (const auto& v : table.vars) {
    bool found = false;
    for (std::size_t i = 0; i < direct.vars.size(); i++) {
      if (direct.vars[i].first == v.first) {
        table_pos.push_back(static_cast<int>(i));
        found = true;
        break;
      }
    }
    if (!found) {
      throw graph_core::GraphError("formula mentions variable '" + v.first +
                                   "' outside the queried effect");
    }
  }

  double worst = 0.0;
  std::vector<int> vals(direct.vars.size(), 0);
  std::vector<int> sub(table_pos.size());
  for (std::size_t idx = 0; idx < direct.p.size(); idx++) {
    for (std::size_t i = 0; i < table_pos.size(); i++) {
      sub[i] = vals[static_cast<std::size_t>(table_pos[i])];
    }
    double dev = std::abs(direct.p[idx] - table.p[table.index_of(sub)]);
    if (dev > worst) worst = dev;
    std::size_t k = vals.size();
    while (k > 0) {
      k--;
      vals[k]++;
      if (vals[k] < direct.vars[k].second) break;
      vals[k] = 0;
    }
  }
  return worst;
}

}  // namespace scm_oracle
