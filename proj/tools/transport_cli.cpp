#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "docalc.h"
#include "dsep.h"
#include "graph_core.h"
#include "json.hpp"
#include "scm_oracle.h"
#include "transport.h"

namespace {

using graph_core::NodeSet;

constexpr int kExitTrue = 0;
constexpr int kExitFalse = 1;
constexpr int kExitInputError = 2;

NodeSet parse_set(const std::string& csv) {
  NodeSet out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      if (!cur.empty()) out.insert(cur);
      cur.clear();
    } else if (c != ' ' && c != '\t') {
      cur += c;
    }
  }
  if (!cur.empty()) out.insert(cur);
  return out;
}

std::string set_text(const NodeSet& s) {
  std::string out = "{";
  for (const auto& n : s) {
    if (out.size() > 1) out += ", ";
    out += n;
  }
  return out + "}";
}

std::string fmt_deviation(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", x);
  return buf;
}

struct QueryFlags {
  std::string effect;
  std::string interventions;
  std::string strata;
  bool effect_set = false;
  bool do_set = false;
  bool strata_set = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--effect", effect, "Effect variables (comma separated)")
        ->each([this](const std::string&) { effect_set = true; });
    cmd->add_option("--do", interventions,
                    "Intervened variables (comma separated)")
        ->each([this](const std::string&) { do_set = true; });
    cmd->add_option("--strata", strata,
                    "Stratifying variables (comma separated)")
        ->each([this](const std::string&) { strata_set = true; });
  }

  transport::Query resolve(const graph_core::ParsedDiagram& pd) const {
    transport::Query q;
    if (pd.query) {
      q.effect = pd.query->effect;
      q.interventions = pd.query->interventions;
      q.strata = pd.query->strata;
    }
    if (effect_set) q.effect = parse_set(effect);
    if (do_set) q.interventions = parse_set(interventions);
    if (strata_set) q.strata = parse_set(strata);
    if (q.effect.empty()) {
      throw graph_core::GraphError(
          "no query given: pass --effect or add a query line to the diagram");
    }
    return q;
  }
};

void print_steps_text(const nlohmann::json& steps, int indent);

void print_step_text(const nlohmann::json& st, int indent) {
  std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  const std::string kind = st.at("kind").get<std::string>();
  auto sep_text = [](const nlohmann::json& s) {
    return "(" + set_text(s.at("x").get<NodeSet>()) + " _||_ " +
           set_text(s.at("y").get<NodeSet>()) + " | " +
           set_text(s.at("z").get<NodeSet>()) + ")";
  };
  auto mut_text = [](const nlohmann::json& m) {
    std::string out;
    NodeSet in = m.at("cut_incoming").get<NodeSet>();
    NodeSet outg = m.at("cut_outgoing").get<NodeSet>();
    if (!in.empty()) out += " cut_incoming=" + set_text(in);
    if (!outg.empty()) out += " cut_outgoing=" + set_text(outg);
    return out;
  };
  std::string line = pad + kind;
  if (st.contains("effect")) {
    line += " effect=" + set_text(st.at("effect").get<NodeSet>());
    line += " do=" + set_text(st.at("do").get<NodeSet>());
  }
  if (st.contains("rule")) line += " rule=" + std::to_string(st.at("rule").get<int>());
  if (st.contains("direction")) {
    line += " direction=" + st.at("direction").get<std::string>();
  }
  if (st.contains("chosen")) {
    line += " chosen=" + set_text(st.at("chosen").get<NodeSet>());
  }
  if (st.contains("dropped")) {
    line += " dropped=" + set_text(st.at("dropped").get<NodeSet>());
  }
  if (st.contains("separation")) {
    line += " certificate " + sep_text(st.at("separation"));
    line += mut_text(st.at("mutilation"));
  }
  if (st.contains("separation_s")) {
    line += " and " + sep_text(st.at("separation_s"));
  }
  if (st.contains("before_text")) {
    line += " : " + st.at("before_text").get<std::string>() + " => " +
            st.at("after_text").get<std::string>();
  }
  std::cout << line << "\n";
  if (st.contains("certs")) {
    for (const auto& c : st.at("certs")) {
      std::string cline = pad + "  selection node " +
                          c.at("node").get<std::string>();
      if (c.at("only_into_do").get<bool>()) {
        cline += " points only into the intervention set";
      } else {
        cline += " certificate " + sep_text(c.at("separation")) +
                 mut_text(c.at("mutilation"));
      }
      std::cout << cline << "\n";
    }
  }
  if (st.contains("substeps")) print_steps_text(st.at("substeps"), indent + 1);
}

void print_steps_text(const nlohmann::json& steps, int indent) {
  for (const auto& st : steps) print_step_text(st, indent);
}

int cmd_check(const std::string& diagram_path, const QueryFlags& flags,
              bool dsep_mode, const std::string& x_csv,
              const std::string& y_csv, const std::string& z_csv,
              bool sadmissible_mode, const std::string& sadmissible_csv,
              bool direct_mode, const std::string& format) {
  graph_core::ParsedDiagram pd = graph_core::load_diagram_file(diagram_path);
  int modes = (dsep_mode ? 1 : 0) + (sadmissible_mode ? 1 : 0) +
              (direct_mode ? 1 : 0);
  if (modes != 1) {
    throw graph_core::GraphError(
        "check needs exactly one of --dsep, --sadmissible, --direct");
  }

  bool verdict = false;
  std::string label;
  std::optional<dsep::Path> witness;
  graph_core::CausalDiagram witness_graph;

  if (dsep_mode) {
    label = "d-separated";
    dsep::SeparationQuery q{parse_set(x_csv), parse_set(y_csv),
                            parse_set(z_csv)};
    witness_graph = graph_core::flatten(pd.diagram);
    verdict = dsep::d_separated(witness_graph, q);
    if (!verdict) witness = dsep::witness_path(witness_graph, q);
  } else if (sadmissible_mode) {
    label = "S-admissible";
    transport::Query q = flags.resolve(pd);
    NodeSet t = parse_set(sadmissible_csv);
    verdict = transport::s_admissible(pd.diagram, t, q.interventions, q.effect);
    if (!verdict) {
      witness_graph = graph_core::mutilate(
          graph_core::flatten(pd.diagram),
          graph_core::Mutilation{q.interventions, {}});
      witness = dsep::witness_path(
          witness_graph,
          {pd.diagram.selection_nodes, q.effect,
           graph_core::set_union_of(t, q.interventions)});
    }
  } else {
    label = "directly transportable";
    transport::Query q = flags.resolve(pd);
    verdict = transport::directly_transportable(pd.diagram, q);
    if (!verdict) {
      witness_graph = graph_core::mutilate(
          graph_core::flatten(pd.diagram),
          graph_core::Mutilation{q.interventions, {}});
      witness = dsep::witness_path(
          witness_graph,
          {pd.diagram.selection_nodes, q.effect,
           graph_core::set_union_of(q.strata, q.interventions)});
    }
  }

  if (format == "json") {
    nlohmann::json j;
    j["schema"] = 1;
    j["command"] = "check";
    j["check"] = label;
    j["result"] = verdict;
    if (witness) j["witness"] = dsep::render_path(*witness);
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << label << ": " << (verdict ? "true" : "false") << "\n";
    if (witness) {
      std::cout << "witness: " << dsep::render_path(*witness) << "\n";
    }
  }
  return verdict ? kExitTrue : kExitFalse;
}

transport::Derivation run_derivation(const graph_core::ParsedDiagram& pd,
                                     const transport::Query& q,
                                     const transport::Options& opts) {
  if (!q.strata.empty()) return transport::transport_strata(pd.diagram, q);
  return transport::transport_effect(pd.diagram, q, opts);
}

int cmd_derive(const std::string& diagram_path, const QueryFlags& flags,
               const transport::Options& opts, const std::string& format) {
  graph_core::ParsedDiagram pd = graph_core::load_diagram_file(diagram_path);
  transport::Query q = flags.resolve(pd);
  transport::Derivation der = run_derivation(pd, q, opts);
  nlohmann::json j = transport::derivation_json(der);

  if (format == "json") {
    std::cout << j.dump(2) << "\n";
  } else if (der.transportable) {
    if (format == "latex") {
      std::cout << docalc::render_latex(*der.formula) << "\n";
    } else {
      std::cout << docalc::render_text(*der.formula) << "\n";
    }
    std::cout << "derivation:\n";
    print_steps_text(j.at("steps"), 1);
  } else {
    std::cout << "not derivable\n";
    std::cout << "reason: " << der.reason << "\n";
    if (!j.at("steps").empty()) {
      std::cout << "derivation:\n";
      print_steps_text(j.at("steps"), 1);
    }
  }
  return der.transportable ? kExitTrue : kExitFalse;
}

int cmd_verify(const std::string& diagram_path, const QueryFlags& flags,
               const transport::Options& opts, const std::string& formula_path,
               int seeds, double tol, std::uint64_t seed_base, int domain_size,
               double positivity_floor, const std::string& format) {
  graph_core::ParsedDiagram pd = graph_core::load_diagram_file(diagram_path);
  transport::Query q = flags.resolve(pd);

  docalc::ProbExpr formula = [&] {
    if (!formula_path.empty()) {
      std::ifstream in(formula_path);
      if (!in) {
        throw graph_core::GraphError("cannot open formula file '" +
                                     formula_path + "'");
      }
      nlohmann::json j = nlohmann::json::parse(in);
      if (j.is_object() && j.contains("formula")) {
        return docalc::parse_json(j.at("formula"));
      }
      return docalc::parse_json(j);
    }
    transport::Derivation der = run_derivation(pd, q, opts);
    if (!der.transportable) {
      throw graph_core::GraphError("query is not derivable: " + der.reason);
    }
    return *der.formula;
  }();

  scm_oracle::SampleConfig cfg;
  cfg.domain_size = domain_size;
  cfg.positivity_floor = positivity_floor;

  double worst = 0.0;
  std::uint64_t worst_seed = seed_base;
  for (int i = 0; i < seeds; i++) {
    std::uint64_t seed = seed_base + static_cast<std::uint64_t>(i);
    scm_oracle::ScmPair pair = scm_oracle::sample_pair(pd.diagram, seed, cfg);
    double dev = scm_oracle::max_formula_deviation(pair, formula, q.effect,
                                                   q.interventions, q.strata);
    if (dev > worst) {
      worst = dev;
      worst_seed = seed;
    }
  }
  bool pass = worst < tol;

  if (format == "json") {
    nlohmann::json j;
    j["schema"] = 1;
    j["command"] = "verify";
    j["formula_text"] = docalc::render_text(formula);
    j["seeds"] = seeds;
    j["tolerance"] = tol;
    j["max_deviation"] = worst;
    j["worst_seed"] = worst_seed;
    j["pass"] = pass;
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "formula: " << docalc::render_text(formula) << "\n";
    std::cout << "seeds: " << seeds << "\n";
    std::cout << "max deviation: " << fmt_deviation(worst) << " (seed "
              << worst_seed << ")\n";
    std::cout << "verdict: " << (pass ? "pass" : "fail") << "\n";
  }
  return pass ? kExitTrue : kExitFalse;
}

int cmd_explain(const std::string& diagram_path, const std::string& trace_path,
                const std::string& format) {
  graph_core::ParsedDiagram pd = graph_core::load_diagram_file(diagram_path);
  std::ifstream in(trace_path);
  if (!in) {
    throw graph_core::GraphError("cannot open trace file '" + trace_path +
                                 "'");
  }
  nlohmann::json trace = nlohmann::json::parse(in);
  std::optional<std::string> err = transport::replay_error(trace, pd.diagram);

  if (format == "json") {
    nlohmann::json j;
    j["schema"] = 1;
    j["command"] = "explain";
    j["replay_ok"] = !err.has_value();
    if (err) j["error"] = *err;
    std::cout << j.dump(2) << "\n";
    return err ? kExitFalse : kExitTrue;
  }

  if (err) {
    std::cout << "replay failed: " << *err << "\n";
    return kExitFalse;
  }
  const nlohmann::json& qj = trace.at("query");
  std::cout << "query: effect " << set_text(qj.at("effect").get<NodeSet>())
            << " do " << set_text(qj.at("do").get<NodeSet>()) << " strata "
            << set_text(qj.at("strata").get<NodeSet>()) << "\n";
  bool transportable = trace.at("transportable").get<bool>();
  std::cout << "transportable: " << (transportable ? "true" : "false") << "\n";
  if (transportable) {
    std::cout << "formula: " << trace.at("formula_text").get<std::string>()
              << "\n";
  } else if (trace.contains("reason")) {
    std::cout << "reason: " << trace.at("reason").get<std::string>() << "\n";
  }
  std::cout << "replay: all certificates verified\n";
  if (!trace.at("steps").empty()) {
    std::cout << "derivation:\n";
    print_steps_text(trace.at("steps"), 1);
  }
  return kExitTrue;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal transportability engine"};
  app.require_subcommand(1);

  std::string diagram_path;
  std::string format = "text";
  transport::Options opts;
  std::size_t max_set_size = 0;
  QueryFlags flags;

  auto add_common = [&](CLI::App* cmd, bool with_format = true) {
    cmd->add_option("-d,--diagram", diagram_path, "Diagram file")->required();
    if (with_format) {
      cmd->add_option("--format", format, "Output format")
          ->check(CLI::IsMember({"text", "latex", "json"}));
    }
  };

  CLI::App* check = app.add_subcommand("check", "Run a single graph check");
  add_common(check);
  flags.attach(check);
  bool dsep_mode = false;
  bool direct_mode = false;
  std::string x_csv, y_csv, z_csv, sadmissible_csv;
  bool sadmissible_mode = false;
  check->add_flag("--dsep", dsep_mode, "Test d-separation of --x and --y given --z");
  check->add_option("--x", x_csv, "First node set for --dsep");
  check->add_option("--y", y_csv, "Second node set for --dsep");
  check->add_option("--z", z_csv, "Conditioning set for --dsep");
  check
      ->add_option("--sadmissible", sadmissible_csv,
                   "Test S-admissibility of this set for the query")
      ->each([&](const std::string&) { sadmissible_mode = true; });
  check->add_flag("--direct", direct_mode,
                  "Test direct transportability of the stratified query");

  CLI::App* derive = app.add_subcommand("derive", "Derive a transport formula");
  add_common(derive);
  flags.attach(derive);
  derive->add_option("--max-set-size", max_set_size,
                     "Cap candidate covariate-set size (0 = unlimited)");
  derive->add_flag("--prefer-observational", opts.prefer_observational,
                   "Prefer formulas with fewer source do-terms");

  CLI::App* verify = app.add_subcommand(
      "verify", "Check a formula numerically against sampled models");
  add_common(verify);
  flags.attach(verify);
  std::string formula_path;
  int seeds = 100;
  double tol = 1e-9;
  std::uint64_t seed_base = 0;
  int domain_size = 2;
  double positivity_floor = 0.05;
  verify->add_option("--formula", formula_path,
                     "Formula JSON file (defaults to deriving one)");
  verify->add_option("--seeds", seeds, "Number of sampled model pairs")
      ->check(CLI::PositiveNumber);
  verify->add_option("--tol", tol, "Deviation tolerance")
      ->check(CLI::PositiveNumber);
  verify->add_option("--seed-base", seed_base, "First seed");
  verify->add_option("--domain-size", domain_size, "Observed variable domain")
      ->check(CLI::Range(2, 6));
  verify->add_option("--positivity-floor", positivity_floor,
                     "Minimum unnormalized outcome weight");
  verify->add_option("--max-set-size", max_set_size,
                     "Cap candidate covariate-set size (0 = unlimited)");
  verify->add_flag("--prefer-observational", opts.prefer_observational,
                   "Prefer formulas with fewer source do-terms");

  CLI::App* explain =
      app.add_subcommand("explain", "Replay and pretty-print a stored trace");
  add_common(explain);
  std::string trace_path;
  explain->add_option("--trace", trace_path, "Derivation trace JSON file")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInputError;
  }

  if (max_set_size > 0) opts.max_set_size = max_set_size;

  try {
    if (app.got_subcommand(check)) {
      return cmd_check(diagram_path, flags, dsep_mode, x_csv, y_csv, z_csv,
                       sadmissible_mode, sadmissible_csv, direct_mode, format);
    }
    if (app.got_subcommand(derive)) {
      return cmd_derive(diagram_path, flags, opts, format);
    }
    if (app.got_subcommand(verify)) {
      return cmd_verify(diagram_path, flags, opts, formula_path, seeds, tol,
                        seed_base, domain_size, positivity_floor, format);
    }
    return cmd_explain(diagram_path, trace_path, format);
  } catch (const graph_core::ParseError& e) {
    std::cerr << "error: " << diagram_path << ": " << e.what() << "\n";
    return kExitInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInputError;
  }
}
