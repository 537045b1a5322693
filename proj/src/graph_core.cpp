#include "graph_core.h"

#include <algorithm>
#include <cctype>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>

namespace graph_core {

ParseError::ParseError(int line_no, int column_no, const std::string& what_arg)
    : GraphError("line " + std::to_string(line_no) + ", column " +
                 std::to_string(column_no) + ": " + what_arg),
      line(line_no),
      column(column_no) {}

NodeSet set_union_of(const NodeSet& a, const NodeSet& b) {
  NodeSet out = a;
  out.insert(b.begin(), b.end());
  return out;
}

NodeSet set_minus(const NodeSet& a, const NodeSet& b) {
  NodeSet out;
  for (const auto& n : a) {
    if (!b.count(n)) out.insert(n);
  }
  return out;
}

NodeSet set_intersect(const NodeSet& a, const NodeSet& b) {
  NodeSet out;
  for (const auto& n : a) {
    if (b.count(n)) out.insert(n);
  }
  return out;
}

bool disjoint(const NodeSet& a, const NodeSet& b) {
  return set_intersect(a, b).empty();
}

bool subset_of(const NodeSet& a, const NodeSet& b) {
  return std::all_of(a.begin(), a.end(),
                     [&](const std::string& n) { return b.count(n) > 0; });
}

namespace {

void require_known(const CausalDiagram& graph, const NodeSet& nodes,
                   const char* what) {
  for (const auto& n : nodes) {
    if (!graph.nodes.count(n)) {
      throw UnknownNode(std::string(what) + ": unknown node '" + n + "'");
    }
  }
}

void check_acyclic(const CausalDiagram& graph) {
  std::map<std::string, int> indeg;
  for (const auto& n : graph.nodes) indeg[n] = 0;
  for (const auto& e : graph.directed_edges) indeg[e.second]++;
  std::deque<std::string> ready;
  for (const auto& [n, d] : indeg) {
    if (d == 0) ready.push_back(n);
  }
  std::size_t seen = 0;
  while (!ready.empty()) {
    std::string n = ready.front();
    ready.pop_front();
    seen++;
    for (const auto& e : graph.directed_edges) {
      if (e.first == n && --indeg[e.second] == 0) ready.push_back(e.second);
    }
  }
  if (seen != graph.nodes.size()) {
    throw CycleError("directed part of the diagram contains a cycle");
  }
}

}  // namespace

void validate(const SelectionDiagram& diagram) {
  const CausalDiagram& base = diagram.base;
  for (const auto& e : base.directed_edges) {
    if (e.first == e.second) {
      throw DanglingEdge("self-loop on '" + e.first + "'");
    }
    for (const std::string& end : {e.first, e.second}) {
      if (diagram.selection_nodes.count(end)) {
        throw BadSelectionNode("selection node '" + end +
                               "' used in a directed edge");
      }
      if (!base.nodes.count(end)) {
        throw DanglingEdge("directed edge endpoint '" + end +
                           "' is not a declared node");
      }
    }
  }
  for (const auto& e : base.bidirected_edges) {
    if (e.first == e.second) {
      throw DanglingEdge("self-loop on '" + e.first + "'");
    }
    if (e.first > e.second) {
      throw DanglingEdge("bidirected edge stored out of canonical order");
    }
    for (const std::string& end : {e.first, e.second}) {
      if (diagram.selection_nodes.count(end)) {
        throw BadSelectionNode("selection node '" + end +
                               "' has a bidirected incidence");
      }
      if (!base.nodes.count(end)) {
        throw DanglingEdge("bidirected edge endpoint '" + end +
                           "' is not a declared node");
      }
    }
  }
  for (const auto& s : diagram.selection_nodes) {
    if (base.nodes.count(s)) {
      throw BadSelectionNode("'" + s +
                             "' is declared both observed and selection");
    }
    bool points_somewhere = false;
    for (const auto& e : diagram.selection_edges) {
      if (e.first == s) points_somewhere = true;
    }
    if (!points_somewhere) {
      throw BadSelectionNode("selection node '" + s +
                             "' points to no observed node");
    }
  }
  for (const auto& e : diagram.selection_edges) {
    if (!diagram.selection_nodes.count(e.first)) {
      throw BadSelectionNode("selection edge from undeclared selection node '" +
                             e.first + "'");
    }
    if (diagram.selection_nodes.count(e.second)) {
      throw BadSelectionNode("selection node '" + e.second +
                             "' is the target of a selection edge");
    }
    if (!base.nodes.count(e.second)) {
      throw DanglingEdge("selection edge target '" + e.second +
                         "' is not a declared node");
    }
  }
  check_acyclic(base);
}

CausalDiagram mutilate(const CausalDiagram& graph, const Mutilation& m) {
  require_known(graph, m.cut_incoming, "mutilate");
  require_known(graph, m.cut_outgoing, "mutilate");
  CausalDiagram out;
  out.nodes = graph.nodes;
  for (const auto& e : graph.directed_edges) {
    if (m.cut_incoming.count(e.second)) continue;
    if (m.cut_outgoing.count(e.first)) continue;
    out.directed_edges.insert(e);
  }
  for (const auto& e : graph.bidirected_edges) {
    if (m.cut_incoming.count(e.first) || m.cut_incoming.count(e.second)) {
      continue;
    }
    out.bidirected_edges.insert(e);
  }
  return out;
}

NodeSet ancestors(const CausalDiagram& graph, const NodeSet& nodes) {
  require_known(graph, nodes, "ancestors");
  NodeSet out = nodes;
  std::deque<std::string> frontier(nodes.begin(), nodes.end());
  while (!frontier.empty()) {
    std::string n = frontier.front();
    frontier.pop_front();
    for (const auto& e : graph.directed_edges) {
      if (e.second == n && !out.count(e.first)) {
        out.insert(e.first);
        frontier.push_back(e.first);
      }
    }
  }
  return out;
}

NodeSet descendants(const CausalDiagram& graph, const NodeSet& nodes) {
  require_known(graph, nodes, "descendants");
  NodeSet out = nodes;
  std::deque<std::string> frontier(nodes.begin(), nodes.end());
  while (!frontier.empty()) {
    std::string n = frontier.front();
    frontier.pop_front();
    for (const auto& e : graph.directed_edges) {
      if (e.first == n && !out.count(e.second)) {
        out.insert(e.second);
        frontier.push_back(e.second);
      }
    }
  }
  return out;
}

NodeSet z_outside_ancestors_of_w(const CausalDiagram& graph, const NodeSet& z,
                                 const NodeSet& w, const NodeSet& x) {
  require_known(graph, z, "z_outside_ancestors_of_w");
  require_known(graph, w, "z_outside_ancestors_of_w");
  require_known(graph, x, "z_outside_ancestors_of_w");
  CausalDiagram cut = mutilate(graph, Mutilation{x, {}});
  NodeSet anc_w = ancestors(cut, w);
  return set_minus(z, anc_w);
}

CausalDiagram flatten(const SelectionDiagram& diagram) {
  CausalDiagram out = diagram.base;
  out.nodes.insert(diagram.selection_nodes.begin(),
                   diagram.selection_nodes.end());
  out.directed_edges.insert(diagram.selection_edges.begin(),
                            diagram.selection_edges.end());
  return out;
}

SelectionDiagram drop_selection_nodes(const SelectionDiagram& diagram,
                                      const NodeSet& drop) {
  for (const auto& n : drop) {
    if (!diagram.selection_nodes.count(n)) {
      throw UnknownNode("drop_selection_nodes: '" + n +
                        "' is not a selection node");
    }
  }
  SelectionDiagram out;
  out.base = diagram.base;
  out.selection_nodes = set_minus(diagram.selection_nodes, drop);
  for (const auto& e : diagram.selection_edges) {
    if (!drop.count(e.first)) out.selection_edges.insert(e);
  }
  return out;
}

namespace {

struct Token {
  std::string text;
  int column = 0;
};

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  if (!std::isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_') {
    return false;
  }
  for (char c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '\'') {
      return false;
    }
  }
  return true;
}

std::vector<Token> tokenize_line(const std::string& line) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    if (std::isspace(static_cast<unsigned char>(line[i]))) {
      i++;
      continue;
    }
    if (line[i] == '#') break;
    std::size_t start = i;
    while (i < line.size() &&
           !std::isspace(static_cast<unsigned char>(line[i])) &&
           line[i] != '#') {
      i++;
    }
    tokens.push_back(Token{line.substr(start, i - start),
                           static_cast<int>(start) + 1});
  }
  return tokens;
}

NodeSet parse_name_list(const Token& tok, int line_no) {
  NodeSet out;
  std::stringstream ss(tok.text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!valid_name(part)) {
      throw ParseError(line_no, tok.column, "bad node name '" + part + "'");
    }
    out.insert(part);
  }
  if (out.empty()) {
    throw ParseError(line_no, tok.column, "empty name list");
  }
  return out;
}

}  // namespace

ParsedDiagram parse_diagram_text(const std::string& text) {
  ParsedDiagram result;
  SelectionDiagram& d = result.diagram;
  std::istringstream stream(text);
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    line_no++;
    std::vector<Token> toks = tokenize_line(line);
    if (toks.empty()) continue;
    const std::string& kw = toks[0].text;
    auto expect = [&](std::size_t n, const char* shape) {
      if (toks.size() != n) {
        throw ParseError(line_no, toks[0].column,
                         std::string("expected '") + shape + "'");
      }
    };
    auto name_at = [&](std::size_t i) {
      if (!valid_name(toks[i].text)) {
        throw ParseError(line_no, toks[i].column,
                         "bad node name '" + toks[i].text + "'");
      }
      return toks[i].text;
    };
    if (kw == "node") {
      if (toks.size() < 2) {
        throw ParseError(line_no, toks[0].column,
                         "expected 'node <name> [<name>...]'");
      }
      for (std::size_t i = 1; i < toks.size(); i++) {
        d.base.nodes.insert(name_at(i));
      }
    } else if (kw == "edge") {
      expect(4, "edge <a> -> <b>");
      if (toks[2].text != "->") {
        throw ParseError(line_no, toks[2].column, "expected '->'");
      }
      d.base.directed_edges.emplace(name_at(1), name_at(3));
    } else if (kw == "bidir") {
      expect(4, "bidir <a> <-> <b>");
      if (toks[2].text != "<->") {
        throw ParseError(line_no, toks[2].column, "expected '<->'");
      }
      std::string a = name_at(1), b = name_at(3);
      if (a == b) {
        throw ParseError(line_no, toks[1].column,
                         "bidirected self-loop on '" + a + "'");
      }
      d.base.bidirected_edges.emplace(std::min(a, b), std::max(a, b));
    } else if (kw == "sel") {
      expect(4, "sel <S-name> -> <b>");
      if (toks[2].text != "->") {
        throw ParseError(line_no, toks[2].column, "expected '->'");
      }
      d.selection_nodes.insert(name_at(1));
      d.selection_edges.emplace(name_at(1), name_at(3));
    } else if (kw == "query") {
      if (result.query) {
        throw ParseError(line_no, toks[0].column, "duplicate query line");
      }
      QueryLine q;
      std::size_t i = 1;
      auto take_keyword_set = [&](const char* key, NodeSet& into) {
        if (i >= toks.size() || toks[i].text != key) {
          return false;
        }
        if (i + 1 >= toks.size()) {
          throw ParseError(line_no, toks[i].column,
                           std::string("'") + key + "' needs a node list");
        }
        into = parse_name_list(toks[i + 1], line_no);
        i += 2;
        return true;
      };
      if (!take_keyword_set("effect", q.effect)) {
        throw ParseError(line_no, toks[0].column,
                         "expected 'query effect <set> do <set> [strata <set>]'");
      }
      if (!take_keyword_set("do", q.interventions)) {
        throw ParseError(line_no, toks[0].column,
                         "expected 'do <set>' after the effect set");
      }
      take_keyword_set("strata", q.strata);
      if (i != toks.size()) {
        throw ParseError(line_no, toks[i].column,
                         "unexpected token '" + toks[i].text + "'");
      }
      result.query = q;
    } else {
      throw ParseError(line_no, toks[0].column,
                       "unknown declaration '" + kw + "'");
    }
  }
  validate(d);
  return result;
}

ParsedDiagram load_diagram_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ParseError(0, 0, "cannot open '" + path + "'");
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_diagram_text(buf.str());
}

}  // namespace graph_core
