#include "dsep.h"

#include <deque>
#include <map>

namespace dsep {

using graph_core::CausalDiagram;
using graph_core::NodeSet;

namespace {

void validate_query(const CausalDiagram& graph, const SeparationQuery& q) {
  for (const NodeSet* s : {&q.x, &q.y, &q.z}) {
    for (const auto& n : *s) {
      if (!graph.nodes.count(n)) {
        throw graph_core::UnknownNode("separation query: unknown node '" + n +
                                      "'");
      }
    }
  }
  if (!graph_core::disjoint(q.x, q.y) || !graph_core::disjoint(q.x, q.z) ||
      !graph_core::disjoint(q.y, q.z)) {
    throw graph_core::OverlappingSets(
        "separation query sets must be pairwise disjoint");
  }
}

// Traversal state: a node plus whether it was entered through an arrowhead.
// A node entered through a tail is a non-collider on the trail regardless of
// how it is left; a node entered through a head is a collider exactly when it
// is also left through a head.
struct State {
  std::string node;
  bool head;

  bool operator<(const State& other) const {
    return node != other.node ? node < other.node : head < other.head;
  }
};

struct Move {
  State from;
  std::string to;
  bool to_head;
  LinkKind kind;  // link between from and to in trail order
};

struct Adjacency {
  std::map<std::string, std::vector<std::string>> out;    // n -> children
  std::map<std::string, std::vector<std::string>> in;     // n -> parents
  std::map<std::string, std::vector<std::string>> bidir;  // n -> partners
};

Adjacency build_adjacency(const CausalDiagram& graph) {
  Adjacency adj;
  for (const auto& e : graph.directed_edges) {
    adj.out[e.first].push_back(e.second);
    adj.in[e.second].push_back(e.first);
  }
  for (const auto& e : graph.bidirected_edges) {
    adj.bidir[e.first].push_back(e.second);
    adj.bidir[e.second].push_back(e.first);
  }
  return adj;
}

std::optional<Path> search(const CausalDiagram& graph,
                           const SeparationQuery& q) {
  validate_query(graph, q);
  if (q.x.empty() || q.y.empty()) return std::nullopt;

  Adjacency adj = build_adjacency(graph);
  NodeSet opens = graph_core::ancestors(graph, q.z);  // collider openers

  std::map<State, std::pair<State, Move>> parent;
  std::deque<State> frontier;
  auto visit = [&](const State& s, const State& prev, const Move& via,
                   bool is_start) {
    if (parent.count(s)) return;
    parent[s] = {is_start ? s : prev, via};
    frontier.push_back(s);
  };

  Move none{};
  for (const auto& s : q.x) {
    visit(State{s, false}, State{}, none, true);
  }

  std::optional<State> hit;
  while (!frontier.empty() && !hit) {
    State cur = frontier.front();
    frontier.pop_front();
    if (q.y.count(cur.node)) {
      hit = cur;
      break;
    }
    bool non_collider_ok = !q.z.count(cur.node);
    bool collider_ok = cur.head ? opens.count(cur.node) > 0 : non_collider_ok;
    if (non_collider_ok) {
      for (const auto& c : adj.out[cur.node]) {
        Move mv{cur, c, true, LinkKind::Forward};
        visit(State{c, true}, cur, mv, false);
      }
    }
    if (collider_ok) {
      for (const auto& p : adj.in[cur.node]) {
        Move mv{cur, p, false, LinkKind::Backward};
        visit(State{p, false}, cur, mv, false);
      }
      for (const auto& b : adj.bidir[cur.node]) {
        Move mv{cur, b, true, LinkKind::Bidirected};
        visit(State{b, true}, cur, mv, false);
      }
    }
  }
  if (!hit) return std::nullopt;

  std::vector<std::string> rev_nodes;
  std::vector<LinkKind> rev_links;
  State cur = *hit;
  rev_nodes.push_back(cur.node);
  while (true) {
    auto it = parent.find(cur);
    if (it->second.first.node == cur.node &&
        it->second.first.head == cur.head) {
      break;  // start state
    }
    const Move& mv = it->second.second;
    rev_links.push_back(mv.kind);
    rev_nodes.push_back(it->second.first.node);
    cur = it->second.first;
  }
  Path path;
  path.nodes.assign(rev_nodes.rbegin(), rev_nodes.rend());
  path.links.assign(rev_links.rbegin(), rev_links.rend());
  return path;
}

}  // namespace

bool d_separated(const CausalDiagram& graph, const SeparationQuery& query) {
  return !search(graph, query).has_value();
}

std::optional<Path> witness_path(const CausalDiagram& graph,
                                 const SeparationQuery& query) {
  return search(graph, query);
}

std::string render_path(const Path& path) {
  std::string out;
  for (std::size_t i = 0; i < path.nodes.size(); i++) {
    out += path.nodes[i];
    if (i < path.links.size()) {
      switch (path.links[i]) {
        case LinkKind::Forward:
          out += " -> ";
          break;
        case LinkKind::Backward:
          out += " <- ";
          break;
        case LinkKind::Bidirected:
          out += " <-> ";
          break;
      }
    }
  }
  return out;
}

}  // namespace dsep
