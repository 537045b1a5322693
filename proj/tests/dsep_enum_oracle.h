#pragma once

#include <set>
#include <string>
#include <vector>

#include "dsep.h"
#include "graph_core.h"

// Independent d-separation oracle. Enumerates every simple trail between the
// query sets and applies the collider/non-collider blocking rules trail by
// trail. Shares no traversal logic with the reachability implementation.

namespace dsep_oracle {

enum class Link { Forward, Backward, Bidir };

// Trail in traversal order: links[i] joins nodes[i] and nodes[i+1].
struct Trail {
  std::vector<std::string> nodes;
  std::vector<Link> links;
};

namespace detail {

inline void extend(const graph_core::CausalDiagram& g,
                   const graph_core::NodeSet& targets, Trail& trail,
                   std::set<std::string>& on_path, std::vector<Trail>& out) {
  const std::string cur = trail.nodes.back();
  if (targets.count(cur)) {
    out.push_back(trail);
    return;
  }
  auto step = [&](const std::string& next, Link link) {
    if (on_path.count(next)) return;
    trail.nodes.push_back(next);
    trail.links.push_back(link);
    on_path.insert(next);
    extend(g, targets, trail, on_path, out);
    on_path.erase(next);
    trail.links.pop_back();
    trail.nodes.pop_back();
  };
  for (const auto& e : g.directed_edges) {
    if (e.first == cur) step(e.second, Link::Forward);
    if (e.second == cur) step(e.first, Link::Backward);
  }
  for (const auto& e : g.bidirected_edges) {
    if (e.first == cur) step(e.second, Link::Bidir);
    if (e.second == cur) step(e.first, Link::Bidir);
  }
}

}  // namespace detail

// Every simple trail from `from` that ends at its first visit to `targets`.
// A trail reaching the target set and continuing past it is redundant: its
// prefix is active whenever the longer trail is.
inline std::vector<Trail> all_trails(const graph_core::CausalDiagram& g,
                                     const std::string& from,
                                     const graph_core::NodeSet& targets) {
  std::vector<Trail> out;
  Trail trail;
  trail.nodes.push_back(from);
  std::set<std::string> on_path{from};
  detail::extend(g, targets, trail, on_path, out);
  return out;
}

// `opens` must be ancestors(g, z) (reflexive), precomputed by the caller.
inline bool trail_active(const Trail& t, const graph_core::NodeSet& z,
                         const graph_core::NodeSet& opens) {
  for (std::size_t i = 1; i + 1 < t.nodes.size(); i++) {
    bool head_in = t.links[i - 1] != Link::Backward;
    bool head_out = t.links[i] != Link::Forward;
    if (head_in && head_out) {
      if (!opens.count(t.nodes[i])) return false;
    } else {
      if (z.count(t.nodes[i])) return false;
    }
  }
  return true;
}

inline bool separated(const graph_core::CausalDiagram& g,
                      const dsep::SeparationQuery& q) {
  graph_core::NodeSet opens =
      q.z.empty() ? graph_core::NodeSet{} : graph_core::ancestors(g, q.z);
  for (const auto& x : q.x) {
    if (q.y.count(x)) return false;
    for (const auto& t : all_trails(g, x, q.y)) {
      if (trail_active(t, q.z, opens)) return false;
    }
  }
  return true;
}

// Validity of a witness against the diagram: endpoints land in the query
// sets, every link is an edge of g with the stated orientation, and the walk
// is active given z. A walk whose colliders are ancestors of z and whose
// non-colliders avoid z certifies d-connection even if it revisits a node.
inline bool valid_witness(const graph_core::CausalDiagram& g,
                          const dsep::SeparationQuery& q, const Trail& t) {
  if (t.nodes.empty() || t.links.size() + 1 != t.nodes.size()) return false;
  if (!q.x.count(t.nodes.front()) || !q.y.count(t.nodes.back())) return false;
  for (std::size_t i = 0; i < t.links.size(); i++) {
    const std::string& a = t.nodes[i];
    const std::string& b = t.nodes[i + 1];
    bool ok = false;
    if (t.links[i] == Link::Bidir) {
      for (const auto& e : g.bidirected_edges) {
        if ((e.first == a && e.second == b) ||
            (e.first == b && e.second == a)) {
          ok = true;
          break;
        }
      }
    } else {
      const std::string& tail = t.links[i] == Link::Forward ? a : b;
      const std::string& head = t.links[i] == Link::Forward ? b : a;
      for (const auto& e : g.directed_edges) {
        if (e.first == tail && e.second == head) {
          ok = true;
          break;
        }
      }
    }
    if (!ok) return false;
  }
  graph_core::NodeSet opens =
      q.z.empty() ? graph_core::NodeSet{} : graph_core::ancestors(g, q.z);
  return trail_active(t, q.z, opens);
}

}  // namespace dsep_oracle
