#pragma once

#include <optional>
#include <string>
#include <vector>

#include "graph_core.h"

namespace dsep {

struct SeparationQuery {
  graph_core::NodeSet x;
  graph_core::NodeSet y;
  graph_core::NodeSet z;

  bool operator==(const SeparationQuery& other) const = default;
};

enum class LinkKind { Forward, Backward, Bidirected };

// An undirected trail: nodes[i] is joined to nodes[i+1] by links[i].
// Forward means nodes[i] -> nodes[i+1], Backward means nodes[i] <- nodes[i+1].
struct Path {
  std::vector<std::string> nodes;
  std::vector<LinkKind> links;
};

// True iff every trail from x to y is blocked: it passes an arrow-emitting
// node in z, or contains a collider outside z with no descendant in z.
bool d_separated(const graph_core::CausalDiagram& graph,
                 const SeparationQuery& query);

// One active trail certifying d-connection, or nothing when separated.
std::optional<Path> witness_path(const graph_core::CausalDiagram& graph,
                                 const SeparationQuery& query);

std::string render_path(const Path& path);

}  // namespace dsep
