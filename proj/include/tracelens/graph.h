#ifndef TRACELENS_GRAPH_H_
#define TRACELENS_GRAPH_H_

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tracelens/trace_model.h"

namespace tracelens {

// A raw operation-level computation DAG. Vertices that hold a recorded
// tensor are mapped to the node (and variant) they are recorded under; all
// other vertices are anonymous intermediates.
struct RawGraph {
  struct Binding {
    std::string node_id;
    std::string variant_key;
  };

  std::vector<std::string> vertices;
  std::vector<std::pair<std::string, std::string>> edges;
  std::map<std::string, Binding> named;
  // Role and variant list of every node referenced by `named`.
  std::vector<NodeSpec> nodes;

  // Convenience for building graphs by hand; vertices are added on demand.
  void add_edge(const std::string& src, const std::string& dst);
  void add_vertex(const std::string& id);
  void name(const std::string& vertex, const std::string& node_id,
            const std::string& variant_key = "default");
};

struct ContractOptions {
  // Drop edges implied by longer paths. Display-only; off by default so every
  // direct computation path stays visible.
  bool transitive_reduction = false;
};

// Contracts `raw` onto its named nodes: (u, v) is an edge iff some raw path
// from a vertex of u to a vertex of v has only anonymous interior vertices.
// Layers are assigned on the result. Throws kCyclicGraph naming a cycle
// member if the raw graph (or the node-level contraction) is cyclic, and
// kInvalidArgument for inconsistent bindings.
DependencyGraph contract(const RawGraph& raw, ContractOptions options = {});

// Sets layer(v) to the longest path length from any source to v.
DependencyGraph assign_layers(DependencyGraph graph);

// Lexicographic by node id. Ids listed in `priority` come first, in that
// order (manual layout override).
std::vector<std::string> order_layer(std::vector<std::string> nodes_in_layer,
                                     const std::vector<std::string>& priority = {});

// Node ids grouped by layer, each layer ordered with order_layer.
std::vector<std::vector<std::string>> layered_order(
    const DependencyGraph& graph, const std::vector<std::string>& priority = {});

struct Neighbors {
  std::vector<std::string> predecessors;
  std::vector<std::string> successors;
};

// Adjacency of one node, each list ordered by (layer, node id).
// Throws kNotFound for unknown nodes.
Neighbors neighbors(const DependencyGraph& graph, std::string_view node_id);

// Removes every edge (u, w) for which a longer path u ~> w exists.
DependencyGraph transitive_reduction(DependencyGraph graph);

}  // namespace tracelens

#endif  // TRACELENS_GRAPH_H_
