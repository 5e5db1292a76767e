#include "tracelens/graph.h"

#include <algorithm>
#include <deque>
#include <set>
#include <unordered_map>

#include "tracelens/error.h"

namespace tracelens {
namespace {

using Adjacency = std::vector<std::vector<std::size_t>>;

// Returns the index of a vertex on some cycle, or npos if `succ` is acyclic.
std::size_t find_cycle_member(const Adjacency& succ) {
  enum : char { kWhite, kGray, kBlack };
  std::vector<char> color(succ.size(), kWhite);
  std::vector<std::pair<std::size_t, std::size_t>> stack;
  for (std::size_t root = 0; root < succ.size(); ++root) {
    if (color[root] != kWhite) continue;
    stack.emplace_back(root, 0);
    color[root] = kGray;
    while (!stack.empty()) {
      auto& [u, next] = stack.back();
      if (next < succ[u].size()) {
        std::size_t v = succ[u][next++];
        if (color[v] == kGray) return v;
        if (color[v] == kWhite) {
          color[v] = kGray;
          stack.emplace_back(v, 0);
        }
      } else {
        color[u] = kBlack;
        stack.pop_back();
      }
    }
  }
  return static_cast<std::size_t>(-1);
}

struct IndexedGraph {
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::size_t> index;
  Adjacency succ;
  std::vector<std::size_t> indegree;
};

IndexedGraph index_dependency_graph(const DependencyGraph& g) {
  IndexedGraph ig;
  for (const auto& n : g.nodes) {
    ig.index.emplace(n.node_id, ig.ids.size());
    ig.ids.push_back(n.node_id);
  }
  ig.succ.resize(ig.ids.size());
  ig.indegree.assign(ig.ids.size(), 0);
  for (const auto& [u, v] : g.edges) {
    auto iu = ig.index.find(u);
    auto iv = ig.index.find(v);
    if (iu == ig.index.end() || iv == ig.index.end()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "graph: edge (" + u + ", " + v +
                      ") references an undeclared node");
    }
    ig.succ[iu->second].push_back(iv->second);
    ++ig.indegree[iv->second];
  }
  return ig;
}

void sort_canonical(DependencyGraph& g) {
  std::sort(g.nodes.begin(), g.nodes.end(),
            [](const NodeSpec& a, const NodeSpec& b) {
              return a.node_id < b.node_id;
            });
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
}

}  // namespace

void RawGraph::add_vertex(const std::string& id) {
  if (std::find(vertices.begin(), vertices.end(), id) == vertices.end()) {
    vertices.push_back(id);
  }
}

void RawGraph::add_edge(const std::string& src, const std::string& dst) {
  add_vertex(src);
  add_vertex(dst);
  edges.emplace_back(src, dst);
}

void RawGraph::name(const std::string& vertex, const std::string& node_id,
                    const std::string& variant_key) {
  add_vertex(vertex);
  named[vertex] = Binding{node_id, variant_key};
}

DependencyGraph contract(const RawGraph& raw, ContractOptions options) {
  std::unordered_map<std::string, std::size_t> vindex;
  for (const auto& v : raw.vertices) {
    if (!vindex.emplace(v, vindex.size()).second) {
      throw Error(ErrorCode::kInvalidArgument,
                  "raw graph: vertex '" + v + "' declared twice");
    }
  }
  Adjacency succ(raw.vertices.size());
  for (const auto& [u, v] : raw.edges) {
    auto iu = vindex.find(u);
    auto iv = vindex.find(v);
    if (iu == vindex.end() || iv == vindex.end()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "raw graph: edge (" + u + ", " + v +
                      ") references an undeclared vertex");
    }
    succ[iu->second].push_back(iv->second);
  }
  if (std::size_t c = find_cycle_member(succ); c != static_cast<std::size_t>(-1)) {
    throw Error(ErrorCode::kCyclicGraph,
                "raw graph has a cycle through vertex '" + raw.vertices[c] + "'",
                raw.vertices[c]);
  }

  std::unordered_map<std::string, const NodeSpec*> specs;
  for (const auto& n : raw.nodes) {
    require_valid(n);
    if (!specs.emplace(n.node_id, &n).second) {
      throw Error(ErrorCode::kInvalidArgument,
                  "raw graph: node '" + n.node_id + "' declared twice");
    }
  }
  // node index per raw vertex, or npos for anonymous vertices
  constexpr std::size_t kAnon = static_cast<std::size_t>(-1);
  std::vector<std::size_t> node_of(raw.vertices.size(), kAnon);
  std::unordered_map<std::string, std::size_t> node_index;
  for (std::size_t i = 0; i < raw.nodes.size(); ++i) {
    node_index.emplace(raw.nodes[i].node_id, i);
  }
  std::vector<bool> bound(raw.nodes.size(), false);
  for (const auto& [vertex, binding] : raw.named) {
    auto iv = vindex.find(vertex);
    if (iv == vindex.end()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "raw graph: named vertex '" + vertex + "' is not declared");
    }
    auto spec = specs.find(binding.node_id);
    if (spec == specs.end()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "raw graph: vertex '" + vertex + "' names undeclared node '" +
                      binding.node_id + "'");
    }
    const auto& keys = spec->second->variant_keys;
    if (std::find(keys.begin(), keys.end(), binding.variant_key) == keys.end()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "raw graph: vertex '" + vertex + "' uses variant '" +
                      binding.variant_key + "' not declared on node '" +
                      binding.node_id + "'");
    }
    std::size_t n = node_index.at(binding.node_id);
    node_of[iv->second] = n;
    bound[n] = true;
  }
  for (std::size_t i = 0; i < bound.size(); ++i) {
    if (!bound[i]) {
      throw Error(ErrorCode::kInvalidArgument,
                  "raw graph: node '" + raw.nodes[i].node_id +
                      "' is not bound to any vertex");
    }
  }

  // One BFS per named source, expanding only through anonymous vertices.
  std::set<std::pair<std::size_t, std::size_t>> node_edges;
  std::vector<std::size_t> seen_by(raw.vertices.size(), kAnon);
  std::deque<std::size_t> queue;
  for (std::size_t s = 0; s < raw.vertices.size(); ++s) {
    if (node_of[s] == kAnon) continue;
    queue.assign(succ[s].begin(), succ[s].end());
    for (std::size_t v : succ[s]) seen_by[v] = s;
    while (!queue.empty()) {
      std::size_t v = queue.front();
      queue.pop_front();
      if (node_of[v] != kAnon) {
        if (node_of[v] != node_of[s]) node_edges.emplace(node_of[s], node_of[v]);
        continue;
      }
      for (std::size_t w : succ[v]) {
        if (seen_by[w] != s) {
          seen_by[w] = s;
          queue.push_back(w);
        }
      }
    }
  }

  Adjacency node_succ(raw.nodes.size());
  for (auto [u, v] : node_edges) node_succ[u].push_back(v);
  if (std::size_t c = find_cycle_member(node_succ);
      c != static_cast<std::size_t>(-1)) {
    const auto& id = raw.nodes[c].node_id;
    throw Error(ErrorCode::kCyclicGraph,
                "contracted graph has a cycle through node '" + id +
                    "' (variants of one node depend on each other through "
                    "other named nodes)",
                id);
  }

  DependencyGraph g;
  g.nodes = raw.nodes;
  for (auto [u, v] : node_edges) {
    g.edges.emplace_back(raw.nodes[u].node_id, raw.nodes[v].node_id);
  }
  sort_canonical(g);
  if (options.transitive_reduction) g = transitive_reduction(std::move(g));
  return assign_layers(std::move(g));
}

DependencyGraph assign_layers(DependencyGraph graph) {
  IndexedGraph ig = index_dependency_graph(graph);
  std::vector<std::uint32_t> layer(ig.ids.size(), 0);
  std::vector<std::size_t> remaining = ig.indegree;
  std::vector<std::size_t> ready;
  for (std::size_t i = 0; i < remaining.size(); ++i) {
    if (remaining[i] == 0) ready.push_back(i);
  }
  std::size_t visited = 0;
  while (!ready.empty()) {
    std::size_t u = ready.back();
    ready.pop_back();
    ++visited;
    for (std::size_t v : ig.succ[u]) {
      layer[v] = std::max(layer[v], layer[u] + 1);
      if (--remaining[v] == 0) ready.push_back(v);
    }
  }
  if (visited != ig.ids.size()) {
    std::size_t c = find_cycle_member(ig.succ);
    throw Error(ErrorCode::kCyclicGraph,
                "graph has a cycle through node '" + ig.ids[c] + "'", ig.ids[c]);
  }
  graph.layer.clear();
  for (std::size_t i = 0; i < ig.ids.size(); ++i) {
    graph.layer[ig.ids[i]] = layer[i];
  }
  return graph;
}

std::vector<std::string> order_layer(std::vector<std::string> nodes_in_layer,
                                     const std::vector<std::string>& priority) {
  auto rank = [&](const std::string& id) {
    auto it = std::find(priority.begin(), priority.end(), id);
    return static_cast<std::size_t>(it - priority.begin());
  };
  std::stable_sort(nodes_in_layer.begin(), nodes_in_layer.end(),
                   [&](const std::string& a, const std::string& b) {
                     auto ra = rank(a);
                     auto rb = rank(b);
                     if (ra != rb) return ra < rb;
                     return a < b;
                   });
  return nodes_in_layer;
}

std::vector<std::vector<std::string>> layered_order(
    const DependencyGraph& graph, const std::vector<std::string>& priority) {
  std::vector<std::vector<std::string>> layers;
  for (const auto& n : graph.nodes) {
    auto it = graph.layer.find(n.node_id);
    std::size_t l = it == graph.layer.end() ? 0 : it->second;
    if (layers.size() <= l) layers.resize(l + 1);
    layers[l].push_back(n.node_id);
  }
  for (auto& l : layers) l = order_layer(std::move(l), priority);
  return layers;
}

Neighbors neighbors(const DependencyGraph& graph, std::string_view node_id) {
  if (graph.find(node_id) == nullptr) {
    throw Error(ErrorCode::kNotFound,
                "unknown node '" + std::string(node_id) + "'");
  }
  Neighbors out;
  for (const auto& [u, v] : graph.edges) {
    if (v == node_id) out.predecessors.push_back(u);
    if (u == node_id) out.successors.push_back(v);
  }
  auto by_layer = [&](const std::string& a, const std::string& b) {
    auto la = graph.layer.count(a) ? graph.layer.at(a) : 0u;
    auto lb = graph.layer.count(b) ? graph.layer.at(b) : 0u;
    return std::tie(la, a) < std::tie(lb, b);
  };
  std::sort(out.predecessors.begin(), out.predecessors.end(), by_layer);
  std::sort(out.successors.begin(), out.successors.end(), by_layer);
  return out;
}

DependencyGraph transitive_reduction(DependencyGraph graph) {
  IndexedGraph ig = index_dependency_graph(graph);
  const std::size_t n = ig.ids.size();
  // reach[u] = vertices reachable from u through paths of length >= 1
  std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<std::size_t> stack(ig.succ[s].begin(), ig.succ[s].end());
    while (!stack.empty()) {
      std::size_t v = stack.back();
      stack.pop_back();
      if (reach[s][v]) continue;
      reach[s][v] = true;
      for (std::size_t w : ig.succ[v]) stack.push_back(w);
    }
  }
  std::vector<std::pair<std::string, std::string>> kept;
  for (const auto& [u, w] : graph.edges) {
    std::size_t iu = ig.index.at(u);
    std::size_t iw = ig.index.at(w);
    bool implied = false;
    for (std::size_t v : ig.succ[iu]) {
      if (v != iw && reach[v][iw]) {
        implied = true;
        break;
      }
    }
    if (!implied) kept.emplace_back(u, w);
  }
  graph.edges = std::move(kept);
  return graph;
}

}  // namespace tracelens
