#include "layerdag/dag.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace layerdag {

void canonicalize_edges(std::vector<std::pair<int, int>>& edges) {
  std::sort(edges.begin(), edges.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
}

bool Dag::operator==(const Dag& other) const {
  if (num_nodes != other.num_nodes || attrs != other.attrs ||
      label != other.label)
    return false;
  auto a = edges;
  auto b = other.edges;
  canonicalize_edges(a);
  canonicalize_edges(b);
  return a == b;
}

std::optional<ValidationError> validate_dag(const Dag& d) {
  using Kind = ValidationError::Kind;
  for (const auto& [u, v] : d.edges) {
    if (u < 0 || u >= d.num_nodes || v < 0 || v >= d.num_nodes)
      return ValidationError{Kind::EdgeOutOfRange,
                             "edge (" + std::to_string(u) + ", " +
                                 std::to_string(v) + ") out of range",
                             {}};
    if (u == v)
      return ValidationError{
          Kind::SelfLoop, "self-loop at node " + std::to_string(u), {}};
  }
  {
    std::set<std::pair<int, int>> seen;
    for (const auto& e : d.edges)
      if (!seen.insert(e).second)
        return ValidationError{Kind::DuplicateEdge,
                               "duplicate edge (" + std::to_string(e.first) +
                                   ", " + std::to_string(e.second) + ")",
                               {}};
  }
  if (!d.attrs.empty() || d.num_nodes > 0) {
    if (static_cast<int>(d.attrs.size()) != d.num_nodes)
      return ValidationError{Kind::AttrChannelMismatch,
                             "attrs size != num_nodes", {}};
    size_t channels = d.attrs.empty() ? 0 : d.attrs[0].size();
    for (int v = 0; v < d.num_nodes; ++v) {
      if (d.attrs[v].size() != channels)
        return ValidationError{
            Kind::AttrChannelMismatch,
            "node " + std::to_string(v) + " has inconsistent channel count",
            {}};
      for (int x : d.attrs[v])
        if (x < 0)
          return ValidationError{
              Kind::AttrChannelMismatch,
              "node " + std::to_string(v) + " has negative attribute value",
              {}};
    }
  }
  // Kahn's algorithm; leftover nodes witness a cycle.
  std::vector<int> indeg(d.num_nodes, 0);
  std::vector<std::vector<int>> succ(d.num_nodes);
  for (const auto& [u, v] : d.edges) {
    ++indeg[v];
    succ[u].push_back(v);
  }
  std::vector<int> stack;
  for (int v = 0; v < d.num_nodes; ++v)
    if (indeg[v] == 0) stack.push_back(v);
  int removed = 0;
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    ++removed;
    for (int v : succ[u])
      if (--indeg[v] == 0) stack.push_back(v);
  }
  if (removed != d.num_nodes) {
    std::vector<int> witness;
    for (int v = 0; v < d.num_nodes; ++v)
      if (indeg[v] > 0) witness.push_back(v);
    return ValidationError{Kind::CycleDetected, "graph contains a cycle",
                           std::move(witness)};
  }
  return std::nullopt;
}

LayerPartition layer_partition(const Dag& d) {
  if (auto err = validate_dag(d))
    throw std::invalid_argument("layer_partition: " + err->message);

  // depth[v] = longest path length from any source to v.
  std::vector<int> indeg(d.num_nodes, 0);
  std::vector<std::vector<int>> succ(d.num_nodes);
  for (const auto& [u, v] : d.edges) {
    ++indeg[v];
    succ[u].push_back(v);
  }
  std::vector<int> depth(d.num_nodes, 0);
  std::vector<int> remaining = indeg;
  std::vector<int> stack;
  for (int v = 0; v < d.num_nodes; ++v)
    if (remaining[v] == 0) stack.push_back(v);
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    for (int v : succ[u]) {
      depth[v] = std::max(depth[v], depth[u] + 1);
      if (--remaining[v] == 0) stack.push_back(v);
    }
  }

  LayerPartition p;
  p.num_nodes = d.num_nodes;
  p.attrs = d.attrs;
  p.label = d.label;
  int max_depth = -1;
  for (int v = 0; v < d.num_nodes; ++v) max_depth = std::max(max_depth, depth[v]);
  p.layers.assign(max_depth + 1, {});
  for (int v = 0; v < d.num_nodes; ++v) p.layers[depth[v]].push_back(v);
  // Node IDs within a layer sorted so the partition is independent of edge
  // list order.
  for (auto& layer : p.layers) std::sort(layer.begin(), layer.end());

  p.edge_slices.assign(std::max(0, max_depth), {});
  for (const auto& e : d.edges) p.edge_slices[depth[e.second] - 1].push_back(e);
  for (auto& slice : p.edge_slices) canonicalize_edges(slice);
  return p;
}

Dag reconstruct(const LayerPartition& p) {
  std::vector<int> depth(p.num_nodes, -1);
  for (size_t l = 0; l < p.layers.size(); ++l)
    for (int v : p.layers[l]) {
      if (v < 0 || v >= p.num_nodes || depth[v] != -1)
        throw std::invalid_argument("reconstruct: layers are not a partition");
      depth[v] = static_cast<int>(l);
    }
  for (int v = 0; v < p.num_nodes; ++v)
    if (depth[v] == -1)
      throw std::invalid_argument("reconstruct: layers are not a partition");

  Dag d;
  d.num_nodes = p.num_nodes;
  d.attrs = p.attrs;
  d.label = p.label;
  for (size_t s = 0; s < p.edge_slices.size(); ++s) {
    for (const auto& [u, v] : p.edge_slices[s]) {
      if (u < 0 || u >= p.num_nodes || v < 0 || v >= p.num_nodes ||
          depth[v] != static_cast<int>(s) + 1 || depth[u] > static_cast<int>(s))
        throw std::invalid_argument(
            "reconstruct: edge slice violates bipartite direction rule");
      d.edges.emplace_back(u, v);
    }
  }
  canonicalize_edges(d.edges);
  return d;
}

BipartiteSlice bipartite_slice(const LayerPartition& p, int l) {
  if (l < 0 || l >= p.num_layers())
    throw std::out_of_range("bipartite_slice: layer index out of range");
  BipartiteSlice s;
  for (int i = 0; i < l; ++i)
    s.context_nodes.insert(s.context_nodes.end(), p.layers[i].begin(),
                           p.layers[i].end());
  s.new_nodes = p.layers[l];
  if (l >= 1) s.cross_edges = p.edge_slices[l - 1];
  return s;
}

DagStats dag_stats(const Dag& d) {
  DagStats st;
  st.num_edges = static_cast<int>(d.edges.size());
  st.in_degrees.assign(d.num_nodes, 0);
  for (const auto& [u, v] : d.edges) ++st.in_degrees[v];
  if (d.num_nodes > 0) {
    auto p = layer_partition(d);
    st.num_layers = p.num_layers();
    for (const auto& layer : p.layers)
      st.layer_sizes.push_back(static_cast<int>(layer.size()));
  }
  return st;
}

}  // namespace layerdag
