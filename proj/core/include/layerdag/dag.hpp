#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace layerdag {

// Node-attributed DAG with an optional scalar label. Node IDs are dense
// integers [0, num_nodes); attrs[v][k] is the categorical value of channel k.
struct Dag {
  int num_nodes = 0;
  std::vector<std::pair<int, int>> edges;
  std::vector<std::vector<int>> attrs;
  std::optional<double> label;

  bool operator==(const Dag& other) const;

  int num_channels() const {
    return attrs.empty() ? 0 : static_cast<int>(attrs[0].size());
  }
};

struct ValidationError {
  enum class Kind {
    EdgeOutOfRange,
    SelfLoop,
    DuplicateEdge,
    CycleDetected,
    AttrChannelMismatch,
  };
  Kind kind;
  std::string message;
  std::vector<int> witness;  // nodes on a cycle, for CycleDetected
};

// nullopt iff all Dag invariants hold. Reports the first violation found.
std::optional<ValidationError> validate_dag(const Dag& d);

// The unique ordered partition of nodes into layers by longest-path depth,
// together with the induced edge slices. Carries the node attributes and
// label so the original DAG can be reconstructed exactly.
struct LayerPartition {
  int num_nodes = 0;
  std::vector<std::vector<int>> layers;                        // V(1)..V(L)
  std::vector<std::vector<std::pair<int, int>>> edge_slices;   // E(2)..E(L)
  std::vector<std::vector<int>> attrs;
  std::optional<double> label;

  int num_layers() const { return static_cast<int>(layers.size()); }
};

// One autoregressive token: the first l layers as context plus layer l+1 and
// the cross edges pointing into it.
struct BipartiteSlice {
  std::vector<int> context_nodes;
  std::vector<int> new_nodes;
  std::vector<std::pair<int, int>> cross_edges;
};

struct DagStats {
  int num_layers = 0;
  std::vector<int> layer_sizes;
  std::vector<int> in_degrees;
  int num_edges = 0;
};

// Throws std::invalid_argument when validate_dag fails.
LayerPartition layer_partition(const Dag& d);

// Exact inverse of layer_partition. Throws std::invalid_argument when an edge
// slice violates the bipartite direction rule.
Dag reconstruct(const LayerPartition& p);

// Context = first l layers (empty when l = 0), new = V(l+1).
// Throws std::out_of_range unless 0 <= l < L.
BipartiteSlice bipartite_slice(const LayerPartition& p, int l);

DagStats dag_stats(const Dag& d);

// Canonical edge order used for serialization and hashing: (dst, src).
void canonicalize_edges(std::vector<std::pair<int, int>>& edges);

}  // namespace layerdag
