#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "layerdag/dag.hpp"

namespace layerdag {

enum class LpVariant { Base, Multi };

struct IntRange {
  int lo = 0;
  int hi = 0;
  bool contains(int x) const { return x >= lo && x <= hi; }
  int width() const { return hi - lo + 1; }
};

// Latent preferential benchmark configuration. The base variant has one
// binary attribute channel; the multi variant has three.
struct LpConfig {
  double rho = 1.0;
  LpVariant variant = LpVariant::Base;
  int count = 0;
  uint64_t seed = 0;
  IntRange layer_count_range{2, 5};
  IntRange layer_size_range{1, 5};
  IntRange indegree_range{1, 4};
  // Source-layer Bernoulli parameter per channel (multi variant channels 1,2
  // and channel 0 alike); defaults to fair coins.
  std::vector<double> attr_priors;
  int resample_budget = 1000;

  int num_channels() const { return variant == LpVariant::Multi ? 3 : 1; }
};

struct ValidityReport {
  bool balance_ok = true;
  bool attr_ok = true;  // true by definition for the base variant
  bool indegree_ok = true;
  bool overall = true;
  // (node, rule) witness for the first violated rule, if any.
  std::optional<std::pair<int, std::string>> first_violation;
};

// ratio = floor(|n0 - n1| / 2) / ((n0 + n1) / 2); a node passes iff <= rho.
// Throws std::invalid_argument when n0 + n1 = 0.
double balance_ratio(int n0, int n1);

// Deterministic given cfg.seed; every returned DAG passes check_validity
// under cfg. Throws std::runtime_error when the resample budget is exhausted.
std::vector<Dag> generate_lp(const LpConfig& cfg);

// Single graph, RNG stream derived from (cfg.seed, index).
Dag generate_lp_graph(const LpConfig& cfg, int index);

ValidityReport check_validity(const Dag& d, const LpConfig& cfg);

}  // namespace layerdag
