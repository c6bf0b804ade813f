#include "layerdag/lp.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

#include "layerdag/rng.hpp"

namespace layerdag {

double balance_ratio(int n0, int n1) {
  if (n0 + n1 < 1)
    throw std::invalid_argument("balance_ratio: degenerate input n0 + n1 = 0");
  int diff = std::abs(n0 - n1);
  return static_cast<double>(diff / 2) / (static_cast<double>(n0 + n1) / 2.0);
}

namespace {

double prior_for(const LpConfig& cfg, int channel) {
  if (channel < static_cast<int>(cfg.attr_priors.size()))
    return cfg.attr_priors[channel];
  return 0.5;
}

// n distinct indices from [0, weights.size()) with probability proportional
// to the weights, without replacement.
std::vector<int> weighted_sample_distinct(std::vector<double> weights, int n,
                                          Rng& rng) {
  std::vector<int> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    int pick = rng.categorical(weights);
    out.push_back(pick);
    weights[pick] = 0;
  }
  return out;
}

}  // namespace

Dag generate_lp_graph(const LpConfig& cfg, int index) {
  Rng rng = Rng::derive({cfg.seed, static_cast<uint64_t>(index), 0x1b});
  int K = cfg.num_channels();

  int L = static_cast<int>(
      rng.uniform_int(cfg.layer_count_range.lo, cfg.layer_count_range.hi));
  std::vector<int> layer_sizes(L);
  for (int l = 0; l < L; ++l)
    layer_sizes[l] = static_cast<int>(
        rng.uniform_int(cfg.layer_size_range.lo, cfg.layer_size_range.hi));

  Dag d;
  std::vector<int> node_depth;  // 1-based layer index per node
  for (int l = 1; l <= L; ++l) {
    int num_earlier = d.num_nodes;  // nodes with depth < l occupy [0, num_earlier)
    for (int j = 0; j < layer_sizes[l - 1]; ++j) {
      int v = d.num_nodes + j;
      std::vector<int> attr(K, 0);
      attr[0] = rng.bernoulli(prior_for(cfg, 0)) ? 1 : 0;
      if (l == 1)
        for (int k = 1; k < K; ++k)
          attr[k] = rng.bernoulli(prior_for(cfg, k)) ? 1 : 0;
      d.attrs.push_back(attr);

      if (l > 1) {
        std::vector<double> weights(num_earlier);
        for (int u = 0; u < num_earlier; ++u)
          weights[u] = 1.0 / static_cast<double>(l - node_depth[u]);
        int max_n = std::min(cfg.indegree_range.hi, num_earlier);

        std::vector<int> preds;
        bool accepted = false;
        for (int outer = 0; outer < cfg.resample_budget && !accepted; ++outer) {
          int n_v =
              static_cast<int>(rng.uniform_int(cfg.indegree_range.lo, max_n));
          for (int attempt = 0; attempt < cfg.resample_budget; ++attempt) {
            preds = weighted_sample_distinct(weights, n_v, rng);
            bool touches_prev = false;
            int n0 = 0, n1 = 0;
            for (int u : preds) {
              if (node_depth[u] == l - 1) touches_prev = true;
              (d.attrs[u][0] == 0 ? n0 : n1)++;
            }
            if (touches_prev && balance_ratio(n0, n1) <= cfg.rho + 1e-12) {
              accepted = true;
              break;
            }
          }
        }
        if (!accepted)
          throw std::runtime_error(
              "generate_lp: exhausted resampling budget for node " +
              std::to_string(v));
        for (int u : preds) d.edges.emplace_back(u, v);

        if (cfg.variant == LpVariant::Multi) {
          // Channel 1 = most common predecessor value, channel 2 = least
          // common; ties uniform at random.
          for (int k = 1; k <= 2; ++k) {
            int ones = 0;
            for (int u : preds) ones += d.attrs[u][k];
            int zeros = static_cast<int>(preds.size()) - ones;
            int majority = ones > zeros ? 1
                           : zeros > ones ? 0
                                          : static_cast<int>(rng.below(2));
            d.attrs[v][k] = (k == 1) ? majority : 1 - majority;
          }
        }
      }
    }
    for (int j = 0; j < layer_sizes[l - 1]; ++j) node_depth.push_back(l);
    d.num_nodes += layer_sizes[l - 1];
  }
  canonicalize_edges(d.edges);
  return d;
}

std::vector<Dag> generate_lp(const LpConfig& cfg) {
  std::vector<Dag> out;
  out.reserve(cfg.count);
  for (int i = 0; i < cfg.count; ++i) out.push_back(generate_lp_graph(cfg, i));
  return out;
}

ValidityReport check_validity(const Dag& d, const LpConfig& cfg) {
  if (d.num_channels() != cfg.num_channels())
    throw std::invalid_argument(
        "check_validity: attribute channel count does not match variant");

  ValidityReport rep;
  std::vector<std::vector<int>> preds(d.num_nodes);
  for (const auto& [u, v] : d.edges) preds[v].push_back(u);

  auto note = [&](int v, const std::string& rule) {
    if (!rep.first_violation) rep.first_violation = {v, rule};
  };

  for (int v = 0; v < d.num_nodes; ++v) {
    if (preds[v].empty()) continue;  // source node
    int n0 = 0, n1 = 0;
    for (int u : preds[v]) (d.attrs[u][0] == 0 ? n0 : n1)++;
    if (balance_ratio(n0, n1) > cfg.rho + 1e-12) {
      rep.balance_ok = false;
      note(v, "balance");
    }
    if (!cfg.indegree_range.contains(static_cast<int>(preds[v].size()))) {
      rep.indegree_ok = false;
      note(v, "indegree");
    }
    if (cfg.variant == LpVariant::Multi) {
      for (int k = 1; k <= 2; ++k) {
        int ones = 0;
        for (int u : preds[v]) ones += d.attrs[u][k];
        int zeros = static_cast<int>(preds[v].size()) - ones;
        bool in_set;
        if (ones > zeros)
          in_set = d.attrs[v][k] == (k == 1 ? 1 : 0);
        else if (zeros > ones)
          in_set = d.attrs[v][k] == (k == 1 ? 0 : 1);
        else
          in_set = true;  // tie: both values admissible
        if (!in_set) {
          rep.attr_ok = false;
          note(v, k == 1 ? "attr-majority" : "attr-minority");
        }
      }
    }
  }
  rep.overall = rep.balance_ok && rep.attr_ok && rep.indegree_ok;
  return rep;
}

}  // namespace layerdag
