#pragma once

#include <optional>
#include <string>
#include <vector>

#include "layerdag/autodiff.hpp"
#include "layerdag/dag.hpp"
#include "layerdag/diffusion.hpp"
#include "layerdag/nn.hpp"
#include "layerdag/tensor.hpp"

namespace layerdag {

struct ArchConfig {
  int hidden_dim = 128;
  int mpnn_layers = 3;
  int attn_blocks = 2;
  int attn_heads = 4;
  int embed_dim = 32;  // sinusoidal embedding width for t and y
  bool shared_encoder = false;
};

// Dense DAG prefix handed to the encoder; node IDs are local [0, n).
struct ContextGraph {
  int n = 0;
  std::vector<std::vector<int>> attrs;
  std::vector<std::pair<int, int>> edges;
};

// Everything needed to run the three heads, plus training-set statistics
// baked in at training start.
struct ModelParams {
  ArchConfig arch;
  std::vector<int> channel_sizes;              // C_k per attribute channel
  int n_max = 1;                               // size-head support {0..n_max}
  int l_max = 1;                               // max layer count in training
  int max_nodes = 1;                           // max |V| in training
  double d_in = 1.0;                           // average in-degree
  std::vector<std::vector<double>> marginals;  // per-channel priors
  bool conditional = false;
  double label_log_min = 0.0;  // min-max stats of log1p(y)
  double label_log_max = 1.0;
  int t_train = 0;
  double s_offset = 0.008;
  ParamStore params;
};

// Fresh parameters for the given architecture, channel layout, and size-head
// support {0..n_max}.
ModelParams init_model(const ArchConfig& arch, std::vector<int> channel_sizes,
                       bool conditional, int n_max, uint64_t seed);

// y -> log(1+y), min-max mapped to [0, 100]; extrapolates linearly outside
// the training range.
double normalize_label(const ModelParams& p, double y);

// Graph representation of a (possibly empty) prefix; empty prefixes yield a
// learned start embedding. Inference-only entry point (no gradients).
Tensor encode_context(const ModelParams& p, const ContextGraph& ctx,
                      std::optional<double> t_norm, std::optional<double> y);

// Softmax distribution over {0..n_max}; class 0 means stop.
Tensor predict_layer_size(const ModelParams& p, const ContextGraph& ctx,
                          std::optional<double> y);

// zhat(0) per element and channel: result[k] is (n, C_k) row distributions.
std::vector<Tensor> denoise_node_attrs(const ModelParams& p,
                                       const ContextGraph& ctx,
                                       const std::vector<std::vector<int>>& x_noisy,
                                       double t_norm, std::optional<double> y);

// Edge-presence probability per candidate pair. Pair order: for v-th new
// node, for u-th context node, index = v * ctx.n + u. Throws
// std::invalid_argument on an empty context.
Tensor denoise_edges(const ModelParams& p, const ContextGraph& ctx,
                     const std::vector<std::vector<int>>& x_new,
                     const std::vector<char>& a_noisy, double t_norm,
                     std::optional<double> y);

struct TrainConfig {
  int t_train = 24;
  int epochs = 60;
  int batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int patience = 10;
  uint64_t seed = 0;
  double w_size = 1.0, w_node = 1.0, w_edge = 1.0;
  int threads = 8;
  bool conditional = false;
  double s_offset = 0.008;
  ArchConfig arch;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

// Teacher-forced training of the three heads. Deterministic given cfg.seed.
// Throws std::invalid_argument on an empty dataset and std::runtime_error on
// a non-finite loss.
TrainResult train(const std::vector<Dag>& dataset, const std::vector<Dag>& val,
                  const TrainConfig& cfg);

struct SampleConfig {
  int count = 1;
  DenoiseSchedule schedule;  // t_min = t_max gives a constant schedule
  int l_cap_mult = 4;
  int n_cap_mult = 4;
  std::optional<std::vector<double>> labels;  // raw y, one per sample
  uint64_t seed = 0;
  int threads = 8;
};

struct SampleResult {
  Dag dag;
  bool cap_exceeded = false;
  bool empty_flagged = false;
  int64_t node_steps = 0;  // executed reverse-diffusion steps, node channel
  int64_t edge_steps = 0;
  int64_t scheduled_steps = 0;  // sum of T(l) over emitted layers
  double wall_seconds = 0;
};

// Autoregressive layerwise sampling with the layer-index denoising schedule.
// Per-sample RNG streams are keyed by (seed, sample index).
std::vector<SampleResult> sample(const ModelParams& p, const SampleConfig& cfg);

// Context prefix of the first l layers of a partition, nodes reindexed to
// local IDs in partition order. Also returns the cross edges into layer l+1
// (when l < L) with remapped endpoints.
struct PrefixView {
  ContextGraph ctx;
  int prev_layer_start = 0;  // local ID where layer l begins within ctx
  std::vector<std::vector<int>> next_attrs;  // attrs of V(l+1)
  std::vector<std::pair<int, int>> next_edges;  // (local ctx id, local new id)
};
PrefixView make_prefix(const LayerPartition& part, int l);

}  // namespace layerdag
