#include "layerdag/model.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace layerdag {

namespace {

// Gradient reduction uses a fixed number of virtual chunks so results do not
// depend on the actual thread count.
constexpr int kVirtualChunks = 16;
constexpr double kTimeEmbedScale = 1000.0;
constexpr double kLabelEmbedMax = 100.0;

std::string enc_prefix(const ModelParams& p, const char* head) {
  return p.arch.shared_encoder ? std::string("enc") : std::string(head);
}

void add_encoder_params(ParamStore& ps, const std::string& pre,
                        const ArchConfig& a, const std::vector<int>& channels,
                        bool conditional, Rng& rng) {
  int d = a.hidden_dim;
  for (size_t k = 0; k < channels.size(); ++k)
    ps.add(pre + ".embed." + std::to_string(k),
           xavier_uniform(channels[k], d, rng));
  ps.add(pre + ".start", xavier_uniform(1, d, rng));
  ps.add(pre + ".tproj_w", xavier_uniform(a.embed_dim, d, rng));
  ps.add(pre + ".tproj_b", Tensor({1, d}));
  if (conditional) {
    ps.add(pre + ".yproj_w", xavier_uniform(a.embed_dim, d, rng));
    ps.add(pre + ".yproj_b", Tensor({1, d}));
  }
  Tensor ones({1, d});
  for (double& x : ones.data) x = 1.0;
  for (int i = 0; i < a.mpnn_layers; ++i) {
    std::string m = pre + ".mpnn." + std::to_string(i);
    ps.add(m + ".wf", xavier_uniform(d, d, rng));
    ps.add(m + ".wr", xavier_uniform(d, d, rng));
    ps.add(m + ".ws", xavier_uniform(d, d, rng));
    ps.add(m + ".ln_g", ones);
    ps.add(m + ".ln_b", Tensor({1, d}));
  }
}

void run_threads(int jobs, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, jobs));
  if (threads == 1) {
    for (int j = 0; j < jobs; ++j) fn(j);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (;;) {
        int j = next.fetch_add(1);
        if (j >= jobs) return;
        fn(j);
      }
    });
  for (auto& th : pool) th.join();
}

struct EncoderOut {
  Tape::VarId node_reps = -1;  // -1 when the graph is empty
  Tape::VarId graph_rep = -1;
  Tape::VarId tproj = -1;  // projected timestep row, -1 when t absent
};

// BiMPNN encoder over an attributed node list. Rows >= attrs.size()-num_new
// receive an additional learned new-layer flag embedding (edge denoiser's
// augmented graph).
EncoderOut run_encoder(Tape& t, const ParamVars& pv, const ModelParams& p,
                       const std::string& pre,
                       const std::vector<std::vector<int>>& attrs,
                       const std::vector<std::pair<int, int>>& edges,
                       int num_new, std::optional<double> t_norm,
                       std::optional<double> y_norm) {
  EncoderOut out;
  int n = static_cast<int>(attrs.size());
  int d = p.arch.hidden_dim;

  if (t_norm) {
    Tape::VarId temb = t.input(
        sinusoidal_embed(*t_norm * kTimeEmbedScale, p.arch.embed_dim), false);
    out.tproj = affine(t, temb, pv[pre + ".tproj_w"], pv[pre + ".tproj_b"]);
  }
  Tape::VarId yproj = -1;
  if (y_norm && p.conditional) {
    Tape::VarId yemb =
        t.input(sinusoidal_embed(*y_norm, p.arch.embed_dim), false);
    yproj = affine(t, yemb, pv[pre + ".yproj_w"], pv[pre + ".yproj_b"]);
  }

  if (n == 0) {
    out.graph_rep = pv[pre + ".start"];
    // Conditioning must reach the first autoregressive step, so the label
    // projection is folded into the start embedding.
    if (yproj != -1) out.graph_rep = t.add(out.graph_rep, yproj);
    return out;
  }

  Tape::VarId h = -1;
  for (size_t k = 0; k < p.channel_sizes.size(); ++k) {
    std::vector<int> idx(n);
    for (int v = 0; v < n; ++v) idx[v] = attrs[v][k];
    Tape::VarId e =
        t.gather_rows(pv[pre + ".embed." + std::to_string(k)], idx);
    h = k == 0 ? e : t.add(h, e);
  }
  if (num_new > 0) {
    Tape::VarId flag = t.broadcast_row(pv["edge.newflag"], num_new);
    int n_ctx = n - num_new;
    if (n_ctx > 0) {
      Tape::VarId zeros = t.input(Tensor({n_ctx, d}), false);
      flag = t.concat_rows(zeros, flag);
    }
    h = t.add(h, flag);
  }
  if (out.tproj != -1) h = t.add(h, t.broadcast_row(out.tproj, n));
  if (yproj != -1) h = t.add(h, t.broadcast_row(yproj, n));

  Tensor adj({n, n});
  for (const auto& [u, v] : edges) adj.at(u, v) = 1.0;
  Tape::VarId a = t.input(std::move(adj), false);

  for (int i = 0; i < p.arch.mpnn_layers; ++i) {
    std::string m = pre + ".mpnn." + std::to_string(i);
    h = t.layer_norm(
        t.relu(bimpnn_linear(t, a, h, pv[m + ".wf"], pv[m + ".wr"],
                             pv[m + ".ws"])),
        pv[m + ".ln_g"], pv[m + ".ln_b"]);
  }
  out.node_reps = h;
  out.graph_rep = set_pool(t, h, PoolMode::Mean);
  return out;
}

Tape::VarId build_size_logits(Tape& t, const ParamVars& pv,
                              const ModelParams& p, const ContextGraph& ctx,
                              std::optional<double> y_norm) {
  EncoderOut e = run_encoder(t, pv, p, enc_prefix(p, "size"), ctx.attrs,
                             ctx.edges, 0, std::nullopt, y_norm);
  Tape::VarId h1 =
      t.relu(affine(t, e.graph_rep, pv["size.h1_w"], pv["size.h1_b"]));
  return affine(t, h1, pv["size.h2_w"], pv["size.h2_b"]);
}

std::vector<Tape::VarId> build_node_logits(
    Tape& t, const ParamVars& pv, const ModelParams& p, const ContextGraph& ctx,
    const std::vector<std::vector<int>>& x_noisy, double t_norm,
    std::optional<double> y_norm) {
  std::string pre = enc_prefix(p, "node");
  EncoderOut e = run_encoder(t, pv, p, pre, ctx.attrs, ctx.edges, 0, t_norm,
                             y_norm);
  int n = static_cast<int>(x_noisy.size());

  Tape::VarId elems = -1;
  for (size_t k = 0; k < p.channel_sizes.size(); ++k) {
    std::vector<int> idx(n);
    for (int v = 0; v < n; ++v) idx[v] = x_noisy[v][k];
    Tape::VarId emb =
        t.gather_rows(pv["node.noisy_embed." + std::to_string(k)], idx);
    elems = k == 0 ? emb : t.add(elems, emb);
  }
  elems = t.add(elems, t.broadcast_row(e.graph_rep, n));
  if (e.tproj != -1) elems = t.add(elems, t.broadcast_row(e.tproj, n));

  for (int b = 0; b < p.arch.attn_blocks; ++b)
    elems = attention_block(
        t, elems, bind_attention_block(pv, "node.attn." + std::to_string(b)),
        p.arch.attn_heads);

  std::vector<Tape::VarId> logits;
  for (size_t k = 0; k < p.channel_sizes.size(); ++k) {
    std::string o = "node.out." + std::to_string(k);
    logits.push_back(affine(t, elems, pv[o + "_w"], pv[o + "_b"]));
  }
  return logits;
}

Tape::VarId build_edge_logits(Tape& t, const ParamVars& pv,
                              const ModelParams& p, const ContextGraph& ctx,
                              const std::vector<std::vector<int>>& x_new,
                              const std::vector<char>& a_noisy, double t_norm,
                              std::optional<double> y_norm) {
  if (ctx.n == 0)
    throw std::invalid_argument("denoise_edges: empty context at l = 0");
  int n_new = static_cast<int>(x_new.size());
  int n_ctx = ctx.n;
  if (static_cast<int>(a_noisy.size()) != n_new * n_ctx)
    throw std::invalid_argument("denoise_edges: candidate grid shape mismatch");

  std::vector<std::vector<int>> attrs = ctx.attrs;
  attrs.insert(attrs.end(), x_new.begin(), x_new.end());
  std::vector<std::pair<int, int>> edges = ctx.edges;
  for (int v = 0; v < n_new; ++v)
    for (int u = 0; u < n_ctx; ++u)
      if (a_noisy[v * n_ctx + u]) edges.emplace_back(u, n_ctx + v);

  EncoderOut e = run_encoder(t, pv, p, enc_prefix(p, "edge"), attrs, edges,
                             n_new, t_norm, y_norm);

  std::vector<int> idx_u, idx_v;
  idx_u.reserve(n_new * n_ctx);
  idx_v.reserve(n_new * n_ctx);
  for (int v = 0; v < n_new; ++v)
    for (int u = 0; u < n_ctx; ++u) {
      idx_u.push_back(u);
      idx_v.push_back(n_ctx + v);
    }
  Tape::VarId hu = t.gather_rows(e.node_reps, idx_u);
  Tape::VarId hv = t.gather_rows(e.node_reps, idx_v);
  Tape::VarId pair_in = t.concat_cols(hu, hv);
  pair_in = t.concat_cols(
      pair_in, t.broadcast_row(e.tproj, n_new * n_ctx));
  Tape::VarId h1 =
      t.relu(affine(t, pair_in, pv["edge.pair_w1"], pv["edge.pair_b1"]));
  return affine(t, h1, pv["edge.pair_w2"], pv["edge.pair_b2"]);
}

}  // namespace

ModelParams init_model(const ArchConfig& arch, std::vector<int> channel_sizes,
                       bool conditional, int n_max, uint64_t seed) {
  if (arch.hidden_dim % arch.attn_heads != 0)
    throw std::invalid_argument("init_model: hidden_dim % attn_heads != 0");
  if (arch.embed_dim % 2 != 0)
    throw std::invalid_argument("init_model: embed_dim must be even");
  ModelParams p;
  p.arch = arch;
  p.channel_sizes = channel_sizes;
  p.conditional = conditional;
  p.n_max = n_max;
  for (int c : channel_sizes)
    p.marginals.push_back(std::vector<double>(c, 1.0 / c));

  Rng rng = Rng::derive({seed, 0x1717});
  int d = arch.hidden_dim;
  ParamStore& ps = p.params;
  if (arch.shared_encoder) {
    add_encoder_params(ps, "enc", arch, channel_sizes, conditional, rng);
  } else {
    add_encoder_params(ps, "size", arch, channel_sizes, conditional, rng);
    add_encoder_params(ps, "node", arch, channel_sizes, conditional, rng);
    add_encoder_params(ps, "edge", arch, channel_sizes, conditional, rng);
  }
  ps.add("size.h1_w", xavier_uniform(d, d, rng));
  ps.add("size.h1_b", Tensor({1, d}));
  ps.add("size.h2_w", xavier_uniform(d, n_max + 1, rng));
  ps.add("size.h2_b", Tensor({1, n_max + 1}));

  for (size_t k = 0; k < channel_sizes.size(); ++k)
    ps.add("node.noisy_embed." + std::to_string(k),
           xavier_uniform(channel_sizes[k], d, rng));
  for (int b = 0; b < arch.attn_blocks; ++b)
    add_attention_block_params(ps, "node.attn." + std::to_string(b), d, 2 * d,
                               rng);
  for (size_t k = 0; k < channel_sizes.size(); ++k) {
    std::string o = "node.out." + std::to_string(k);
    ps.add(o + "_w", xavier_uniform(d, channel_sizes[k], rng));
    ps.add(o + "_b", Tensor({1, channel_sizes[k]}));
  }

  ps.add("edge.newflag", xavier_uniform(1, d, rng));
  ps.add("edge.pair_w1", xavier_uniform(3 * d, d, rng));
  ps.add("edge.pair_b1", Tensor({1, d}));
  ps.add("edge.pair_w2", xavier_uniform(d, 1, rng));
  ps.add("edge.pair_b2", Tensor({1, 1}));
  return p;
}

double normalize_label(const ModelParams& p, double y) {
  double range = std::max(p.label_log_max - p.label_log_min, 1e-12);
  return (std::log1p(y) - p.label_log_min) / range * kLabelEmbedMax;
}

Tensor encode_context(const ModelParams& p, const ContextGraph& ctx,
                      std::optional<double> t_norm, std::optional<double> y) {
  Tape t;
  ParamVars pv = ParamVars::bind(t, p.params);
  std::optional<double> y_norm;
  if (y) y_norm = normalize_label(p, *y);
  EncoderOut e = run_encoder(t, pv, p, enc_prefix(p, "node"), ctx.attrs,
                             ctx.edges, 0, t_norm, y_norm);
  return t.value(e.graph_rep);
}

Tensor predict_layer_size(const ModelParams& p, const ContextGraph& ctx,
                          std::optional<double> y) {
  if (p.conditional && !y)
    throw std::invalid_argument("predict_layer_size: conditional model needs y");
  Tape t;
  ParamVars pv = ParamVars::bind(t, p.params);
  std::optional<double> y_norm;
  if (y) y_norm = normalize_label(p, *y);
  return t.value(t.softmax_rows(build_size_logits(t, pv, p, ctx, y_norm)));
}

std::vector<Tensor> denoise_node_attrs(
    const ModelParams& p, const ContextGraph& ctx,
    const std::vector<std::vector<int>>& x_noisy, double t_norm,
    std::optional<double> y) {
  Tape t;
  ParamVars pv = ParamVars::bind(t, p.params);
  std::optional<double> y_norm;
  if (y) y_norm = normalize_label(p, *y);
  auto logits = build_node_logits(t, pv, p, ctx, x_noisy, t_norm, y_norm);
  std::vector<Tensor> out;
  for (Tape::VarId l : logits) out.push_back(t.value(t.softmax_rows(l)));
  return out;
}

Tensor denoise_edges(const ModelParams& p, const ContextGraph& ctx,
                     const std::vector<std::vector<int>>& x_new,
                     const std::vector<char>& a_noisy, double t_norm,
                     std::optional<double> y) {
  Tape t;
  ParamVars pv = ParamVars::bind(t, p.params);
  std::optional<double> y_norm;
  if (y) y_norm = normalize_label(p, *y);
  return t.value(
      t.sigmoid(build_edge_logits(t, pv, p, ctx, x_new, a_noisy, t_norm, y_norm)));
}

PrefixView make_prefix(const LayerPartition& part, int l) {
  if (l < 0 || l > part.num_layers())
    throw std::out_of_range("make_prefix: bad layer index");
  PrefixView pre;
  std::vector<int> local(part.num_nodes, -1);
  for (int i = 0; i < l; ++i) {
    if (i == l - 1) pre.prev_layer_start = pre.ctx.n;
    for (int v : part.layers[i]) {
      local[v] = pre.ctx.n++;
      pre.ctx.attrs.push_back(part.attrs[v]);
    }
  }
  for (int s = 0; s + 1 < l; ++s)
    for (const auto& [u, v] : part.edge_slices[s])
      pre.ctx.edges.emplace_back(local[u], local[v]);

  if (l < part.num_layers()) {
    std::vector<int> new_local(part.num_nodes, -1);
    int j = 0;
    for (int v : part.layers[l]) {
      new_local[v] = j++;
      pre.next_attrs.push_back(part.attrs[v]);
    }
    if (l >= 1)
      for (const auto& [u, v] : part.edge_slices[l - 1])
        pre.next_edges.emplace_back(local[u], new_local[v]);
  }
  return pre;
}

namespace {

struct Task {
  int graph = 0;
  int l = 0;
  int size_target = 0;
  bool has_node = false;
  double t_node_norm = 0;
  std::vector<std::vector<int>> x_noisy;
  bool has_edge = false;
  double t_edge_norm = 0;
  std::vector<char> a_noisy;
};

// One index proportional to w, uniform when all weights vanish.
int pick_one(const std::vector<double>& w, Rng& rng) {
  double total = 0;
  for (double x : w) total += x;
  if (total <= 0) return static_cast<int>(rng.below(w.size()));
  return rng.categorical(w);
}

// Corrupted cross-edge grid with the previous-layer predecessor guarantee
// re-applied, mirroring the generation-time repair.
std::vector<char> corrupt_edges(const PrefixView& pre, int n_new, double abar,
                                double prior, Rng& rng) {
  int n_ctx = pre.ctx.n;
  std::vector<char> clean(n_new * n_ctx, 0);
  for (const auto& [u, v] : pre.next_edges) clean[v * n_ctx + u] = 1;
  std::vector<char> noisy(n_new * n_ctx, 0);
  for (int i = 0; i < n_new * n_ctx; ++i)
    noisy[i] = rng.uniform() < abar ? clean[i] : (rng.bernoulli(prior) ? 1 : 0);
  int prev_lo = pre.prev_layer_start;
  for (int v = 0; v < n_new; ++v) {
    bool has_prev = false;
    for (int u = prev_lo; u < n_ctx; ++u)
      if (noisy[v * n_ctx + u]) has_prev = true;
    if (!has_prev) {
      std::vector<double> w(n_ctx - prev_lo);
      for (int u = prev_lo; u < n_ctx; ++u)
        w[u - prev_lo] = abar * clean[v * n_ctx + u] + (1 - abar) * prior;
      noisy[v * n_ctx + prev_lo + pick_one(w, rng)] = 1;
    }
  }
  return noisy;
}

Tape::VarId build_task_loss(Tape& t, const ParamVars& pv, const ModelParams& p,
                            const TrainConfig& cfg, const Task& task,
                            const PrefixView& pre, std::optional<double> y_norm) {
  std::vector<int> size_target{task.size_target};
  Tape::VarId loss = t.scale(
      t.softmax_cross_entropy(build_size_logits(t, pv, p, pre.ctx, y_norm),
                              size_target),
      cfg.w_size);
  if (task.has_node) {
    auto logits = build_node_logits(t, pv, p, pre.ctx, task.x_noisy,
                                    task.t_node_norm, y_norm);
    int n = static_cast<int>(pre.next_attrs.size());
    for (size_t k = 0; k < logits.size(); ++k) {
      std::vector<int> targets(n);
      for (int v = 0; v < n; ++v) targets[v] = pre.next_attrs[v][k];
      loss = t.add(loss,
                   t.scale(t.softmax_cross_entropy(logits[k], targets),
                           cfg.w_node / logits.size()));
    }
  }
  if (task.has_edge) {
    Tape::VarId logits = build_edge_logits(t, pv, p, pre.ctx, pre.next_attrs,
                                           task.a_noisy, task.t_edge_norm,
                                           y_norm);
    int n_ctx = pre.ctx.n;
    int n_new = static_cast<int>(pre.next_attrs.size());
    std::vector<double> targets(n_new * n_ctx, 0.0);
    for (const auto& [u, v] : pre.next_edges) targets[v * n_ctx + u] = 1.0;
    loss = t.add(loss, t.scale(t.bce_with_logits(logits, std::move(targets)),
                               cfg.w_edge));
  }
  return loss;
}

Task make_task(const LayerPartition& part, int graph_idx, const ModelParams& p,
               const TrainConfig& cfg, Rng& rng) {
  Task task;
  task.graph = graph_idx;
  int L = part.num_layers();
  task.l = static_cast<int>(rng.uniform_int(0, L));
  task.size_target =
      task.l < L ? static_cast<int>(part.layers[task.l].size()) : 0;
  if (task.l < L) {
    task.has_node = true;
    int t_node = static_cast<int>(rng.uniform_int(1, cfg.t_train));
    task.t_node_norm = static_cast<double>(t_node) / cfg.t_train;
    PrefixView pre = make_prefix(part, task.l);
    int n = static_cast<int>(pre.next_attrs.size());
    task.x_noisy.assign(n, std::vector<int>(p.channel_sizes.size(), 0));
    for (size_t k = 0; k < p.channel_sizes.size(); ++k) {
      NoiseModel nm(cfg.t_train, p.marginals[k], p.s_offset);
      std::vector<int> z0(n);
      for (int v = 0; v < n; ++v) z0[v] = pre.next_attrs[v][k];
      std::vector<int> zt = corrupt(z0, t_node, nm, rng);
      for (int v = 0; v < n; ++v) task.x_noisy[v][k] = zt[v];
    }
    if (task.l >= 1) {
      task.has_edge = true;
      int t_edge = static_cast<int>(rng.uniform_int(1, cfg.t_train));
      task.t_edge_norm = static_cast<double>(t_edge) / cfg.t_train;
      double abar = cosine_alpha_bar(t_edge, cfg.t_train, p.s_offset);
      double prior = edge_prior(pre.ctx.n, p.d_in);
      task.a_noisy = corrupt_edges(pre, n, abar, prior, rng);
    }
  }
  return task;
}

}  // namespace

TrainResult train(const std::vector<Dag>& dataset, const std::vector<Dag>& val,
                  const TrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");

  std::vector<LayerPartition> parts, val_parts;
  parts.reserve(dataset.size());
  for (const auto& d : dataset) parts.push_back(layer_partition(d));
  for (const auto& d : val) val_parts.push_back(layer_partition(d));

  // Training-set statistics baked into the checkpoint.
  int K = dataset[0].num_channels();
  std::vector<int> channel_sizes(K, 1);
  for (const auto* set : {&dataset, &val})
    for (const auto& d : *set)
      for (const auto& a : d.attrs)
        for (int k = 0; k < K; ++k)
          channel_sizes[k] = std::max(channel_sizes[k], a[k] + 1);

  int n_max = 1, l_max = 1, max_nodes = 1;
  int64_t total_nodes = 0, total_edges = 0;
  for (const auto& part : parts) {
    l_max = std::max(l_max, part.num_layers());
    max_nodes = std::max(max_nodes, part.num_nodes);
    for (const auto& layer : part.layers)
      n_max = std::max(n_max, static_cast<int>(layer.size()));
    total_nodes += part.num_nodes;
    for (const auto& s : part.edge_slices) total_edges += s.size();
  }

  ModelParams model = init_model(cfg.arch, channel_sizes, cfg.conditional,
                                 n_max, cfg.seed);
  model.l_max = l_max;
  model.max_nodes = max_nodes;
  model.t_train = cfg.t_train;
  model.s_offset = cfg.s_offset;
  model.d_in = total_nodes > 0
                   ? std::max(1e-6, static_cast<double>(total_edges) /
                                        static_cast<double>(total_nodes))
                   : 1.0;
  for (int k = 0; k < K; ++k) {
    std::vector<double> counts(channel_sizes[k], 0.0);
    for (const auto& d : dataset)
      for (const auto& a : d.attrs) counts[a[k]] += 1.0;
    double total = 0;
    for (double c : counts) total += c;
    for (double& c : counts) c = total > 0 ? c / total : 1.0 / counts.size();
    model.marginals[k] = counts;
  }
  if (cfg.conditional) {
    bool first = true;
    for (const auto* set : {&dataset, &val})
      for (const auto& d : *set) {
        if (!d.label)
          throw std::invalid_argument("train: conditional model needs labels");
        double ly = std::log1p(*d.label);
        if (first) {
          model.label_log_min = model.label_log_max = ly;
          first = false;
        } else {
          model.label_log_min = std::min(model.label_log_min, ly);
          model.label_log_max = std::max(model.label_log_max, ly);
        }
      }
  }

  AdamState adam;
  adam.lr = cfg.lr;
  adam.beta1 = cfg.beta1;
  adam.beta2 = cfg.beta2;
  adam.init(model.params);

  auto y_norm_of = [&](const Dag& d) -> std::optional<double> {
    if (!cfg.conditional) return std::nullopt;
    return normalize_label(model, *d.label);
  };

  // Deterministic parallel loss/gradient evaluation over fixed virtual
  // chunks; reduction in chunk order.
  auto eval_tasks = [&](const std::vector<Task>& tasks,
                        const std::vector<LayerPartition>& source_parts,
                        const std::vector<Dag>& source_set,
                        ParamStore* grads_out) -> double {
    int n = static_cast<int>(tasks.size());
    std::vector<ParamStore> chunk_grads(grads_out ? kVirtualChunks : 0);
    std::vector<double> chunk_loss(kVirtualChunks, 0.0);
    run_threads(kVirtualChunks, cfg.threads, [&](int c) {
      ParamStore local = grads_out ? model.params.zeros_like() : ParamStore{};
      int lo = static_cast<int>(static_cast<int64_t>(n) * c / kVirtualChunks);
      int hi =
          static_cast<int>(static_cast<int64_t>(n) * (c + 1) / kVirtualChunks);
      for (int i = lo; i < hi; ++i) {
        const Task& task = tasks[i];
        PrefixView pre = make_prefix(source_parts[task.graph], task.l);
        Tape tape;
        ParamVars pv = ParamVars::bind(tape, model.params);
        Tape::VarId loss = build_task_loss(tape, pv, model, cfg, task, pre,
                                           y_norm_of(source_set[task.graph]));
        chunk_loss[c] += tape.value(loss).data[0];
        if (grads_out) {
          tape.backward(loss);
          local.accumulate(pv.collect_grads());
        }
      }
      if (grads_out) chunk_grads[c] = std::move(local);
    });
    double total = 0;
    for (int c = 0; c < kVirtualChunks; ++c) {
      total += chunk_loss[c];
      if (grads_out) grads_out->accumulate(chunk_grads[c]);
    }
    return total / std::max(1, n);
  };

  // Validation tasks are fixed across epochs.
  std::vector<Task> val_tasks;
  for (size_t g = 0; g < val_parts.size(); ++g) {
    int L = val_parts[g].num_layers();
    for (int l = 0; l <= L; ++l) {
      Rng rng2 = Rng::derive({cfg.seed, 0x7A11D, static_cast<uint64_t>(g),
                              static_cast<uint64_t>(l)});
      Task task;
      task.graph = static_cast<int>(g);
      task.l = l;
      task.size_target =
          l < L ? static_cast<int>(val_parts[g].layers[l].size()) : 0;
      if (l < L) {
        PrefixView pre = make_prefix(val_parts[g], l);
        task.has_node = true;
        int t_node = static_cast<int>(rng2.uniform_int(1, cfg.t_train));
        task.t_node_norm = static_cast<double>(t_node) / cfg.t_train;
        int nn = static_cast<int>(pre.next_attrs.size());
        task.x_noisy.assign(nn, std::vector<int>(K, 0));
        for (int k = 0; k < K; ++k) {
          NoiseModel nm(cfg.t_train, model.marginals[k], model.s_offset);
          std::vector<int> z0(nn);
          for (int v = 0; v < nn; ++v) z0[v] = pre.next_attrs[v][k];
          std::vector<int> zt = corrupt(z0, t_node, nm, rng2);
          for (int v = 0; v < nn; ++v) task.x_noisy[v][k] = zt[v];
        }
        if (l >= 1) {
          task.has_edge = true;
          int t_edge = static_cast<int>(rng2.uniform_int(1, cfg.t_train));
          task.t_edge_norm = static_cast<double>(t_edge) / cfg.t_train;
          double abar = cosine_alpha_bar(t_edge, cfg.t_train, model.s_offset);
          double prior = edge_prior(pre.ctx.n, model.d_in);
          task.a_noisy = corrupt_edges(pre, nn, abar, prior, rng2);
        }
      }
      val_tasks.push_back(std::move(task));
    }
  }

  TrainResult result;
  ParamStore best_params = model.params;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  int num_graphs = static_cast<int>(dataset.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Deterministic shuffle.
    std::vector<int> order(num_graphs);
    for (int i = 0; i < num_graphs; ++i) order[i] = i;
    Rng shuffle_rng = Rng::derive({cfg.seed, 0x5F0FF, static_cast<uint64_t>(epoch)});
    for (int i = num_graphs - 1; i > 0; --i) {
      int j = static_cast<int>(shuffle_rng.below(i + 1));
      std::swap(order[i], order[j]);
    }

    double epoch_loss = 0;
    int num_batches = 0;
    for (int start = 0; start < num_graphs; start += cfg.batch_size) {
      int end = std::min(start + cfg.batch_size, num_graphs);
      std::vector<Task> tasks;
      tasks.reserve(end - start);
      for (int i = start; i < end; ++i) {
        Rng rng = Rng::derive({cfg.seed, 0xBA7C4, static_cast<uint64_t>(epoch),
                               static_cast<uint64_t>(i)});
        tasks.push_back(make_task(parts[order[i]], order[i], model, cfg, rng));
      }
      ParamStore grads = model.params.zeros_like();
      double batch_loss = eval_tasks(tasks, parts, dataset, &grads);
      ParamStore scaled = model.params.zeros_like();
      scaled.accumulate(grads, 1.0 / static_cast<double>(tasks.size()));
      adam_step(model.params, scaled, adam);
      epoch_loss += batch_loss;
      ++num_batches;
    }
    epoch_loss /= std::max(1, num_batches);

    double val_loss = val_tasks.empty()
                          ? epoch_loss
                          : eval_tasks(val_tasks, val_parts, val, nullptr);
    result.log.push_back({epoch, epoch_loss, val_loss});
    if (val_loss < best_val - 1e-9) {
      best_val = val_loss;
      best_params = model.params;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  model.params = best_params;
  result.params = std::move(model);
  return result;
}

std::vector<SampleResult> sample(const ModelParams& p,
                                 const SampleConfig& cfg) {
  if (p.conditional &&
      (!cfg.labels || static_cast<int>(cfg.labels->size()) != cfg.count))
    throw std::invalid_argument("sample: conditional model needs one label per sample");
  if (cfg.schedule.t_min < 1 || cfg.schedule.t_min > cfg.schedule.t_max ||
      cfg.schedule.t_max > p.t_train)
    throw std::invalid_argument(
        "sample: schedule must satisfy 1 <= T_min <= T_max <= T_train");

  std::vector<SampleResult> results(cfg.count);
  int l_cap = cfg.l_cap_mult * p.l_max;
  int n_cap = cfg.n_cap_mult * p.max_nodes;

  run_threads(cfg.count, cfg.threads, [&](int i) {
    auto t0 = std::chrono::steady_clock::now();
    SampleResult& res = results[i];
    Rng rng = Rng::derive({cfg.seed, 0x5A3, static_cast<uint64_t>(i)});
    std::optional<double> y;
    if (cfg.labels) y = (*cfg.labels)[i];

    ContextGraph ctx;
    int prev_layer_start = 0;
    for (int l = 0;; ++l) {
      if (l >= l_cap) {
        res.cap_exceeded = true;
        break;
      }
      Tensor size_probs = predict_layer_size(p, ctx, y);
      int n = rng.categorical(size_probs.data);
      if (l == 0) {
        for (int retry = 0; retry < 100 && n == 0; ++retry)
          n = rng.categorical(size_probs.data);
        if (n == 0) {
          res.empty_flagged = true;
          break;
        }
      }
      if (n == 0) break;
      if (ctx.n + n > n_cap) {
        res.cap_exceeded = true;
        break;
      }

      int steps = std::max(1, denoise_steps_for_layer(l, cfg.schedule));
      res.scheduled_steps += steps;

      // Fewer steps than T_train stride through the trained noise grid, so
      // every (abar, t/T_train) pair the model sees matches training.
      std::vector<int> ts(steps + 1, 0);
      for (int j = 1; j <= steps; ++j)
        ts[j] = static_cast<int>(
            std::llround(static_cast<double>(j) * p.t_train / steps));

      // Node-attribute reverse diffusion from the marginal prior.
      std::vector<NoiseModel> nms;
      for (size_t k = 0; k < p.channel_sizes.size(); ++k)
        nms.emplace_back(p.t_train, p.marginals[k], p.s_offset);
      std::vector<std::vector<int>> x(n,
                                      std::vector<int>(p.channel_sizes.size()));
      for (int v = 0; v < n; ++v)
        for (size_t k = 0; k < nms.size(); ++k)
          x[v][k] = rng.categorical(p.marginals[k]);
      for (int j = steps; j >= 1; --j) {
        double t_norm = static_cast<double>(ts[j]) / p.t_train;
        std::vector<Tensor> zhat0 = denoise_node_attrs(p, ctx, x, t_norm, y);
        for (size_t k = 0; k < nms.size(); ++k) {
          TransitionMatrix qt = segment_transition(ts[j - 1], ts[j], nms[k]);
          TransitionMatrix qb = composed_transition(ts[j - 1], nms[k]);
          for (int v = 0; v < n; ++v) {
            std::vector<double> z0hat(zhat0[k].cols());
            for (int c = 0; c < zhat0[k].cols(); ++c)
              z0hat[c] = zhat0[k].at(v, c);
            x[v][k] = rng.categorical(posterior(x[v][k], z0hat, qt, qb));
          }
        }
        ++res.node_steps;
      }

      // Edge reverse diffusion from the degree-aware Bernoulli prior, with
      // the previous-layer predecessor guarantee applied at every step.
      std::vector<char> a;
      if (l >= 1) {
        int n_ctx = ctx.n;
        double prior = edge_prior(n_ctx, p.d_in);
        NoiseModel nm2(p.t_train, {1.0 - prior, prior}, p.s_offset);
        a.assign(static_cast<size_t>(n) * n_ctx, 0);
        for (auto& e : a) e = rng.bernoulli(prior) ? 1 : 0;
        auto enforce = [&](const std::vector<double>& presence) {
          for (int v = 0; v < n; ++v) {
            bool has_prev = false;
            for (int u = prev_layer_start; u < n_ctx; ++u)
              if (a[static_cast<size_t>(v) * n_ctx + u]) has_prev = true;
            if (!has_prev) {
              std::vector<double> w(n_ctx - prev_layer_start);
              for (int u = prev_layer_start; u < n_ctx; ++u)
                w[u - prev_layer_start] =
                    presence[static_cast<size_t>(v) * n_ctx + u];
              int pick = prev_layer_start + pick_one(w, rng);
              a[static_cast<size_t>(v) * n_ctx + pick] = 1;
            }
          }
        };
        enforce(std::vector<double>(a.size(), prior));
        for (int j = steps; j >= 1; --j) {
          double t_norm = static_cast<double>(ts[j]) / p.t_train;
          Tensor ehat = denoise_edges(p, ctx, x, a, t_norm, y);
          TransitionMatrix qt = segment_transition(ts[j - 1], ts[j], nm2);
          TransitionMatrix qb = composed_transition(ts[j - 1], nm2);
          std::vector<double> presence(a.size());
          for (size_t j = 0; j < a.size(); ++j) {
            double e1 = ehat.data[j];
            std::vector<double> post =
                posterior(a[j] ? 1 : 0, {1.0 - e1, e1}, qt, qb);
            a[j] = rng.bernoulli(post[1]) ? 1 : 0;
            presence[j] = post[1];
          }
          enforce(presence);
          ++res.edge_steps;
        }
      }

      // Commit the new bipartite slice.
      int base = ctx.n;
      for (int v = 0; v < n; ++v) ctx.attrs.push_back(x[v]);
      if (l >= 1)
        for (int v = 0; v < n; ++v)
          for (int u = 0; u < ctx.n; ++u)
            if (a[static_cast<size_t>(v) * ctx.n + u])
              ctx.edges.emplace_back(u, base + v);
      prev_layer_start = base;
      ctx.n += n;
    }

    res.dag.num_nodes = ctx.n;
    res.dag.attrs = ctx.attrs;
    res.dag.edges = ctx.edges;
    res.dag.label = y;
    canonicalize_edges(res.dag.edges);
    res.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
  });
  return results;
}

}  // namespace layerdag
