#include "layerdag/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace layerdag {

Histogram make_histogram(const std::vector<int>& values) {
  if (values.empty())
    throw std::invalid_argument("make_histogram: empty input");
  int hi = 0;
  for (int v : values) {
    if (v < 0) throw std::invalid_argument("make_histogram: negative value");
    hi = std::max(hi, v);
  }
  Histogram h;
  h.mass.assign(hi + 1, 0.0);
  for (int v : values) h.mass[v] += 1.0;
  for (double& m : h.mass) m /= values.size();
  return h;
}

double emd1d(const Histogram& a, const Histogram& b) {
  size_t n = std::max(a.mass.size(), b.mass.size());
  double cdf_diff = 0, total = 0;
  for (size_t i = 0; i + 1 < n; ++i) {
    cdf_diff += (i < a.mass.size() ? a.mass[i] : 0.0) -
                (i < b.mass.size() ? b.mass[i] : 0.0);
    total += std::abs(cdf_diff);
  }
  return total;
}

double wasserstein1(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("wasserstein1: empty input");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double total = 0;
    for (size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
    return total / a.size();
  }
  // General quantile coupling: integrate |F_a^{-1}(u) - F_b^{-1}(u)| over the
  // merged quantile grid.
  size_t n = a.size(), m = b.size();
  double total = 0, u = 0;
  size_t i = 0, j = 0;
  while (i < n && j < m) {
    double ua = static_cast<double>(i + 1) / n;
    double ub = static_cast<double>(j + 1) / m;
    double next = std::min(ua, ub);
    total += (next - u) * std::abs(a[i] - b[j]);
    u = next;
    if (ua <= next + 1e-15) ++i;
    if (ub <= next + 1e-15) ++j;
  }
  return total;
}

MmdResult mmd(const std::vector<Histogram>& a, const std::vector<Histogram>& b,
              std::optional<double> sigma) {
  if (a.empty() || b.empty()) throw std::invalid_argument("mmd: empty set");
  MmdResult r;
  if (sigma) {
    r.sigma = *sigma;
  } else {
    // Median heuristic over the reference set's pairwise distances.
    std::vector<double> dists;
    for (size_t i = 0; i < a.size(); ++i)
      for (size_t j = i + 1; j < a.size(); ++j)
        dists.push_back(emd1d(a[i], a[j]));
    if (dists.empty()) {
      r.sigma = 1.0;
    } else {
      std::nth_element(dists.begin(), dists.begin() + dists.size() / 2,
                       dists.end());
      r.sigma = dists[dists.size() / 2];
      if (r.sigma <= 0) r.sigma = 1.0;
    }
  }
  double inv = 1.0 / (2.0 * r.sigma * r.sigma);
  auto kernel_mean = [&](const std::vector<Histogram>& x,
                         const std::vector<Histogram>& y) {
    double sum = 0;
    for (const auto& hx : x)
      for (const auto& hy : y) {
        double d = emd1d(hx, hy);
        sum += std::exp(-d * d * inv);
      }
    return sum / (static_cast<double>(x.size()) * y.size());
  };
  double m2 = kernel_mean(a, a) + kernel_mean(b, b) - 2.0 * kernel_mean(a, b);
  r.mmd_sq = std::max(m2, 0.0);
  r.mmd = std::sqrt(r.mmd_sq);
  return r;
}

Histogram layer_size_histogram(const Dag& d) {
  LayerPartition part = layer_partition(d);
  std::vector<int> sizes;
  for (const auto& l : part.layers) sizes.push_back(static_cast<int>(l.size()));
  if (sizes.empty()) sizes.push_back(0);
  return make_histogram(sizes);
}

Histogram attribute_histogram(const Dag& d,
                              const std::vector<int>& channel_sizes) {
  int total_support = 0;
  for (int c : channel_sizes) total_support += c;
  Histogram h;
  h.mass.assign(std::max(total_support, 1), 0.0);
  double count = 0;
  int base = 0;
  for (size_t k = 0; k < channel_sizes.size(); ++k) {
    for (const auto& a : d.attrs) {
      int v = a[k];
      if (v < 0 || v >= channel_sizes[k])
        throw std::invalid_argument("attribute_histogram: value out of range");
      h.mass[base + v] += 1.0;
      count += 1.0;
    }
    base += channel_sizes[k];
  }
  if (count > 0)
    for (double& m : h.mass) m /= count;
  return h;
}

ValidityBreakdown validity_rate(const std::vector<Dag>& graphs,
                                const LpConfig& cfg) {
  if (graphs.empty()) throw std::invalid_argument("validity_rate: empty list");
  ValidityBreakdown out;
  out.count = static_cast<int>(graphs.size());
  for (const auto& g : graphs) {
    ValidityReport r = check_validity(g, cfg);
    out.balance += r.balance_ok;
    out.attrs += r.attr_ok;
    out.indegree += r.indegree_ok;
    out.full += r.overall;
  }
  out.balance /= out.count;
  out.attrs /= out.count;
  out.indegree /= out.count;
  out.full /= out.count;
  return out;
}

std::optional<double> pearson(const std::vector<double>& a,
                              const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("pearson: size mismatch or empty");
  double n = static_cast<double>(a.size());
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sa = 0, sb = 0, sab = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    sa += (a[i] - ma) * (a[i] - ma);
    sb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
  }
  if (sa <= 0 || sb <= 0) return std::nullopt;
  return sab / std::sqrt(sa * sb);
}

double mean_abs_error(const std::vector<double>& pred,
                      const std::vector<double>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw std::invalid_argument("mean_abs_error: size mismatch or empty");
  double total = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    total += std::abs(pred[i] - truth[i]);
  return total / pred.size();
}

namespace {

constexpr int kVirtualChunks = 16;

void run_threads(int jobs, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, jobs));
  if (threads == 1) {
    for (int j = 0; j < jobs; ++j) fn(j);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
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

// Graph representation: per-channel embeddings summed, BiMPNN stack with
// layer norm, mean pool. Empty graphs use a learned start row.
Tape::VarId surrogate_rep(Tape& t, const ParamVars& pv, const Surrogate& s,
                          const Dag& d) {
  if (d.num_nodes == 0) return pv["start"];
  int n = d.num_nodes;
  Tape::VarId h = -1;
  for (size_t k = 0; k < s.channel_sizes.size(); ++k) {
    std::vector<int> idx(n);
    for (int v = 0; v < n; ++v) idx[v] = d.attrs[v][k];
    Tape::VarId e = t.gather_rows(pv["embed." + std::to_string(k)], idx);
    h = k == 0 ? e : t.add(h, e);
  }
  Tensor adj({n, n});
  for (const auto& [u, v] : d.edges) adj.at(u, v) = 1.0;
  Tape::VarId a = t.input(std::move(adj), false);
  for (int i = 0; i < s.arch.mpnn_layers; ++i) {
    std::string m = "mpnn." + std::to_string(i);
    h = t.layer_norm(
        t.relu(bimpnn_linear(t, a, h, pv[m + ".wf"], pv[m + ".wr"],
                             pv[m + ".ws"])),
        pv[m + ".ln_g"], pv[m + ".ln_b"]);
  }
  return set_pool(t, h, PoolMode::Mean);
}

Tape::VarId surrogate_pred(Tape& t, const ParamVars& pv, const Surrogate& s,
                           const Dag& d) {
  return affine(t, surrogate_rep(t, pv, s, d), pv["head_w"], pv["head_b"]);
}

std::vector<double> predict_normalized(const Surrogate& s,
                                       const std::vector<Dag>& set,
                                       int threads) {
  std::vector<double> out(set.size());
  run_threads(static_cast<int>(set.size()), threads, [&](int i) {
    Tape t;
    ParamVars pv = ParamVars::bind(t, s.params);
    out[i] = t.value(surrogate_pred(t, pv, s, set[i])).data[0];
  });
  return out;
}

}  // namespace

Surrogate train_surrogate(const std::vector<Dag>& train,
                          const std::vector<Dag>& val,
                          const SurrogateConfig& cfg) {
  if (train.empty())
    throw std::invalid_argument("train_surrogate: empty dataset");
  for (const auto* set : {&train, &val})
    for (const auto& d : *set)
      if (!d.label)
        throw std::invalid_argument("train_surrogate: unlabeled graph");

  Surrogate s;
  s.arch = cfg.arch;
  int K = train[0].num_channels();
  s.channel_sizes.assign(K, 1);
  for (const auto* set : {&train, &val})
    for (const auto& d : *set)
      for (const auto& a : d.attrs)
        for (int k = 0; k < K; ++k)
          s.channel_sizes[k] = std::max(s.channel_sizes[k], a[k] + 1);

  double mean = 0;
  for (const auto& d : train) mean += *d.label;
  mean /= train.size();
  double var = 0;
  for (const auto& d : train) var += (*d.label - mean) * (*d.label - mean);
  s.label_mean = mean;
  s.label_std = std::max(std::sqrt(var / train.size()), 1e-12);

  Rng rng = Rng::derive({cfg.seed, 0x5135});
  int d = cfg.arch.hidden_dim;
  for (int k = 0; k < K; ++k)
    s.params.add("embed." + std::to_string(k),
                 xavier_uniform(s.channel_sizes[k], d, rng));
  s.params.add("start", xavier_uniform(1, d, rng));
  Tensor ones({1, d});
  for (double& x : ones.data) x = 1.0;
  for (int i = 0; i < cfg.arch.mpnn_layers; ++i) {
    std::string m = "mpnn." + std::to_string(i);
    s.params.add(m + ".wf", xavier_uniform(d, d, rng));
    s.params.add(m + ".wr", xavier_uniform(d, d, rng));
    s.params.add(m + ".ws", xavier_uniform(d, d, rng));
    s.params.add(m + ".ln_g", ones);
    s.params.add(m + ".ln_b", Tensor({1, d}));
  }
  s.params.add("head_w", xavier_uniform(d, 1, rng));
  s.params.add("head_b", Tensor({1, 1}));

  AdamState adam;
  adam.lr = cfg.lr;
  adam.init(s.params);

  auto norm_label = [&](const Dag& g) {
    return (*g.label - s.label_mean) / s.label_std;
  };
  std::vector<double> val_truth;
  for (const auto& g : val) val_truth.push_back(*g.label);

  ParamStore best = s.params;
  double best_score = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  int n = static_cast<int>(train.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng srng = Rng::derive({cfg.seed, 0x51355, static_cast<uint64_t>(epoch)});
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<int>(srng.below(i + 1))]);

    for (int start = 0; start < n; start += cfg.batch_size) {
      int end = std::min(start + cfg.batch_size, n);
      int batch = end - start;
      std::vector<ParamStore> chunk_grads(kVirtualChunks);
      run_threads(kVirtualChunks, cfg.threads, [&](int c) {
        ParamStore local = s.params.zeros_like();
        int lo = start + static_cast<int>(
                             static_cast<int64_t>(batch) * c / kVirtualChunks);
        int hi = start + static_cast<int>(static_cast<int64_t>(batch) *
                                          (c + 1) / kVirtualChunks);
        for (int i = lo; i < hi; ++i) {
          const Dag& g = train[order[i]];
          Tape t;
          ParamVars pv = ParamVars::bind(t, s.params);
          Tape::VarId loss =
              t.mse_loss(surrogate_pred(t, pv, s, g), {norm_label(g)});
          t.backward(loss);
          local.accumulate(pv.collect_grads());
        }
        chunk_grads[c] = std::move(local);
      });
      ParamStore grads = s.params.zeros_like();
      for (int c = 0; c < kVirtualChunks; ++c)
        grads.accumulate(chunk_grads[c], 1.0 / batch);
      adam_step(s.params, grads, adam);
    }

    // Selection: validation Pearson, negative MSE as tiebreaker/fallback.
    double score;
    if (val.empty()) {
      score = static_cast<double>(epoch);  // keep latest when no val set
    } else {
      std::vector<double> preds = predict_normalized(s, val, cfg.threads);
      for (double& p : preds) p = p * s.label_std + s.label_mean;
      std::optional<double> r = pearson(preds, val_truth);
      score = r ? *r : -2.0 - mean_abs_error(preds, val_truth);
    }
    if (score > best_score + 1e-12) {
      best_score = score;
      best = s.params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  s.params = best;
  return s;
}

double predict_surrogate(const Surrogate& s, const Dag& d) {
  Tape t;
  ParamVars pv = ParamVars::bind(t, s.params);
  return t.value(surrogate_pred(t, pv, s, d)).data[0] * s.label_std +
         s.label_mean;
}

SurrogateEval eval_surrogate(const Surrogate& s, const std::vector<Dag>& test) {
  if (test.empty()) throw std::invalid_argument("eval_surrogate: empty set");
  std::vector<double> preds = predict_normalized(s, test, 8);
  for (double& p : preds) p = p * s.label_std + s.label_mean;
  std::vector<double> truth;
  for (const auto& g : test) {
    if (!g.label)
      throw std::invalid_argument("eval_surrogate: unlabeled graph");
    truth.push_back(*g.label);
  }
  SurrogateEval e;
  e.pearson = pearson(preds, truth);
  e.mae = mean_abs_error(preds, truth);
  return e;
}

std::pair<std::vector<Dag>, std::vector<Dag>> quantile_split(
    const std::vector<Dag>& dataset, int k, int held) {
  if (k < 2) throw std::invalid_argument("quantile_split: k must be >= 2");
  if (held < 1 || held > k)
    throw std::invalid_argument("quantile_split: held block out of range");
  if (static_cast<int>(dataset.size()) < k)
    throw std::invalid_argument("quantile_split: fewer samples than blocks");
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  for (int i : order)
    if (!dataset[i].label)
      throw std::invalid_argument("quantile_split: unlabeled graph");
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    return *dataset[x].label < *dataset[y].label;
  });
  int64_t n = static_cast<int64_t>(dataset.size());
  int64_t lo = n * (held - 1) / k;
  int64_t hi = n * held / k;
  std::pair<std::vector<Dag>, std::vector<Dag>> out;
  for (int64_t i = 0; i < n; ++i) {
    if (i >= lo && i < hi)
      out.second.push_back(dataset[order[i]]);
    else
      out.first.push_back(dataset[order[i]]);
  }
  return out;
}

}  // namespace layerdag
