#include "layerdag/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace layerdag {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (index_.count(name))
    throw std::invalid_argument("ParamStore: duplicate name " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(t));
  return entries_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::out_of_range("ParamStore: unknown name " + name);
  return entries_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::out_of_range("ParamStore: unknown name " + name);
  return entries_[it->second].second;
}

bool ParamStore::contains(const std::string& name) const {
  return index_.count(name) > 0;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore z;
  for (const auto& [name, t] : entries_) z.add(name, Tensor(t.shape));
  return z;
}

void ParamStore::accumulate(const ParamStore& other, double scale) {
  if (other.count() != count())
    throw std::invalid_argument("ParamStore::accumulate: store mismatch");
  for (size_t i = 0; i < entries_.size(); ++i) {
    Tensor& dst = entries_[i].second;
    const Tensor& src = other.entries_[i].second;
    for (int64_t j = 0; j < dst.size(); ++j) dst.data[j] += scale * src.data[j];
  }
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

Tensor xavier_uniform(int fan_in, int fan_out, Rng& rng) {
  Tensor t({fan_in, fan_out});
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& x : t.data) x = (rng.uniform() * 2.0 - 1.0) * bound;
  return t;
}

void AdamState::init(const ParamStore& params) {
  m = params.zeros_like();
  v = params.zeros_like();
  step = 0;
}

void adam_step(ParamStore& params, const ParamStore& grads, AdamState& st) {
  if (st.m.count() != params.count()) st.init(params);
  ++st.step;
  double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (size_t i = 0; i < params.count(); ++i) {
    Tensor& p = params.tensor_at(i);
    const Tensor& g = grads.tensor_at(i);
    Tensor& mi = st.m.tensor_at(i);
    Tensor& vi = st.v.tensor_at(i);
    for (int64_t j = 0; j < p.size(); ++j) {
      double gj = g.data[j];
      if (!std::isfinite(gj))
        throw std::runtime_error("adam_step: non-finite gradient in " +
                                 params.name_at(i));
      mi.data[j] = st.beta1 * mi.data[j] + (1.0 - st.beta1) * gj;
      vi.data[j] = st.beta2 * vi.data[j] + (1.0 - st.beta2) * gj * gj;
      double mhat = mi.data[j] / bc1;
      double vhat = vi.data[j] / bc2;
      p.data[j] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
}

ParamVars ParamVars::bind(Tape& t, const ParamStore& p) {
  ParamVars pv;
  pv.tape = &t;
  pv.store = &p;
  pv.ids.reserve(p.count());
  for (size_t i = 0; i < p.count(); ++i)
    pv.ids.push_back(t.input_ref(p.tensor_at(i)));
  return pv;
}

Tape::VarId ParamVars::operator[](const std::string& name) const {
  for (size_t i = 0; i < store->count(); ++i)
    if (store->name_at(i) == name) return ids[i];
  throw std::out_of_range("ParamVars: unknown name " + name);
}

ParamStore ParamVars::collect_grads() const {
  ParamStore g;
  for (size_t i = 0; i < store->count(); ++i)
    g.add(store->name_at(i), tape->grad(ids[i]));
  return g;
}

double grad_check(const LossBuilder& build, const ParamStore& params,
                  double eps, int max_coords, Rng& rng) {
  Tape tape;
  ParamVars pv = ParamVars::bind(tape, params);
  Tape::VarId loss = build(tape, pv);
  tape.backward(loss);
  ParamStore analytic = pv.collect_grads();

  auto eval = [&](const ParamStore& p) {
    Tape t2;
    ParamVars pv2 = ParamVars::bind(t2, p);
    return t2.value(build(t2, pv2)).data[0];
  };

  double max_rel = 0;
  int64_t total = params.total_size();
  int coords = static_cast<int>(std::min<int64_t>(max_coords, total));
  for (int k = 0; k < coords; ++k) {
    int64_t flat = static_cast<int64_t>(rng.below(total));
    size_t pi = 0;
    while (flat >= params.tensor_at(pi).size()) {
      flat -= params.tensor_at(pi).size();
      ++pi;
    }
    ParamStore perturbed = params.zeros_like();
    for (size_t i = 0; i < params.count(); ++i)
      perturbed.tensor_at(i) = params.tensor_at(i);
    perturbed.tensor_at(pi).data[flat] += eps;
    double up = eval(perturbed);
    perturbed.tensor_at(pi).data[flat] -= 2 * eps;
    double down = eval(perturbed);
    double numeric = (up - down) / (2 * eps);
    double a = analytic.tensor_at(pi).data[flat];
    double rel = std::abs(a - numeric) /
                 std::max({1.0, std::abs(a), std::abs(numeric)});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

Tape::VarId affine(Tape& t, Tape::VarId x, Tape::VarId w, Tape::VarId b) {
  return t.add_rowvec(t.matmul(x, w), b);
}

Tape::VarId bimpnn_linear(Tape& t, Tape::VarId adj, Tape::VarId h,
                          Tape::VarId wf, Tape::VarId wr, Tape::VarId ws) {
  Tape::VarId fwd = t.matmul(t.matmul(adj, h), wf);
  Tape::VarId rev = t.matmul(t.matmul(t.transpose(adj), h), wr);
  Tape::VarId self = t.matmul(h, ws);
  return t.add(t.add(fwd, rev), self);
}

Tape::VarId attention_block(Tape& t, Tape::VarId x,
                            const AttentionBlockWeights& w, int heads) {
  int d = t.value(x).cols();
  if (d % heads != 0)
    throw std::invalid_argument("attention_block: dim not divisible by heads");
  int dh = d / heads;
  Tape::VarId q = t.matmul(x, w.wq);
  Tape::VarId k = t.matmul(x, w.wk);
  Tape::VarId v = t.matmul(x, w.wv);
  Tape::VarId mixed = -1;
  for (int h = 0; h < heads; ++h) {
    Tape::VarId qh = t.slice_cols(q, h * dh, (h + 1) * dh);
    Tape::VarId kh = t.slice_cols(k, h * dh, (h + 1) * dh);
    Tape::VarId vh = t.slice_cols(v, h * dh, (h + 1) * dh);
    Tape::VarId scores =
        t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(dh));
    Tape::VarId attn = t.matmul(t.softmax_rows(scores), vh);
    mixed = h == 0 ? attn : t.concat_cols(mixed, attn);
  }
  Tape::VarId attended = t.matmul(mixed, w.wo);
  Tape::VarId h1 = t.layer_norm(t.add(x, attended), w.ln1_gain, w.ln1_offset);
  Tape::VarId ff =
      affine(t, t.relu(affine(t, h1, w.ff_w1, w.ff_b1)), w.ff_w2, w.ff_b2);
  return t.layer_norm(t.add(h1, ff), w.ln2_gain, w.ln2_offset);
}

void add_attention_block_params(ParamStore& p, const std::string& prefix,
                                int dim, int ff_dim, Rng& rng) {
  p.add(prefix + ".wq", xavier_uniform(dim, dim, rng));
  p.add(prefix + ".wk", xavier_uniform(dim, dim, rng));
  p.add(prefix + ".wv", xavier_uniform(dim, dim, rng));
  p.add(prefix + ".wo", xavier_uniform(dim, dim, rng));
  p.add(prefix + ".ff_w1", xavier_uniform(dim, ff_dim, rng));
  p.add(prefix + ".ff_b1", Tensor({1, ff_dim}));
  p.add(prefix + ".ff_w2", xavier_uniform(ff_dim, dim, rng));
  p.add(prefix + ".ff_b2", Tensor({1, dim}));
  Tensor ones({1, dim});
  for (double& x : ones.data) x = 1.0;
  p.add(prefix + ".ln1_gain", ones);
  p.add(prefix + ".ln1_offset", Tensor({1, dim}));
  p.add(prefix + ".ln2_gain", ones);
  p.add(prefix + ".ln2_offset", Tensor({1, dim}));
}

AttentionBlockWeights bind_attention_block(const ParamVars& pv,
                                           const std::string& prefix) {
  AttentionBlockWeights w;
  w.wq = pv[prefix + ".wq"];
  w.wk = pv[prefix + ".wk"];
  w.wv = pv[prefix + ".wv"];
  w.wo = pv[prefix + ".wo"];
  w.ff_w1 = pv[prefix + ".ff_w1"];
  w.ff_b1 = pv[prefix + ".ff_b1"];
  w.ff_w2 = pv[prefix + ".ff_w2"];
  w.ff_b2 = pv[prefix + ".ff_b2"];
  w.ln1_gain = pv[prefix + ".ln1_gain"];
  w.ln1_offset = pv[prefix + ".ln1_offset"];
  w.ln2_gain = pv[prefix + ".ln2_gain"];
  w.ln2_offset = pv[prefix + ".ln2_offset"];
  return w;
}

Tensor sinusoidal_embed(double x, int dim) {
  if (dim % 2 != 0)
    throw std::invalid_argument("sinusoidal_embed: dim must be even");
  Tensor e({1, dim});
  for (int i = 0; 2 * i < dim; ++i) {
    double freq = std::pow(10000.0, -2.0 * i / dim);
    e.data[2 * i] = std::sin(x * freq);
    e.data[2 * i + 1] = std::cos(x * freq);
  }
  return e;
}

Tape::VarId set_pool(Tape& t, Tape::VarId h, PoolMode mode) {
  return mode == PoolMode::Sum ? t.sum_rows(h) : t.mean_rows(h);
}

}  // namespace layerdag
