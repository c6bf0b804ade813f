#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "layerdag/autodiff.hpp"
#include "layerdag/rng.hpp"
#include "layerdag/tensor.hpp"

namespace layerdag {

// Ordered, named parameter collection. Iteration order is insertion order,
// which fixes the Adam update and reduction order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  size_t count() const { return entries_.size(); }
  const std::string& name_at(size_t i) const { return entries_[i].first; }
  Tensor& tensor_at(size_t i) { return entries_[i].second; }
  const Tensor& tensor_at(size_t i) const { return entries_[i].second; }

  // Zero tensors with identical names/shapes; used as a gradient accumulator.
  ParamStore zeros_like() const;
  void accumulate(const ParamStore& other, double scale = 1.0);

  int64_t total_size() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, size_t> index_;
};

// Uniform(-sqrt(6/(fan_in+fan_out)), +...) init; biases start at zero.
Tensor xavier_uniform(int fan_in, int fan_out, Rng& rng);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step = 0;
  ParamStore m;  // first moments, mirrors the parameter store
  ParamStore v;  // second moments

  void init(const ParamStore& params);
};

// Standard Adam with bias correction. Throws std::runtime_error on
// non-finite gradients.
void adam_step(ParamStore& params, const ParamStore& grads, AdamState& st);

// All parameters of the store exposed on one tape; forward code looks
// variables up by name.
struct ParamVars {
  Tape* tape = nullptr;
  const ParamStore* store = nullptr;
  std::vector<Tape::VarId> ids;

  static ParamVars bind(Tape& t, const ParamStore& p);
  Tape::VarId operator[](const std::string& name) const;

  // Gradients read back from the tape after backward, in store order.
  ParamStore collect_grads() const;
};

// Builds a scalar loss from parameter variables on a fresh tape.
using LossBuilder = std::function<Tape::VarId(Tape&, const ParamVars&)>;

// Max relative error between analytic and central-difference gradients over
// up to max_coords randomly sampled coordinates.
double grad_check(const LossBuilder& build, const ParamStore& params,
                  double eps, int max_coords, Rng& rng);

// x W + b.
Tape::VarId affine(Tape& t, Tape::VarId x, Tape::VarId w, Tape::VarId b);

// A H Wf + A^T H Wr + H Ws; the caller applies the nonlinearity.
Tape::VarId bimpnn_linear(Tape& t, Tape::VarId adj, Tape::VarId h,
                          Tape::VarId wf, Tape::VarId wr, Tape::VarId ws);

struct AttentionBlockWeights {
  Tape::VarId wq, wk, wv, wo;        // (d, d)
  Tape::VarId ff_w1, ff_b1, ff_w2, ff_b2;
  Tape::VarId ln1_gain, ln1_offset, ln2_gain, ln2_offset;
};

// Post-norm transformer block without positional encodings: multi-head
// self-attention + residual + LN, then a ReLU feed-forward + residual + LN.
Tape::VarId attention_block(Tape& t, Tape::VarId x,
                            const AttentionBlockWeights& w, int heads);

// Registers the weights of one attention block under a name prefix.
void add_attention_block_params(ParamStore& p, const std::string& prefix,
                                int dim, int ff_dim, Rng& rng);
AttentionBlockWeights bind_attention_block(const ParamVars& pv,
                                           const std::string& prefix);

// e[2i] = sin(x / 10000^(2i/dim)), e[2i+1] = cos(...); dim must be even.
Tensor sinusoidal_embed(double x, int dim);

enum class PoolMode { Sum, Mean };
Tape::VarId set_pool(Tape& t, Tape::VarId h, PoolMode mode);

}  // namespace layerdag
