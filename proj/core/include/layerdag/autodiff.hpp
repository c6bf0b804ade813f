#pragma once

#include <functional>
#include <vector>

#include "layerdag/tensor.hpp"

namespace layerdag {

// Reverse-mode tape over rank-2 tensors. Nodes are created in topological
// order by construction; backward() replays them in reverse. One tape per
// forward pass; tapes are cheap and never shared across threads.
class Tape {
 public:
  using VarId = int;

  VarId input(Tensor value, bool requires_grad = true);

  // Input whose storage stays outside the tape; the tensor must outlive it.
  // Used to expose model parameters without copying them per forward pass.
  VarId input_ref(const Tensor& value);

  const Tensor& value(VarId id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  const Tensor& grad(VarId id) const { return nodes_[id].grad; }

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every node.
  // Throws std::runtime_error if the loss or any gradient is non-finite.
  void backward(VarId loss);

  VarId matmul(VarId a, VarId b);
  VarId add(VarId a, VarId b);
  VarId sub(VarId a, VarId b);
  VarId mul(VarId a, VarId b);
  VarId scale(VarId a, double k);
  VarId add_rowvec(VarId a, VarId b);   // (m,n) + (1,n)
  VarId broadcast_row(VarId a, int m);  // (1,n) -> (m,n)
  VarId relu(VarId a);
  VarId sigmoid(VarId a);
  VarId transpose(VarId a);
  VarId concat_rows(VarId a, VarId b);
  VarId concat_cols(VarId a, VarId b);
  VarId slice_rows(VarId a, int lo, int hi);
  VarId slice_cols(VarId a, int lo, int hi);
  VarId gather_rows(VarId a, std::vector<int> idx);
  VarId mean_rows(VarId a);  // (m,n) -> (1,n), m >= 1
  VarId sum_rows(VarId a);
  VarId softmax_rows(VarId a);
  // Per-row normalization with learned gain/offset, eps = 1e-5.
  VarId layer_norm(VarId x, VarId gain, VarId offset);

  // Scalar losses, mean-reduced.
  VarId softmax_cross_entropy(VarId logits, std::vector<int> targets);
  VarId bce_with_logits(VarId logits, std::vector<double> targets);
  VarId mse_loss(VarId pred, std::vector<double> targets);

  VarId add_many(const std::vector<VarId>& ids);

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = true;
    std::function<void()> backward;
  };

  VarId emplace(Tensor value, std::function<void()> bw);
  Tensor& grad_ref(VarId id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;
};

}  // namespace layerdag
