#include "layerdag/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace layerdag {

namespace {
constexpr double kLayerNormEps = 1e-5;

void check_rank2(const Tensor& t, const char* op) {
  if (t.shape.size() != 2)
    throw std::invalid_argument(std::string(op) + ": rank-2 tensor required");
}
}  // namespace

Tape::VarId Tape::input(Tensor value, bool requires_grad) {
  check_rank2(value, "input");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return static_cast<VarId>(nodes_.size() - 1);
}

Tape::VarId Tape::input_ref(const Tensor& value) {
  check_rank2(value, "input_ref");
  Node n;
  n.external = &value;
  nodes_.push_back(std::move(n));
  return static_cast<VarId>(nodes_.size() - 1);
}

Tape::VarId Tape::emplace(Tensor value, std::function<void()> bw) {
  Node n;
  n.value = std::move(value);
  n.backward = std::move(bw);
  nodes_.push_back(std::move(n));
  return static_cast<VarId>(nodes_.size() - 1);
}

void Tape::backward(VarId loss) {
  if (value(loss).size() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  if (!std::isfinite(value(loss).data[0]))
    throw std::runtime_error("backward: non-finite loss");
  for (auto& n : nodes_)
    n.grad = Tensor(n.external ? n.external->shape : n.value.shape);
  nodes_[loss].grad.data[0] = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
    if (nodes_[i].backward) nodes_[i].backward();
  for (auto& n : nodes_)
    if (!n.grad.all_finite())
      throw std::runtime_error("backward: non-finite gradient");
}

Tape::VarId Tape::matmul(VarId a, VarId b) {
  Tensor out = layerdag::matmul(value(a), value(b));
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, b, id] {
    const Tensor& g = grad_ref(id);
    Tensor ga = layerdag::matmul(g, layerdag::transpose(value(b)));
    Tensor gb = layerdag::matmul(layerdag::transpose(value(a)), g);
    for (int64_t i = 0; i < ga.size(); ++i) grad_ref(a).data[i] += ga.data[i];
    for (int64_t i = 0; i < gb.size(); ++i) grad_ref(b).data[i] += gb.data[i];
  };
  return id;
}

Tape::VarId Tape::add(VarId a, VarId b) {
  if (!value(a).same_shape(value(b)))
    throw std::invalid_argument("add: shape mismatch");
  Tensor out = value(a);
  for (int64_t i = 0; i < out.size(); ++i) out.data[i] += value(b).data[i];
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, b, id] {
    const Tensor& g = grad_ref(id);
    for (int64_t i = 0; i < g.size(); ++i) {
      grad_ref(a).data[i] += g.data[i];
      grad_ref(b).data[i] += g.data[i];
    }
  };
  return id;
}

Tape::VarId Tape::sub(VarId a, VarId b) {
  if (!value(a).same_shape(value(b)))
    throw std::invalid_argument("sub: shape mismatch");
  Tensor out = value(a);
  for (int64_t i = 0; i < out.size(); ++i) out.data[i] -= value(b).data[i];
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, b, id] {
    const Tensor& g = grad_ref(id);
    for (int64_t i = 0; i < g.size(); ++i) {
      grad_ref(a).data[i] += g.data[i];
      grad_ref(b).data[i] -= g.data[i];
    }
  };
  return id;
}

Tape::VarId Tape::mul(VarId a, VarId b) {
  if (!value(a).same_shape(value(b)))
    throw std::invalid_argument("mul: shape mismatch");
  Tensor out = value(a);
  for (int64_t i = 0; i < out.size(); ++i) out.data[i] *= value(b).data[i];
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, b, id] {
    const Tensor& g = grad_ref(id);
    for (int64_t i = 0; i < g.size(); ++i) {
      grad_ref(a).data[i] += g.data[i] * value(b).data[i];
      grad_ref(b).data[i] += g.data[i] * value(a).data[i];
    }
  };
  return id;
}

Tape::VarId Tape::scale(VarId a, double k) {
  Tensor out = value(a);
  for (double& x : out.data) x *= k;
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, id, k] {
    const Tensor& g = grad_ref(id);
    for (int64_t i = 0; i < g.size(); ++i) grad_ref(a).data[i] += k * g.data[i];
  };
  return id;
}

Tape::VarId Tape::add_rowvec(VarId a, VarId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (bv.rows() != 1 || bv.cols() != av.cols())
    throw std::invalid_argument("add_rowvec: shape mismatch");
  Tensor out = av;
  for (int r = 0; r < av.rows(); ++r)
    for (int c = 0; c < av.cols(); ++c) out.at(r, c) += bv.at(0, c);
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, b, id] {
    const Tensor& g = grad_ref(id);
    for (int64_t i = 0; i < g.size(); ++i) grad_ref(a).data[i] += g.data[i];
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < g.cols(); ++c) grad_ref(b).at(0, c) += g.at(r, c);
  };
  return id;
}

Tape::VarId Tape::broadcast_row(VarId a, int m) {
  const Tensor& av = value(a);
  if (av.rows() != 1) throw std::invalid_argument("broadcast_row: not a row");
  Tensor out({m, av.cols()});
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < av.cols(); ++c) out.at(r, c) = av.at(0, c);
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, id] {
    const Tensor& g = grad_ref(id);
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < g.cols(); ++c) grad_ref(a).at(0, c) += g.at(r, c);
  };
  return id;
}

Tape::VarId Tape::relu(VarId a) {
  Tensor out = value(a);
  for (double& x : out.data) x = x > 0 ? x : 0;
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, id] {
    const Tensor& g = grad_ref(id);
    for (int64_t i = 0; i < g.size(); ++i)
      if (value(a).data[i] > 0) grad_ref(a).data[i] += g.data[i];
  };
  return id;
}

Tape::VarId Tape::sigmoid(VarId a) {
  Tensor out = value(a);
  for (double& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, id] {
    const Tensor& g = grad_ref(id);
    const Tensor& y = value(id);
    for (int64_t i = 0; i < g.size(); ++i)
      grad_ref(a).data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
  };
  return id;
}

Tape::VarId Tape::transpose(VarId a) {
  VarId id = emplace(layerdag::transpose(value(a)), nullptr);
  nodes_[id].backward = [this, a, id] {
    Tensor gt = layerdag::transpose(grad_ref(id));
    for (int64_t i = 0; i < gt.size(); ++i) grad_ref(a).data[i] += gt.data[i];
  };
  return id;
}

Tape::VarId Tape::concat_rows(VarId a, VarId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.cols() != bv.cols())
    throw std::invalid_argument("concat_rows: column mismatch");
  Tensor out({av.rows() + bv.rows(), av.cols()});
  std::copy(av.data.begin(), av.data.end(), out.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.size());
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, b, id] {
    const Tensor& g = grad_ref(id);
    int64_t na = value(a).size();
    for (int64_t i = 0; i < na; ++i) grad_ref(a).data[i] += g.data[i];
    for (int64_t i = 0; i < value(b).size(); ++i)
      grad_ref(b).data[i] += g.data[na + i];
  };
  return id;
}

Tape::VarId Tape::concat_cols(VarId a, VarId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rows() != bv.rows())
    throw std::invalid_argument("concat_cols: row mismatch");
  Tensor out({av.rows(), av.cols() + bv.cols()});
  for (int r = 0; r < av.rows(); ++r) {
    for (int c = 0; c < av.cols(); ++c) out.at(r, c) = av.at(r, c);
    for (int c = 0; c < bv.cols(); ++c) out.at(r, av.cols() + c) = bv.at(r, c);
  }
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, b, id] {
    const Tensor& g = grad_ref(id);
    int ac = value(a).cols();
    for (int r = 0; r < g.rows(); ++r) {
      for (int c = 0; c < ac; ++c) grad_ref(a).at(r, c) += g.at(r, c);
      for (int c = 0; c < value(b).cols(); ++c)
        grad_ref(b).at(r, c) += g.at(r, ac + c);
    }
  };
  return id;
}

Tape::VarId Tape::slice_rows(VarId a, int lo, int hi) {
  const Tensor& av = value(a);
  if (lo < 0 || hi > av.rows() || lo > hi)
    throw std::invalid_argument("slice_rows: bad range");
  Tensor out({hi - lo, av.cols()});
  for (int r = lo; r < hi; ++r)
    for (int c = 0; c < av.cols(); ++c) out.at(r - lo, c) = av.at(r, c);
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, id, lo] {
    const Tensor& g = grad_ref(id);
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < g.cols(); ++c) grad_ref(a).at(lo + r, c) += g.at(r, c);
  };
  return id;
}

Tape::VarId Tape::slice_cols(VarId a, int lo, int hi) {
  const Tensor& av = value(a);
  if (lo < 0 || hi > av.cols() || lo > hi)
    throw std::invalid_argument("slice_cols: bad range");
  Tensor out({av.rows(), hi - lo});
  for (int r = 0; r < av.rows(); ++r)
    for (int c = lo; c < hi; ++c) out.at(r, c - lo) = av.at(r, c);
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, id, lo] {
    const Tensor& g = grad_ref(id);
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < g.cols(); ++c) grad_ref(a).at(r, lo + c) += g.at(r, c);
  };
  return id;
}

Tape::VarId Tape::gather_rows(VarId a, std::vector<int> idx) {
  const Tensor& av = value(a);
  Tensor out({static_cast<int>(idx.size()), av.cols()});
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= av.rows())
      throw std::invalid_argument("gather_rows: index out of range");
    for (int c = 0; c < av.cols(); ++c)
      out.at(static_cast<int>(r), c) = av.at(idx[r], c);
  }
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, id, idx = std::move(idx)] {
    const Tensor& g = grad_ref(id);
    for (size_t r = 0; r < idx.size(); ++r)
      for (int c = 0; c < g.cols(); ++c)
        grad_ref(a).at(idx[r], c) += g.at(static_cast<int>(r), c);
  };
  return id;
}

Tape::VarId Tape::mean_rows(VarId a) {
  const Tensor& av = value(a);
  if (av.rows() < 1) throw std::invalid_argument("mean_rows: empty input");
  Tensor out({1, av.cols()});
  for (int r = 0; r < av.rows(); ++r)
    for (int c = 0; c < av.cols(); ++c) out.at(0, c) += av.at(r, c);
  for (double& x : out.data) x /= av.rows();
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, id] {
    const Tensor& g = grad_ref(id);
    double inv = 1.0 / value(a).rows();
    for (int r = 0; r < value(a).rows(); ++r)
      for (int c = 0; c < g.cols(); ++c)
        grad_ref(a).at(r, c) += inv * g.at(0, c);
  };
  return id;
}

Tape::VarId Tape::sum_rows(VarId a) {
  const Tensor& av = value(a);
  Tensor out({1, av.cols()});
  for (int r = 0; r < av.rows(); ++r)
    for (int c = 0; c < av.cols(); ++c) out.at(0, c) += av.at(r, c);
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, id] {
    const Tensor& g = grad_ref(id);
    for (int r = 0; r < value(a).rows(); ++r)
      for (int c = 0; c < g.cols(); ++c) grad_ref(a).at(r, c) += g.at(0, c);
  };
  return id;
}

Tape::VarId Tape::softmax_rows(VarId a) {
  Tensor out = value(a);
  for (int r = 0; r < out.rows(); ++r) {
    double mx = out.at(r, 0);
    for (int c = 1; c < out.cols(); ++c) mx = std::max(mx, out.at(r, c));
    double total = 0;
    for (int c = 0; c < out.cols(); ++c) {
      out.at(r, c) = std::exp(out.at(r, c) - mx);
      total += out.at(r, c);
    }
    for (int c = 0; c < out.cols(); ++c) out.at(r, c) /= total;
  }
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, a, id] {
    const Tensor& g = grad_ref(id);
    const Tensor& y = value(id);
    for (int r = 0; r < g.rows(); ++r) {
      double dot = 0;
      for (int c = 0; c < g.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
      for (int c = 0; c < g.cols(); ++c)
        grad_ref(a).at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
    }
  };
  return id;
}

Tape::VarId Tape::layer_norm(VarId x, VarId gain, VarId offset) {
  const Tensor& xv = value(x);
  int n = xv.cols();
  if (value(gain).cols() != n || value(offset).cols() != n ||
      value(gain).rows() != 1 || value(offset).rows() != 1)
    throw std::invalid_argument("layer_norm: gain/offset must be (1,n)");
  Tensor out(xv.shape);
  for (int r = 0; r < xv.rows(); ++r) {
    double mu = 0;
    for (int c = 0; c < n; ++c) mu += xv.at(r, c);
    mu /= n;
    double var = 0;
    for (int c = 0; c < n; ++c) {
      double d = xv.at(r, c) - mu;
      var += d * d;
    }
    var /= n;
    double inv_sigma = 1.0 / std::sqrt(var + kLayerNormEps);
    for (int c = 0; c < n; ++c)
      out.at(r, c) = value(gain).at(0, c) * (xv.at(r, c) - mu) * inv_sigma +
                     value(offset).at(0, c);
  }
  VarId id = emplace(std::move(out), nullptr);
  nodes_[id].backward = [this, x, gain, offset, id, n] {
    const Tensor& g = grad_ref(id);
    const Tensor& xv = value(x);
    for (int r = 0; r < xv.rows(); ++r) {
      double mu = 0;
      for (int c = 0; c < n; ++c) mu += xv.at(r, c);
      mu /= n;
      double var = 0;
      for (int c = 0; c < n; ++c) {
        double d = xv.at(r, c) - mu;
        var += d * d;
      }
      var /= n;
      double inv_sigma = 1.0 / std::sqrt(var + kLayerNormEps);
      double sum_dxhat = 0, sum_dxhat_xhat = 0;
      for (int c = 0; c < n; ++c) {
        double xhat = (xv.at(r, c) - mu) * inv_sigma;
        double dxhat = g.at(r, c) * value(gain).at(0, c);
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        grad_ref(gain).at(0, c) += g.at(r, c) * xhat;
        grad_ref(offset).at(0, c) += g.at(r, c);
      }
      for (int c = 0; c < n; ++c) {
        double xhat = (xv.at(r, c) - mu) * inv_sigma;
        double dxhat = g.at(r, c) * value(gain).at(0, c);
        grad_ref(x).at(r, c) +=
            inv_sigma *
            (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
      }
    }
  };
  return id;
}

Tape::VarId Tape::softmax_cross_entropy(VarId logits, std::vector<int> targets) {
  const Tensor& lv = value(logits);
  if (static_cast<int>(targets.size()) != lv.rows())
    throw std::invalid_argument("softmax_cross_entropy: target count mismatch");
  int m = lv.rows(), C = lv.cols();
  Tensor probs(lv.shape);
  double loss = 0;
  for (int r = 0; r < m; ++r) {
    if (targets[r] < 0 || targets[r] >= C)
      throw std::invalid_argument("softmax_cross_entropy: target out of range");
    double mx = lv.at(r, 0);
    for (int c = 1; c < C; ++c) mx = std::max(mx, lv.at(r, c));
    double total = 0;
    for (int c = 0; c < C; ++c) total += std::exp(lv.at(r, c) - mx);
    double logz = mx + std::log(total);
    for (int c = 0; c < C; ++c) probs.at(r, c) = std::exp(lv.at(r, c) - logz);
    loss -= lv.at(r, targets[r]) - logz;
  }
  loss /= m;
  VarId id = emplace(Tensor::scalar(loss), nullptr);
  nodes_[id].backward = [this, logits, id, m,
                         probs = std::move(probs),
                         targets = std::move(targets)] {
    double g = grad_ref(id).data[0] / m;
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < probs.cols(); ++c)
        grad_ref(logits).at(r, c) +=
            g * (probs.at(r, c) - (c == targets[r] ? 1.0 : 0.0));
  };
  return id;
}

Tape::VarId Tape::bce_with_logits(VarId logits, std::vector<double> targets) {
  const Tensor& lv = value(logits);
  if (static_cast<int64_t>(targets.size()) != lv.size())
    throw std::invalid_argument("bce_with_logits: target count mismatch");
  int64_t m = lv.size();
  double loss = 0;
  for (int64_t i = 0; i < m; ++i) {
    double z = lv.data[i];
    loss += std::max(z, 0.0) - targets[i] * z + std::log1p(std::exp(-std::abs(z)));
  }
  loss /= m;
  VarId id = emplace(Tensor::scalar(loss), nullptr);
  nodes_[id].backward = [this, logits, id, m, targets = std::move(targets)] {
    double g = grad_ref(id).data[0] / m;
    for (int64_t i = 0; i < m; ++i) {
      double s = 1.0 / (1.0 + std::exp(-value(logits).data[i]));
      grad_ref(logits).data[i] += g * (s - targets[i]);
    }
  };
  return id;
}

Tape::VarId Tape::mse_loss(VarId pred, std::vector<double> targets) {
  const Tensor& pv = value(pred);
  if (static_cast<int64_t>(targets.size()) != pv.size())
    throw std::invalid_argument("mse_loss: target count mismatch");
  int64_t m = pv.size();
  double loss = 0;
  for (int64_t i = 0; i < m; ++i) {
    double d = pv.data[i] - targets[i];
    loss += d * d;
  }
  loss /= m;
  VarId id = emplace(Tensor::scalar(loss), nullptr);
  nodes_[id].backward = [this, pred, id, m, targets = std::move(targets)] {
    double g = grad_ref(id).data[0] * 2.0 / m;
    for (int64_t i = 0; i < m; ++i)
      grad_ref(pred).data[i] += g * (value(pred).data[i] - targets[i]);
  };
  return id;
}

Tape::VarId Tape::add_many(const std::vector<VarId>& ids) {
  if (ids.empty()) throw std::invalid_argument("add_many: empty list");
  VarId acc = ids[0];
  for (size_t i = 1; i < ids.size(); ++i) acc = add(acc, ids[i]);
  return acc;
}

}  // namespace layerdag
