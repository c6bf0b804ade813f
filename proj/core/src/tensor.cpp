#include "layerdag/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace layerdag {

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
    n *= d;
  }
  data.assign(n, 0.0);
}

Tensor Tensor::scalar(double v) {
  Tensor t({1, 1});
  t.data[0] = v;
  return t;
}

Tensor Tensor::row(std::vector<double> v) {
  Tensor t({1, static_cast<int>(v.size())});
  t.data = std::move(v);
  return t;
}

bool Tensor::all_finite() const {
  for (double x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i)
    s += (i ? "," : "") + std::to_string(shape[i]);
  return s + ")";
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.cols() != b.rows())
    throw std::invalid_argument("matmul: shape mismatch " + a.shape_str() +
                                " x " + b.shape_str());
  Tensor c({a.rows(), b.cols()});
  int m = a.rows(), k = a.cols(), n = b.cols();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double av = a.at(i, p);
      if (av == 0.0) continue;
      const double* brow = &b.data[static_cast<size_t>(p) * n];
      double* crow = &c.data[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  return c;
}

Tensor transpose(const Tensor& a) {
  if (a.shape.size() != 2)
    throw std::invalid_argument("transpose: rank-2 tensor required");
  Tensor t({a.cols(), a.rows()});
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

}  // namespace layerdag
