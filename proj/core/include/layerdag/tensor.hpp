#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace layerdag {

// Dense row-major tensor of doubles. All model math runs in 64-bit;
// checkpoints store 32-bit payloads.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor scalar(double v);
  static Tensor row(std::vector<double> v);

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int dim(int i) const { return shape[i]; }
  int rows() const { return shape[0]; }
  int cols() const { return shape[1]; }

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const {
    return data[static_cast<size_t>(r) * cols() + c];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  std::string shape_str() const;
};

// Eager helpers, used by oracles and non-differentiable paths.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

}  // namespace layerdag
