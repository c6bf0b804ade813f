#pragma once

#include <optional>
#include <vector>

#include "layerdag/dag.hpp"
#include "layerdag/lp.hpp"
#include "layerdag/model.hpp"
#include "layerdag/nn.hpp"

namespace layerdag {

// Normalized distribution over the integer support [0, mass.size()).
struct Histogram {
  std::vector<double> mass;
};

// Histogram of the given nonnegative integers, normalized to sum 1.
// Throws std::invalid_argument on empty input.
Histogram make_histogram(const std::vector<int>& values);

// 1-Wasserstein distance between two distributions on the integer line
// (CDF difference sum). Supports are aligned by zero padding.
double emd1d(const Histogram& a, const Histogram& b);

// W1 between two scalar empirical distributions. Equal sizes use the
// sorted-coupling mean absolute difference; unequal sizes use the general
// quantile coupling. Throws std::invalid_argument on empty input.
double wasserstein1(std::vector<double> a, std::vector<double> b);

struct MmdResult {
  double mmd_sq = 0;  // clamped at 0
  double mmd = 0;     // sqrt convention; report this one
  double sigma = 0;   // kernel bandwidth actually used
};

// MMD^2 between two sets of histograms under a Gaussian kernel with 1D EMD
// ground distance. When sigma is absent, the median pairwise EMD within A
// is used (A should be the reference set); a zero median falls back to 1.
// Throws std::invalid_argument on empty sets.
MmdResult mmd(const std::vector<Histogram>& a, const std::vector<Histogram>& b,
              std::optional<double> sigma = std::nullopt);

// Per-graph distribution of layer sizes |V(l)|.
Histogram layer_size_histogram(const Dag& d);

// Per-graph attribute-value histogram, channels concatenated on one line and
// jointly normalized. channel_sizes fixes the per-channel support.
Histogram attribute_histogram(const Dag& d, const std::vector<int>& channel_sizes);

struct ValidityBreakdown {
  double balance = 0;
  double attrs = 0;
  double indegree = 0;
  double full = 0;
  int count = 0;
};

// Fraction of graphs passing each hard constraint and their conjunction.
// Throws std::invalid_argument on an empty list.
ValidityBreakdown validity_rate(const std::vector<Dag>& graphs,
                                const LpConfig& cfg);

// Sample Pearson correlation; nullopt when either input has zero variance.
std::optional<double> pearson(const std::vector<double>& a,
                              const std::vector<double>& b);

double mean_abs_error(const std::vector<double>& pred,
                      const std::vector<double>& truth);

struct SurrogateConfig {
  ArchConfig arch;
  int epochs = 100;
  int batch_size = 32;
  double lr = 1e-3;
  int patience = 20;
  uint64_t seed = 0;
  int threads = 8;
};

// BiMPNN stack + mean pool + affine head regressing z-scored labels.
struct Surrogate {
  ArchConfig arch;
  std::vector<int> channel_sizes;
  double label_mean = 0;
  double label_std = 1;
  ParamStore params;
};

// MSE/Adam training; the returned model is the epoch with the best
// validation Pearson (best validation MSE when Pearson is undefined).
// Throws std::invalid_argument on an empty or unlabeled dataset.
Surrogate train_surrogate(const std::vector<Dag>& train,
                          const std::vector<Dag>& val,
                          const SurrogateConfig& cfg);

// Prediction in original label units.
double predict_surrogate(const Surrogate& s, const Dag& d);

struct SurrogateEval {
  std::optional<double> pearson;  // nullopt flags zero variance
  double mae = 0;                 // original label units
};

SurrogateEval eval_surrogate(const Surrogate& s, const std::vector<Dag>& test);

// Sort by label (ties broken by original index), cut into k near-equal
// blocks, hold block `held` (1-based) out. Returns (dev, held-out).
// Throws std::invalid_argument when k < 2, held out of range, or the
// dataset has fewer than k graphs.
std::pair<std::vector<Dag>, std::vector<Dag>> quantile_split(
    const std::vector<Dag>& dataset, int k, int held);

}  // namespace layerdag
