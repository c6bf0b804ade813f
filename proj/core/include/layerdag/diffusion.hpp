#pragma once

#include <vector>

#include "layerdag/rng.hpp"

namespace layerdag {

// Row-stochastic C x C matrix, row-major.
struct TransitionMatrix {
  int num_categories = 0;
  std::vector<double> data;

  double at(int row, int col) const { return data[row * num_categories + col]; }
  double& at(int row, int col) { return data[row * num_categories + col]; }
};

// alpha_bar(t) = cos^2((pi/2) * ((t/T + s) / (1 + s))).
// Exactly 0 at t = T. Throws std::domain_error on out-of-range t.
double cosine_alpha_bar(int t, int T, double s);

// Diffusion schedule plus marginal prior for one categorical channel.
struct NoiseModel {
  int num_steps = 0;          // T
  double offset = 0.008;      // s
  std::vector<double> marginal;  // m, sums to 1
  std::vector<double> alpha_bar; // cached, indices 0..T

  NoiseModel() = default;
  NoiseModel(int T, std::vector<double> m, double s = 0.008);

  int num_categories() const { return static_cast<int>(marginal.size()); }
};

// Qbar(t) = alpha_bar(t) I + (1 - alpha_bar(t)) 1 m^T.
TransitionMatrix composed_transition(int t, const NoiseModel& nm);

// Q(t) = alpha(t) I + (1 - alpha(t)) 1 m^T with alpha(t) = abar(t)/abar(t-1).
// Satisfies Qbar(t-1) Q(t) = Qbar(t). Throws std::domain_error when
// alpha_bar(t-1) = 0.
TransitionMatrix step_transition(int t, const NoiseModel& nm);

// Composed transition between two schedule times: alpha = abar(to)/abar(from).
// Generalizes step_transition (from = to - 1) and lets samplers stride
// through a trained schedule with fewer denoising steps. Throws
// std::domain_error unless 0 <= from < to <= T and alpha_bar(from) > 0.
TransitionMatrix segment_transition(int t_from, int t_to,
                                    const NoiseModel& nm);

// Sample z(t) given clean categories z0, one draw per element from the z0-th
// row of Qbar(t).
std::vector<int> corrupt(const std::vector<int>& z0, int t,
                         const NoiseModel& nm, Rng& rng);

// p(z(t-1) | z(t), zhat0) proportional to z(t) Q(t)^T (elementwise) zhat0 Qbar(t-1).
// zhat0 is a distribution over C. Throws std::underflow_error when the
// unnormalized mass falls below 1e-300.
std::vector<double> posterior(int z_t, const std::vector<double>& z0_hat,
                              int t, const NoiseModel& nm);

// Same computation with precomputed Q(t) and Qbar(t-1); hot path for the
// sampling loop.
std::vector<double> posterior(int z_t, const std::vector<double>& z0_hat,
                              const TransitionMatrix& q_t,
                              const TransitionMatrix& qbar_prev);

// Prior probability of a cross edge given context size and the training
// data's average in-degree: min(n_prev, d_in) / n_prev.
double edge_prior(int n_prev, double d_in);

// Independent-Bernoulli in-edge sample repaired to be nonempty: when the
// plain sample is empty, exactly one predecessor is added with probability
// proportional to probs (uniform if all are 0). Throws std::invalid_argument
// on an empty candidate set.
std::vector<int> enforce_min_indegree(const std::vector<double>& probs,
                                      Rng& rng);

// Layer-index denoising schedule: T(l) interpolates from T_min at l = 0 to
// T_max at l >= L_max.
struct DenoiseSchedule {
  int t_min = 0;
  int t_max = 0;
  int l_max = 1;
};

int denoise_steps_for_layer(int l, const DenoiseSchedule& ds);

}  // namespace layerdag
