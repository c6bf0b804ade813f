#include "layerdag/diffusion.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace layerdag {

double cosine_alpha_bar(int t, int T, double s) {
  if (T < 1 || t < 0 || t > T)
    throw std::domain_error("cosine_alpha_bar: t out of [0, T]");
  if (s <= 0) throw std::domain_error("cosine_alpha_bar: s must be positive");
  if (t == T) return 0.0;
  double frac = (static_cast<double>(t) / T + s) / (1.0 + s);
  double c = std::cos(std::numbers::pi / 2.0 * frac);
  return c * c;
}

NoiseModel::NoiseModel(int T, std::vector<double> m, double s)
    : num_steps(T), offset(s), marginal(std::move(m)) {
  double total = 0;
  for (double p : marginal) total += p;
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("NoiseModel: marginal must sum to 1");
  alpha_bar.resize(T + 1);
  for (int t = 0; t <= T; ++t) alpha_bar[t] = cosine_alpha_bar(t, T, s);
}

namespace {

TransitionMatrix blend(double alpha, const std::vector<double>& m) {
  int C = static_cast<int>(m.size());
  TransitionMatrix q;
  q.num_categories = C;
  q.data.resize(C * C);
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j)
      q.at(i, j) = (1.0 - alpha) * m[j] + (i == j ? alpha : 0.0);
  return q;
}

}  // namespace

TransitionMatrix composed_transition(int t, const NoiseModel& nm) {
  if (t < 0 || t > nm.num_steps)
    throw std::domain_error("composed_transition: t out of [0, T]");
  return blend(nm.alpha_bar[t], nm.marginal);
}

TransitionMatrix step_transition(int t, const NoiseModel& nm) {
  if (t < 1 || t > nm.num_steps)
    throw std::domain_error("step_transition: t out of [1, T]");
  if (nm.alpha_bar[t - 1] <= 0)
    throw std::domain_error("step_transition: singular schedule, abar(t-1)=0");
  return blend(nm.alpha_bar[t] / nm.alpha_bar[t - 1], nm.marginal);
}

TransitionMatrix segment_transition(int t_from, int t_to,
                                    const NoiseModel& nm) {
  if (t_from < 0 || t_to <= t_from || t_to > nm.num_steps)
    throw std::domain_error("segment_transition: need 0 <= from < to <= T");
  if (nm.alpha_bar[t_from] <= 0)
    throw std::domain_error("segment_transition: abar(from)=0 is singular");
  return blend(nm.alpha_bar[t_to] / nm.alpha_bar[t_from], nm.marginal);
}

std::vector<int> corrupt(const std::vector<int>& z0, int t,
                         const NoiseModel& nm, Rng& rng) {
  if (t < 0 || t > nm.num_steps)
    throw std::domain_error("corrupt: t out of [0, T]");
  double abar = nm.alpha_bar[t];
  std::vector<int> out(z0.size());
  for (size_t i = 0; i < z0.size(); ++i) {
    // Row of Qbar(t): stay with prob abar, otherwise draw from the marginal.
    if (rng.uniform() < abar)
      out[i] = z0[i];
    else
      out[i] = rng.categorical(nm.marginal);
  }
  return out;
}

std::vector<double> posterior(int z_t, const std::vector<double>& z0_hat,
                              int t, const NoiseModel& nm) {
  if (t < 1 || t > nm.num_steps)
    throw std::domain_error("posterior: t out of [1, T]");
  int C = nm.num_categories();
  if (static_cast<int>(z0_hat.size()) != C || z_t < 0 || z_t >= C)
    throw std::invalid_argument("posterior: shape mismatch");
  return posterior(z_t, z0_hat, step_transition(t, nm),
                   composed_transition(t - 1, nm));
}

std::vector<double> posterior(int z_t, const std::vector<double>& z0_hat,
                              const TransitionMatrix& q,
                              const TransitionMatrix& qbar_prev) {
  int C = q.num_categories;
  std::vector<double> out(C);
  double total = 0;
  for (int c = 0; c < C; ++c) {
    double pred = 0;  // (zhat0 Qbar(t-1))[c]
    for (int c0 = 0; c0 < C; ++c0) pred += z0_hat[c0] * qbar_prev.at(c0, c);
    out[c] = q.at(c, z_t) * pred;
    total += out[c];
  }
  if (total < 1e-300)
    throw std::underflow_error("posterior: unnormalized mass underflow");
  for (double& p : out) p /= total;
  return out;
}

double edge_prior(int n_prev, double d_in) {
  if (n_prev < 1 || d_in <= 0)
    throw std::domain_error("edge_prior: require n_prev >= 1 and d_in > 0");
  return std::min(static_cast<double>(n_prev), d_in) / n_prev;
}

std::vector<int> enforce_min_indegree(const std::vector<double>& probs,
                                      Rng& rng) {
  if (probs.empty())
    throw std::invalid_argument("enforce_min_indegree: no candidates");
  std::vector<int> in_edges;
  for (size_t i = 0; i < probs.size(); ++i)
    if (rng.uniform() < probs[i]) in_edges.push_back(static_cast<int>(i));
  if (!in_edges.empty()) return in_edges;

  double total = 0;
  for (double p : probs) total += p;
  if (total > 0)
    in_edges.push_back(rng.categorical(probs));
  else
    in_edges.push_back(static_cast<int>(rng.below(probs.size())));
  return in_edges;
}

int denoise_steps_for_layer(int l, const DenoiseSchedule& ds) {
  if (l < 0) throw std::domain_error("denoise_steps_for_layer: l < 0");
  double frac = std::min(static_cast<double>(l) / ds.l_max, 1.0);
  return ds.t_min +
         static_cast<int>(std::floor((ds.t_max - ds.t_min) * frac));
}

}  // namespace layerdag
