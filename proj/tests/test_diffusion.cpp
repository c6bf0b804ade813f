#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "layerdag/diffusion.hpp"
#include "layerdag/tensor.hpp"

using namespace layerdag;

namespace {

Tensor to_tensor(const TransitionMatrix& q) {
  Tensor t({q.num_categories, q.num_categories});
  t.data = q.data;
  return t;
}

}  // namespace

TEST_CASE("cosine schedule boundary values") {
  CHECK(cosine_alpha_bar(10, 10, 0.008) == 0.0);
  CHECK(cosine_alpha_bar(64, 64, 0.008) == 0.0);
  // Frozen 64-bit evaluation of cos^2((pi/2) * (s / (1 + s))) at s = 0.008.
  CHECK(cosine_alpha_bar(0, 10, 0.008) ==
        doctest::Approx(0.9998445910004082).epsilon(1e-12));
  // Midpoint with vanishing offset approaches cos^2(pi/4) = 1/2.
  CHECK(cosine_alpha_bar(5, 10, 1e-9) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK_THROWS_AS(cosine_alpha_bar(-1, 10, 0.008), std::domain_error);
  CHECK_THROWS_AS(cosine_alpha_bar(11, 10, 0.008), std::domain_error);
}

TEST_CASE("transition matrices from a pinned schedule") {
  NoiseModel nm(2, {0.5, 0.5});
  nm.alpha_bar = {1.0, 0.8, 0.5};

  SUBCASE("composed closed form") {
    TransitionMatrix q = composed_transition(1, nm);
    CHECK(q.at(0, 0) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(q.at(0, 1) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(q.at(1, 0) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(q.at(1, 1) == doctest::Approx(0.9).epsilon(1e-12));
  }
  SUBCASE("composed extremes") {
    TransitionMatrix id = composed_transition(0, nm);
    CHECK(id.at(0, 0) == doctest::Approx(1.0));
    CHECK(id.at(0, 1) == doctest::Approx(0.0));
    NoiseModel nm2(2, {0.3, 0.7});
    TransitionMatrix absorb = composed_transition(2, nm2);
    CHECK(absorb.at(0, 0) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(absorb.at(1, 0) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(absorb.at(0, 1) == doctest::Approx(0.7).epsilon(1e-12));
  }
  SUBCASE("step closed form") {
    TransitionMatrix q = step_transition(2, nm);  // alpha = 0.5 / 0.8 = 0.625
    CHECK(q.at(0, 0) == doctest::Approx(0.8125).epsilon(1e-12));
    CHECK(q.at(0, 1) == doctest::Approx(0.1875).epsilon(1e-12));
    CHECK(q.at(1, 1) == doctest::Approx(0.8125).epsilon(1e-12));
  }
  SUBCASE("singular schedule rejected") {
    NoiseModel z(1, {0.5, 0.5});
    CHECK(z.alpha_bar[1] == 0.0);
    // alpha_bar(T) = 0, so a hypothetical step T+1 would divide by zero.
    z.alpha_bar = {0.0, 0.0};
    CHECK_THROWS_AS(step_transition(1, z), std::domain_error);
  }
  SUBCASE("segment matches step and composed at the endpoints") {
    NoiseModel real(6, {0.25, 0.75});
    for (int t = 1; t <= 6; ++t) {
      TransitionMatrix seg = segment_transition(t - 1, t, real);
      TransitionMatrix stp = step_transition(t, real);
      for (size_t i = 0; i < seg.data.size(); ++i)
        CHECK(seg.data[i] == doctest::Approx(stp.data[i]).epsilon(1e-14));
    }
    // segment(0, t) differs from Qbar(t) by the factor abar(0) < 1.
    TransitionMatrix seg = segment_transition(0, 4, real);
    double expect = real.alpha_bar[4] / real.alpha_bar[0];
    CHECK(seg.at(0, 0) == doctest::Approx(expect + (1 - expect) * 0.25));
  }
  SUBCASE("segment splits compose") {
    NoiseModel real(8, {0.4, 0.6});
    Tensor lhs = matmul(to_tensor(segment_transition(1, 3, real)),
                        to_tensor(segment_transition(3, 7, real)));
    Tensor rhs = to_tensor(segment_transition(1, 7, real));
    for (int64_t i = 0; i < lhs.size(); ++i)
      CHECK(std::abs(lhs.data[i] - rhs.data[i]) <= 1e-14);
  }
  SUBCASE("segment bounds rejected") {
    NoiseModel real(4, {0.5, 0.5});
    CHECK_THROWS_AS(segment_transition(-1, 2, real), std::domain_error);
    CHECK_THROWS_AS(segment_transition(2, 2, real), std::domain_error);
    CHECK_THROWS_AS(segment_transition(3, 1, real), std::domain_error);
    CHECK_THROWS_AS(segment_transition(0, 5, real), std::domain_error);
  }
  SUBCASE("posterior hand example") {
    std::vector<double> post = posterior(0, {1.0, 0.0}, 2, nm);
    CHECK(post[0] == doctest::Approx(0.975).epsilon(1e-12));
    CHECK(post[1] == doctest::Approx(0.025).epsilon(1e-12));
  }
}

TEST_CASE("composition identity over random schedules") {
  Rng rng(31337);
  for (int rep = 0; rep < 20; ++rep) {
    int c = 2 + static_cast<int>(rng.below(7));
    int T = 1 + static_cast<int>(rng.below(64));
    std::vector<double> m(c);
    double total = 0;
    for (double& x : m) total += (x = 0.05 + rng.uniform());
    for (double& x : m) x /= total;
    NoiseModel nm(T, m);
    for (int t = 1; t <= T; ++t) {
      if (nm.alpha_bar[t - 1] == 0.0) continue;
      Tensor lhs = matmul(to_tensor(composed_transition(t - 1, nm)),
                          to_tensor(step_transition(t, nm)));
      Tensor rhs = to_tensor(composed_transition(t, nm));
      for (int64_t i = 0; i < lhs.size(); ++i)
        CHECK(std::abs(lhs.data[i] - rhs.data[i]) <= 1e-12);
    }
    for (int t = 0; t <= T; ++t) {
      TransitionMatrix q = composed_transition(t, nm);
      for (int r = 0; r < c; ++r) {
        double row = 0;
        for (int col = 0; col < c; ++col) {
          CHECK(q.at(r, col) >= 0.0);
          row += q.at(r, col);
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("posterior matches exhaustive Bayes") {
  // Independent oracle: write the rows of Qbar(t-1) and Q(t) directly from
  // their definitions, enumerate the joint q(z(t-1), z(t) | z0), and apply
  // Bayes. Note Qbar(0) is not the identity under the cosine schedule.
  Rng rng(777);
  for (int rep = 0; rep < 30; ++rep) {
    int c = 2 + static_cast<int>(rng.below(3));
    int T = 2 + static_cast<int>(rng.below(4));
    std::vector<double> m(c);
    double total = 0;
    for (double& x : m) total += (x = 0.1 + rng.uniform());
    for (double& x : m) x /= total;
    NoiseModel nm(T, m);

    std::vector<double> z0_hat(c);
    total = 0;
    for (double& x : z0_hat) total += (x = rng.uniform());
    for (double& x : z0_hat) x /= total;

    for (int t = 1; t <= T; ++t) {
      if (nm.alpha_bar[t - 1] == 0.0) continue;
      double ab_prev = nm.alpha_bar[t - 1];
      double a_step = nm.alpha_bar[t] / nm.alpha_bar[t - 1];
      Tensor qbar_prev({c, c}), qt({c, c});
      for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) {
          qbar_prev.at(i, j) = (1 - ab_prev) * m[j] + (i == j ? ab_prev : 0);
          qt.at(i, j) = (1 - a_step) * m[j] + (i == j ? a_step : 0);
        }

      for (int zt = 0; zt < c; ++zt) {
        std::vector<double> expected(c, 0.0);
        double norm = 0;
        for (int j = 0; j < c; ++j) {
          for (int z0 = 0; z0 < c; ++z0)
            expected[j] += z0_hat[z0] * qbar_prev.at(z0, j) * qt.at(j, zt);
          norm += expected[j];
        }
        for (double& e : expected) e /= norm;
        std::vector<double> got = posterior(zt, z0_hat, t, nm);
        for (int j = 0; j < c; ++j)
          CHECK(std::abs(got[j] - expected[j]) <= 1e-10);
      }
    }
  }
}

TEST_CASE("forward corruption absorbs into the marginal") {
  std::vector<double> m = {0.2, 0.5, 0.3};
  NoiseModel nm(8, m);
  Rng rng(2024);
  std::vector<int> z0(100000, 0);
  std::vector<int> zt = corrupt(z0, 8, nm, rng);
  std::vector<double> freq(3, 0.0);
  for (int z : zt) freq[z] += 1.0 / zt.size();
  double tv = 0;
  for (int i = 0; i < 3; ++i) tv += std::abs(freq[i] - m[i]);
  CHECK(tv / 2 <= 0.02);

  // At alpha_bar = 1 nothing moves.
  NoiseModel id(4, m);
  id.alpha_bar.assign(5, 1.0);
  std::vector<int> z0b = {0, 1, 2, 2, 1};
  CHECK(corrupt(z0b, 2, id, rng) == z0b);
}

TEST_CASE("stay probability matches the composed matrix") {
  NoiseModel nm(2, {0.5, 0.5});
  nm.alpha_bar = {1.0, 0.8, 0.5};
  Rng rng(5);
  std::vector<int> z0(100000, 0);
  std::vector<int> z1 = corrupt(z0, 1, nm, rng);
  double stay = 0;
  for (int z : z1) stay += (z == 0) ? 1.0 / z1.size() : 0.0;
  CHECK(stay == doctest::Approx(0.9).epsilon(0.01));
}

TEST_CASE("edge prior") {
  CHECK(edge_prior(5, 2.0) == doctest::Approx(0.4));
  CHECK(edge_prior(1, 2.0) == doctest::Approx(1.0));
  CHECK(edge_prior(4, 4.0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(edge_prior(0, 2.0), std::domain_error);
  CHECK_THROWS_AS(edge_prior(3, 0.0), std::domain_error);
}

TEST_CASE("min in-degree enforcement") {
  Rng rng(17);
  SUBCASE("nonempty plain samples pass through") {
    std::vector<double> p = {1.0, 1.0, 0.0};
    std::vector<int> s = enforce_min_indegree(p, rng);
    CHECK(s == std::vector<int>{0, 1});
  }
  SUBCASE("all-zero probabilities repair uniformly") {
    std::vector<double> p(3, 0.0);
    std::vector<double> freq(3, 0.0);
    int reps = 100000;
    for (int i = 0; i < reps; ++i) {
      std::vector<int> s = enforce_min_indegree(p, rng);
      REQUIRE(s.size() == 1);
      freq[s[0]] += 1.0 / reps;
    }
    for (double f : freq) CHECK(f == doctest::Approx(1.0 / 3).epsilon(0.03));
  }
  SUBCASE("repair follows the probabilities") {
    // Tiny probabilities so the plain draw is almost always empty.
    std::vector<double> p = {0.9e-9, 0.1e-9};
    std::vector<double> freq(2, 0.0);
    int reps = 100000;
    for (int i = 0; i < reps; ++i) {
      std::vector<int> s = enforce_min_indegree(p, rng);
      REQUIRE(s.size() == 1);
      freq[s[0]] += 1.0 / reps;
    }
    CHECK(freq[0] == doctest::Approx(0.9).epsilon(0.01));
  }
  SUBCASE("empty candidates rejected") {
    std::vector<double> none;
    CHECK_THROWS_AS(enforce_min_indegree(none, rng), std::invalid_argument);
  }
}

TEST_CASE("layer-index denoising schedule") {
  DenoiseSchedule ds{20, 100, 10};
  CHECK(denoise_steps_for_layer(0, ds) == 20);
  CHECK(denoise_steps_for_layer(5, ds) == 60);
  CHECK(denoise_steps_for_layer(10, ds) == 100);
  CHECK(denoise_steps_for_layer(25, ds) == 100);
  for (int l = 1; l < 15; ++l)
    CHECK(denoise_steps_for_layer(l, ds) >= denoise_steps_for_layer(l - 1, ds));
}

TEST_CASE("noise model invariants") {
  NoiseModel nm(16, {0.25, 0.25, 0.5});
  CHECK(nm.alpha_bar.size() == 17);
  CHECK(nm.alpha_bar[16] == 0.0);
  for (int t = 1; t <= 16; ++t) CHECK(nm.alpha_bar[t] <= nm.alpha_bar[t - 1]);
  CHECK(nm.alpha_bar[0] > 0.0);
  CHECK_THROWS(NoiseModel(4, {0.5, 0.4}));
}
