#include "doctest.h"

#include <cmath>
#include <numbers>

#include "sdsac/diffusion.hpp"
#include "support.hpp"

using namespace sdsac;
using sdsac::testing::random_matrix;

namespace {

constexpr int kA = 2;
constexpr int kS = 3;

DiffusionPolicy make_policy(int T, double delta, Rng& rng, std::vector<int> hidden = {6, 6}) {
  return DiffusionPolicy::make(kA, kS, build_schedule(T, delta, delta, ScheduleKind::Constant), hidden, rng);
}

/// Sets every weight to zero and the output bias to `eps_hat`.
void constant_noise_prediction(DiffusionPolicy& p, double eps_hat) {
  for (auto& L : p.net().layers()) {
    L.weight.setZero();
    L.bias.setZero();
  }
  p.net().layers().back().bias.setConstant(eps_hat);
}

CriticEval quadratic_critic(const Matrix& target, const Matrix&, const Matrix& a) {
  CriticEval e;
  const Matrix diff = a - target;
  e.value = -diff.colwise().squaredNorm().transpose();
  e.action_grad = -2.0 * diff;
  return e;
}

} // namespace

TEST_CASE("noise schedule") {
  const NoiseSchedule s = build_schedule(3, 0.1, 0.1, ScheduleKind::Constant);
  CHECK(s.alpha_bar_at(1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.alpha_bar_at(2) == doctest::Approx(0.81).epsilon(1e-15));
  CHECK(s.alpha_bar_at(3) == doctest::Approx(0.729).epsilon(1e-15));

  const NoiseSchedule one = build_schedule(1, 0.3, 0.3, ScheduleKind::Constant);
  CHECK(one.alpha_bar_at(1) == one.alpha_at(1));

  const NoiseSchedule lin = build_schedule(5, 0.05, 0.4, ScheduleKind::Linear);
  CHECK(lin.delta_at(1) == 0.05);
  CHECK(lin.delta_at(5) == 0.4);
  for (int t = 2; t <= 5; ++t) CHECK(lin.delta_at(t) > lin.delta_at(t - 1));
  CHECK_THROWS(build_schedule(0, 0.1, 0.1, ScheduleKind::Constant));
  CHECK_THROWS(build_schedule(2, 0.0, 0.1, ScheduleKind::Linear));
}

TEST_CASE("posterior mean") {
  Rng rng(1);
  DiffusionPolicy p = make_policy(3, 0.2, rng);
  const Matrix states = random_matrix(kS, 4, rng);
  const Matrix omega = random_matrix(kA, 4, rng);

  constant_noise_prediction(p, 0.0);
  for (int t = 1; t <= 3; ++t) {
    const Matrix mu = posterior_mean(p, omega, states, t);
    CHECK((mu - omega / std::sqrt(p.schedule().alpha_at(t))).cwiseAbs().maxCoeff() <= 1e-15);
  }

  DiffusionPolicy hand = make_policy(1, 0.19, rng);
  constant_noise_prediction(hand, 1.0);
  const Matrix mu = posterior_mean(hand, Matrix::Ones(kA, 1), states.col(0), 1);
  // (1 - 0.19 / sqrt(0.19)) / 0.9
  CHECK(mu(0, 0) == doctest::Approx(0.6267890062732584).epsilon(1e-14));

  SUBCASE("deterministic part of the reverse step") {
    DiffusionPolicy q = make_policy(2, 0.2, rng);
    const Matrix s = random_matrix(kS, 3, rng);
    ChainNoise noise;
    noise.initial = random_matrix(kA, 3, rng, 0.2);
    noise.steps = {Matrix::Zero(kA, 3)};
    const ReverseSample out = run_chain(q, s, noise);
    const Matrix mu2 = posterior_mean(q, noise.initial, s, 2);
    CHECK((out.trace[1] - mu2).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("reverse sample") {
  Rng rng(2);
  SUBCASE("single step with zero prediction") {
    DiffusionPolicy p = make_policy(1, 0.3, rng);
    constant_noise_prediction(p, 0.0);
    const Matrix s = random_matrix(kS, 5, rng);
    ChainNoise noise;
    noise.initial = random_matrix(kA, 5, rng, 1.5);
    ChainTape tape;
    const ReverseSample out = run_chain(p, s, noise, &tape);
    const Matrix expected = (noise.initial / std::sqrt(0.7)).cwiseMax(-1.0).cwiseMin(1.0);
    CHECK((out.action - expected).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(out.trace.size() == 2);
  }
  SUBCASE("determinism") {
    DiffusionPolicy p = make_policy(4, 0.2, rng);
    const Matrix s = random_matrix(kS, 3, rng);
    Rng a(9), b(9);
    const ReverseSample x = reverse_sample(p, s, a);
    const ReverseSample y = reverse_sample(p, s, b);
    CHECK(x.action == y.action);
    REQUIRE(x.trace.size() == 5);
    for (std::size_t i = 0; i < x.trace.size(); ++i) CHECK(x.trace[i] == y.trace[i]);
    CHECK(x.action.cwiseAbs().maxCoeff() <= 1.0);
  }
  SUBCASE("vanishing noise keeps the initial draw") {
    DiffusionPolicy p = make_policy(3, 1e-8, rng);
    constant_noise_prediction(p, 0.0);
    const int n = 10000;
    const Matrix s = Matrix::Zero(kS, n);
    Rng r(5);
    const ChainNoise noise = draw_chain_noise(p, n, r);
    ChainTape tape;
    run_chain(p, s, noise, &tape);
    const double mean = tape.raw_final.mean();
    const double var = (tape.raw_final.array() - mean).square().sum() / (tape.raw_final.size() - 1);
    CHECK(std::abs(std::sqrt(var) - 1.0) <= 0.05);
    CHECK((tape.raw_final - noise.initial).cwiseAbs().maxCoeff() <= 5e-3);
  }
}

TEST_CASE("policy loss gradients") {
  Rng rng(3);
  SUBCASE("constant critic gives zero gradient") {
    DiffusionPolicy p = make_policy(3, 0.2, rng);
    const Matrix s = random_matrix(kS, 4, rng);
    const CriticFn flat = [](const Matrix&, const Matrix& a) {
      return CriticEval{Vector::Constant(a.cols(), 3.0), Matrix::Zero(a.rows(), a.cols())};
    };
    const PolicyLoss l = policy_loss(p, flat, s, rng);
    CHECK(l.loss == doctest::Approx(-3.0));
    CHECK(l.grads.max_abs() == 0.0);
  }
  SUBCASE("two-step chain against central differences") {
    for (int rep = 0; rep < 20; ++rep) {
      DiffusionPolicy p = make_policy(2, 0.2, rng, {5, 5});
      const Matrix s = random_matrix(kS, 3, rng);
      const Matrix target = random_matrix(kA, 3, rng, 0.3);
      Rng nr(100 + rep);
      ChainNoise noise = draw_chain_noise(p, 3, nr);
      noise.initial *= 0.3;
      const CriticFn critic = [&](const Matrix& st, const Matrix& a) { return quadratic_critic(target, st, a); };
      const PolicyLoss l = policy_loss(p, critic, s, noise);
      auto loss = [&] { return policy_loss(p, critic, s, noise).loss; };
      CHECK(sdsac::testing::max_fd_error(p.net(), l.grads, loss, 1e-5, 1e-6) <= 1e-3);
    }
  }
  SUBCASE("clipped components carry no gradient") {
    DiffusionPolicy p = make_policy(1, 0.2, rng);
    constant_noise_prediction(p, 0.0);
    const Matrix s = random_matrix(kS, 1, rng);
    ChainNoise noise;
    noise.initial = Matrix::Constant(kA, 1, 5.0);
    const CriticFn critic = [&](const Matrix& st, const Matrix& a) {
      return quadratic_critic(Matrix::Zero(kA, 1), st, a);
    };
    CHECK(policy_loss(p, critic, s, noise).grads.max_abs() == 0.0);
  }
  SUBCASE("quadratic critic pulls actions toward zero") {
    DiffusionPolicy p = make_policy(3, 0.2, rng, {16, 16});
    const Matrix s = random_matrix(kS, 1, rng).replicate(1, 8);
    Rng nr(7);
    ChainNoise noise = draw_chain_noise(p, 8, nr);
    noise.initial *= 0.3;
    const CriticFn critic = [&](const Matrix& st, const Matrix& a) {
      return quadratic_critic(Matrix::Zero(kA, 8), st, a);
    };
    AdamState adam = AdamState::for_net(p.net());
    const PolicyLoss first = policy_loss(p, critic, s, noise);
    double last = first.loss;
    for (int i = 0; i < 100; ++i) {
      const PolicyLoss l = policy_loss(p, critic, s, noise);
      adam_step(p.net(), l.grads, adam, 1e-3);
      last = policy_loss(p, critic, s, noise).loss;
    }
    CHECK(last < first.loss);
    CHECK(policy_loss(p, critic, s, noise).actions.norm() < first.actions.norm());
  }
}

TEST_CASE("entropy surrogate") {
  Rng rng(4);
  const StateVec state = random_matrix(kS, 1, rng).col(0);
  auto gaussian = [](double delta) { return 0.5 * kA * std::log(2.0 * std::numbers::pi * std::numbers::e * delta); };
  DiffusionPolicy narrow = make_policy(1, 0.05, rng);
  DiffusionPolicy wide = make_policy(1, 0.4, rng);
  Rng a(1), b(1);
  const EntropyEstimate hn = entropy_bonus(narrow, state, 4000, a);
  const EntropyEstimate hw = entropy_bonus(wide, state, 4000, b);
  CHECK(hw.value > hn.value);
  // The NLL is a constant plus chi-square(A) / 2, whose standard deviation is 1 for A = 2.
  const double four_sigma = 4.0 / std::sqrt(4000.0);
  CHECK(std::abs(hn.value - gaussian(0.05)) <= four_sigma);
  CHECK(std::abs(hw.value - gaussian(0.4)) <= four_sigma);
  CHECK_FALSE(hn.floored);

  DiffusionPolicy flat = make_policy(1, 1e-9, rng);
  const EntropyEstimate hf = entropy_bonus(flat, state, 10, a);
  CHECK(hf.floored);
  CHECK(std::isfinite(hf.value));
}
