#include "doctest.h"

#include <cmath>

#include "sdsac/baselines.hpp"
#include "support.hpp"

using namespace sdsac;
using sdsac::testing::random_matrix;

namespace {

CriticEval quadratic_critic(const Matrix& target, const Matrix& a) {
  CriticEval e;
  const Matrix diff = a - target;
  e.value = -diff.colwise().squaredNorm().transpose();
  e.action_grad = -2.0 * diff;
  return e;
}

} // namespace

TEST_CASE("random policy") {
  Rng a(3), b(3);
  CHECK(random_policy(6, a) == random_policy(6, b));

  Rng rng(4);
  const int n = 20000;
  double sum = 0.0;
  double lo = 1.0, hi = -1.0;
  for (int i = 0; i < n; ++i) {
    const ActionVec v = random_policy(2, rng);
    sum += v[0];
    lo = std::min(lo, v.minCoeff());
    hi = std::max(hi, v.maxCoeff());
  }
  // U(-1, 1) has variance 1/3.
  CHECK(std::abs(sum / n) <= 3.0 * std::sqrt(1.0 / 3.0 / n));
  CHECK(lo >= -1.0);
  CHECK(hi <= 1.0);

  const ActionBounds bounds;
  const Contract c = decode_action(random_policy(8, rng), bounds);
  for (const auto& item : c) {
    CHECK(item.data_volume >= 0.0);
    CHECK(item.data_volume <= bounds.s_max);
    CHECK(item.reward <= bounds.r_max);
  }
}

TEST_CASE("complete-information policy") {
  const EnvRanges ranges;
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const EnvSample env = sample_env(ranges, rng);
    const Contract c = complete_info_policy(env);
    const FeasibilityReport rep = check_feasibility(c, env.profile, env.params);
    for (double s : rep.ir_slack) CHECK(std::abs(s) <= 1e-6);
    CHECK(rep.ir_violation == 0.0);
    if (i < 20) {
      std::vector<ItemGrid> grids;
      for (const auto& item : c) grids.push_back(local_grid(item, 41, 0.05));
      const auto best = brute_force_search(env.profile, env.params, grids, ConstraintSet::IrOnly);
      REQUIRE(best.has_value());
      const double u = server_utility(c, env.profile, env.params);
      CHECK(best->utility <= u + 1e-9 * std::abs(u));
    }
  }
  const EvalMetrics m = evaluate(complete_info_scheme(), ranges, ActionBounds{}, RewardSpec{}, 50, 9);
  CHECK(m.reward == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("gaussian policy") {
  Rng rng(6);
  const int S = 4, A = 2;
  const std::vector<int> hidden{8, 8};

  SUBCASE("sampling") {
    const GaussianPolicy p = GaussianPolicy::make(S, A, hidden, rng);
    const Matrix states = random_matrix(S, 5, rng);
    const auto s = p.sample(states, Matrix::Zero(A, 5));
    CHECK((s.actions - p.mean_action(states)).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(s.actions.cwiseAbs().maxCoeff() < 1.0);
    CHECK(s.log_prob.allFinite());
    Rng x(1), y(1);
    CHECK(p.sample(states, x).actions == p.sample(states, y).actions);
  }
  SUBCASE("loss against central differences") {
    for (int rep = 0; rep < 10; ++rep) {
      const GaussianPolicy p0 = GaussianPolicy::make(S, A, hidden, rng);
      GaussianPolicy p = p0;
      const Matrix states = random_matrix(S, 4, rng);
      const Matrix xi = random_matrix(A, 4, rng);
      const Matrix target = random_matrix(A, 4, rng, 0.5);
      const CriticFn critic = [&](const Matrix&, const Matrix& a) { return quadratic_critic(target, a); };
      const double varsigma = rep % 2 ? 0.1 : 0.0;
      const auto l = p.loss(critic, states, xi, varsigma);
      auto loss = [&] { return p.loss(critic, states, xi, varsigma).loss; };
      CHECK(sdsac::testing::max_fd_error(p.net(), l.grads, loss) <= 1e-4);
    }
  }
  SUBCASE("quadratic critic pulls the mean toward the target") {
    GaussianPolicy p = GaussianPolicy::make(S, A, hidden, rng);
    const Matrix states = random_matrix(S, 1, rng).replicate(1, 16);
    const Matrix target = Matrix::Constant(A, 16, 0.4);
    const CriticFn critic = [&](const Matrix&, const Matrix& a) { return quadratic_critic(target, a); };
    AdamState st = AdamState::for_net(p.net());
    const double before = (p.mean_action(states) - target).norm();
    for (int i = 0; i < 300; ++i) {
      const auto l = p.loss(critic, states, random_matrix(A, 16, rng), 0.0);
      adam_step(p.net(), l.grads, st, 1e-3);
    }
    CHECK((p.mean_action(states) - target).norm() < 0.5 * before);
  }
}

TEST_CASE("gaussian trainer") {
  TrainerConfig c;
  c.steps = 150;
  c.batch_size = 16;
  c.warmup = 50;
  c.eval_interval = 50;
  c.eval_envs = 5;
  c.actor_hidden = {16, 16};
  c.critic_hidden = {16, 16};
  const EnvRanges r;
  const RewardSpec spec;
  const ActionBounds b;
  const GaussianTrainResult x = train_gaussian_sac(c, r, spec, b);
  const GaussianTrainResult y = train_gaussian_sac(c, r, spec, b);
  CHECK(x.log.scheme == "gaussian_sac");
  REQUIRE(x.log.rows.size() == 3);
  for (std::size_t i = 0; i < x.log.rows.size(); ++i) {
    CHECK(x.log.rows[i].eval_reward == y.log.rows[i].eval_reward);
    CHECK(x.log.rows[i].flops == y.log.rows[i].flops);
    CHECK(x.log.rows[i].sparsity == 0.0);
  }
  CHECK(x.log.prune_events.empty());
  CHECK(x.ledger.phase_total(Phase::Pruning) == 0);
  CHECK(x.ledger.total() > 0);
}
