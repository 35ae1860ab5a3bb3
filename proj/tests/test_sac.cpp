#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sdsac/baselines.hpp"
#include "support.hpp"

using namespace sdsac;
using sdsac::testing::random_matrix;

namespace {

Transition transition(double tag, int S = 3, int A = 2) {
  Transition t;
  t.state = Vector::Constant(S, tag);
  t.action = Vector::Constant(A, tag);
  t.reward = tag;
  t.next_state = Vector::Constant(S, tag + 0.5);
  return t;
}

/// Critic whose every output equals `value` regardless of input.
Mlp constant_critic(int in, double value, Rng& rng) {
  const std::vector<int> sizes{in, 4, 1};
  Mlp q = Mlp::make(sizes, Activation::Relu, Activation::Identity, rng);
  for (auto& L : q.layers()) {
    L.weight.setZero();
    L.bias.setZero();
  }
  q.layers().back().bias[0] = value;
  return q;
}

/// Q(s, a) = -sum |a_i| expressed as a ReLU network over [s ; a].
Mlp l1_critic(int S, int A) {
  Matrix w1 = Matrix::Zero(2 * A, S + A);
  for (int i = 0; i < A; ++i) {
    w1(i, S + i) = 1.0;
    w1(A + i, S + i) = -1.0;
  }
  DenseLayer h{w1, Vector::Zero(2 * A), Vector::Ones(2 * A), Activation::Relu};
  DenseLayer o{Matrix::Constant(1, 2 * A, -1.0), Vector::Zero(1), Vector::Ones(1), Activation::Identity};
  return Mlp({h, o});
}

TrainerConfig small_config() {
  TrainerConfig c;
  c.steps = 200;
  c.batch_size = 16;
  c.warmup = 50;
  c.eval_interval = 50;
  c.eval_envs = 5;
  c.buffer_capacity = 1000;
  c.actor_hidden = {16, 16};
  c.critic_hidden = {16, 16};
  c.diffusion.steps = 3;
  c.prune.start_step = 50;
  c.prune.frequency = 20;
  c.prune.total_prunes = 5;
  c.prune.target_sparsity = 0.25;
  c.lr_actor = 1e-3;
  c.lr_critic = 1e-3;
  return c;
}

std::string csv_bytes(const TrainLog& log) {
  const auto p = std::filesystem::temp_directory_path() / "sdsac_test_sac_log.csv";
  write_csv(log, p);
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  std::filesystem::remove(p);
  return ss.str();
}

} // namespace

TEST_CASE("replay buffer") {
  ReplayBuffer buf(2);
  buf.push(transition(1));
  buf.push(transition(2));
  buf.push(transition(3));
  CHECK(buf.size() == 2);
  CHECK(buf.at(0).reward == 2.0);
  CHECK(buf.at(1).reward == 3.0);

  ReplayBuffer big(10);
  for (int i = 0; i < 7; ++i) big.push(transition(i));
  Rng rng(1);
  auto idx = big.sample_indices(7, rng);
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < 7; ++i) CHECK(idx[i] == i);
  CHECK_THROWS_AS(big.sample_indices(8, rng), std::length_error);
  CHECK(big.sample_indices(8, rng, true).size() == 8);
  CHECK_THROWS_AS(ReplayBuffer(3).sample_indices(1, rng, true), std::length_error);

  Rng a(5), b(5);
  CHECK(big.sample_indices(4, a) == big.sample_indices(4, b));

  const Batch batch = big.gather({2, 4});
  CHECK(batch.states.cols() == 2);
  CHECK(batch.rewards[1] == 4.0);
  CHECK(batch.next_states(0, 0) == 2.5);
  CHECK(batch.done[0] == 1.0);
}

TEST_CASE("critic targets") {
  Rng rng(2);
  const int S = 3, A = 2;
  CriticEnsemble ens;
  ens.q1 = ens.q2 = constant_critic(S + A, 0.0, rng);
  ens.q1_target = constant_critic(S + A, 5.0, rng);
  ens.q2_target = constant_critic(S + A, 7.0, rng);
  ReplayBuffer buf(4);
  for (int i = 0; i < 4; ++i) {
    Transition t = transition(1.0);
    t.done = i % 2 == 0;
    buf.push(t);
  }
  const Batch batch = buf.gather({0, 1, 2, 3});
  int calls = 0;
  const TargetActionFn next = [&](const Matrix& s, Rng&) {
    ++calls;
    return NextAction{Matrix::Zero(A, s.cols()), Vector()};
  };
  const Vector y = critic_targets(ens, next, batch, 0.9, rng);
  CHECK(y[0] == 1.0);
  CHECK(y[1] == doctest::Approx(5.5).epsilon(1e-15));
  CHECK(y[2] == 1.0);
  CHECK(y[3] == doctest::Approx(5.5).epsilon(1e-15));

  const int before = calls;
  const Vector myopic = critic_targets(ens, next, batch, 0.0, rng);
  CHECK(myopic == batch.rewards);
  CHECK(calls == before);

  const TargetActionFn with_log = [&](const Matrix& s, Rng&) {
    return NextAction{Matrix::Zero(A, s.cols()), Vector::Constant(s.cols(), 2.0)};
  };
  CHECK(critic_targets(ens, with_log, batch, 0.9, rng, 0.5)[1] == doctest::Approx(1.0 + 0.9 * (5.0 - 1.0)));
}

TEST_CASE("critic gradients and updates") {
  Rng rng(3);
  const int S = 3, A = 2;
  const std::vector<int> hidden{6, 5};
  ReplayBuffer buf(32);
  for (int i = 0; i < 32; ++i) {
    Transition t;
    t.state = random_matrix(S, 1, rng).col(0);
    t.action = random_matrix(A, 1, rng).col(0);
    t.reward = random_matrix(1, 1, rng)(0, 0);
    t.next_state = t.state;
    buf.push(t);
  }
  const Batch batch = buf.sample(12, rng);
  const Vector targets = random_matrix(12, 1, rng).col(0);

  SUBCASE("finite differences") {
    for (int rep = 0; rep < 10; ++rep) {
      CriticEnsemble ens = CriticEnsemble::make(S, A, hidden, rng);
      Gradients g;
      critic_mse(ens.q1, batch, targets, &g);
      auto loss = [&] { return critic_mse(ens.q1, batch, targets); };
      CHECK(sdsac::testing::max_fd_error(ens.q1, g, loss) <= 1e-4);
    }
  }
  SUBCASE("fixed point") {
    CriticEnsemble ens = CriticEnsemble::make(S, A, hidden, rng);
    const Vector own = ens.q1.forward(critic_input(batch.states, batch.actions)).row(0).transpose();
    Gradients g;
    CHECK(critic_mse(ens.q1, batch, own, &g) == 0.0);
    CHECK(g.max_abs() == 0.0);
    const Mlp before = ens.q1;
    AdamState st = AdamState::for_net(ens.q1);
    adam_step(ens.q1, g, st, 1e-2);
    CHECK(ens.q1.layers()[0].weight == before.layers()[0].weight);
  }
  SUBCASE("single transition, linear critic") {
    DenseLayer lin{random_matrix(1, S + A, rng), Vector::Zero(1), Vector::Ones(1), Activation::Identity};
    CriticEnsemble ens{Mlp({lin}), Mlp({lin}), Mlp({lin}), Mlp({lin})};
    const Batch one = buf.gather({5});
    const Vector y = Vector::Constant(1, 3.0);
    CriticOptim opt = CriticOptim::for_ensemble(ens);
    double prev = critic_mse(ens.q1, one, y);
    for (int i = 0; i < 50; ++i) {
      critic_update(ens, one, y, 1e-2, opt);
      const double now = critic_mse(ens.q1, one, y);
      CHECK(now < prev);
      prev = now;
    }
  }
  SUBCASE("min critic action gradient") {
    CriticEnsemble ens = CriticEnsemble::make(S, A, hidden, rng);
    const CriticEval e = min_critic(ens.q1, ens.q2, batch.states, batch.actions);
    Matrix a = batch.actions;
    double worst = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double h = 1e-6;
        a(i, j) += h;
        const double up = min_critic(ens.q1, ens.q2, batch.states, a).value[j];
        a(i, j) -= 2 * h;
        const double down = min_critic(ens.q1, ens.q2, batch.states, a).value[j];
        a(i, j) += h;
        worst = std::max(worst, sdsac::testing::rel_error(e.action_grad(i, j), (up - down) / (2 * h)));
      }
      const double q1 = ens.q1.forward(critic_input(batch.states.col(j), batch.actions.col(j)))(0, 0);
      const double q2 = ens.q2.forward(critic_input(batch.states.col(j), batch.actions.col(j)))(0, 0);
      CHECK(e.value[j] == std::min(q1, q2));
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("policy update") {
  Rng rng(4);
  const int S = 3, A = 2;
  const std::vector<int> hidden{8, 8};
  auto schedule = build_schedule(3, 0.2, 0.2, ScheduleKind::Constant);
  const Matrix states = random_matrix(S, 6, rng);
  CriticEnsemble ens{l1_critic(S, A), l1_critic(S, A), l1_critic(S, A), l1_critic(S, A)};

  SUBCASE("identity masks match an unmasked copy") {
    DiffusionPolicy p = DiffusionPolicy::make(A, S, schedule, hidden, rng);
    DiffusionPolicy q = p;
    for (auto& L : q.net().layers()) L.mask = Vector::Ones(L.out_dim());
    AdamState sa = AdamState::for_net(p.net()), sb = AdamState::for_net(q.net());
    Rng ra(1), rb(1);
    policy_update(p, ens, states, 1e-3, sa, ra);
    policy_update(q, ens, states, 1e-3, sb, rb);
    for (std::size_t l = 0; l < p.net().depth(); ++l) CHECK(p.net().layers()[l].weight == q.net().layers()[l].weight);
  }
  SUBCASE("fully masked layer is frozen") {
    DiffusionPolicy p = DiffusionPolicy::make(A, S, schedule, hidden, rng);
    p.net().layers()[1].mask.setZero();
    const Mlp before = p.net();
    AdamState st = AdamState::for_net(p.net());
    for (int i = 0; i < 5; ++i) policy_update(p, ens, states, 1e-2, st, rng);
    CHECK(p.net().layers()[1].weight == before.layers()[1].weight);
    CHECK(p.net().layers()[1].bias == before.layers()[1].bias);
    CHECK(p.net().layers()[2].weight == before.layers()[2].weight);
  }
  SUBCASE("l1 critic shrinks actions") {
    DiffusionPolicy p = DiffusionPolicy::make(A, S, schedule, std::vector<int>{32, 32}, rng);
    AdamState st = AdamState::for_net(p.net());
    const Matrix s = states.col(0).replicate(1, 64);
    Rng eval_a(9);
    const double before = reverse_sample(p, s, eval_a).action.cwiseAbs().mean();
    for (int i = 0; i < 300; ++i) policy_update(p, ens, s, 1e-3, st, rng);
    Rng eval_b(9);
    const double after = reverse_sample(p, s, eval_b).action.cwiseAbs().mean();
    CHECK(after < before);
  }
}

TEST_CASE("evaluate") {
  const EnvRanges r;
  const ActionBounds b;
  const RewardSpec spec;
  const EvalMetrics one = evaluate(complete_info_scheme(), r, b, spec, 1, 17);
  CHECK(one.reward_std == 0.0);
  Rng env_rng = make_rng(17, 1);
  const EnvSample e = sample_env(r, env_rng);
  CHECK(one.server_utility == server_utility(solve_complete_info(e.profile, e.params), e.profile, e.params));

  const EvalMetrics x = evaluate(random_scheme(r, b), r, b, spec, 20, 3);
  const EvalMetrics y = evaluate(random_scheme(r, b), r, b, spec, 20, 3);
  CHECK(x.reward == y.reward);
  CHECK(x.violation == y.violation);
  CHECK(x.reward_std > 0.0);
}

TEST_CASE("training loop") {
  const EnvRanges r;
  const ActionBounds b;
  const RewardSpec spec;
  SUBCASE("zero steps") {
    TrainerConfig c = small_config();
    c.steps = 0;
    const TrainResult res = train(c, r, spec, b);
    CHECK(res.log.rows.empty());
    CHECK(res.log.prune_events.empty());
    CHECK(res.ledger.total() == 0);
  }
  SUBCASE("determinism and pruning bookkeeping") {
    const TrainerConfig c = small_config();
    int events = 0;
    TrainHooks hooks;
    hooks.on_prune = [&](const PruneCheckpoint& cp) {
      ++events;
      CHECK(cp.event == events);
      CHECK(masks_of(cp.policy->net()) == masks_of(cp.target->net()));
      const Mlp small = compact(cp.target->net());
      Rng xr(cp.step);
      const Matrix x = random_matrix(cp.target->net().in_dim(), 20, xr);
      CHECK((small.forward(x) - cp.target->net().forward(x)).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK(std::abs(cp.outcome.realized_sparsity - cp.scheduled_sparsity) * 32 <= 1.0);
    };
    const TrainResult a = train(c, r, spec, b, hooks);
    const TrainResult again = train(c, r, spec, b);
    CHECK(events == c.prune.total_prunes);
    CHECK(a.schedule_completed);
    CHECK(a.log.rows.size() == 4);
    CHECK(a.log.scheme == "diffusion_pruned");
    CHECK(csv_bytes(a.log) == csv_bytes(again.log));
    CHECK(a.final_eval.reward == again.final_eval.reward);
    CHECK(realized_sparsity(a.policy.net()) == doctest::Approx(0.25).epsilon(1.0 / 32));
    CHECK(param_count(a.compact.net(), false) == param_count(a.target.net(), true));
    CHECK(a.log.prune_events.size() == 10);

    TrainerConfig u = c;
    u.prune.enabled = false;
    const TrainResult plain = train(u, r, spec, b);
    CHECK(plain.log.scheme == "diffusion");
    CHECK(plain.ledger.total() > a.ledger.total());
    CHECK(plain.schedule_completed);
    CHECK(realized_sparsity(plain.policy.net()) == 0.0);
  }
  SUBCASE("divergence is reported") {
    TrainerConfig c = small_config();
    c.lr_critic = 1e250;
    CHECK_THROWS_AS(train(c, r, spec, b), TrainingDiverged);
  }
  SUBCASE("invalid config") {
    TrainerConfig c = small_config();
    c.batch_size = 0;
    CHECK_THROWS_AS(train(c, r, spec, b), std::invalid_argument);
  }
}
