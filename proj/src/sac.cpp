#include "sdsac/sac.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "sdsac/baselines.hpp"
#include "training_loop.hpp"

namespace sdsac {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

// ---------------------------------------------------------------------------
// Replay memory

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  ring_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
  if (ring_.size() < capacity_) {
    ring_.push_back(std::move(t));
  } else {
    ring_[head_] = std::move(t);
  }
  head_ = (head_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw std::out_of_range("ReplayBuffer::at");
  const std::size_t oldest = size_ < capacity_ ? 0 : head_;
  return ring_[(oldest + i) % capacity_];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t b, Rng& rng, bool with_replacement) const {
  if (size_ == 0) throw std::length_error("ReplayBuffer: cannot sample from an empty buffer");
  std::vector<std::size_t> out;
  out.reserve(b);
  if (with_replacement) {
    std::uniform_int_distribution<std::size_t> u(0, size_ - 1);
    for (std::size_t i = 0; i < b; ++i) out.push_back(u(rng));
    return out;
  }
  if (b > size_) {
    throw std::length_error("ReplayBuffer: requested " + std::to_string(b) + " transitions but only " +
                            std::to_string(size_) + " stored");
  }
  // Floyd's algorithm: b distinct indices in O(b).
  std::unordered_set<std::size_t> seen;
  for (std::size_t j = size_ - b; j < size_; ++j) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
    const std::size_t pick = seen.count(t) ? j : t;
    seen.insert(pick);
    out.push_back(pick);
  }
  return out;
}

Batch ReplayBuffer::gather(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw std::invalid_argument("ReplayBuffer::gather: empty index list");
  const auto& first = at(indices.front());
  const auto n = static_cast<Eigen::Index>(indices.size());
  Batch b;
  b.states.resize(first.state.size(), n);
  b.actions.resize(first.action.size(), n);
  b.next_states.resize(first.next_state.size(), n);
  b.rewards.resize(n);
  b.done.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& t = at(indices[static_cast<std::size_t>(j)]);
    b.states.col(j) = t.state;
    b.actions.col(j) = t.action;
    b.next_states.col(j) = t.next_state;
    b.rewards[j] = t.reward;
    b.done[j] = t.done ? 1.0 : 0.0;
  }
  return b;
}

Batch ReplayBuffer::sample(std::size_t b, Rng& rng, bool with_replacement) const {
  return gather(sample_indices(b, rng, with_replacement));
}

// ---------------------------------------------------------------------------
// Critics

CriticEnsemble CriticEnsemble::make(int state_dim, int action_dim, std::span<const int> hidden, Rng& rng) {
  std::vector<int> sizes{state_dim + action_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  CriticEnsemble e;
  e.q1 = Mlp::make(sizes, Activation::Relu, Activation::Identity, rng);
  e.q2 = Mlp::make(sizes, Activation::Relu, Activation::Identity, rng);
  e.q1_target = e.q1;
  e.q2_target = e.q2;
  return e;
}

Matrix critic_input(const Matrix& states, const Matrix& actions) {
  if (states.cols() != actions.cols()) throw std::invalid_argument("critic_input: batch size mismatch");
  Matrix x(states.rows() + actions.rows(), states.cols());
  x.topRows(states.rows()) = states;
  x.bottomRows(actions.rows()) = actions;
  return x;
}

CriticEval min_critic(const Mlp& qa, const Mlp& qb, const Matrix& states, const Matrix& actions) {
  const Matrix x = critic_input(states, actions);
  ForwardCache ca, cb;
  const Matrix va = qa.forward(x, &ca);
  const Matrix vb = qb.forward(x, &cb);
  const Eigen::Index B = x.cols();
  CriticEval out;
  out.value.resize(B);
  Matrix up_a = Matrix::Zero(1, B);
  Matrix up_b = Matrix::Zero(1, B);
  for (Eigen::Index j = 0; j < B; ++j) {
    if (va(0, j) <= vb(0, j)) {
      out.value[j] = va(0, j);
      up_a(0, j) = 1.0;
    } else {
      out.value[j] = vb(0, j);
      up_b(0, j) = 1.0;
    }
  }
  Matrix ga, gb;
  qa.backward(ca, up_a, &ga);
  qb.backward(cb, up_b, &gb);
  out.action_grad = (ga + gb).bottomRows(actions.rows());
  return out;
}

Vector critic_targets(const CriticEnsemble& ens, const TargetActionFn& target_action, const Batch& batch,
                      double gamma, Rng& rng, double varsigma) {
  if (batch.size() == 0) throw std::invalid_argument("critic_targets: empty batch");
  Vector y = batch.rewards;
  const bool bootstrap = gamma != 0.0 && (batch.done.array() < 1.0).any();
  if (!bootstrap) return y;
  const NextAction next = target_action(batch.next_states, rng);
  const Matrix x = critic_input(batch.next_states, next.actions);
  const Matrix q1 = ens.q1_target.forward(x);
  const Matrix q2 = ens.q2_target.forward(x);
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    double v = std::min(q1(0, j), q2(0, j));
    if (next.log_prob.size() == y.size()) v -= varsigma * next.log_prob[j];
    y[j] += gamma * (1.0 - batch.done[j]) * v;
  }
  return y;
}

CriticOptim CriticOptim::for_ensemble(const CriticEnsemble& ens) {
  return {AdamState::for_net(ens.q1), AdamState::for_net(ens.q2)};
}

double critic_mse(const Mlp& q, const Batch& batch, const Vector& targets, Gradients* grads) {
  if (targets.size() != batch.size()) throw std::invalid_argument("critic_mse: target size mismatch");
  ForwardCache cache;
  const Matrix pred = q.forward(critic_input(batch.states, batch.actions), grads ? &cache : nullptr);
  const Eigen::RowVectorXd diff = pred.row(0) - targets.transpose();
  const double B = static_cast<double>(batch.size());
  if (grads) *grads = q.backward(cache, (2.0 / B) * diff);
  return diff.squaredNorm() / B;
}

CriticLoss critic_update(CriticEnsemble& ens, const Batch& batch, const Vector& targets, double lr,
                         CriticOptim& optim) {
  CriticLoss loss;
  Gradients g1, g2;
  loss.q1 = critic_mse(ens.q1, batch, targets, &g1);
  loss.q2 = critic_mse(ens.q2, batch, targets, &g2);
  adam_step(ens.q1, g1, optim.q1, lr);
  adam_step(ens.q2, g2, optim.q2, lr);
  return loss;
}

double policy_update(DiffusionPolicy& policy, const CriticEnsemble& ens, const Matrix& states, double lr,
                     AdamState& adam, Rng& rng) {
  const CriticFn critic = [&ens](const Matrix& s, const Matrix& a) { return min_critic(ens.q1, ens.q2, s, a); };
  const PolicyLoss pl = policy_loss(policy, critic, states, rng);
  adam_step(policy.net(), pl.grads, adam, lr);
  return pl.loss;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalMetrics evaluate(const ContractScheme& scheme, const EnvRanges& ranges, const ActionBounds& bounds,
                     const RewardSpec& spec, int n_envs, std::uint64_t seed) {
  if (n_envs < 1) throw std::invalid_argument("evaluate: n_envs must be >= 1");
  (void)bounds;
  std::vector<double> rewards, server, device, violation;
  for (int i = 0; i < n_envs; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    Rng env_rng = make_rng(seed, 2 * idx + 1);
    Rng act_rng = make_rng(seed, 2 * idx + 2);
    const EnvSample env = sample_env(ranges, env_rng);
    const StateVec state = encode_state(env, ranges);
    const Contract contract = scheme.propose(env, state, act_rng);
    const RewardBreakdown rb = reward_breakdown(env, contract, spec, scheme.penalized);
    rewards.push_back(rb.reward);
    server.push_back(rb.server_utility);
    double dev = 0.0;
    for (std::size_t k = 0; k < contract.size(); ++k) {
      dev += env.profile[k].prob * device_utility(contract[k], env.profile[k].psi, env.params);
    }
    device.push_back(dev);
    violation.push_back(check_feasibility(contract, env.profile, env.params).violation);
  }
  EvalMetrics m;
  m.n = n_envs;
  const Stat r = summarize(rewards);
  m.reward = r.mean;
  m.reward_std = r.std;
  m.server_utility = summarize(server).mean;
  m.device_utility = summarize(device).mean;
  m.violation = summarize(violation).mean;
  return m;
}

ContractScheme diffusion_scheme(const DiffusionPolicy& policy, const EnvRanges& ranges, const ActionBounds& bounds) {
  (void)ranges;
  ContractScheme s;
  s.propose = [&policy, bounds](const EnvSample&, const StateVec& state, Rng& rng) {
    const ReverseSample out = reverse_sample(policy, state, rng);
    return decode_action(out.action.col(0), bounds);
  };
  return s;
}

// ---------------------------------------------------------------------------
// Training loop

void TrainerConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("trainer: steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("trainer: batch_size must be >= 1");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("trainer: gamma must lie in [0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("trainer: tau must lie in (0, 1]");
  if (!(lr_actor > 0.0 && lr_actor <= 1.0)) throw std::invalid_argument("trainer: lr_actor must lie in (0, 1]");
  if (!(lr_critic > 0.0)) throw std::invalid_argument("trainer: lr_critic must be > 0");
  if (!(varsigma >= 0.0)) throw std::invalid_argument("trainer: varsigma must be >= 0");
  if (warmup < 0) throw std::invalid_argument("trainer: warmup must be >= 0");
  if (eval_interval < 0) throw std::invalid_argument("trainer: eval_interval must be >= 0");
  if (eval_envs < 1) throw std::invalid_argument("trainer: eval_envs must be >= 1");
  if (buffer_capacity < static_cast<std::size_t>(batch_size)) {
    throw std::invalid_argument("trainer: buffer_capacity must be >= batch_size");
  }
  if (episode.length < 1) throw std::invalid_argument("trainer: episode_length must be >= 1");
  if (actor_hidden.empty() || critic_hidden.empty()) throw std::invalid_argument("trainer: need hidden layers");
  if (diffusion.steps < 1) throw std::invalid_argument("diffusion: steps must be >= 1");
  prune.validate();
}

namespace detail {

LoopResult run_loop(ActorAdapter& actor, const TrainerConfig& config, const EnvRanges& ranges,
                    const RewardSpec& spec, const ActionBounds& bounds, const std::string& scheme,
                    const TrainHooks& hooks) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };

  const int S = static_cast<int>(ranges.state_dim());
  const int A = static_cast<int>(ranges.action_dim());
  Rng critic_init = make_rng(config.seed, 6);
  Rng env_rng = make_rng(config.seed, kEnv);
  Rng explore_rng = make_rng(config.seed, kExplore);
  Rng replay_rng = make_rng(config.seed, kReplay);
  Rng update_rng = make_rng(config.seed, kUpdate);

  LoopResult res;
  res.critics = CriticEnsemble::make(S, A, config.critic_hidden, critic_init);
  CriticOptim optim = CriticOptim::for_ensemble(res.critics);
  ReplayBuffer buffer(config.buffer_capacity);
  res.log.scheme = scheme;
  res.log.seed = config.seed;

  const std::uint64_t critic_fwd = flops_mlp(res.critics.q1, false);
  const std::uint64_t critic_bwd = flops_mlp(res.critics.q1, true);
  const auto B = static_cast<std::uint64_t>(config.batch_size);

  auto save = [&](const std::string& name, long step) {
    if (hooks.checkpoint_dir.empty()) return;
    Checkpoint ckpt;
    ckpt.metadata["scheme"] = scheme;
    ckpt.metadata["step"] = std::to_string(step);
    ckpt.metadata["seed"] = std::to_string(config.seed);
    actor.snapshot(ckpt);
    ckpt.nets.emplace("critic_q1", res.critics.q1);
    ckpt.nets.emplace("critic_q2", res.critics.q2);
    save_checkpoint(hooks.checkpoint_dir / name, ckpt);
  };

  EnvSample env = sample_env(ranges, env_rng);
  int episode_step = 0;
  double reward_sum = 0.0;
  long reward_count = 0;

  for (long z = 1; z <= config.steps; ++z) {
    const StateVec state = encode_state(env, ranges);
    const ActionVec action =
        z <= config.warmup ? random_policy(A, explore_rng) : actor.explore(state, explore_rng, res.ledger);
    StepResult sr = step(env, action, ranges, bounds, spec, config.episode, episode_step, env_rng);
    buffer.push({state, action, sr.reward, encode_state(sr.next, ranges), sr.done});
    reward_sum += sr.reward;
    ++reward_count;

    bool updated = false;
    if (z > config.warmup && buffer.size() >= static_cast<std::size_t>(config.batch_size)) {
      const Batch batch = buffer.sample(B, replay_rng, config.sample_with_replacement);
      const bool bootstrap = config.gamma != 0.0 && (batch.done.array() < 1.0).any();
      const Vector targets = critic_targets(
          res.critics, [&](const Matrix& next, Rng& rng) { return actor.target_actions(next, rng, res.ledger); },
          batch, config.gamma, update_rng, actor.target_varsigma());
      if (bootstrap) res.ledger.add(Phase::Critic, 2 * critic_fwd * B, 0);
      const CriticLoss cl = critic_update(res.critics, batch, targets, config.lr_critic, optim);
      res.ledger.add(Phase::Critic, 2 * critic_fwd * B, 2 * critic_bwd * B);
      const double pl = actor.update(res.critics, batch, update_rng, res.ledger);
      if (!std::isfinite(cl.q1) || !std::isfinite(cl.q2) || !std::isfinite(pl)) {
        save("diverged.ckpt", z);
        std::ostringstream msg;
        msg << "training diverged at step " << z << " (scheme " << scheme << ", seed " << config.seed
            << "): critic losses " << cl.q1 << ", " << cl.q2 << ", actor loss " << pl << ", buffer size "
            << buffer.size() << ", sparsity " << actor.sparsity();
        throw TrainingDiverged(msg.str());
      }
      actor.update_targets(config.tau);
      soft_update(res.critics.q1_target, res.critics.q1, config.tau);
      soft_update(res.critics.q2_target, res.critics.q2, config.tau);
      updated = true;
    }
    actor.after_step(z, updated, res.log, res.ledger);

    env = std::move(sr.next);
    episode_step = sr.done ? 0 : episode_step + 1;

    if (config.eval_interval > 0 && z % config.eval_interval == 0) {
      const EvalMetrics m = evaluate(actor.eval_scheme(), ranges, bounds, spec, config.eval_envs, config.eval_seed());
      LogRow row;
      row.step = z;
      row.train_reward = reward_count ? reward_sum / static_cast<double>(reward_count) : 0.0;
      row.eval_reward = m.reward;
      row.server_utility = m.server_utility;
      row.device_utility = m.device_utility;
      row.sparsity = actor.sparsity();
      row.effective_params = actor.effective_params();
      row.flops = res.ledger.total();
      row.wall_ms = config.record_wall_time ? elapsed_ms() : 0.0;
      res.log.rows.push_back(row);
      reward_sum = 0.0;
      reward_count = 0;
    }
    if (config.checkpoint_interval > 0 && z % config.checkpoint_interval == 0) {
      save("step_" + std::to_string(z) + ".ckpt", z);
    }
  }
  res.final_eval = evaluate(actor.eval_scheme(), ranges, bounds, spec, config.eval_envs, config.eval_seed());
  res.wall_ms = elapsed_ms();
  return res;
}

namespace {

class DiffusionAdapter : public ActorAdapter {
 public:
  DiffusionAdapter(const TrainerConfig& config, const EnvRanges& ranges, const ActionBounds& bounds,
                   const TrainHooks& hooks)
      : config_(config), ranges_(ranges), bounds_(bounds), hooks_(hooks) {
    Rng init = make_rng(config.seed, kInit);
    const auto& d = config.diffusion;
    policy_ = DiffusionPolicy::make(static_cast<int>(ranges.action_dim()), static_cast<int>(ranges.state_dim()),
                                    build_schedule(d.steps, d.delta_lo, d.delta_hi, d.kind), config.actor_hidden,
                                    init);
    target_ = policy_;
    adam_ = AdamState::for_net(policy_.net());
  }

  ActionVec explore(const StateVec& state, Rng& rng, FlopLedger& ledger) override {
    ledger.add(Phase::Sampling, steps() * flops_mlp(policy_.net(), false), 0);
    return reverse_sample(policy_, state, rng).action.col(0);
  }

  NextAction target_actions(const Matrix& next_states, Rng& rng, FlopLedger& ledger) override {
    ledger.add(Phase::Sampling,
               steps() * flops_mlp(target_.net(), false) * static_cast<std::uint64_t>(next_states.cols()), 0);
    return {reverse_sample(target_, next_states, rng).action, Vector()};
  }

  double update(const CriticEnsemble& critics, const Batch& batch, Rng& rng, FlopLedger& ledger) override {
    const auto B = static_cast<std::uint64_t>(batch.size());
    ledger.add(Phase::Policy, steps() * flops_mlp(policy_.net(), false) * B,
               steps() * flops_mlp(policy_.net(), true) * B);
    ledger.add(Phase::Critic, 2 * flops_mlp(critics.q1, false) * B, 2 * flops_mlp(critics.q1, true) * B);
    double loss = policy_update(policy_, critics, batch.states, config_.lr_actor, adam_, rng);
    if (config_.varsigma > 0.0) {
      // The surrogate entropy depends on the fixed schedule only, so it shifts
      // the objective without contributing a parameter gradient.
      loss -= config_.varsigma * entropy_bonus(policy_, batch.states.col(0), kEntropySamples, rng).value;
    }
    return loss;
  }

  void update_targets(double tau) override { soft_update(target_.net(), policy_.net(), tau); }

  void after_step(long z, bool, TrainLog& log, FlopLedger& ledger) override {
    const auto& pc = config_.prune;
    const long rel = z - pc.start_step;
    if (rel <= 0 || rel % pc.frequency != 0) return;
    const long event = rel / pc.frequency;
    if (event > pc.total_prunes) return;
    if (!pc.enabled) {
      // Unpruned runs still mark the step where the schedule would end so the
      // two ledgers can be compared over the same window.
      if (event == pc.total_prunes) {
        ledger_at_schedule_end_ = ledger;
        schedule_completed_ = true;
      }
      return;
    }

    const ImportanceMap imp = importance(policy_.net());
    const double omega = sparsity_at(rel, pc);
    const double thr = threshold(imp, omega, pc.mode);
    PruneOutcome outcome = apply_masks(policy_.net(), imp, thr);
    set_masks(target_.net(), masks_of(policy_.net()));
    ledger.add(Phase::Pruning, 2 * param_count(policy_.net(), false), 0);

    for (std::size_t l = 0; l < outcome.removed_per_layer.size(); ++l) {
      log.prune_events.push_back({z, static_cast<int>(l), outcome.removed_per_layer[l], outcome.realized_sparsity,
                                  omega, thr});
    }
    if (event == pc.total_prunes) {
      ledger_at_schedule_end_ = ledger;
      schedule_completed_ = true;
    }
    if (hooks_.on_prune) {
      hooks_.on_prune({z, static_cast<int>(event), &policy_, &target_, omega, thr, std::move(outcome)});
    }
  }

  ContractScheme eval_scheme() const override { return diffusion_scheme(target_, ranges_, bounds_); }
  double sparsity() const override { return realized_sparsity(policy_.net()); }
  std::uint64_t effective_params() const override { return param_count(policy_.net(), true); }
  void snapshot(Checkpoint& ckpt) const override {
    ckpt.nets.emplace("policy", policy_.net());
    ckpt.nets.emplace("policy_target", target_.net());
  }

  DiffusionPolicy policy_;
  DiffusionPolicy target_;
  FlopLedger ledger_at_schedule_end_;
  bool schedule_completed_ = false;

 private:
  static constexpr int kEntropySamples = 16;
  std::uint64_t steps() const { return static_cast<std::uint64_t>(policy_.schedule().steps()); }

  const TrainerConfig& config_;
  const EnvRanges& ranges_;
  const ActionBounds& bounds_;
  const TrainHooks& hooks_;
  AdamState adam_;
};

} // namespace
} // namespace detail

TrainResult train(const TrainerConfig& config, const EnvRanges& ranges, const RewardSpec& spec,
                  const ActionBounds& bounds, const TrainHooks& hooks) {
  config.validate();
  ranges.validate();
  spec.validate();
  bounds.validate();
  detail::DiffusionAdapter actor(config, ranges, bounds, hooks);
  const std::string scheme = config.prune.enabled ? "diffusion_pruned" : "diffusion";
  detail::LoopResult loop = detail::run_loop(actor, config, ranges, spec, bounds, scheme, hooks);

  TrainResult out;
  out.policy = actor.policy_;
  out.target = actor.target_;
  out.compact = DiffusionPolicy(compact(actor.target_.net()), actor.target_.schedule(), actor.target_.action_dim(),
                                actor.target_.state_dim());
  out.critics = std::move(loop.critics);
  out.log = std::move(loop.log);
  out.ledger = loop.ledger;
  out.ledger_at_schedule_end = actor.ledger_at_schedule_end_;
  out.schedule_completed = actor.schedule_completed_;
  out.final_eval = loop.final_eval;
  out.wall_ms = loop.wall_ms;
  return out;
}

Checkpoint make_checkpoint(const TrainResult& result, const TrainerConfig& config) {
  Checkpoint ckpt;
  ckpt.metadata["scheme"] = result.log.scheme;
  ckpt.metadata["seed"] = std::to_string(config.seed);
  ckpt.metadata["steps"] = std::to_string(config.steps);
  ckpt.metadata["diffusion_steps"] = std::to_string(config.diffusion.steps);
  std::ostringstream deltas;
  deltas.precision(17);
  for (std::size_t t = 0; t < result.target.schedule().delta.size(); ++t) {
    deltas << (t ? "," : "") << result.target.schedule().delta[t];
  }
  ckpt.metadata["schedule_delta"] = deltas.str();
  ckpt.metadata["action_dim"] = std::to_string(result.target.action_dim());
  ckpt.metadata["state_dim"] = std::to_string(result.target.state_dim());
  ckpt.metadata["target_sparsity"] = std::to_string(config.prune.target_sparsity);
  ckpt.metadata["realized_sparsity"] = std::to_string(realized_sparsity(result.policy.net()));
  ckpt.nets.emplace("policy", result.policy.net());
  ckpt.nets.emplace("policy_target", result.target.net());
  ckpt.nets.emplace("policy_compact", result.compact.net());
  ckpt.nets.emplace("critic_q1", result.critics.q1);
  ckpt.nets.emplace("critic_q2", result.critics.q2);
  return ckpt;
}

} // namespace sdsac
