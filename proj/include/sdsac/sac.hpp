#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <vector>

#include "sdsac/diffusion.hpp"
#include "sdsac/env.hpp"
#include "sdsac/metrics.hpp"
#include "sdsac/nn.hpp"
#include "sdsac/pruning.hpp"

namespace sdsac {

/// Independent generator for a named stream of a run.
Rng make_rng(std::uint64_t seed, std::uint64_t stream);

struct Transition {
  StateVec state;
  ActionVec action;
  double reward = 0.0;
  StateVec next_state;
  bool done = true;
};

struct Batch {
  Matrix states;      // S x b
  Matrix actions;     // A x b
  Vector rewards;     // b
  Matrix next_states; // S x b
  Vector done;        // b, 1.0 for terminal

  Eigen::Index size() const { return rewards.size(); }
};

/// Fixed-capacity FIFO replay memory.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  /// Logical index: 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const;

  /// Uniform indices; without replacement by default. Throws std::length_error
  /// when the buffer holds fewer than `b` transitions and replacement is off,
  /// or when it is empty.
  std::vector<std::size_t> sample_indices(std::size_t b, Rng& rng, bool with_replacement = false) const;
  Batch gather(const std::vector<std::size_t>& indices) const;
  Batch sample(std::size_t b, Rng& rng, bool with_replacement = false) const;

 private:
  std::size_t capacity_;
  std::size_t size_ = 0;
  std::size_t head_ = 0; // next slot to write
  std::vector<Transition> ring_;
};

/// Twin Q networks over [state ; action] with their target copies.
struct CriticEnsemble {
  Mlp q1, q2, q1_target, q2_target;

  static CriticEnsemble make(int state_dim, int action_dim, std::span<const int> hidden, Rng& rng);
};

Matrix critic_input(const Matrix& states, const Matrix& actions);

/// min(Q_a, Q_b) per column with the action gradient of the minimizing network.
CriticEval min_critic(const Mlp& qa, const Mlp& qb, const Matrix& states, const Matrix& actions);

/// Action proposal of a target policy, with optional per-sample log density
/// (empty when the policy does not provide one).
struct NextAction {
  Matrix actions;
  Vector log_prob;
};
using TargetActionFn = std::function<NextAction(const Matrix& next_states, Rng& rng)>;

/// y = R + gamma * (1 - d) * (min target Q(e', a') - varsigma * log pi(a'|e')),
/// with a' drawn once per transition from `target_action`. When every
/// transition is terminal or gamma = 0 no action is drawn and y = R.
Vector critic_targets(const CriticEnsemble& ens, const TargetActionFn& target_action, const Batch& batch,
                      double gamma, Rng& rng, double varsigma = 0.0);

struct CriticOptim {
  AdamState q1;
  AdamState q2;
  static CriticOptim for_ensemble(const CriticEnsemble& ens);
};

struct CriticLoss {
  double q1 = 0.0;
  double q2 = 0.0;
};

/// Mean squared error of a critic against `targets` and its parameter gradients.
double critic_mse(const Mlp& q, const Batch& batch, const Vector& targets, Gradients* grads = nullptr);

/// One Adam step per online critic on its MSE against the shared targets.
CriticLoss critic_update(CriticEnsemble& ens, const Batch& batch, const Vector& targets, double lr,
                         CriticOptim& optim);

/// One masked Adam step of the diffusion policy on -mean min(Q1, Q2). Returns the loss.
double policy_update(DiffusionPolicy& policy, const CriticEnsemble& ens, const Matrix& states, double lr,
                     AdamState& adam, Rng& rng);

struct DiffusionConfig {
  int steps = 6;
  double delta_lo = 0.2;
  double delta_hi = 0.2;
  ScheduleKind kind = ScheduleKind::Constant;
};

struct TrainerConfig {
  long steps = 50000; // Z
  int batch_size = 256;
  double gamma = 0.95;
  double varsigma = 0.0;
  double tau = 0.005; // target update rate
  double lr_actor = 2e-7;
  double lr_critic = 2e-6;
  long warmup = 1000;
  long eval_interval = 1000;
  int eval_envs = 200;
  std::uint64_t seed = 1;
  std::size_t buffer_capacity = 100000;
  bool sample_with_replacement = false;
  EpisodeMode episode;
  std::vector<int> actor_hidden{128, 128};
  std::vector<int> critic_hidden{128, 128};
  DiffusionConfig diffusion;
  PruneConfig prune;
  long checkpoint_interval = 0; // 0 disables periodic checkpoints
  bool record_wall_time = false;

  void validate() const;
  std::uint64_t eval_seed() const { return seed * 7919 + 104729; }
};

struct EvalMetrics {
  int n = 0;
  double reward = 0.0;
  double reward_std = 0.0;
  double server_utility = 0.0;
  double device_utility = 0.0;
  double violation = 0.0; // mean IR + IC violation of the proposed contracts
};

/// A contract-design rule evaluated through the common path.
struct ContractScheme {
  std::function<Contract(const EnvSample& env, const StateVec& state, Rng& rng)> propose;
  ConstraintSet penalized = ConstraintSet::IrAndIc;
};

/// Samples `n_envs` environments from a stream seeded by `seed`; environment i
/// gets its own generator so every scheme sees identical markets and draws.
EvalMetrics evaluate(const ContractScheme& scheme, const EnvRanges& ranges, const ActionBounds& bounds,
                     const RewardSpec& spec, int n_envs, std::uint64_t seed);

ContractScheme diffusion_scheme(const DiffusionPolicy& policy, const EnvRanges& ranges, const ActionBounds& bounds);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PruneCheckpoint {
  long step = 0;
  int event = 0; // 1-based
  const DiffusionPolicy* policy = nullptr;
  const DiffusionPolicy* target = nullptr;
  double scheduled_sparsity = 0.0;
  double threshold = 0.0;
  PruneOutcome outcome;
};

struct TrainHooks {
  std::function<void(const PruneCheckpoint&)> on_prune;
  std::filesystem::path checkpoint_dir; // empty: no checkpoint files
};

struct TrainResult {
  DiffusionPolicy policy;  // online policy, masked
  DiffusionPolicy target;  // target policy, masked
  DiffusionPolicy compact; // target policy with pruned neurons removed
  CriticEnsemble critics;
  TrainLog log;
  FlopLedger ledger;
  /// Ledger at step start_step + N * frequency, recorded with or without pruning.
  FlopLedger ledger_at_schedule_end;
  bool schedule_completed = false; // that step was reached
  EvalMetrics final_eval;
  double wall_ms = 0.0;
};

/// Diffusion soft actor-critic with dynamic structured pruning of the policy.
TrainResult train(const TrainerConfig& config, const EnvRanges& ranges, const RewardSpec& spec,
                  const ActionBounds& bounds, const TrainHooks& hooks = {});

Checkpoint make_checkpoint(const TrainResult& result, const TrainerConfig& config);

} // namespace sdsac
