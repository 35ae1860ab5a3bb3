#pragma once

// Shared actor-critic loop used by the diffusion trainer and the Gaussian
// baseline. Internal to the library.

#include <string>

#include "sdsac/sac.hpp"

namespace sdsac::detail {

class ActorAdapter {
 public:
  virtual ~ActorAdapter() = default;

  virtual ActionVec explore(const StateVec& state, Rng& rng, FlopLedger& ledger) = 0;
  virtual NextAction target_actions(const Matrix& next_states, Rng& rng, FlopLedger& ledger) = 0;
  /// One actor update on the batch; returns the actor loss.
  virtual double update(const CriticEnsemble& critics, const Batch& batch, Rng& rng, FlopLedger& ledger) = 0;
  virtual void update_targets(double tau) = 0;
  /// Called after every environment step (after updates). Pruning lives here.
  virtual void after_step(long /*step*/, bool /*updated*/, TrainLog& /*log*/, FlopLedger& /*ledger*/) {}

  virtual ContractScheme eval_scheme() const = 0;
  virtual double sparsity() const { return 0.0; }
  virtual std::uint64_t effective_params() const = 0;
  virtual void snapshot(Checkpoint& ckpt) const = 0;
  /// Entropy temperature applied inside critic targets.
  virtual double target_varsigma() const { return 0.0; }
};

struct LoopResult {
  CriticEnsemble critics;
  TrainLog log;
  FlopLedger ledger;
  EvalMetrics final_eval;
  double wall_ms = 0.0;
};

LoopResult run_loop(ActorAdapter& actor, const TrainerConfig& config, const EnvRanges& ranges,
                    const RewardSpec& spec, const ActionBounds& bounds, const std::string& scheme,
                    const TrainHooks& hooks);

// Named RNG streams of a training run.
enum Stream : std::uint64_t { kInit = 1, kEnv = 2, kExplore = 3, kReplay = 4, kUpdate = 5 };

} // namespace sdsac::detail
