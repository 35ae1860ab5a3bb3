#pragma once

#include "sdsac/sac.hpp"

namespace sdsac {

/// Each component uniform on [-1, 1].
ActionVec random_policy(int action_dim, Rng& rng);

ContractScheme random_scheme(const EnvRanges& ranges, const ActionBounds& bounds);

/// The complete-information optimum. It ignores IC, so reward accounting
/// penalizes only IR violations for this scheme.
Contract complete_info_policy(const EnvSample& env);
ContractScheme complete_info_scheme();

/// Squashed Gaussian actor: the network maps a state to [mean ; log_std] per
/// action dimension and actions are tanh(mean + std * xi).
class GaussianPolicy {
 public:
  static constexpr double kLogStdMin = -20.0;
  static constexpr double kLogStdMax = 2.0;

  GaussianPolicy() = default;
  GaussianPolicy(Mlp net, int action_dim);
  static GaussianPolicy make(int state_dim, int action_dim, std::span<const int> hidden, Rng& rng);

  struct Sample {
    Matrix actions;  // A x B
    Vector log_prob; // B
  };

  /// Reparameterized draws with the given standard-normal noise.
  Sample sample(const Matrix& states, const Matrix& xi) const;
  Sample sample(const Matrix& states, Rng& rng) const;
  /// tanh(mean), used for deterministic evaluation.
  Matrix mean_action(const Matrix& states) const;

  struct Loss {
    double loss = 0.0;
    Gradients grads;
  };
  /// mean over the batch of varsigma * log pi(a|s) - Q(s, a), a reparameterized by `xi`.
  Loss loss(const CriticFn& critic, const Matrix& states, const Matrix& xi, double varsigma) const;

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  int action_dim() const { return action_dim_; }

 private:
  Mlp net_;
  int action_dim_ = 0;
};

struct GaussianTrainResult {
  GaussianPolicy policy;
  CriticEnsemble critics;
  TrainLog log;
  FlopLedger ledger;
  EvalMetrics final_eval;
  double wall_ms = 0.0;
};

/// Evaluation uses the deterministic mean action.
ContractScheme gaussian_scheme(const GaussianPolicy& policy, const EnvRanges& ranges, const ActionBounds& bounds);

/// Same trainer skeleton as train() with the diffusion actor replaced by a
/// squashed Gaussian actor; pruning settings are ignored.
GaussianTrainResult train_gaussian_sac(const TrainerConfig& config, const EnvRanges& ranges, const RewardSpec& spec,
                                       const ActionBounds& bounds, const TrainHooks& hooks = {});

} // namespace sdsac
