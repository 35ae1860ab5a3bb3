#pragma once

#include <Eigen/Core>
#include <random>
#include <vector>

#include "sdsac/contract.hpp"

namespace sdsac {

using Rng = std::mt19937_64;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Normalized environment encoding [c, c0, vartheta, q_1..q_K, psi_1..psi_K].
using StateVec = Eigen::VectorXd;
/// Normalized contract [s_1, r_1, ..., s_K, r_K], each entry in [-1, 1].
using ActionVec = Eigen::VectorXd;

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Sampling ranges for the dynamic market. Defaults are the two-type setting
/// with M = 10 devices.
struct EnvRanges {
  std::vector<Interval> psi{{50.0, 100.0}, {200.0, 250.0}};
  Interval unit_cost{25.0, 35.0};
  Interval unit_revenue{10.0, 15.0};
  double rho = 0.6;
  double fixed_cost = 0.01;
  double beta = 0.5;
  int devices = 10;
  double dirichlet_alpha = 1.0;

  std::size_t types() const { return psi.size(); }
  std::size_t state_dim() const { return 3 + 2 * psi.size(); }
  std::size_t action_dim() const { return 2 * psi.size(); }
  void validate() const;
};

struct EnvSample {
  TypeProfile profile;
  MarketParams params;
};

struct ActionBounds {
  double s_max = 10000.0;
  double r_max = 2000.0;
  void validate() const;
};

enum class Normalizer { CompleteInfo, Constant };

/// R = (U - lambda * violation) / normalizer.
struct RewardSpec {
  double penalty_weight = 1.0;
  Normalizer normalizer = Normalizer::CompleteInfo;
  double kappa = 1000.0;
  void validate() const;
};

struct EncodeDiagnostics {
  int clipped = 0;
};

struct RewardBreakdown {
  double reward = 0.0;
  double server_utility = 0.0;
  double violation = 0.0; // penalized violation
  double normalizer = 1.0;
  bool fell_back = false; // complete-info normalizer was not positive, kappa used
};

/// psi_k uniform per interval then sorted, q ~ Dirichlet(alpha), c and vartheta uniform.
EnvSample sample_env(const EnvRanges& ranges, Rng& rng);

/// Min-max normalization against `ranges`. A degenerate (fixed) field maps to 0.
/// Out-of-range values are clipped to [0, 1] and counted in `diag`.
StateVec encode_state(const EnvSample& env, const EnvRanges& ranges, EncodeDiagnostics* diag = nullptr);

/// Maps a[2k] -> s_k in [0, s_max] and a[2k+1] -> r_k in [0, r_max].
Contract decode_action(const ActionVec& action, const ActionBounds& bounds);

/// Inverse of decode_action for contracts within bounds.
ActionVec encode_contract(const Contract& contract, const ActionBounds& bounds);

/// Feasibility-penalized server utility, scale-normalized. `penalized` selects
/// which constraint violations enter the penalty.
RewardBreakdown reward_breakdown(const EnvSample& env, const Contract& contract, const RewardSpec& spec,
                                 ConstraintSet penalized = ConstraintSet::IrAndIc);

double compute_reward(const EnvSample& env, const Contract& contract, const RewardSpec& spec,
                      ConstraintSet penalized = ConstraintSet::IrAndIc);

/// Episode bookkeeping. length == 1 gives one-shot episodes where every step
/// is terminal.
struct EpisodeMode {
  int length = 1;
};

struct StepResult {
  EnvSample next;
  double reward = 0.0;
  bool done = true;
};

/// Executes `action` in `env` and resamples the market independently.
/// `step_in_episode` is zero-based.
StepResult step(const EnvSample& env, const ActionVec& action, const EnvRanges& ranges,
                const ActionBounds& bounds, const RewardSpec& spec, const EpisodeMode& mode,
                int step_in_episode, Rng& rng);

} // namespace sdsac
