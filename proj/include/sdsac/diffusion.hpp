#pragma once

#include <functional>
#include <span>
#include <vector>

#include "sdsac/env.hpp"
#include "sdsac/nn.hpp"

namespace sdsac {

enum class ScheduleKind { Constant, Linear };

/// Per-step corruption rates delta_t and the derived alpha_t = 1 - delta_t,
/// alpha_bar_t = prod_{j<=t} alpha_j. Index 0 holds step t = 1.
struct NoiseSchedule {
  std::vector<double> delta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  int steps() const { return static_cast<int>(delta.size()); }
  double delta_at(int t) const { return delta[static_cast<std::size_t>(t - 1)]; }
  double alpha_at(int t) const { return alpha[static_cast<std::size_t>(t - 1)]; }
  double alpha_bar_at(int t) const { return alpha_bar[static_cast<std::size_t>(t - 1)]; }
};

/// Constant kind uses delta_lo for every step; linear kind interpolates from
/// delta_lo at t = 1 to delta_hi at t = T.
NoiseSchedule build_schedule(int steps, double delta_lo, double delta_hi, ScheduleKind kind);

/// State-conditioned denoising policy. The noise network sees
/// [omega_t (action_dim) ; state (state_dim) ; one-hot(t) (T)].
class DiffusionPolicy {
 public:
  DiffusionPolicy() = default;
  DiffusionPolicy(Mlp eps_net, NoiseSchedule schedule, int action_dim, int state_dim);

  static DiffusionPolicy make(int action_dim, int state_dim, NoiseSchedule schedule,
                              std::span<const int> hidden, Rng& rng);

  Matrix noise_input(const Matrix& omega, const Matrix& states, int t) const;
  Matrix predict_noise(const Matrix& omega, const Matrix& states, int t, ForwardCache* cache = nullptr) const;

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  int action_dim() const { return action_dim_; }
  int state_dim() const { return state_dim_; }

 private:
  Mlp net_;
  NoiseSchedule schedule_;
  int action_dim_ = 0;
  int state_dim_ = 0;
};

/// mu = (omega_t - delta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t).
Matrix posterior_mean(const DiffusionPolicy& policy, const Matrix& omega_t, const Matrix& states, int t);

/// All Gaussian draws of one reverse chain: the starting point and the noise
/// injected at steps t = T..2. steps[t-2] is the draw for step t.
struct ChainNoise {
  Matrix initial;
  std::vector<Matrix> steps;
};

ChainNoise draw_chain_noise(const DiffusionPolicy& policy, Eigen::Index batch, Rng& rng);

struct ReverseSample {
  Matrix action;             // clipped omega_0, action_dim x B
  std::vector<Matrix> trace; // omega_T, ..., omega_1, omega_0 (clipped); T + 1 entries
};

/// Forward record of a chain run, consumed by chain_backward().
struct ChainTape {
  std::vector<ForwardCache> caches; // caches[t-1] for step t
  Matrix raw_final;                 // omega_0 before clipping
};

/// Deterministic reverse chain given frozen noise. The last step adds no
/// noise and only the final sample is clipped to [-1, 1].
ReverseSample run_chain(const DiffusionPolicy& policy, const Matrix& states, const ChainNoise& noise,
                        ChainTape* tape = nullptr);

ReverseSample reverse_sample(const DiffusionPolicy& policy, const Matrix& states, Rng& rng);

/// Parameter gradients of sum(action_grad .* action) through the whole chain.
Gradients chain_backward(const DiffusionPolicy& policy, const ChainTape& tape, const Matrix& action_grad);

struct CriticEval {
  Vector value;       // B
  Matrix action_grad; // dQ/da, action_dim x B
};
using CriticFn = std::function<CriticEval(const Matrix& states, const Matrix& actions)>;

struct PolicyLoss {
  double loss = 0.0;
  Gradients grads;
  Matrix actions;
};

/// loss = -mean_B Q(s, omega_0(theta)) with the chain noise held fixed.
PolicyLoss policy_loss(const DiffusionPolicy& policy, const CriticFn& critic, const Matrix& states,
                       const ChainNoise& noise);

/// Same, drawing fresh chain noise from `rng`.
PolicyLoss policy_loss(const DiffusionPolicy& policy, const CriticFn& critic, const Matrix& states, Rng& rng);

struct EntropyEstimate {
  double value = 0.0;
  bool floored = false; // final-step variance was raised to kMinEntropyVariance
};

inline constexpr double kMinEntropyVariance = 1e-6;

/// Monte-Carlo negative log-density of the final reverse step's Gaussian
/// N(mu_1, delta_1 I) at samples drawn from it, averaged over `samples`.
EntropyEstimate entropy_bonus(const DiffusionPolicy& policy, const StateVec& state, int samples, Rng& rng);

} // namespace sdsac
