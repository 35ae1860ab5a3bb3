#include "sdsac/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sdsac {

namespace {

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

// Coefficient of eps_hat in the reverse update.
double noise_coef(const NoiseSchedule& s, int t) {
  return s.delta_at(t) / (std::sqrt(s.alpha_at(t)) * std::sqrt(1.0 - s.alpha_bar_at(t)));
}

} // namespace

NoiseSchedule build_schedule(int steps, double delta_lo, double delta_hi, ScheduleKind kind) {
  if (steps < 1) throw std::invalid_argument("build_schedule: need at least one step");
  if (!(delta_lo > 0.0 && delta_lo <= delta_hi && delta_hi < 1.0)) {
    throw std::invalid_argument("build_schedule: require 0 < delta_lo <= delta_hi < 1");
  }
  NoiseSchedule s;
  for (int t = 1; t <= steps; ++t) {
    double d = delta_lo;
    if (kind == ScheduleKind::Linear && steps > 1) {
      d = delta_lo + (delta_hi - delta_lo) * static_cast<double>(t - 1) / static_cast<double>(steps - 1);
    }
    s.delta.push_back(d);
    s.alpha.push_back(1.0 - d);
    s.alpha_bar.push_back(t == 1 ? 1.0 - d : s.alpha_bar.back() * (1.0 - d));
  }
  return s;
}

DiffusionPolicy::DiffusionPolicy(Mlp eps_net, NoiseSchedule schedule, int action_dim, int state_dim)
    : net_(std::move(eps_net)), schedule_(std::move(schedule)), action_dim_(action_dim), state_dim_(state_dim) {
  if (net_.in_dim() != action_dim + state_dim + schedule_.steps() || net_.out_dim() != action_dim) {
    throw std::invalid_argument("DiffusionPolicy: noise network dimensions do not match the layout");
  }
}

DiffusionPolicy DiffusionPolicy::make(int action_dim, int state_dim, NoiseSchedule schedule,
                                      std::span<const int> hidden, Rng& rng) {
  std::vector<int> sizes{action_dim + state_dim + schedule.steps()};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(action_dim);
  Mlp net = Mlp::make(sizes, Activation::Relu, Activation::Identity, rng);
  return DiffusionPolicy(std::move(net), std::move(schedule), action_dim, state_dim);
}

Matrix DiffusionPolicy::noise_input(const Matrix& omega, const Matrix& states, int t) const {
  if (t < 1 || t > schedule_.steps()) throw std::out_of_range("diffusion step out of range");
  if (omega.rows() != action_dim_ || states.rows() != state_dim_ || omega.cols() != states.cols()) {
    throw std::invalid_argument("DiffusionPolicy: input shape mismatch");
  }
  const Eigen::Index B = omega.cols();
  Matrix x = Matrix::Zero(action_dim_ + state_dim_ + schedule_.steps(), B);
  x.topRows(action_dim_) = omega;
  x.middleRows(action_dim_, state_dim_) = states;
  x.row(action_dim_ + state_dim_ + t - 1).setOnes();
  return x;
}

Matrix DiffusionPolicy::predict_noise(const Matrix& omega, const Matrix& states, int t, ForwardCache* cache) const {
  return net_.forward(noise_input(omega, states, t), cache);
}

Matrix posterior_mean(const DiffusionPolicy& policy, const Matrix& omega_t, const Matrix& states, int t) {
  const auto& s = policy.schedule();
  const Matrix eps = policy.predict_noise(omega_t, states, t);
  return (omega_t - (s.delta_at(t) / std::sqrt(1.0 - s.alpha_bar_at(t))) * eps) / std::sqrt(s.alpha_at(t));
}

ChainNoise draw_chain_noise(const DiffusionPolicy& policy, Eigen::Index batch, Rng& rng) {
  ChainNoise n;
  n.initial = standard_normal(policy.action_dim(), batch, rng);
  for (int t = policy.schedule().steps(); t >= 2; --t) {
    n.steps.push_back(standard_normal(policy.action_dim(), batch, rng));
  }
  // Stored in draw order T..2; flip so steps[t-2] is the draw for step t.
  std::reverse(n.steps.begin(), n.steps.end());
  return n;
}

ReverseSample run_chain(const DiffusionPolicy& policy, const Matrix& states, const ChainNoise& noise,
                        ChainTape* tape) {
  const auto& s = policy.schedule();
  const int T = s.steps();
  if (noise.initial.rows() != policy.action_dim() || noise.initial.cols() != states.cols() ||
      noise.steps.size() != static_cast<std::size_t>(T - 1)) {
    throw std::invalid_argument("run_chain: noise does not match policy and batch");
  }
  ReverseSample out;
  out.trace.reserve(static_cast<std::size_t>(T + 1));
  if (tape) tape->caches.assign(static_cast<std::size_t>(T), ForwardCache{});

  Matrix omega = noise.initial;
  out.trace.push_back(omega);
  for (int t = T; t >= 1; --t) {
    ForwardCache* cache = tape ? &tape->caches[static_cast<std::size_t>(t - 1)] : nullptr;
    const Matrix eps = policy.predict_noise(omega, states, t, cache);
    Matrix next = omega / std::sqrt(s.alpha_at(t)) - noise_coef(s, t) * eps;
    if (t > 1) next += std::sqrt(s.delta_at(t)) * noise.steps[static_cast<std::size_t>(t - 2)];
    omega = std::move(next);
    if (t > 1) out.trace.push_back(omega);
  }
  if (tape) tape->raw_final = omega;
  out.action = omega.cwiseMax(-1.0).cwiseMin(1.0);
  out.trace.push_back(out.action);
  return out;
}

ReverseSample reverse_sample(const DiffusionPolicy& policy, const Matrix& states, Rng& rng) {
  return run_chain(policy, states, draw_chain_noise(policy, states.cols(), rng));
}

Gradients chain_backward(const DiffusionPolicy& policy, const ChainTape& tape, const Matrix& action_grad) {
  const auto& s = policy.schedule();
  const int A = policy.action_dim();
  // Clipping passes gradient only where the raw sample is inside the box.
  Matrix grad = action_grad.cwiseProduct((tape.raw_final.array().abs() <= 1.0).cast<double>().matrix());
  Gradients total = policy.net().zero_gradients();
  for (int t = 1; t <= s.steps(); ++t) {
    Matrix input_grad;
    const Matrix eps_grad = -noise_coef(s, t) * grad;
    total += policy.net().backward(tape.caches[static_cast<std::size_t>(t - 1)], eps_grad, &input_grad);
    grad = grad / std::sqrt(s.alpha_at(t)) + input_grad.topRows(A);
  }
  return total;
}

PolicyLoss policy_loss(const DiffusionPolicy& policy, const CriticFn& critic, const Matrix& states,
                       const ChainNoise& noise) {
  if (states.cols() == 0) throw std::invalid_argument("policy_loss: empty batch");
  ChainTape tape;
  ReverseSample sample = run_chain(policy, states, noise, &tape);
  const CriticEval q = critic(states, sample.action);
  const double B = static_cast<double>(states.cols());
  PolicyLoss out;
  out.loss = -q.value.sum() / B;
  out.grads = chain_backward(policy, tape, -q.action_grad / B);
  out.actions = std::move(sample.action);
  return out;
}

PolicyLoss policy_loss(const DiffusionPolicy& policy, const CriticFn& critic, const Matrix& states, Rng& rng) {
  return policy_loss(policy, critic, states, draw_chain_noise(policy, states.cols(), rng));
}

EntropyEstimate entropy_bonus(const DiffusionPolicy& policy, const StateVec& state, int samples, Rng& rng) {
  if (samples < 1) throw std::invalid_argument("entropy_bonus: need at least one sample");
  EntropyEstimate out;
  double var = policy.schedule().delta_at(1);
  if (var < kMinEntropyVariance) {
    var = kMinEntropyVariance;
    out.floored = true;
  }
  const Matrix states = state.replicate(1, samples);
  const ReverseSample chain = reverse_sample(policy, states, rng);
  // trace[T-1] is omega_1, the input of the final step.
  const Matrix& omega1 = chain.trace[static_cast<std::size_t>(policy.schedule().steps() - 1)];
  const Matrix mu = posterior_mean(policy, omega1, states, 1);
  const Matrix x = mu + std::sqrt(var) * standard_normal(mu.rows(), mu.cols(), rng);
  const double d = static_cast<double>(policy.action_dim());
  double total = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double sq = (x.col(j) - mu.col(j)).squaredNorm();
    total += 0.5 * d * std::log(2.0 * std::numbers::pi * var) + sq / (2.0 * var);
  }
  out.value = total / static_cast<double>(samples);
  return out;
}

} // namespace sdsac
