#include "sdsac/baselines.hpp"

#include <cmath>
#include <numbers>

#include "training_loop.hpp"

namespace sdsac {

ActionVec random_policy(int action_dim, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ActionVec a(action_dim);
  for (int i = 0; i < action_dim; ++i) a[i] = u(rng);
  return a;
}

ContractScheme random_scheme(const EnvRanges& ranges, const ActionBounds& bounds) {
  const int A = static_cast<int>(ranges.action_dim());
  ContractScheme s;
  s.propose = [A, bounds](const EnvSample&, const StateVec&, Rng& rng) {
    return decode_action(random_policy(A, rng), bounds);
  };
  return s;
}

Contract complete_info_policy(const EnvSample& env) { return solve_complete_info(env.profile, env.params); }

ContractScheme complete_info_scheme() {
  ContractScheme s;
  s.propose = [](const EnvSample& env, const StateVec&, Rng&) { return complete_info_policy(env); };
  s.penalized = ConstraintSet::IrOnly;
  return s;
}

// ---------------------------------------------------------------------------
// Squashed Gaussian actor

namespace {

constexpr double kSquashEps = 1e-6;

struct GaussianParts {
  Matrix mean;
  Matrix log_std;
  Matrix clamped; // 1 where the raw log-std was inside the clamp range
};

GaussianParts split_output(const Matrix& out, int A) {
  GaussianParts p;
  p.mean = out.topRows(A);
  const Matrix raw = out.bottomRows(A);
  p.log_std = raw.cwiseMax(GaussianPolicy::kLogStdMin).cwiseMin(GaussianPolicy::kLogStdMax);
  p.clamped = ((raw.array() >= GaussianPolicy::kLogStdMin) && (raw.array() <= GaussianPolicy::kLogStdMax))
                  .cast<double>()
                  .matrix();
  return p;
}

} // namespace

GaussianPolicy::GaussianPolicy(Mlp net, int action_dim) : net_(std::move(net)), action_dim_(action_dim) {
  if (net_.out_dim() != 2 * action_dim) throw std::invalid_argument("GaussianPolicy: output must be 2 * action_dim");
}

GaussianPolicy GaussianPolicy::make(int state_dim, int action_dim, std::span<const int> hidden, Rng& rng) {
  std::vector<int> sizes{state_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(2 * action_dim);
  return GaussianPolicy(Mlp::make(sizes, Activation::Relu, Activation::Identity, rng), action_dim);
}

GaussianPolicy::Sample GaussianPolicy::sample(const Matrix& states, const Matrix& xi) const {
  const GaussianParts p = split_output(net_.forward(states), action_dim_);
  const Matrix u = p.mean + p.log_std.array().exp().matrix().cwiseProduct(xi);
  Sample s;
  s.actions = u.array().tanh().matrix();
  s.log_prob.resize(states.cols());
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (Eigen::Index j = 0; j < states.cols(); ++j) {
    double lp = 0.0;
    for (int i = 0; i < action_dim_; ++i) {
      const double a = s.actions(i, j);
      lp += -0.5 * xi(i, j) * xi(i, j) - p.log_std(i, j) - half_log_2pi - std::log(1.0 - a * a + kSquashEps);
    }
    s.log_prob[j] = lp;
  }
  return s;
}

GaussianPolicy::Sample GaussianPolicy::sample(const Matrix& states, Rng& rng) const {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix xi(action_dim_, states.cols());
  for (Eigen::Index j = 0; j < xi.cols(); ++j)
    for (Eigen::Index i = 0; i < xi.rows(); ++i) xi(i, j) = n(rng);
  return sample(states, xi);
}

Matrix GaussianPolicy::mean_action(const Matrix& states) const {
  return net_.forward(states).topRows(action_dim_).array().tanh().matrix();
}

GaussianPolicy::Loss GaussianPolicy::loss(const CriticFn& critic, const Matrix& states, const Matrix& xi,
                                          double varsigma) const {
  const Eigen::Index B = states.cols();
  if (B == 0) throw std::invalid_argument("GaussianPolicy::loss: empty batch");
  ForwardCache cache;
  const GaussianParts p = split_output(net_.forward(states, &cache), action_dim_);
  const Matrix stdev = p.log_std.array().exp().matrix();
  const Matrix u = p.mean + stdev.cwiseProduct(xi);
  const Matrix a = u.array().tanh().matrix();

  const CriticEval q = critic(states, a);
  const double inv_b = 1.0 / static_cast<double>(B);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);

  Loss out;
  double total = 0.0;
  Matrix d_u(action_dim_, B);
  Matrix d_log_std(action_dim_, B);
  for (Eigen::Index j = 0; j < B; ++j) {
    double lp = 0.0;
    for (int i = 0; i < action_dim_; ++i) {
      const double ai = a(i, j);
      const double one_minus = 1.0 - ai * ai;
      lp += -0.5 * xi(i, j) * xi(i, j) - p.log_std(i, j) - half_log_2pi - std::log(one_minus + kSquashEps);
      const double d_a = -inv_b * q.action_grad(i, j);
      const double d_lp_du = 2.0 * ai * one_minus / (one_minus + kSquashEps);
      d_u(i, j) = d_a * one_minus + varsigma * inv_b * d_lp_du;
      d_log_std(i, j) = (d_u(i, j) * stdev(i, j) * xi(i, j) - varsigma * inv_b) * p.clamped(i, j);
    }
    total += varsigma * lp - q.value[j];
  }
  out.loss = total * inv_b;
  Matrix upstream(2 * action_dim_, B);
  upstream.topRows(action_dim_) = d_u;
  upstream.bottomRows(action_dim_) = d_log_std;
  out.grads = net_.backward(cache, upstream);
  return out;
}

ContractScheme gaussian_scheme(const GaussianPolicy& policy, const EnvRanges& ranges, const ActionBounds& bounds) {
  (void)ranges;
  ContractScheme s;
  s.propose = [&policy, bounds](const EnvSample&, const StateVec& state, Rng&) {
    return decode_action(policy.mean_action(state).col(0), bounds);
  };
  return s;
}

namespace detail {
namespace {

class GaussianAdapter : public ActorAdapter {
 public:
  GaussianAdapter(const TrainerConfig& config, const EnvRanges& ranges, const ActionBounds& bounds)
      : config_(config), ranges_(ranges), bounds_(bounds) {
    Rng init = make_rng(config.seed, kInit);
    policy_ = GaussianPolicy::make(static_cast<int>(ranges.state_dim()), static_cast<int>(ranges.action_dim()),
                                   config.actor_hidden, init);
    adam_ = AdamState::for_net(policy_.net());
  }

  ActionVec explore(const StateVec& state, Rng& rng, FlopLedger& ledger) override {
    ledger.add(Phase::Sampling, flops_mlp(policy_.net(), false), 0);
    return policy_.sample(state, rng).actions.col(0);
  }

  NextAction target_actions(const Matrix& next_states, Rng& rng, FlopLedger& ledger) override {
    ledger.add(Phase::Sampling, flops_mlp(policy_.net(), false) * static_cast<std::uint64_t>(next_states.cols()), 0);
    auto s = policy_.sample(next_states, rng);
    return {std::move(s.actions), std::move(s.log_prob)};
  }

  double update(const CriticEnsemble& critics, const Batch& batch, Rng& rng, FlopLedger& ledger) override {
    const auto B = static_cast<std::uint64_t>(batch.size());
    ledger.add(Phase::Policy, flops_mlp(policy_.net(), false) * B, flops_mlp(policy_.net(), true) * B);
    ledger.add(Phase::Critic, 2 * flops_mlp(critics.q1, false) * B, 2 * flops_mlp(critics.q1, true) * B);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix xi(policy_.action_dim(), batch.size());
    for (Eigen::Index j = 0; j < xi.cols(); ++j)
      for (Eigen::Index i = 0; i < xi.rows(); ++i) xi(i, j) = n(rng);
    const CriticFn critic = [&critics](const Matrix& s, const Matrix& a) {
      return min_critic(critics.q1, critics.q2, s, a);
    };
    const auto l = policy_.loss(critic, batch.states, xi, config_.varsigma);
    adam_step(policy_.net(), l.grads, adam_, config_.lr_actor);
    return l.loss;
  }

  void update_targets(double) override {}

  ContractScheme eval_scheme() const override { return gaussian_scheme(policy_, ranges_, bounds_); }
  std::uint64_t effective_params() const override { return param_count(policy_.net(), true); }
  void snapshot(Checkpoint& ckpt) const override { ckpt.nets.emplace("policy", policy_.net()); }
  double target_varsigma() const override { return config_.varsigma; }

  GaussianPolicy policy_;

 private:
  const TrainerConfig& config_;
  const EnvRanges& ranges_;
  const ActionBounds& bounds_;
  AdamState adam_;
};

} // namespace
} // namespace detail

GaussianTrainResult train_gaussian_sac(const TrainerConfig& config, const EnvRanges& ranges, const RewardSpec& spec,
                                       const ActionBounds& bounds, const TrainHooks& hooks) {
  config.validate();
  ranges.validate();
  spec.validate();
  bounds.validate();
  detail::GaussianAdapter actor(config, ranges, bounds);
  detail::LoopResult loop = detail::run_loop(actor, config, ranges, spec, bounds, "gaussian_sac", hooks);
  GaussianTrainResult out;
  out.policy = actor.policy_;
  out.critics = std::move(loop.critics);
  out.log = std::move(loop.log);
  out.ledger = loop.ledger;
  out.final_eval = loop.final_eval;
  out.wall_ms = loop.wall_ms;
  return out;
}

} // namespace sdsac
