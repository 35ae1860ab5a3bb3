#include "sdsac/env.hpp"

#include <algorithm>
#include <stdexcept>

namespace sdsac {

namespace {

double uniform(const Interval& iv, Rng& rng) {
  if (iv.lo == iv.hi) return iv.lo;
  return std::uniform_real_distribution<double>(iv.lo, iv.hi)(rng);
}

double normalize(double value, double lo, double hi, EncodeDiagnostics* diag) {
  if (hi == lo) return 0.0;
  double x = (value - lo) / (hi - lo);
  if (x < 0.0 || x > 1.0) {
    if (diag) ++diag->clipped;
    x = std::clamp(x, 0.0, 1.0);
  }
  return x;
}

void check_interval(const Interval& iv, const char* name) {
  if (!(iv.lo > 0.0) || !(iv.hi >= iv.lo)) {
    throw std::invalid_argument(std::string("EnvRanges: invalid interval for ") + name);
  }
}

} // namespace

void EnvRanges::validate() const {
  if (psi.empty()) throw std::invalid_argument("EnvRanges: at least one type required");
  for (const auto& iv : psi) check_interval(iv, "psi");
  check_interval(unit_cost, "unit_cost");
  check_interval(unit_revenue, "unit_revenue");
  if (!(dirichlet_alpha > 0.0)) throw std::invalid_argument("EnvRanges: dirichlet_alpha must be > 0");
  MarketParams{devices, rho, unit_cost.lo, fixed_cost, unit_revenue.lo, beta}.validate();
}

void ActionBounds::validate() const {
  if (!(s_max > 0.0) || !(r_max > 0.0)) throw std::invalid_argument("ActionBounds: bounds must be > 0");
}

void RewardSpec::validate() const {
  if (!(penalty_weight >= 0.0)) throw std::invalid_argument("RewardSpec: penalty_weight must be >= 0");
  if (!(kappa > 0.0)) throw std::invalid_argument("RewardSpec: kappa must be > 0");
}

EnvSample sample_env(const EnvRanges& ranges, Rng& rng) {
  const std::size_t K = ranges.types();
  std::vector<double> psi(K);
  for (std::size_t k = 0; k < K; ++k) psi[k] = uniform(ranges.psi[k], rng);
  std::sort(psi.begin(), psi.end());

  std::vector<double> q(K);
  std::gamma_distribution<double> gamma(ranges.dirichlet_alpha, 1.0);
  double total = 0.0;
  for (auto& x : q) {
    x = gamma(rng);
    total += x;
  }
  for (auto& x : q) x /= total;

  std::vector<DeviceType> types(K);
  for (std::size_t k = 0; k < K; ++k) types[k] = {psi[k], q[k]};

  MarketParams params;
  params.devices = ranges.devices;
  params.rho = ranges.rho;
  params.fixed_cost = ranges.fixed_cost;
  params.beta = ranges.beta;
  params.unit_cost = uniform(ranges.unit_cost, rng);
  params.unit_revenue = uniform(ranges.unit_revenue, rng);
  return {TypeProfile(std::move(types)), params};
}

StateVec encode_state(const EnvSample& env, const EnvRanges& ranges, EncodeDiagnostics* diag) {
  const std::size_t K = ranges.types();
  if (env.profile.size() != K) throw ShapeError("encode_state: profile size differs from ranges");
  StateVec s(ranges.state_dim());
  s[0] = normalize(env.params.unit_cost, ranges.unit_cost.lo, ranges.unit_cost.hi, diag);
  s[1] = normalize(env.params.fixed_cost, ranges.fixed_cost, ranges.fixed_cost, diag);
  s[2] = normalize(env.params.unit_revenue, ranges.unit_revenue.lo, ranges.unit_revenue.hi, diag);
  for (std::size_t k = 0; k < K; ++k) {
    s[3 + k] = env.profile[k].prob;
    s[3 + K + k] = normalize(env.profile[k].psi, ranges.psi[k].lo, ranges.psi[k].hi, diag);
  }
  return s;
}

Contract decode_action(const ActionVec& action, const ActionBounds& bounds) {
  if (action.size() % 2 != 0) throw ShapeError("decode_action: action length must be even");
  Contract out(static_cast<std::size_t>(action.size() / 2));
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double a_s = action[static_cast<Eigen::Index>(2 * k)];
    const double a_r = action[static_cast<Eigen::Index>(2 * k + 1)];
    out[k].data_volume = std::max(0.0, (a_s + 1.0) / 2.0 * bounds.s_max);
    out[k].reward = std::max(0.0, (a_r + 1.0) / 2.0 * bounds.r_max);
  }
  return out;
}

ActionVec encode_contract(const Contract& contract, const ActionBounds& bounds) {
  ActionVec a(static_cast<Eigen::Index>(2 * contract.size()));
  for (std::size_t k = 0; k < contract.size(); ++k) {
    a[static_cast<Eigen::Index>(2 * k)] = 2.0 * contract[k].data_volume / bounds.s_max - 1.0;
    a[static_cast<Eigen::Index>(2 * k + 1)] = 2.0 * contract[k].reward / bounds.r_max - 1.0;
  }
  return a;
}

RewardBreakdown reward_breakdown(const EnvSample& env, const Contract& contract, const RewardSpec& spec,
                                 ConstraintSet penalized) {
  RewardBreakdown out;
  out.server_utility = server_utility(contract, env.profile, env.params);
  const auto rep = check_feasibility(contract, env.profile, env.params);
  out.violation = penalized == ConstraintSet::IrOnly ? rep.ir_violation : rep.violation;

  out.normalizer = spec.kappa;
  if (spec.normalizer == Normalizer::CompleteInfo) {
    const double u_ci = server_utility(solve_complete_info(env.profile, env.params), env.profile, env.params);
    if (u_ci > 0.0) {
      out.normalizer = u_ci;
    } else {
      out.fell_back = true;
    }
  }
  out.reward = (out.server_utility - spec.penalty_weight * out.violation) / out.normalizer;
  return out;
}

double compute_reward(const EnvSample& env, const Contract& contract, const RewardSpec& spec,
                      ConstraintSet penalized) {
  return reward_breakdown(env, contract, spec, penalized).reward;
}

StepResult step(const EnvSample& env, const ActionVec& action, const EnvRanges& ranges,
                const ActionBounds& bounds, const RewardSpec& spec, const EpisodeMode& mode,
                int step_in_episode, Rng& rng) {
  StepResult out{sample_env(ranges, rng), 0.0, true};
  out.reward = compute_reward(env, decode_action(action, bounds), spec);
  out.done = step_in_episode + 1 >= mode.length;
  return out;
}

} // namespace sdsac
