#include "sdsac/contract.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace sdsac {

namespace {

bool satisfied(double slack, double scale) {
  return slack >= -kSlackTolerance * std::max(1.0, scale);
}

void require_aligned(const Contract& contract, const TypeProfile& profile) {
  if (contract.size() != profile.size()) {
    throw ShapeError("contract has " + std::to_string(contract.size()) + " items but profile has " +
                     std::to_string(profile.size()) + " types");
  }
}

struct Candidate {
  ContractItem item;
  double value; // M * q_k * (vartheta*g(s) - r)
};

// IR-feasible items of one type in lexicographic grid order.
std::vector<Candidate> feasible_items(const ItemGrid& grid, const DeviceType& type,
                                      const MarketParams& params) {
  std::vector<Candidate> out;
  for (double s : grid.data_volume) {
    for (double r : grid.reward) {
      const ContractItem item{s, r};
      const double gain = params.rho * type.psi * r;
      const double cost = params.unit_cost * s;
      const double slack = gain - cost - params.fixed_cost;
      if (!satisfied(slack, std::max({gain, cost, params.fixed_cost}))) continue;
      const double value =
          params.devices * type.prob * (params.unit_revenue * fairness(s, params.beta) - r);
      out.push_back({item, value});
    }
  }
  return out;
}

bool ic_holds(const ContractItem& own, const ContractItem& other, double psi,
              const MarketParams& params) {
  const double own_gain = params.rho * psi * own.reward;
  const double own_cost = params.unit_cost * own.data_volume;
  const double other_gain = params.rho * psi * other.reward;
  const double other_cost = params.unit_cost * other.data_volume;
  const double slack = (own_gain - own_cost) - (other_gain - other_cost);
  return satisfied(slack, std::max({own_gain, own_cost, other_gain, other_cost}));
}

class JointSearch {
 public:
  JointSearch(const TypeProfile& profile, const MarketParams& params,
              std::vector<std::vector<Candidate>> candidates)
      : profile_(profile), params_(params), candidates_(std::move(candidates)),
        chosen_(profile.size()), best_(profile.size()) {
    // Optimistic value of the remaining types, for pruning.
    tail_bound_.assign(profile.size() + 1, 0.0);
    for (std::size_t k = profile.size(); k-- > 0;) {
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& c : candidates_[k]) best = std::max(best, c.value);
      tail_bound_[k] = tail_bound_[k + 1] + best;
    }
  }

  bool run() {
    descend(0, 0.0);
    return found_;
  }
  const Contract& best() const { return best_; }

 private:
  void descend(std::size_t k, double partial) {
    if (k == profile_.size()) {
      if (!found_ || partial > best_value_) {
        found_ = true;
        best_value_ = partial;
        best_ = chosen_;
      }
      return;
    }
    for (const auto& cand : candidates_[k]) {
      if (found_ && partial + cand.value + tail_bound_[k + 1] < best_value_) continue;
      bool ok = true;
      for (std::size_t n = 0; n < k && ok; ++n) {
        ok = ic_holds(cand.item, chosen_[n], profile_[k].psi, params_) &&
             ic_holds(chosen_[n], cand.item, profile_[n].psi, params_);
      }
      if (!ok) continue;
      chosen_[k] = cand.item;
      descend(k + 1, partial + cand.value);
    }
  }

  const TypeProfile& profile_;
  const MarketParams& params_;
  std::vector<std::vector<Candidate>> candidates_;
  std::vector<double> tail_bound_;
  Contract chosen_;
  Contract best_;
  double best_value_ = 0.0;
  bool found_ = false;
};

} // namespace

void MarketParams::validate() const {
  if (devices < 1) throw std::invalid_argument("MarketParams: devices must be >= 1");
  if (!(rho > 0.0)) throw std::invalid_argument("MarketParams: rho must be > 0");
  if (!(unit_cost > 0.0)) throw std::invalid_argument("MarketParams: unit_cost must be > 0");
  if (!(fixed_cost >= 0.0)) throw std::invalid_argument("MarketParams: fixed_cost must be >= 0");
  if (!(unit_revenue > 0.0)) throw std::invalid_argument("MarketParams: unit_revenue must be > 0");
  if (!(beta >= 0.0 && beta < 1.0)) throw std::domain_error("MarketParams: beta must lie in [0, 1)");
}

TypeProfile::TypeProfile(std::vector<DeviceType> types) : types_(std::move(types)) {
  if (types_.empty()) throw std::invalid_argument("TypeProfile: at least one type required");
  double total = 0.0;
  for (std::size_t k = 0; k < types_.size(); ++k) {
    if (!(types_[k].psi > 0.0)) throw std::invalid_argument("TypeProfile: psi must be > 0");
    if (!(types_[k].prob >= 0.0)) throw std::invalid_argument("TypeProfile: probabilities must be >= 0");
    if (k > 0 && types_[k].psi < types_[k - 1].psi) {
      throw std::invalid_argument("TypeProfile: psi must be sorted ascending");
    }
    total += types_[k].prob;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("TypeProfile: probabilities must sum to 1");
}

double fairness(double data_volume, double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw std::domain_error("fairness: beta must lie in [0, 1)");
  if (!(data_volume >= 0.0)) throw std::domain_error("fairness: data volume must be >= 0");
  if (data_volume == 0.0) return 0.0;
  const double e = 1.0 - beta;
  return std::pow(data_volume, e) / e;
}

double device_utility(const ContractItem& item, double psi, const MarketParams& params) {
  return params.rho * psi * item.reward - params.unit_cost * item.data_volume - params.fixed_cost;
}

double server_utility(const Contract& contract, const TypeProfile& profile,
                      const MarketParams& params) {
  require_aligned(contract, profile);
  double sum = 0.0;
  for (std::size_t k = 0; k < contract.size(); ++k) {
    sum += profile[k].prob *
           (params.unit_revenue * fairness(contract[k].data_volume, params.beta) - contract[k].reward);
  }
  return params.devices * sum;
}

FeasibilityReport check_feasibility(const Contract& contract, const TypeProfile& profile,
                                    const MarketParams& params) {
  require_aligned(contract, profile);
  const std::size_t K = contract.size();
  FeasibilityReport rep;
  rep.ir_slack.resize(K);
  rep.ic_slack.assign(K, std::vector<double>(K, 0.0));

  for (std::size_t k = 0; k < K; ++k) {
    const double gain = params.rho * profile[k].psi * contract[k].reward;
    const double cost = params.unit_cost * contract[k].data_volume;
    const double slack = gain - cost - params.fixed_cost;
    rep.ir_slack[k] = slack;
    if (!satisfied(slack, std::max({std::abs(gain), std::abs(cost), params.fixed_cost}))) {
      rep.ir_violation += -slack;
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    const double psi = profile[k].psi;
    for (std::size_t n = 0; n < K; ++n) {
      if (n == k) continue;
      const double own_gain = params.rho * psi * contract[k].reward;
      const double own_cost = params.unit_cost * contract[k].data_volume;
      const double other_gain = params.rho * psi * contract[n].reward;
      const double other_cost = params.unit_cost * contract[n].data_volume;
      const double slack = (own_gain - own_cost) - (other_gain - other_cost);
      rep.ic_slack[k][n] = slack;
      const double scale = std::max({std::abs(own_gain), std::abs(own_cost), std::abs(other_gain),
                                     std::abs(other_cost)});
      if (!satisfied(slack, scale)) rep.ic_violation += -slack;
    }
  }
  for (std::size_t k = 1; k < K; ++k) {
    if (contract[k].data_volume < contract[k - 1].data_volume ||
        contract[k].reward < contract[k - 1].reward) {
      rep.monotone = false;
    }
  }
  rep.violation = rep.ir_violation + rep.ic_violation;
  return rep;
}

Contract solve_complete_info(const TypeProfile& profile, const MarketParams& params) {
  params.validate();
  if (params.beta == 0.0) {
    throw std::domain_error("solve_complete_info: beta = 0 makes the complete-information problem unbounded");
  }
  Contract out(profile.size());
  for (std::size_t k = 0; k < profile.size(); ++k) {
    const double marginal = params.unit_revenue * params.rho * profile[k].psi / params.unit_cost;
    const double s = std::pow(marginal, 1.0 / params.beta);
    const double r = (params.unit_cost * s + params.fixed_cost) / (params.rho * profile[k].psi);
    out[k] = {s, r};
  }
  return out;
}

ItemGrid local_grid(const ContractItem& center, int points, double span) {
  if (points < 1) throw std::invalid_argument("local_grid: points must be >= 1");
  if (!(span >= 0.0 && span < 1.0)) throw std::invalid_argument("local_grid: span must lie in [0, 1)");
  ItemGrid g;
  auto axis = [&](double x) {
    std::vector<double> v(static_cast<std::size_t>(points), x);
    if (points == 1) return v;
    for (int i = 0; i < points; ++i) {
      const double f = -span + 2.0 * span * static_cast<double>(i) / static_cast<double>(points - 1);
      v[static_cast<std::size_t>(i)] = x * (1.0 + f);
    }
    return v;
  };
  g.data_volume = axis(center.data_volume);
  g.reward = axis(center.reward);
  return g;
}

std::optional<GridSolution> brute_force_search(const TypeProfile& profile,
                                               const MarketParams& params,
                                               std::span<const ItemGrid> grids,
                                               ConstraintSet constraints) {
  if (grids.size() != profile.size()) {
    throw ShapeError("brute_force_search: need one grid per type");
  }
  std::vector<std::vector<Candidate>> candidates;
  candidates.reserve(grids.size());
  for (std::size_t k = 0; k < grids.size(); ++k) {
    const auto& g = grids[k];
    if (g.data_volume.empty() || g.reward.empty()) {
      throw std::invalid_argument("brute_force_search: grids must be nonempty");
    }
    if (!std::is_sorted(g.data_volume.begin(), g.data_volume.end()) ||
        !std::is_sorted(g.reward.begin(), g.reward.end())) {
      throw std::invalid_argument("brute_force_search: grids must be sorted ascending");
    }
    candidates.push_back(feasible_items(g, profile[k], params));
    if (candidates.back().empty()) return std::nullopt;
  }

  GridSolution sol;
  if (constraints == ConstraintSet::IrOnly) {
    sol.contract.resize(profile.size());
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      const Candidate* best = &candidates[k].front();
      for (const auto& c : candidates[k]) {
        if (c.value > best->value) best = &c;
      }
      sol.contract[k] = best->item;
    }
  } else {
    JointSearch search(profile, params, std::move(candidates));
    if (!search.run()) return std::nullopt;
    sol.contract = search.best();
  }
  sol.utility = server_utility(sol.contract, profile, params);
  return sol;
}

std::optional<GridSolution> brute_force_search(const TypeProfile& profile,
                                               const MarketParams& params,
                                               std::span<const double> s_grid,
                                               std::span<const double> r_grid,
                                               ConstraintSet constraints) {
  const ItemGrid grid{{s_grid.begin(), s_grid.end()}, {r_grid.begin(), r_grid.end()}};
  const std::vector<ItemGrid> grids(profile.size(), grid);
  return brute_force_search(profile, params, grids, constraints);
}

} // namespace sdsac
