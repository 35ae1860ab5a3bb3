#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace sdsac {

/// Thrown when two index-aligned containers disagree in length.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Economic constants of one data-sharing market.
struct MarketParams {
  int devices = 10;           // M
  double rho = 0.6;           // incentive weight
  double unit_cost = 30.0;    // c
  double fixed_cost = 0.01;   // c0
  double unit_revenue = 10.0; // vartheta
  double beta = 0.5;          // fairness exponent, in [0, 1)

  void validate() const;
};

struct DeviceType {
  double psi = 1.0;  // sensing/communication level
  double prob = 1.0; // share of devices of this type
};

/// Device types sorted by ascending psi with probabilities summing to one.
class TypeProfile {
 public:
  TypeProfile() = default;
  explicit TypeProfile(std::vector<DeviceType> types);

  std::size_t size() const { return types_.size(); }
  const DeviceType& operator[](std::size_t k) const { return types_[k]; }
  std::span<const DeviceType> types() const { return types_; }

 private:
  std::vector<DeviceType> types_;
};

struct ContractItem {
  double data_volume = 0.0; // s_hat
  double reward = 0.0;      // r
};

/// One item per device type, index-aligned with a TypeProfile.
using Contract = std::vector<ContractItem>;

/// Slacks of the participation (IR) and truth-telling (IC) constraints.
///
/// A slack is treated as satisfied when it is above -kSlackTolerance scaled by
/// the magnitude of the terms that produced it, so binding constraints that
/// are zero up to rounding count as feasible. `violation` sums the magnitudes
/// of the slacks that fail that test; it is zero exactly when every constraint
/// holds.
struct FeasibilityReport {
  std::vector<double> ir_slack;
  std::vector<std::vector<double>> ic_slack; // [k][n], diagonal is 0 and unused
  bool monotone = true;                      // s_hat and r nondecreasing in k
  double ir_violation = 0.0;
  double ic_violation = 0.0;
  double violation = 0.0; // ir_violation + ic_violation

  bool feasible() const { return violation == 0.0; }
};

inline constexpr double kSlackTolerance = 1e-9;

/// beta-fairness satisfaction s^(1-beta)/(1-beta). Throws std::domain_error
/// for beta outside [0, 1) or negative s.
double fairness(double data_volume, double beta);

/// Utility of a device of level psi accepting `item`: rho*psi*r - c*s - c0.
double device_utility(const ContractItem& item, double psi, const MarketParams& params);

/// Expected server utility M * sum_k q_k (vartheta*g(s_k) - r_k).
double server_utility(const Contract& contract, const TypeProfile& profile,
                      const MarketParams& params);

FeasibilityReport check_feasibility(const Contract& contract, const TypeProfile& profile,
                                    const MarketParams& params);

/// Optimal contract when the server observes each device's type, i.e. with the
/// IC constraints dropped. Each type's IR constraint binds:
///   s_k = (vartheta*rho*psi_k/c)^(1/beta),  r_k = (c*s_k + c0)/(rho*psi_k).
/// Requires beta in (0, 1); beta = 0 makes the problem unbounded.
Contract solve_complete_info(const TypeProfile& profile, const MarketParams& params);

enum class ConstraintSet { IrOnly, IrAndIc };

/// Candidate values for one type's contract item.
struct ItemGrid {
  std::vector<double> data_volume;
  std::vector<double> reward;
};

/// `points` evenly spaced values per axis on [(1 - span) x, (1 + span) x]
/// around `center`; a single point is the center itself.
ItemGrid local_grid(const ContractItem& center, int points, double span);

struct GridSolution {
  Contract contract;
  double utility = 0.0;
};

/// Exhaustive search over the product of per-type grids for the feasible
/// contract with the largest server utility. Ties keep the lexicographically
/// smallest grid indices (type 0 data index, type 0 reward index, type 1 ...).
/// Returns nullopt when no grid contract is feasible.
///
/// With ConstraintSet::IrOnly the problem separates by type and each type is
/// searched independently.
std::optional<GridSolution> brute_force_search(const TypeProfile& profile,
                                               const MarketParams& params,
                                               std::span<const ItemGrid> grids,
                                               ConstraintSet constraints = ConstraintSet::IrAndIc);

/// Same grid for every type.
std::optional<GridSolution> brute_force_search(const TypeProfile& profile,
                                               const MarketParams& params,
                                               std::span<const double> s_grid,
                                               std::span<const double> r_grid,
                                               ConstraintSet constraints = ConstraintSet::IrAndIc);

} // namespace sdsac
