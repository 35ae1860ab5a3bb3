#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sdsac/nn.hpp"

namespace sdsac {

enum class Phase : int { Sampling = 0, Critic = 1, Policy = 2, Pruning = 3 };
inline constexpr int kPhaseCount = 4;
const char* to_string(Phase p);

/// Cumulative floating-point operation counts split by training phase.
/// Convention: a dense layer costs 2*in*out + out forward and twice that
/// backward; only alive neurons are counted.
struct FlopLedger {
  std::array<std::uint64_t, kPhaseCount> forward{};
  std::array<std::uint64_t, kPhaseCount> backward{};

  void add(Phase p, std::uint64_t fwd, std::uint64_t bwd);
  std::uint64_t phase_total(Phase p) const;
  /// Work done by the actor network: rollout sampling plus policy updates.
  std::uint64_t actor_total() const;
  std::uint64_t total() const;
  FlopLedger operator-(const FlopLedger& earlier) const;
};

std::uint64_t flops_dense(std::uint64_t in_dim, std::uint64_t out_dim, bool backward);

/// Per-sample cost of one pass through `net`, counting alive neurons only.
std::uint64_t flops_mlp(const Mlp& net, bool backward);

/// Conversion factors. The defaults are placeholders to be replaced with
/// figures for the target hardware; only ratios between runs are meaningful.
struct EnergyProxy {
  double joules_per_flop = 1e-10;
  double grams_co2_per_kwh = 475.0;
};

struct EnergyReport {
  std::uint64_t flops = 0;
  double kwh = 0.0;
  double grams_co2 = 0.0;
  double flop_ratio = 1.0; // flops / reference flops, 1 when no reference
};

EnergyReport energy_report(const FlopLedger& ledger, const EnergyProxy& proxy,
                           const FlopLedger* reference = nullptr);

struct LogRow {
  long step = 0;
  double train_reward = 0.0;
  double eval_reward = 0.0;
  double server_utility = 0.0;
  double device_utility = 0.0;
  double sparsity = 0.0;
  std::uint64_t effective_params = 0;
  std::uint64_t flops = 0;
  double wall_ms = 0.0;
};

struct PruneEvent {
  long step = 0;
  int layer = 0;
  int removed = 0;
  double realized_sparsity = 0.0;
  double scheduled_sparsity = 0.0;
  double threshold = 0.0;
};

struct TrainLog {
  std::string scheme;
  std::uint64_t seed = 0;
  std::vector<LogRow> rows;
  std::vector<PruneEvent> prune_events;
};

inline constexpr const char* kCsvHeader =
    "scheme,seed,step,train_reward,eval_reward,server_utility,device_utility,sparsity,effective_params,flops,wall_ms";
inline constexpr int kSchemaVersion = 1;

/// Writes one line per row with reals at 9 significant digits. Several logs
/// may be concatenated into one file by passing them together.
void write_csv(const std::vector<const TrainLog*>& logs, const std::filesystem::path& path);
void write_csv(const TrainLog& log, const std::filesystem::path& path);
/// Reads a file produced by write_csv. Rows are grouped by (scheme, seed).
std::vector<TrainLog> read_csv(const std::filesystem::path& path);

void write_prune_events(const TrainLog& log, const std::filesystem::path& path);
std::vector<PruneEvent> read_prune_events(const std::filesystem::path& path);

/// Final metrics of one (scheme, seed) cell.
struct RunSummary {
  std::string scheme;
  std::uint64_t seed = 0;
  double eval_reward = 0.0;
  double server_utility = 0.0;
  double device_utility = 0.0;
  double violation = 0.0;
  std::uint64_t effective_params = 0;
  std::uint64_t total_params = 0;
  FlopLedger ledger;
  FlopLedger ledger_after_schedule; // work done after the pruning schedule completed
  double wall_ms = 0.0;
};

struct Stat {
  double mean = 0.0;
  double std = 0.0; // sample standard deviation, 0 for a single value
};
Stat summarize(const std::vector<double>& values);

/// Smallest value counted as at least double `baseline`: baseline + |baseline|.
/// Equals 2 * baseline for positive baselines and stays meaningful for negative ones.
double uplift_floor(double baseline);
/// Smallest value within `fraction` of `reference`: reference - (1 - fraction) * |reference|.
double retention_floor(double reference, double fraction);

/// Aggregates mean and std across seeds per scheme.
void write_summary_json(const std::vector<RunSummary>& runs, const std::filesystem::path& path);

} // namespace sdsac
