// sdsac: train, evaluate and compare contract-design agents.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"
#include "sdsac/baselines.hpp"
#include "sdsac/config.hpp"

namespace fs = std::filesystem;
using namespace sdsac;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr const char* kOutEnv = "SDSAC_OUT_DIR";

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::string seeds;
};

// Precedence: defaults < config file < --set < SDSAC_OUT_DIR < --out / --seeds.
RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg = args.config_path.empty() ? RunConfig{} : load_config(args.config_path);
  for (const auto& o : args.overrides) apply_override(cfg, o);
  if (const char* env = std::getenv(kOutEnv); env && *env) cfg.out = env;
  if (!args.out.empty()) cfg.out = args.out;
  if (!args.seeds.empty()) apply_setting(cfg, "run.seeds", args.seeds);
  cfg.validate();
  return cfg;
}

fs::path cell_dir(const fs::path& out, const std::string& scheme, std::uint64_t seed) {
  return out / scheme / ("seed_" + std::to_string(seed));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("error writing " + path.string());
}

RunSummary summary_from(const std::string& scheme, std::uint64_t seed, const EvalMetrics& m, bool timed,
                        double wall_ms) {
  RunSummary s;
  s.scheme = scheme;
  s.seed = seed;
  s.eval_reward = m.reward;
  s.server_utility = m.server_utility;
  s.device_utility = m.device_utility;
  s.violation = m.violation;
  s.wall_ms = timed ? wall_ms : 0.0;
  return s;
}

// Non-learning schemes log a single evaluation row at the final step.
TrainLog static_log(const std::string& scheme, std::uint64_t seed, long step, const EvalMetrics& m) {
  TrainLog log{scheme, seed, {}, {}};
  LogRow row;
  row.step = step;
  row.eval_reward = m.reward;
  row.server_utility = m.server_utility;
  row.device_utility = m.device_utility;
  log.rows.push_back(row);
  return log;
}

RunSummary run_cell(const RunConfig& cfg, const std::string& scheme, std::uint64_t seed, const fs::path& dir,
                    TrainLog& log_out) {
  fs::create_directories(dir);
  const TrainerConfig tc = cfg.trainer_for(scheme, seed);
  TrainHooks hooks;
  if (tc.checkpoint_interval > 0) hooks.checkpoint_dir = dir;

  if (scheme == "diffusion" || scheme == "diffusion_pruned") {
    TrainResult r = train(tc, cfg.env, cfg.reward, cfg.bounds, hooks);
    save_checkpoint(dir / "policy.ckpt", make_checkpoint(r, tc));
    write_csv(r.log, dir / "log.csv");
    if (tc.prune.enabled) write_prune_events(r.log, dir / "prune_events.csv");
    RunSummary s = summary_from(scheme, seed, r.final_eval, tc.record_wall_time, r.wall_ms);
    s.effective_params = param_count(r.compact.net(), true);
    s.total_params = param_count(r.policy.net(), false);
    s.ledger = r.ledger;
    if (r.schedule_completed) s.ledger_after_schedule = r.ledger - r.ledger_at_schedule_end;
    log_out = std::move(r.log);
    return s;
  }
  if (scheme == "gaussian_sac") {
    GaussianTrainResult r = train_gaussian_sac(tc, cfg.env, cfg.reward, cfg.bounds, hooks);
    Checkpoint ckpt;
    ckpt.metadata["scheme"] = scheme;
    ckpt.metadata["seed"] = std::to_string(seed);
    ckpt.metadata["action_dim"] = std::to_string(r.policy.action_dim());
    ckpt.nets.emplace("policy", r.policy.net());
    ckpt.nets.emplace("critic_q1", r.critics.q1);
    ckpt.nets.emplace("critic_q2", r.critics.q2);
    save_checkpoint(dir / "policy.ckpt", ckpt);
    write_csv(r.log, dir / "log.csv");
    RunSummary s = summary_from(scheme, seed, r.final_eval, tc.record_wall_time, r.wall_ms);
    s.effective_params = s.total_params = param_count(r.policy.net(), true);
    s.ledger = r.ledger;
    log_out = std::move(r.log);
    return s;
  }
  const ContractScheme cs = scheme == "random" ? random_scheme(cfg.env, cfg.bounds) : complete_info_scheme();
  const EvalMetrics m = evaluate(cs, cfg.env, cfg.bounds, cfg.reward, tc.eval_envs, tc.eval_seed());
  log_out = static_log(scheme, seed, tc.steps, m);
  write_csv(log_out, dir / "log.csv");
  return summary_from(scheme, seed, m, false, 0.0);
}

int cmd_train(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  const fs::path out = cfg.out;
  fs::create_directories(out);
  write_text(out / "config.resolved", to_text(cfg));

  std::vector<RunSummary> summaries;
  std::vector<TrainLog> logs;
  for (const auto& scheme : cfg.schemes) {
    for (const auto seed : cfg.seeds) {
      TrainLog log;
      RunSummary s = run_cell(cfg, scheme, seed, cell_dir(out, scheme, seed), log);
      std::printf("%-16s seed %-4llu eval_reward %.6f  server_utility %.3f  violation %.3f  params %llu  flops %llu\n",
                  scheme.c_str(), static_cast<unsigned long long>(seed), s.eval_reward, s.server_utility,
                  s.violation, static_cast<unsigned long long>(s.effective_params),
                  static_cast<unsigned long long>(s.ledger.total()));
      std::fflush(stdout);
      summaries.push_back(std::move(s));
      logs.push_back(std::move(log));
    }
  }
  std::vector<const TrainLog*> all;
  for (const auto& l : logs) all.push_back(&l);
  write_csv(all, out / "log.csv");
  write_summary_json(summaries, out / "summary.json");
  std::printf("wrote %s\n", out.string().c_str());
  return kExitOk;
}

RunConfig load_run_config(const fs::path& dir) { return load_config(dir / "config.resolved"); }

int cmd_evaluate(const std::string& run_dir, int envs, const std::string& eval_seed) {
  const fs::path dir = run_dir;
  const RunConfig cfg = load_run_config(dir);
  cfg.validate();
  const int n = envs > 0 ? envs : cfg.trainer.eval_envs;

  std::ostringstream csv;
  csv << "scheme,seed,n,reward,reward_std,server_utility,device_utility,violation\n";
  std::printf("%-16s %-6s %12s %12s %14s %14s %12s\n", "scheme", "seed", "reward", "reward_std", "server_util",
              "device_util", "violation");
  for (const auto& scheme : cfg.schemes) {
    for (const auto seed : cfg.seeds) {
      const TrainerConfig tc = cfg.trainer_for(scheme, seed);
      const std::uint64_t es = eval_seed.empty() ? tc.eval_seed() : std::stoull(eval_seed);
      EvalMetrics m;
      if (scheme == "random" || scheme == "complete_info") {
        const ContractScheme cs = scheme == "random" ? random_scheme(cfg.env, cfg.bounds) : complete_info_scheme();
        m = evaluate(cs, cfg.env, cfg.bounds, cfg.reward, n, es);
      } else {
        const Checkpoint ckpt = load_checkpoint(cell_dir(dir, scheme, seed) / "policy.ckpt");
        const int A = static_cast<int>(cfg.env.action_dim());
        if (scheme == "gaussian_sac") {
          const GaussianPolicy policy(ckpt.nets.at("policy"), A);
          m = evaluate(gaussian_scheme(policy, cfg.env, cfg.bounds), cfg.env, cfg.bounds, cfg.reward, n, es);
        } else {
          const auto& d = tc.diffusion;
          const DiffusionPolicy policy(ckpt.nets.at("policy_compact"),
                                       build_schedule(d.steps, d.delta_lo, d.delta_hi, d.kind), A,
                                       static_cast<int>(cfg.env.state_dim()));
          m = evaluate(diffusion_scheme(policy, cfg.env, cfg.bounds), cfg.env, cfg.bounds, cfg.reward, n, es);
        }
      }
      std::printf("%-16s %-6llu %12.6f %12.6f %14.3f %14.3f %12.3f\n", scheme.c_str(),
                  static_cast<unsigned long long>(seed), m.reward, m.reward_std, m.server_utility, m.device_utility,
                  m.violation);
      char line[512];
      std::snprintf(line, sizeof line, "%s,%llu,%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", scheme.c_str(),
                    static_cast<unsigned long long>(seed), m.n, m.reward, m.reward_std, m.server_utility,
                    m.device_utility, m.violation);
      csv << line;
    }
  }
  write_text(dir / "evaluation.csv", csv.str());
  return kExitOk;
}

int cmd_oracle(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  const fs::path out = cfg.out;
  fs::create_directories(out);
  std::ostringstream csv;
  csv << "env,status,analytic_utility,grid_utility,relative_gap\n";
  const std::uint64_t seed = cfg.seeds.front();
  int agree = 0;
  int infeasible = 0;
  double worst = 0.0;
  for (int i = 0; i < cfg.oracle.envs; ++i) {
    Rng rng = make_rng(seed, 1000 + static_cast<std::uint64_t>(i));
    const EnvSample env = sample_env(cfg.env, rng);
    const Contract analytic = solve_complete_info(env.profile, env.params);
    const double ua = server_utility(analytic, env.profile, env.params);
    std::vector<ItemGrid> grids;
    for (const auto& item : analytic) grids.push_back(local_grid(item, cfg.oracle.grid, cfg.oracle.span));
    const auto sol = brute_force_search(env.profile, env.params, grids, ConstraintSet::IrOnly);
    char line[256];
    if (!sol) {
      ++infeasible;
      std::snprintf(line, sizeof line, "%d,infeasible,%.9g,,\n", i, ua);
      std::printf("env %3d  analytic %.6f  grid infeasible\n", i, ua);
    } else {
      const double gap = std::abs(ua - sol->utility) / std::max(std::abs(ua), 1e-12);
      worst = std::max(worst, gap);
      if (gap <= 0.01) ++agree;
      std::snprintf(line, sizeof line, "%d,ok,%.9g,%.9g,%.9g\n", i, ua, sol->utility, gap);
      std::printf("env %3d  analytic %.6f  grid %.6f  gap %.3e\n", i, ua, sol->utility, gap);
    }
    csv << line;
  }
  write_text(out / "oracle.csv", csv.str());
  std::printf("oracle: %d envs, %d within 1%%, %d infeasible, max gap %.3e\n", cfg.oracle.envs, agree, infeasible,
              worst);
  return kExitOk;
}

struct SchemeStats {
  nlohmann::json entry;
  double mean(const char* field) const { return entry.at(field).at("mean").get<double>(); }
  double std(const char* field) const { return entry.at(field).at("std").get<double>(); }
};

std::map<std::string, SchemeStats> read_summary(const fs::path& dir) {
  std::ifstream is(dir / "summary.json");
  if (!is) throw std::runtime_error("cannot open " + (dir / "summary.json").string());
  const nlohmann::json root = nlohmann::json::parse(is);
  const int version = root.at("schema_version").get<int>();
  if (version != kSchemaVersion) {
    throw std::runtime_error((dir / "summary.json").string() + ": schema_version " + std::to_string(version) +
                             ", expected " + std::to_string(kSchemaVersion));
  }
  std::map<std::string, SchemeStats> out;
  for (const auto& [name, entry] : root.at("schemes").items()) out[name] = SchemeStats{entry};
  return out;
}

int cmd_compare(const std::vector<std::string>& dirs, double joules_per_flop, double grams_per_kwh) {
  if (dirs.size() < 2) throw ConfigError("compare: at least two run directories required");
  std::vector<std::map<std::string, SchemeStats>> runs;
  for (const auto& d : dirs) runs.push_back(read_summary(d));

  const EnergyProxy proxy{joules_per_flop, grams_per_kwh};
  std::printf("%-24s %-16s %24s %16s %16s %12s %16s %12s %12s\n", "run", "scheme", "eval_reward", "server_util",
              "device_util", "params", "flops", "kWh", "gCO2");
  std::map<std::string, const SchemeStats*> first_seen;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (const auto& [name, st] : runs[i]) {
      FlopLedger ledger;
      ledger.forward[0] = static_cast<std::uint64_t>(st.mean("flops"));
      const EnergyReport e = energy_report(ledger, proxy);
      std::printf("%-24s %-16s %12.6f ± %-9.6f %16.3f %16.3f %12.0f %16.4g %12.4g %12.4g\n", dirs[i].c_str(),
                  name.c_str(), st.mean("eval_reward"), st.std("eval_reward"), st.mean("server_utility"),
                  st.mean("device_utility"), st.mean("effective_params"), st.mean("flops"), e.kwh, e.grams_co2);
      first_seen.emplace(name, &st);
    }
  }

  std::printf("\ndeltas against the first run containing each scheme\n");
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (const auto& [name, st] : runs[i]) {
      const SchemeStats* ref = first_seen.at(name);
      std::printf("%-24s %-16s d_reward %+.6f  d_flops %+.4g\n", dirs[i].c_str(), name.c_str(),
                  st.mean("eval_reward") - ref->mean("eval_reward"), st.mean("flops") - ref->mean("flops"));
    }
  }

  auto get = [&](const std::string& name) { return first_seen.count(name) ? first_seen.at(name) : nullptr; };
  const auto* pruned = get("diffusion_pruned");
  const auto* unpruned = get("diffusion");
  const auto* random = get("random");
  const auto* complete = get("complete_info");
  std::printf("\nordering checks\n");
  auto check = [](const char* what, bool ok) { std::printf("  %-48s %s\n", what, ok ? "yes" : "no"); };
  if (pruned && random) {
    check("pruned reward >= 2x random", pruned->mean("eval_reward") >= uplift_floor(random->mean("eval_reward")));
  }
  if (pruned && complete) {
    check("pruned reward <= complete information", pruned->mean("eval_reward") <= complete->mean("eval_reward"));
  }
  if (pruned && unpruned) {
    check("pruned reward >= 90% of unpruned",
          pruned->mean("eval_reward") >= retention_floor(unpruned->mean("eval_reward"), 0.9));
    check("pruned flops < unpruned flops", pruned->mean("flops") < unpruned->mean("flops"));
  }
  return kExitOk;
}

int cmd_prune_report(const std::string& run_dir) {
  const fs::path dir = run_dir;
  const RunConfig cfg = load_run_config(dir);
  const auto stats = read_summary(dir);
  bool any = false;
  for (const auto seed : cfg.seeds) {
    const fs::path events_path = cell_dir(dir, "diffusion_pruned", seed) / "prune_events.csv";
    if (!fs::exists(events_path)) continue;
    any = true;
    std::printf("diffusion_pruned seed %llu\n", static_cast<unsigned long long>(seed));
    std::printf("  %8s %8s %10s %12s %12s %14s\n", "step", "removed", "per_layer", "realized", "scheduled",
                "threshold");
    const auto events = read_prune_events(events_path);
    for (std::size_t i = 0; i < events.size();) {
      std::size_t j = i;
      int removed = 0;
      std::string per_layer;
      while (j < events.size() && events[j].step == events[i].step) {
        removed += events[j].removed;
        per_layer += (per_layer.empty() ? "" : "/") + std::to_string(events[j].removed);
        ++j;
      }
      std::printf("  %8ld %8d %10s %12.6f %12.6f %14.6g\n", events[i].step, removed, per_layer.c_str(),
                  events[i].realized_sparsity, events[i].scheduled_sparsity, events[i].threshold);
      i = j;
    }
  }
  if (const auto it = stats.find("diffusion_pruned"); it != stats.end()) {
    const double eff = it->second.mean("effective_params");
    const double total = it->second.mean("total_params");
    std::printf("effective actor parameters %.0f of %.0f (reduction %.2f%%)\n", eff, total,
                total > 0 ? 100.0 * (1.0 - eff / total) : 0.0);
  }
  if (!any) std::printf("no prune events under %s\n", dir.string().c_str());
  return kExitOk;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Config file (key = value lines)");
  cmd->add_option("--set", args.overrides, "Override a config key, key=value (repeatable)")->take_all();
  cmd->add_option("--out", args.out, std::string("Output directory (overrides ") + kOutEnv + ")");
  cmd->add_option("--seeds", args.seeds, "Comma-separated seed list");
}

void tune_allocator() {
#if defined(__GLIBC__)
  // Batched forward passes allocate and release large blocks every step;
  // keeping them on the heap avoids an mmap/munmap pair per matrix.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

} // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Diffusion soft actor-critic contract design with structured pruning"};
  app.require_subcommand(1);

  CommonArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train every configured scheme and seed");
  add_common(train_cmd, train_args);

  std::string eval_dir;
  int eval_envs = 0;
  std::string eval_seed;
  auto* eval_cmd = app.add_subcommand("evaluate", "Re-evaluate the checkpoints of a run directory");
  eval_cmd->add_option("run_dir", eval_dir, "Run directory")->required();
  eval_cmd->add_option("--envs", eval_envs, "Number of evaluation environments (default: trainer.eval_envs)");
  eval_cmd->add_option("--eval-seed", eval_seed, "Evaluation seed (default: derived from the run seed)");

  CommonArgs oracle_args;
  auto* oracle_cmd = app.add_subcommand("oracle", "Compare the analytic complete-information contract to a grid search");
  add_common(oracle_cmd, oracle_args);

  std::vector<std::string> compare_dirs;
  double joules = EnergyProxy{}.joules_per_flop;
  double grams = EnergyProxy{}.grams_co2_per_kwh;
  auto* compare_cmd = app.add_subcommand("compare", "Tabulate several run directories");
  compare_cmd->add_option("run_dirs", compare_dirs, "Run directories")->required();
  compare_cmd->add_option("--joules-per-flop", joules, "Energy proxy factor");
  compare_cmd->add_option("--grams-co2-per-kwh", grams, "Carbon proxy factor");

  std::string report_dir;
  auto* report_cmd = app.add_subcommand("prune-report", "Summarize the prune events of a run directory");
  report_cmd->add_option("run_dir", report_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*eval_cmd) return cmd_evaluate(eval_dir, eval_envs, eval_seed);
    if (*oracle_cmd) return cmd_oracle(oracle_args);
    if (*compare_cmd) return cmd_compare(compare_dirs, joules, grams);
    if (*report_cmd) return cmd_prune_report(report_dir);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
