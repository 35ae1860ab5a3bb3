#include "sdsac/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace sdsac {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  if (trim(s).empty()) return parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty()) {
    throw ConfigError(std::string(key) + ": cannot parse '" + std::string(text) + "'");
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(text) + "'");
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
std::string format_list(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, std::string>) {
      out += values[i];
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

std::string format_interval(const Interval& iv) { return format_double(iv.lo) + ":" + format_double(iv.hi); }

Interval parse_interval(std::string_view key, std::string_view text) {
  const auto parts = split(text, ':');
  if (parts.size() != 2) throw ConfigError(std::string(key) + ": expected lo:hi, got '" + std::string(text) + "'");
  return {parse_number<double>(key, parts[0]), parse_number<double>(key, parts[1])};
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
};

template <typename T>
Field number(std::string key, T RunConfig::*section_member, auto T::*member) {
  using V = std::remove_cvref_t<decltype(std::declval<T>().*member)>;
  return {std::move(key),
          [=](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<V>) {
              return format_double(c.*section_member.*member);
            } else {
              return std::to_string(c.*section_member.*member);
            }
          },
          [=](RunConfig& c, std::string_view k, std::string_view v) { c.*section_member.*member = parse_number<V>(k, v); }};
}

template <typename T>
Field flag(std::string key, T RunConfig::*section_member, bool T::*member) {
  return {std::move(key), [=](const RunConfig& c) { return std::string(c.*section_member.*member ? "true" : "false"); },
          [=](RunConfig& c, std::string_view k, std::string_view v) { c.*section_member.*member = parse_bool(k, v); }};
}

template <typename T>
Field interval(std::string key, T RunConfig::*section_member, Interval T::*member) {
  return {std::move(key), [=](const RunConfig& c) { return format_interval(c.*section_member.*member); },
          [=](RunConfig& c, std::string_view k, std::string_view v) {
            c.*section_member.*member = parse_interval(k, v);
          }};
}

template <typename E>
Field choice(std::string key, std::function<E&(RunConfig&)> ref, std::vector<std::pair<std::string, E>> names) {
  return {std::move(key),
          [=](const RunConfig& c) {
            const E v = ref(const_cast<RunConfig&>(c));
            for (const auto& [name, value] : names) {
              if (value == v) return name;
            }
            return std::string("?");
          },
          [=](RunConfig& c, std::string_view k, std::string_view v) {
            for (const auto& [name, value] : names) {
              if (name == v) {
                ref(c) = value;
                return;
              }
            }
            std::string allowed;
            for (const auto& n : names) allowed += (allowed.empty() ? "" : ", ") + n.first;
            throw ConfigError(std::string(k) + ": unknown value '" + std::string(v) + "' (allowed: " + allowed + ")");
          }};
}

Field hidden_sizes(std::string key, std::vector<int> TrainerConfig::*member) {
  return {std::move(key), [=](const RunConfig& c) { return format_list(c.trainer.*member); },
          [=](RunConfig& c, std::string_view k, std::string_view v) {
            std::vector<int> sizes;
            for (auto p : split(v, ',')) sizes.push_back(parse_number<int>(k, p));
            c.trainer.*member = std::move(sizes);
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"run.schemes", [](const RunConfig& c) { return format_list(c.schemes); },
                 [](RunConfig& c, std::string_view, std::string_view v) {
                   c.schemes.clear();
                   for (auto p : split(v, ',')) c.schemes.emplace_back(p);
                 }});
    f.push_back({"run.seeds", [](const RunConfig& c) { return format_list(c.seeds); },
                 [](RunConfig& c, std::string_view k, std::string_view v) {
                   c.seeds.clear();
                   for (auto p : split(v, ',')) c.seeds.push_back(parse_number<std::uint64_t>(k, p));
                 }});
    f.push_back({"run.out", [](const RunConfig& c) { return c.out; },
                 [](RunConfig& c, std::string_view, std::string_view v) { c.out = std::string(v); }});

    f.push_back({"env.psi",
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.env.psi.size(); ++i) {
                     out += (i ? "," : "") + format_interval(c.env.psi[i]);
                   }
                   return out;
                 },
                 [](RunConfig& c, std::string_view k, std::string_view v) {
                   c.env.psi.clear();
                   for (auto p : split(v, ',')) c.env.psi.push_back(parse_interval(k, p));
                 }});
    f.push_back(interval("env.unit_cost", &RunConfig::env, &EnvRanges::unit_cost));
    f.push_back(interval("env.unit_revenue", &RunConfig::env, &EnvRanges::unit_revenue));
    f.push_back(number("env.rho", &RunConfig::env, &EnvRanges::rho));
    f.push_back(number("env.fixed_cost", &RunConfig::env, &EnvRanges::fixed_cost));
    f.push_back(number("env.beta", &RunConfig::env, &EnvRanges::beta));
    f.push_back(number("env.devices", &RunConfig::env, &EnvRanges::devices));
    f.push_back(number("env.dirichlet_alpha", &RunConfig::env, &EnvRanges::dirichlet_alpha));

    f.push_back(number("reward.penalty_weight", &RunConfig::reward, &RewardSpec::penalty_weight));
    f.push_back(choice<Normalizer>("reward.normalizer", [](RunConfig& c) -> Normalizer& { return c.reward.normalizer; },
                                   {{"complete_info", Normalizer::CompleteInfo}, {"constant", Normalizer::Constant}}));
    f.push_back(number("reward.kappa", &RunConfig::reward, &RewardSpec::kappa));

    f.push_back(number("bounds.s_max", &RunConfig::bounds, &ActionBounds::s_max));
    f.push_back(number("bounds.r_max", &RunConfig::bounds, &ActionBounds::r_max));

    f.push_back(number("trainer.Z", &RunConfig::trainer, &TrainerConfig::steps));
    f.push_back(number("trainer.batch_size", &RunConfig::trainer, &TrainerConfig::batch_size));
    f.push_back(number("trainer.gamma", &RunConfig::trainer, &TrainerConfig::gamma));
    f.push_back(number("trainer.varsigma", &RunConfig::trainer, &TrainerConfig::varsigma));
    f.push_back(number("trainer.tau", &RunConfig::trainer, &TrainerConfig::tau));
    f.push_back(number("trainer.lr_actor", &RunConfig::trainer, &TrainerConfig::lr_actor));
    f.push_back(number("trainer.lr_critic", &RunConfig::trainer, &TrainerConfig::lr_critic));
    f.push_back(number("trainer.warmup", &RunConfig::trainer, &TrainerConfig::warmup));
    f.push_back(number("trainer.eval_interval", &RunConfig::trainer, &TrainerConfig::eval_interval));
    f.push_back(number("trainer.eval_envs", &RunConfig::trainer, &TrainerConfig::eval_envs));
    f.push_back(number("trainer.buffer_capacity", &RunConfig::trainer, &TrainerConfig::buffer_capacity));
    f.push_back(flag("trainer.sample_with_replacement", &RunConfig::trainer, &TrainerConfig::sample_with_replacement));
    f.push_back({"trainer.episode_length",
                 [](const RunConfig& c) { return std::to_string(c.trainer.episode.length); },
                 [](RunConfig& c, std::string_view k, std::string_view v) {
                   c.trainer.episode.length = parse_number<int>(k, v);
                 }});
    f.push_back(hidden_sizes("trainer.actor_hidden", &TrainerConfig::actor_hidden));
    f.push_back(hidden_sizes("trainer.critic_hidden", &TrainerConfig::critic_hidden));
    f.push_back(number("trainer.checkpoint_interval", &RunConfig::trainer, &TrainerConfig::checkpoint_interval));
    f.push_back(flag("trainer.record_wall_time", &RunConfig::trainer, &TrainerConfig::record_wall_time));

    auto diffusion = [](auto member) {
      return [member](RunConfig& c) -> auto& { return c.trainer.diffusion.*member; };
    };
    auto diffusion_number = [&](std::string key, auto member) {
      using V = std::remove_cvref_t<decltype(std::declval<DiffusionConfig>().*member)>;
      auto ref = diffusion(member);
      return Field{std::move(key),
                   [ref](const RunConfig& c) {
                     const V v = ref(const_cast<RunConfig&>(c));
                     if constexpr (std::is_floating_point_v<V>) {
                       return format_double(v);
                     } else {
                       return std::to_string(v);
                     }
                   },
                   [ref](RunConfig& c, std::string_view k, std::string_view v) { ref(c) = parse_number<V>(k, v); }};
    };
    f.push_back(diffusion_number("diffusion.T", &DiffusionConfig::steps));
    f.push_back(diffusion_number("diffusion.delta_lo", &DiffusionConfig::delta_lo));
    f.push_back(diffusion_number("diffusion.delta_hi", &DiffusionConfig::delta_hi));
    f.push_back(choice<ScheduleKind>("diffusion.schedule",
                                     [](RunConfig& c) -> ScheduleKind& { return c.trainer.diffusion.kind; },
                                     {{"constant", ScheduleKind::Constant}, {"linear", ScheduleKind::Linear}}));

    auto prune_number = [](std::string key, auto member) {
      using V = std::remove_cvref_t<decltype(std::declval<PruneConfig>().*member)>;
      return Field{std::move(key),
                   [member](const RunConfig& c) {
                     if constexpr (std::is_floating_point_v<V>) {
                       return format_double(c.trainer.prune.*member);
                     } else {
                       return std::to_string(c.trainer.prune.*member);
                     }
                   },
                   [member](RunConfig& c, std::string_view k, std::string_view v) {
                     c.trainer.prune.*member = parse_number<V>(k, v);
                   }};
    };
    f.push_back(prune_number("prune.target_sparsity", &PruneConfig::target_sparsity));
    f.push_back(prune_number("prune.frequency", &PruneConfig::frequency));
    f.push_back(prune_number("prune.total_prunes", &PruneConfig::total_prunes));
    f.push_back(prune_number("prune.start_step", &PruneConfig::start_step));
    f.push_back(choice<ThresholdMode>("prune.mode", [](RunConfig& c) -> ThresholdMode& { return c.trainer.prune.mode; },
                                      {{"quantile", ThresholdMode::Quantile}, {"literal", ThresholdMode::Literal}}));

    f.push_back(number("energy.joules_per_flop", &RunConfig::energy, &EnergyProxy::joules_per_flop));
    f.push_back(number("energy.grams_co2_per_kwh", &RunConfig::energy, &EnergyProxy::grams_co2_per_kwh));

    f.push_back(number("oracle.envs", &RunConfig::oracle, &OracleConfig::envs));
    f.push_back(number("oracle.grid", &RunConfig::oracle, &OracleConfig::grid));
    f.push_back(number("oracle.span", &RunConfig::oracle, &OracleConfig::span));
    return f;
  }();
  return table;
}

template <typename F>
void rethrow_as_config(const std::string& section, F&& check) {
  try {
    check();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

} // namespace

void RunConfig::validate() const {
  rethrow_as_config("env", [&] { env.validate(); });
  rethrow_as_config("reward", [&] { reward.validate(); });
  rethrow_as_config("bounds", [&] { bounds.validate(); });
  rethrow_as_config("trainer", [&] { trainer.validate(); });
  if (!(energy.joules_per_flop > 0.0)) throw ConfigError("energy.joules_per_flop: must be > 0");
  if (!(energy.grams_co2_per_kwh > 0.0)) throw ConfigError("energy.grams_co2_per_kwh: must be > 0");
  if (oracle.envs < 0) throw ConfigError("oracle.envs: must be >= 0");
  if (oracle.grid < 1) throw ConfigError("oracle.grid: must be >= 1");
  if (!(oracle.span >= 0.0 && oracle.span < 1.0)) throw ConfigError("oracle.span: must lie in [0, 1)");
  if (schemes.empty()) throw ConfigError("run.schemes: at least one scheme required");
  for (const auto& s : schemes) {
    if (std::find(known_schemes().begin(), known_schemes().end(), s) == known_schemes().end()) {
      throw ConfigError("run.schemes: unknown scheme '" + s + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("run.seeds: at least one seed required");
  if (out.empty()) throw ConfigError("run.out: must not be empty");
}

TrainerConfig RunConfig::trainer_for(const std::string& scheme, std::uint64_t seed) const {
  TrainerConfig t = trainer;
  t.seed = seed;
  t.prune.enabled = scheme == "diffusion_pruned";
  return t;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  if (key == "schema_version") {
    if (parse_number<int>(key, value) != kConfigSchemaVersion) {
      throw ConfigError("schema_version: expected " + std::to_string(kConfigSchemaVersion) + ", got " +
                        std::string(value));
    }
    return;
  }
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(config, key, value);
      return;
    }
  }
  throw ConfigError("unknown key '" + std::string(key) + "'");
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("--set: expected key=value, got '" + std::string(assignment) + "'");
  }
  apply_setting(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

void apply_text(RunConfig& config, std::string_view text, const std::string& source) {
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    try {
      apply_setting(config, line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  RunConfig config;
  apply_text(config, text.str(), path.string());
  return config;
}

std::string to_text(const RunConfig& config) {
  std::string out = "schema_version = " + std::to_string(kConfigSchemaVersion) + "\n";
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

} // namespace sdsac
