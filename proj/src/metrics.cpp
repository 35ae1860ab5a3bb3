#include "sdsac/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace sdsac {

namespace {

std::string fmt_real(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return os;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

} // namespace

const char* to_string(Phase p) {
  switch (p) {
    case Phase::Sampling: return "sampling";
    case Phase::Critic: return "critic";
    case Phase::Policy: return "policy";
    case Phase::Pruning: return "pruning";
  }
  return "unknown";
}

void FlopLedger::add(Phase p, std::uint64_t fwd, std::uint64_t bwd) {
  forward[static_cast<int>(p)] += fwd;
  backward[static_cast<int>(p)] += bwd;
}

std::uint64_t FlopLedger::phase_total(Phase p) const {
  return forward[static_cast<int>(p)] + backward[static_cast<int>(p)];
}

std::uint64_t FlopLedger::actor_total() const {
  return phase_total(Phase::Sampling) + phase_total(Phase::Policy);
}

std::uint64_t FlopLedger::total() const {
  std::uint64_t t = 0;
  for (int i = 0; i < kPhaseCount; ++i) t += forward[i] + backward[i];
  return t;
}

FlopLedger FlopLedger::operator-(const FlopLedger& earlier) const {
  FlopLedger d;
  for (int i = 0; i < kPhaseCount; ++i) {
    d.forward[i] = forward[i] - earlier.forward[i];
    d.backward[i] = backward[i] - earlier.backward[i];
  }
  return d;
}

std::uint64_t flops_dense(std::uint64_t in_dim, std::uint64_t out_dim, bool backward) {
  const std::uint64_t fwd = 2 * in_dim * out_dim + out_dim;
  return backward ? 2 * fwd : fwd;
}

std::uint64_t flops_mlp(const Mlp& net, bool backward) {
  std::uint64_t total = 0;
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto in = static_cast<std::uint64_t>(l > 0 ? layers[l - 1].alive() : layers[l].in_dim());
    const auto out = static_cast<std::uint64_t>(layers[l].alive());
    total += flops_dense(in, out, backward);
  }
  return total;
}

EnergyReport energy_report(const FlopLedger& ledger, const EnergyProxy& proxy, const FlopLedger* reference) {
  EnergyReport r;
  r.flops = ledger.total();
  r.kwh = static_cast<double>(r.flops) * proxy.joules_per_flop / 3.6e6;
  r.grams_co2 = r.kwh * proxy.grams_co2_per_kwh;
  if (reference && reference->total() > 0) {
    r.flop_ratio = static_cast<double>(r.flops) / static_cast<double>(reference->total());
  }
  return r;
}

void write_csv(const std::vector<const TrainLog*>& logs, const std::filesystem::path& path) {
  auto os = open_for_write(path);
  os << kCsvHeader << '\n';
  for (const auto* log : logs) {
    for (const auto& r : log->rows) {
      os << log->scheme << ',' << log->seed << ',' << r.step << ',' << fmt_real(r.train_reward) << ','
         << fmt_real(r.eval_reward) << ',' << fmt_real(r.server_utility) << ',' << fmt_real(r.device_utility)
         << ',' << fmt_real(r.sparsity) << ',' << r.effective_params << ',' << r.flops << ','
         << fmt_real(r.wall_ms) << '\n';
    }
  }
  if (!os) throw std::runtime_error("error writing " + path.string());
}

void write_csv(const TrainLog& log, const std::filesystem::path& path) {
  write_csv(std::vector<const TrainLog*>{&log}, path);
}

std::vector<TrainLog> read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader) {
    throw std::runtime_error(path.string() + ": unexpected CSV header");
  }
  std::vector<TrainLog> logs;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 11) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    const std::uint64_t seed = std::stoull(f[1]);
    if (logs.empty() || logs.back().scheme != f[0] || logs.back().seed != seed) {
      logs.push_back(TrainLog{f[0], seed, {}, {}});
    }
    LogRow r;
    r.step = std::stol(f[2]);
    r.train_reward = std::stod(f[3]);
    r.eval_reward = std::stod(f[4]);
    r.server_utility = std::stod(f[5]);
    r.device_utility = std::stod(f[6]);
    r.sparsity = std::stod(f[7]);
    r.effective_params = std::stoull(f[8]);
    r.flops = std::stoull(f[9]);
    r.wall_ms = std::stod(f[10]);
    logs.back().rows.push_back(r);
  }
  return logs;
}

void write_prune_events(const TrainLog& log, const std::filesystem::path& path) {
  auto os = open_for_write(path);
  os << "scheme,seed,step,layer,removed,realized_sparsity,scheduled_sparsity,threshold\n";
  for (const auto& e : log.prune_events) {
    os << log.scheme << ',' << log.seed << ',' << e.step << ',' << e.layer << ',' << e.removed << ','
       << fmt_real(e.realized_sparsity) << ',' << fmt_real(e.scheduled_sparsity) << ',' << fmt_real(e.threshold)
       << '\n';
  }
  if (!os) throw std::runtime_error("error writing " + path.string());
}

std::vector<PruneEvent> read_prune_events(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<PruneEvent> events;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 8) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    events.push_back({std::stol(f[2]), std::stoi(f[3]), std::stoi(f[4]), std::stod(f[5]), std::stod(f[6]),
                      std::stod(f[7])});
  }
  return events;
}

Stat summarize(const std::vector<double>& values) {
  Stat s;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

double uplift_floor(double baseline) { return baseline + std::abs(baseline); }

double retention_floor(double reference, double fraction) {
  return reference - (1.0 - fraction) * std::abs(reference);
}

void write_summary_json(const std::vector<RunSummary>& runs, const std::filesystem::path& path) {
  using nlohmann::json;
  std::map<std::string, std::vector<const RunSummary*>> by_scheme;
  std::vector<std::string> order;
  for (const auto& r : runs) {
    if (!by_scheme.count(r.scheme)) order.push_back(r.scheme);
    by_scheme[r.scheme].push_back(&r);
  }
  json root;
  root["schema_version"] = kSchemaVersion;
  json schemes = json::object();
  for (const auto& name : order) {
    const auto& cells = by_scheme[name];
    auto stat = [&](auto getter) {
      std::vector<double> v;
      for (const auto* c : cells) v.push_back(static_cast<double>(getter(*c)));
      const Stat s = summarize(v);
      return json{{"mean", s.mean}, {"std", s.std}, {"values", v}};
    };
    json entry;
    json seeds = json::array();
    for (const auto* c : cells) seeds.push_back(c->seed);
    entry["seeds"] = seeds;
    entry["eval_reward"] = stat([](const RunSummary& r) { return r.eval_reward; });
    entry["server_utility"] = stat([](const RunSummary& r) { return r.server_utility; });
    entry["device_utility"] = stat([](const RunSummary& r) { return r.device_utility; });
    entry["violation"] = stat([](const RunSummary& r) { return r.violation; });
    entry["effective_params"] = stat([](const RunSummary& r) { return r.effective_params; });
    entry["total_params"] = stat([](const RunSummary& r) { return r.total_params; });
    entry["flops"] = stat([](const RunSummary& r) { return r.ledger.total(); });
    entry["actor_flops"] = stat([](const RunSummary& r) { return r.ledger.actor_total(); });
    entry["actor_flops_after_schedule"] =
        stat([](const RunSummary& r) { return r.ledger_after_schedule.actor_total(); });
    entry["wall_ms"] = stat([](const RunSummary& r) { return r.wall_ms; });
    schemes[name] = entry;
  }
  root["schemes"] = schemes;
  auto os = open_for_write(path);
  os << root.dump(2) << '\n';
  if (!os) throw std::runtime_error("error writing " + path.string());
}

} // namespace sdsac
