#include "sdsac/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sdsac {

void PruneConfig::validate() const {
  if (!(target_sparsity >= 0.0 && target_sparsity < 1.0)) {
    throw std::invalid_argument("PruneConfig: target_sparsity must lie in [0, 1)");
  }
  if (frequency < 1) throw std::invalid_argument("PruneConfig: frequency must be >= 1");
  if (total_prunes < 1) throw std::invalid_argument("PruneConfig: total_prunes must be >= 1");
  if (start_step < 0) throw std::invalid_argument("PruneConfig: start_step must be >= 0");
}

ImportanceMap importance(const Mlp& net) {
  const auto& layers = net.layers();
  ImportanceMap imp;
  double total = 0.0;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    const auto& L = layers[l];
    const auto& next = layers[l + 1];
    const Vector* in_mask = l > 0 ? &layers[l - 1].mask : nullptr;
    Vector score = Vector::Zero(L.out_dim());
    for (Eigen::Index i = 0; i < L.out_dim(); ++i) {
      if (!L.is_alive(i)) continue;
      double s = 0.0;
      for (Eigen::Index j = 0; j < L.in_dim(); ++j) {
        if (in_mask && (*in_mask)[j] == 0.0) continue;
        s += std::abs(L.weight(i, j));
      }
      for (Eigen::Index k = 0; k < next.out_dim(); ++k) {
        if (!next.is_alive(k)) continue;
        s += std::abs(next.weight(k, i));
      }
      score[i] = s;
      total += s;
    }
    imp.layers.push_back(std::move(score));
  }
  if (total > 0.0) {
    for (auto& v : imp.layers) v /= total;
    return imp;
  }
  // Degenerate: spread mass evenly over alive neurons.
  imp.uniform_fallback = true;
  double alive = 0.0;
  for (std::size_t l = 0; l < imp.layers.size(); ++l) alive += static_cast<double>(layers[l].alive());
  for (std::size_t l = 0; l < imp.layers.size(); ++l) {
    imp.layers[l] = alive > 0.0 ? Vector(layers[l].mask / alive) : Vector(layers[l].mask);
  }
  return imp;
}

double sparsity_at(long z, const PruneConfig& cfg) {
  const double horizon = static_cast<double>(cfg.horizon());
  const double frac = std::clamp(static_cast<double>(z) / horizon, 0.0, 1.0);
  const double rest = 1.0 - frac;
  return cfg.target_sparsity - cfg.target_sparsity * (rest * rest * rest);
}

double threshold(const ImportanceMap& imp, double sparsity, ThresholdMode mode) {
  if (mode == ThresholdMode::Literal) {
    double total = 0.0;
    for (const auto& v : imp.layers) total += v.sum();
    return total * sparsity;
  }
  std::vector<double> all;
  for (const auto& v : imp.layers) all.insert(all.end(), v.data(), v.data() + v.size());
  if (all.empty()) return 0.0;
  std::sort(all.begin(), all.end());
  const auto k = static_cast<std::size_t>(std::llround(sparsity * static_cast<double>(all.size())));
  if (k >= all.size()) return std::numeric_limits<double>::infinity();
  return all[k];
}

PruneOutcome apply_masks(Mlp& net, const ImportanceMap& imp, double thr) {
  auto& layers = net.layers();
  if (imp.layers.size() + 1 != layers.size()) throw std::invalid_argument("apply_masks: importance map shape mismatch");
  PruneOutcome out;
  out.removed_per_layer.assign(imp.layers.size(), 0);
  for (std::size_t l = 0; l < imp.layers.size(); ++l) {
    auto& L = layers[l];
    std::vector<Eigen::Index> doomed;
    for (Eigen::Index i = 0; i < L.out_dim(); ++i) {
      if (L.is_alive(i) && imp.layers[l][i] < thr) doomed.push_back(i);
    }
    if (doomed.empty()) continue;
    if (static_cast<Eigen::Index>(doomed.size()) >= L.alive()) {
      out.guarded_layers.push_back(static_cast<int>(l));
      continue;
    }
    for (auto i : doomed) L.mask[i] = 0.0;
    out.removed_per_layer[l] = static_cast<int>(doomed.size());
    out.removed += static_cast<int>(doomed.size());
  }
  out.realized_sparsity = realized_sparsity(net);
  return out;
}

int prunable_neurons(const Mlp& net) {
  int n = 0;
  const auto& layers = net.layers();
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) n += static_cast<int>(layers[l].out_dim());
  return n;
}

int pruned_neurons(const Mlp& net) {
  int n = 0;
  const auto& layers = net.layers();
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    n += static_cast<int>(layers[l].out_dim() - layers[l].alive());
  }
  return n;
}

double realized_sparsity(const Mlp& net) {
  const int total = prunable_neurons(net);
  return total == 0 ? 0.0 : static_cast<double>(pruned_neurons(net)) / total;
}

Mlp compact(const Mlp& net) {
  const auto& layers = net.layers();
  std::vector<DenseLayer> out;
  std::vector<Eigen::Index> keep_in(static_cast<std::size_t>(net.in_dim()));
  for (Eigen::Index j = 0; j < net.in_dim(); ++j) keep_in[static_cast<std::size_t>(j)] = j;

  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const bool is_output = l + 1 == layers.size();
    std::vector<Eigen::Index> keep_out;
    for (Eigen::Index i = 0; i < L.out_dim(); ++i) {
      if (is_output || L.is_alive(i)) keep_out.push_back(i);
    }
    DenseLayer C;
    C.activation = L.activation;
    C.weight.resize(static_cast<Eigen::Index>(keep_out.size()), static_cast<Eigen::Index>(keep_in.size()));
    C.bias.resize(static_cast<Eigen::Index>(keep_out.size()));
    C.mask.resize(static_cast<Eigen::Index>(keep_out.size()));
    for (std::size_t r = 0; r < keep_out.size(); ++r) {
      const auto i = keep_out[r];
      for (std::size_t c = 0; c < keep_in.size(); ++c) {
        C.weight(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = L.weight(i, keep_in[c]);
      }
      C.bias[static_cast<Eigen::Index>(r)] = L.bias[i] * L.mask[i];
      C.mask[static_cast<Eigen::Index>(r)] = is_output ? L.mask[i] : 1.0;
    }
    out.push_back(std::move(C));
    keep_in = std::move(keep_out);
  }
  return Mlp(std::move(out));
}

} // namespace sdsac
