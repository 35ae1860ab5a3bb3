#pragma once

#include <vector>

#include "sdsac/nn.hpp"

namespace sdsac {

enum class ThresholdMode {
  /// Threshold placed so the pruned fraction of hidden neurons equals the
  /// scheduled sparsity.
  Quantile,
  /// Threshold = (sum of normalized importances) * sparsity, i.e. the
  /// sparsity itself, compared against each neuron's normalized importance.
  Literal,
};

struct PruneConfig {
  bool enabled = true;
  double target_sparsity = 0.10; // final fraction of hidden neurons removed
  int frequency = 1000;          // steps between prune events
  int total_prunes = 20;         // number of prune events
  ThresholdMode mode = ThresholdMode::Quantile;
  long start_step = 1000;        // schedule origin

  void validate() const;
  long horizon() const { return static_cast<long>(frequency) * total_prunes; }
};

/// Importance of every hidden neuron; layers[l] covers hidden layer l (the
/// output layer is never pruned and has no entry). Entries sum to one.
struct ImportanceMap {
  std::vector<Vector> layers;
  bool uniform_fallback = false; // every raw score was zero
};

/// Raw score of hidden neuron i in layer l is the absolute mass of its incoming
/// weights plus its outgoing weights into alive neurons of the next layer;
/// pruned neurons score 0. Scores are normalized to sum to one over all
/// hidden neurons.
ImportanceMap importance(const Mlp& net);

/// Cubic ramp w_hat - w_hat * (1 - z / (N * frequency))^3 with z clamped to
/// [0, N * frequency].
double sparsity_at(long z, const PruneConfig& cfg);

double threshold(const ImportanceMap& imp, double sparsity, ThresholdMode mode);

struct PruneOutcome {
  int removed = 0;
  std::vector<int> removed_per_layer;
  std::vector<int> guarded_layers; // layers whose prune was skipped to keep one neuron alive
  double realized_sparsity = 0.0;
};

/// Masks every alive hidden neuron whose importance is strictly below
/// `threshold`. Masks never come back to 1. A layer that would lose its last
/// alive neuron is left untouched and reported in `guarded_layers`.
PruneOutcome apply_masks(Mlp& net, const ImportanceMap& imp, double threshold);

int prunable_neurons(const Mlp& net);
int pruned_neurons(const Mlp& net);
double realized_sparsity(const Mlp& net);

/// Dense network with masked hidden neurons physically removed.
Mlp compact(const Mlp& net);

} // namespace sdsac
