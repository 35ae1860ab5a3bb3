#include "doctest.h"

#include <cmath>

#include "sdsac/pruning.hpp"
#include "support.hpp"

using namespace sdsac;
using sdsac::testing::random_matrix;

namespace {

Mlp make_net(Rng& rng, std::vector<int> sizes = {5, 8, 8, 3}) {
  return Mlp::make(sizes, Activation::Relu, Activation::Identity, rng);
}

} // namespace

TEST_CASE("importance scores") {
  Rng rng(1);
  Mlp net = make_net(rng);
  SUBCASE("normalized") {
    const ImportanceMap imp = importance(net);
    REQUIRE(imp.layers.size() == 2);
    CHECK(imp.layers[0].sum() + imp.layers[1].sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK_FALSE(imp.uniform_fallback);
  }
  SUBCASE("zero weights give zero importance") {
    net.layers()[0].weight.row(3).setZero();
    net.layers()[1].weight.col(3).setZero();
    const ImportanceMap imp = importance(net);
    CHECK(imp.layers[0][3] == 0.0);
    CHECK(imp.layers[0].minCoeff() == 0.0);
    CHECK(imp.layers[0].maxCoeff() > 0.0);
  }
  SUBCASE("identical neurons tie") {
    net.layers()[1].weight.row(5) = net.layers()[1].weight.row(2);
    net.layers()[2].weight.col(5) = net.layers()[2].weight.col(2);
    const ImportanceMap imp = importance(net);
    CHECK(imp.layers[1][5] == doctest::Approx(imp.layers[1][2]).epsilon(1e-15));
  }
  SUBCASE("scale invariance") {
    const ImportanceMap a = importance(net);
    for (auto& L : net.layers()) L.weight *= 2.0;
    const ImportanceMap b = importance(net);
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
      CHECK((a.layers[l] - b.layers[l]).cwiseAbs().maxCoeff() <= 1e-15);
    }
  }
  SUBCASE("pruned neurons score zero") {
    net.layers()[0].mask[1] = 0.0;
    CHECK(importance(net).layers[0][1] == 0.0);
  }
}

TEST_CASE("cubic schedule") {
  PruneConfig cfg;
  cfg.target_sparsity = 0.1;
  cfg.frequency = 1000;
  cfg.total_prunes = 20;
  CHECK(sparsity_at(0, cfg) == 0.0);
  CHECK(sparsity_at(cfg.horizon(), cfg) == cfg.target_sparsity);
  CHECK(sparsity_at(cfg.horizon() / 2, cfg) == doctest::Approx(0.0875).epsilon(1e-15));
  CHECK(sparsity_at(10 * cfg.horizon(), cfg) == cfg.target_sparsity);
  CHECK(sparsity_at(-5, cfg) == 0.0);
  double prev = 0.0;
  for (long z = 0; z <= cfg.horizon(); z += 250) {
    const double w = sparsity_at(z, cfg);
    CHECK(w >= prev);
    prev = w;
  }
}

TEST_CASE("thresholds and masking") {
  Rng rng(2);
  Mlp net = make_net(rng, {3, 4, 2});
  ImportanceMap imp;
  imp.layers = {(Vector(4) << 0.5, 0.3, 0.15, 0.05).finished()};

  CHECK(threshold(imp, 0.0875, ThresholdMode::Literal) == doctest::Approx(0.0875).epsilon(1e-15));

  SUBCASE("quantile of four") {
    const double thr = threshold(imp, 0.25, ThresholdMode::Quantile);
    const PruneOutcome out = apply_masks(net, imp, thr);
    CHECK(out.removed == 1);
    CHECK(net.layers()[0].mask == (Vector(4) << 1, 1, 1, 0).finished());
    ForwardCache cache;
    net.forward(random_matrix(3, 6, rng), &cache);
    CHECK(cache.outputs[0].row(3).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("zero sparsity prunes nothing") {
    for (auto mode : {ThresholdMode::Quantile, ThresholdMode::Literal}) {
      const double thr = threshold(imp, 0.0, mode);
      CHECK(thr <= imp.layers[0].minCoeff());
      CHECK(apply_masks(net, imp, thr).removed == 0);
    }
    CHECK(net.layers()[0].mask == Vector::Ones(4));
  }
  SUBCASE("guard keeps one neuron alive") {
    const PruneOutcome out = apply_masks(net, imp, 1.0);
    CHECK(out.removed == 0);
    CHECK(out.guarded_layers == std::vector<int>{0});
    CHECK(net.layers()[0].alive() == 4);
  }
}

TEST_CASE("masks are monotone and track the schedule") {
  Rng rng(3);
  Mlp net = make_net(rng, {6, 40, 40, 4});
  PruneConfig cfg;
  cfg.target_sparsity = 0.3;
  cfg.frequency = 10;
  cfg.total_prunes = 8;
  const int n = prunable_neurons(net);
  CHECK(n == 80);
  MaskSet prev = masks_of(net);
  for (int e = 1; e <= cfg.total_prunes; ++e) {
    // Perturb weights between events as training would.
    for (auto& L : net.layers()) L.weight += random_matrix(L.weight.rows(), L.weight.cols(), rng, 0.05);
    const double omega = sparsity_at(e * cfg.frequency, cfg);
    const ImportanceMap imp = importance(net);
    const PruneOutcome out = apply_masks(net, imp, threshold(imp, omega, ThresholdMode::Quantile));
    CHECK(std::abs(out.realized_sparsity * n - omega * n) <= 1.0);
    const MaskSet now = masks_of(net);
    for (std::size_t l = 0; l < now.size(); ++l) {
      CHECK((now[l].array() <= prev[l].array()).all());
    }
    prev = now;
  }
  CHECK(realized_sparsity(net) == doctest::Approx(0.3).epsilon(1.0 / 80));
}

TEST_CASE("compaction") {
  Rng rng(4);
  SUBCASE("unmasked copy") {
    const Mlp net = make_net(rng);
    const Mlp c = compact(net);
    REQUIRE(c.depth() == net.depth());
    for (std::size_t l = 0; l < net.depth(); ++l) CHECK(c.layers()[l].weight == net.layers()[l].weight);
  }
  SUBCASE("masked equivalence") {
    for (int rep = 0; rep < 10; ++rep) {
      Mlp net = make_net(rng, {5, 20, 20, 3});
      const ImportanceMap imp = importance(net);
      apply_masks(net, imp, threshold(imp, 0.1, ThresholdMode::Quantile));
      CHECK(pruned_neurons(net) == 4);
      const Mlp c = compact(net);
      CHECK(param_count(c, false) == param_count(net, true));
      CHECK(c.layers()[0].out_dim() + c.layers()[1].out_dim() == 36);
      const Matrix x = random_matrix(5, 100, rng);
      CHECK((c.forward(x) - net.forward(x)).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}
