#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sdsac {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

// Batches are stored one sample per column: an input batch is in_dim x B.

enum class Activation { Relu, Tanh, Identity };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Fully connected layer with a per-neuron binary mask. A masked neuron
/// (mask 0) has its pre-activation and bias zeroed, so its output is exactly 0
/// for every supported activation.
struct DenseLayer {
  Matrix weight; // out x in
  Vector bias;   // out
  Vector mask;   // out, entries 0 or 1
  Activation activation = Activation::Identity;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
  Eigen::Index alive() const;
  bool is_alive(Eigen::Index i) const { return mask[i] != 0.0; }
};

/// Intermediate values recorded by a forward pass, needed by backward().
struct ForwardCache {
  std::vector<Matrix> inputs; // h^(l-1) for every layer
  std::vector<Matrix> outputs; // h^(l)
};

struct LayerGrad {
  Matrix weight;
  Vector bias;
};

struct Gradients {
  std::vector<LayerGrad> layers;

  Gradients& operator+=(const Gradients& other);
  Gradients& operator*=(double s);
  double max_abs() const;
};

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> layers);

  /// Layers sized sizes[0] -> sizes[1] -> ... with uniform(-1/sqrt(in), 1/sqrt(in))
  /// initialization of weights and biases; all masks start at 1.
  static Mlp make(std::span<const int> sizes, Activation hidden, Activation output, Rng& rng);

  Eigen::Index in_dim() const { return layers_.front().in_dim(); }
  Eigen::Index out_dim() const { return layers_.back().out_dim(); }
  std::size_t depth() const { return layers_.size(); }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  /// h^(l) = f((W h^(l-1) + b) * m) layer by layer.
  Matrix forward(const Matrix& x, ForwardCache* cache = nullptr) const;

  /// Reverse-mode gradients of sum(upstream .* forward(x)) with respect to the
  /// parameters (summed over the batch). If `input_grad` is given it receives
  /// the gradient with respect to x.
  Gradients backward(const ForwardCache& cache, const Matrix& upstream, Matrix* input_grad = nullptr) const;

  Gradients zero_gradients() const;

 private:
  void check() const;
  std::vector<DenseLayer> layers_;
};

/// Convenience wrapper matching the masked-layer formulation.
inline Matrix forward_masked(const Mlp& net, const Matrix& x) { return net.forward(x); }

/// Forward pass that ignores masks entirely. Reference for the identity-mask case.
Matrix forward_unmasked(const Mlp& net, const Matrix& x);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<LayerGrad> m;
  std::vector<LayerGrad> v;

  static AdamState for_net(const Mlp& net);
};

/// One Adam update in place. Parameters touching a masked neuron (its incoming
/// row, its bias and its outgoing column in the next layer) are frozen and
/// their moments are not advanced.
void adam_step(Mlp& net, const Gradients& grads, AdamState& state, double lr);

/// target <- eps * online + (1 - eps) * target on weights and biases; masks are
/// copied from `online`.
void soft_update(Mlp& target, const Mlp& online, double eps);

/// Total weight and bias entries, or with `effective` only those that connect
/// alive neurons.
std::size_t param_count(const Mlp& net, bool effective);

/// True when some hidden layer has no alive neuron left.
bool has_dead_layer(const Mlp& net);

bool same_architecture(const Mlp& a, const Mlp& b);

using MaskSet = std::vector<Vector>; // one mask per layer

MaskSet masks_of(const Mlp& net);
void set_masks(Mlp& net, const MaskSet& masks);

/// Text checkpoint holding several named networks plus string metadata. The
/// format is documented in docs/checkpoint.md.
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::map<std::string, Mlp> nets;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace sdsac
