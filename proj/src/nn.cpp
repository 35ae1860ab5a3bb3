#include "sdsac/nn.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace sdsac {

namespace {

void activate(Matrix& z, Activation a) {
  switch (a) {
    case Activation::Relu: z = z.cwiseMax(0.0); break;
    case Activation::Tanh: z = z.array().tanh().matrix(); break;
    case Activation::Identity: break;
  }
}

// Derivative expressed through the layer output.
Matrix activation_grad(const Matrix& out, Activation a) {
  switch (a) {
    case Activation::Relu: return (out.array() > 0.0).cast<double>().matrix();
    case Activation::Tanh: return (1.0 - out.array().square()).matrix();
    case Activation::Identity: return Matrix::Ones(out.rows(), out.cols());
  }
  return Matrix::Ones(out.rows(), out.cols());
}

LayerGrad zeros_like(const DenseLayer& l) {
  return {Matrix::Zero(l.out_dim(), l.in_dim()), Vector::Zero(l.out_dim())};
}

} // namespace

const char* to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

Eigen::Index DenseLayer::alive() const {
  Eigen::Index n = 0;
  for (Eigen::Index i = 0; i < mask.size(); ++i) n += mask[i] != 0.0;
  return n;
}

Gradients& Gradients::operator+=(const Gradients& other) {
  if (other.layers.size() != layers.size()) throw std::invalid_argument("Gradients: shape mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].weight += other.layers[l].weight;
    layers[l].bias += other.layers[l].bias;
  }
  return *this;
}

Gradients& Gradients::operator*=(double s) {
  for (auto& g : layers) {
    g.weight *= s;
    g.bias *= s;
  }
  return *this;
}

double Gradients::max_abs() const {
  double m = 0.0;
  for (const auto& g : layers) {
    if (g.weight.size()) m = std::max(m, g.weight.cwiseAbs().maxCoeff());
    if (g.bias.size()) m = std::max(m, g.bias.cwiseAbs().maxCoeff());
  }
  return m;
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { check(); }

void Mlp::check() const {
  if (layers_.empty()) throw std::invalid_argument("Mlp: no layers");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    if (L.bias.size() != L.out_dim() || L.mask.size() != L.out_dim()) {
      throw std::invalid_argument("Mlp: bias/mask size mismatch in layer " + std::to_string(l));
    }
    if (l > 0 && L.in_dim() != layers_[l - 1].out_dim()) {
      throw std::invalid_argument("Mlp: layer " + std::to_string(l) + " does not chain");
    }
    for (Eigen::Index i = 0; i < L.mask.size(); ++i) {
      if (L.mask[i] != 0.0 && L.mask[i] != 1.0) throw std::invalid_argument("Mlp: masks must be binary");
    }
  }
}

Mlp Mlp::make(std::span<const int> sizes, Activation hidden, Activation output, Rng& rng) {
  if (sizes.size() < 2) throw std::invalid_argument("Mlp::make: need at least input and output sizes");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int in = sizes[l];
    const int out = sizes[l + 1];
    if (in < 1 || out < 1) throw std::invalid_argument("Mlp::make: sizes must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer layer;
    layer.weight.resize(out, in);
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < in; ++j) layer.weight(i, j) = u(rng);
    layer.bias.resize(out);
    for (int i = 0; i < out; ++i) layer.bias[i] = u(rng);
    layer.mask = Vector::Ones(out);
    layer.activation = l + 2 == sizes.size() ? output : hidden;
    layers.push_back(std::move(layer));
  }
  return Mlp(std::move(layers));
}

Matrix Mlp::forward(const Matrix& x, ForwardCache* cache) const {
  if (x.rows() != in_dim()) {
    throw std::invalid_argument("Mlp::forward: input has " + std::to_string(x.rows()) + " rows, expected " +
                                std::to_string(in_dim()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->outputs.clear();
  }
  Matrix h = x;
  for (const auto& L : layers_) {
    Matrix z = L.weight * h;
    z.colwise() += L.bias;
    z = z.array().colwise() * L.mask.array();
    activate(z, L.activation);
    if (cache) cache->inputs.push_back(std::move(h));
    h = std::move(z);
    if (cache) cache->outputs.push_back(h);
  }
  return h;
}

Gradients Mlp::backward(const ForwardCache& cache, const Matrix& upstream, Matrix* input_grad) const {
  if (cache.inputs.size() != layers_.size()) throw std::invalid_argument("Mlp::backward: stale cache");
  if (upstream.rows() != out_dim() || upstream.cols() != cache.outputs.back().cols()) {
    throw std::invalid_argument("Mlp::backward: upstream shape mismatch");
  }
  Gradients g;
  g.layers.resize(layers_.size());
  Matrix grad = upstream;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& L = layers_[l];
    Matrix dz = grad.cwiseProduct(activation_grad(cache.outputs[l], L.activation));
    dz = dz.array().colwise() * L.mask.array();
    g.layers[l].weight = dz * cache.inputs[l].transpose();
    g.layers[l].bias = dz.rowwise().sum();
    if (l > 0 || input_grad) grad = L.weight.transpose() * dz;
  }
  if (input_grad) *input_grad = std::move(grad);
  return g;
}

Gradients Mlp::zero_gradients() const {
  Gradients g;
  for (const auto& L : layers_) g.layers.push_back(zeros_like(L));
  return g;
}

Matrix forward_unmasked(const Mlp& net, const Matrix& x) {
  Matrix h = x;
  for (const auto& L : net.layers()) {
    Matrix z = L.weight * h;
    z.colwise() += L.bias;
    activate(z, L.activation);
    h = std::move(z);
  }
  return h;
}

AdamState AdamState::for_net(const Mlp& net) {
  AdamState s;
  for (const auto& L : net.layers()) {
    s.m.push_back(zeros_like(L));
    s.v.push_back(zeros_like(L));
  }
  return s;
}

void adam_step(Mlp& net, const Gradients& grads, AdamState& state, double lr) {
  auto& layers = net.layers();
  if (grads.layers.size() != layers.size() || state.m.size() != layers.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto update = [&](double& p, double g, double& m, double& v) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    p -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& L = layers[l];
    const auto& G = grads.layers[l];
    auto& M = state.m[l];
    auto& V = state.v[l];
    if (G.weight.rows() != L.out_dim() || G.weight.cols() != L.in_dim()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch in layer " + std::to_string(l));
    }
    const Vector* in_mask = l > 0 ? &layers[l - 1].mask : nullptr;
    // Column-major traversal to follow Eigen's storage.
    for (Eigen::Index j = 0; j < L.in_dim(); ++j) {
      if (in_mask && (*in_mask)[j] == 0.0) continue;
      for (Eigen::Index i = 0; i < L.out_dim(); ++i) {
        if (L.mask[i] == 0.0) continue;
        update(L.weight(i, j), G.weight(i, j), M.weight(i, j), V.weight(i, j));
      }
    }
    for (Eigen::Index i = 0; i < L.out_dim(); ++i) {
      if (L.mask[i] == 0.0) continue;
      update(L.bias[i], G.bias[i], M.bias[i], V.bias[i]);
    }
  }
}

bool same_architecture(const Mlp& a, const Mlp& b) {
  if (a.depth() != b.depth()) return false;
  for (std::size_t l = 0; l < a.depth(); ++l) {
    const auto& x = a.layers()[l];
    const auto& y = b.layers()[l];
    if (x.in_dim() != y.in_dim() || x.out_dim() != y.out_dim() || x.activation != y.activation) return false;
  }
  return true;
}

void soft_update(Mlp& target, const Mlp& online, double eps) {
  if (!same_architecture(target, online)) throw std::invalid_argument("soft_update: architecture mismatch");
  if (!(eps > 0.0 && eps <= 1.0)) throw std::invalid_argument("soft_update: eps must lie in (0, 1]");
  for (std::size_t l = 0; l < target.depth(); ++l) {
    auto& T = target.layers()[l];
    const auto& O = online.layers()[l];
    if (eps == 1.0) {
      T.weight = O.weight;
      T.bias = O.bias;
    } else {
      T.weight = eps * O.weight + (1.0 - eps) * T.weight;
      T.bias = eps * O.bias + (1.0 - eps) * T.bias;
    }
    T.mask = O.mask;
  }
}

std::size_t param_count(const Mlp& net, bool effective) {
  std::size_t n = 0;
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    if (!effective) {
      n += static_cast<std::size_t>(L.weight.size() + L.bias.size());
      continue;
    }
    const auto in_alive = l > 0 ? layers[l - 1].alive() : L.in_dim();
    const auto out_alive = L.alive();
    n += static_cast<std::size_t>(in_alive * out_alive + out_alive);
  }
  return n;
}

bool has_dead_layer(const Mlp& net) {
  const auto& layers = net.layers();
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    if (layers[l].alive() == 0) return true;
  }
  return false;
}

MaskSet masks_of(const Mlp& net) {
  MaskSet out;
  for (const auto& L : net.layers()) out.push_back(L.mask);
  return out;
}

void set_masks(Mlp& net, const MaskSet& masks) {
  if (masks.size() != net.depth()) throw std::invalid_argument("set_masks: layer count mismatch");
  for (std::size_t l = 0; l < masks.size(); ++l) {
    if (masks[l].size() != net.layers()[l].out_dim()) throw std::invalid_argument("set_masks: size mismatch");
    net.layers()[l].mask = masks[l];
  }
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

constexpr const char* kCheckpointMagic = "sdsac-checkpoint";
constexpr int kCheckpointVersion = 1;

void write_row(std::ostream& os, const char* tag, const double* data, Eigen::Index n) {
  os << tag;
  for (Eigen::Index i = 0; i < n; ++i) os << ' ' << data[i];
  os << '\n';
}

std::vector<double> read_row(std::istream& is, const char* tag, Eigen::Index n) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(std::string("checkpoint: missing '") + tag + "' row");
  std::istringstream ls(line);
  std::string got;
  ls >> got;
  if (got != tag) throw std::runtime_error(std::string("checkpoint: expected '") + tag + "', found '" + got + "'");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& x : out) {
    std::string tok;
    if (!(ls >> tok)) throw std::runtime_error(std::string("checkpoint: short '") + tag + "' row");
    x = std::strtod(tok.c_str(), nullptr);
  }
  return out;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os << std::setprecision(17);
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  for (const auto& [k, v] : ckpt.metadata) os << "meta " << k << ' ' << v << '\n';
  for (const auto& [name, net] : ckpt.nets) {
    os << "net " << name << ' ' << net.depth() << '\n';
    for (const auto& L : net.layers()) {
      os << "layer " << L.in_dim() << ' ' << L.out_dim() << ' ' << to_string(L.activation) << '\n';
      for (Eigen::Index i = 0; i < L.out_dim(); ++i) {
        const Eigen::RowVectorXd row = L.weight.row(i);
        write_row(os, "w", row.data(), row.size());
      }
      write_row(os, "b", L.bias.data(), L.bias.size());
      write_row(os, "m", L.mask.data(), L.mask.size());
    }
  }
  os << "end\n";
  if (!os) throw std::runtime_error("error writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (magic != kCheckpointMagic) throw std::runtime_error(path.string() + ": not a checkpoint");
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  is.ignore(1, '\n');
  Checkpoint ckpt;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "end") return ckpt;
    if (tag == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls >> std::ws, value);
      ckpt.metadata[key] = value;
    } else if (tag == "net") {
      std::string name;
      std::size_t depth = 0;
      ls >> name >> depth;
      std::vector<DenseLayer> layers;
      for (std::size_t l = 0; l < depth; ++l) {
        std::string header;
        if (!std::getline(is, header)) throw std::runtime_error("checkpoint: truncated net " + name);
        std::istringstream hs(header);
        std::string ltag, act;
        Eigen::Index in = 0, out = 0;
        hs >> ltag >> in >> out >> act;
        if (ltag != "layer" || in < 1 || out < 1) throw std::runtime_error("checkpoint: bad layer header");
        DenseLayer L;
        L.activation = activation_from_string(act);
        L.weight.resize(out, in);
        for (Eigen::Index i = 0; i < out; ++i) {
          const auto row = read_row(is, "w", in);
          for (Eigen::Index j = 0; j < in; ++j) L.weight(i, j) = row[static_cast<std::size_t>(j)];
        }
        L.bias = Eigen::Map<const Vector>(read_row(is, "b", out).data(), out);
        L.mask = Eigen::Map<const Vector>(read_row(is, "m", out).data(), out);
        layers.push_back(std::move(L));
      }
      ckpt.nets.emplace(name, Mlp(std::move(layers)));
    } else if (!tag.empty()) {
      throw std::runtime_error("checkpoint: unexpected record '" + tag + "'");
    }
  }
  throw std::runtime_error(path.string() + ": missing end marker");
}

} // namespace sdsac
