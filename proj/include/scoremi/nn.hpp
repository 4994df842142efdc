#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "scoremi/error.hpp"
#include "scoremi/rng.hpp"

namespace scoremi {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Gaussian Fourier features of u = log t. The frequencies are drawn once and
// never trained.
struct TimeEmbedding {
  Vector frequencies;

  static TimeEmbedding random(int m, double scale, Rng& rng) {
    TimeEmbedding e;
    e.frequencies.resize(m);
    for (int i = 0; i < m; ++i) e.frequencies[i] = scale * rng.normal();
    return e;
  }

  int half_width() const { return static_cast<int>(frequencies.size()); }
  int width() const { return 2 * half_width(); }
};

// [sin(f_i log t) ..., cos(f_i log t) ...]
inline Vector fourier_time_embed(const TimeEmbedding& emb, double t) {
  if (!(t > 0.0) || !std::isfinite(t))
    throw InputError("fourier_time_embed: t must be positive and finite, got " + std::to_string(t));
  const double u = std::log(t);
  const int m = emb.half_width();
  Vector out(2 * m);
  for (int i = 0; i < m; ++i) {
    out[i] = std::sin(emb.frequencies[i] * u);
    out[m + i] = std::cos(emb.frequencies[i] * u);
  }
  return out;
}

// Trainable tensors of a ScoreNetwork. Gradients and Adam moments share the
// same layout, so the type doubles as a gradient container.
struct Parameters {
  std::vector<Matrix> weights;    // layer l: dims[l+1] x dims[l]
  std::vector<Vector> biases;     // layer l: dims[l+1]
  std::vector<Matrix> time_maps;  // hidden layer l: dims[l+1] x 2m; empty when unconditional

  std::size_t size() const {
    std::size_t s = 0;
    for (const auto& w : weights) s += static_cast<std::size_t>(w.size());
    for (const auto& b : biases) s += static_cast<std::size_t>(b.size());
    for (const auto& e : time_maps) s += static_cast<std::size_t>(e.size());
    return s;
  }

  Parameters zeros_like() const {
    Parameters z;
    for (const auto& w : weights) z.weights.push_back(Matrix::Zero(w.rows(), w.cols()));
    for (const auto& b : biases) z.biases.push_back(Vector::Zero(b.size()));
    for (const auto& e : time_maps) z.time_maps.push_back(Matrix::Zero(e.rows(), e.cols()));
    return z;
  }

  // Visits every tensor in checkpoint order: for each layer W (row-major)
  // then b; afterwards every time map (row-major).
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      fn(weights[l]);
      fn(biases[l]);
    }
    for (auto& e : time_maps) fn(e);
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      fn(weights[l]);
      fn(biases[l]);
    }
    for (const auto& e : time_maps) fn(e);
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(size());
    for_each_tensor([&](const auto& x) {
      for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (Eigen::Index c = 0; c < x.cols(); ++c) out.push_back(x(r, c));
    });
    return out;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != size())
      throw InputError("Parameters::assign: expected " + std::to_string(size()) + " values, got " +
                       std::to_string(flat.size()));
    std::size_t k = 0;
    for_each_tensor([&](auto& x) {
      for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = flat[k++];
    });
  }

  double squared_norm() const {
    double s = 0.0;
    for_each_tensor([&](const auto& x) { s += x.squaredNorm(); });
    return s;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const auto& x) { ok = ok && x.allFinite(); });
    return ok;
  }

  void scale(double c) {
    for_each_tensor([&](auto& x) { x *= c; });
  }

  bool same_shape(const Parameters& o) const {
    if (weights.size() != o.weights.size() || biases.size() != o.biases.size() ||
        time_maps.size() != o.time_maps.size())
      return false;
    for (std::size_t i = 0; i < weights.size(); ++i)
      if (weights[i].rows() != o.weights[i].rows() || weights[i].cols() != o.weights[i].cols())
        return false;
    for (std::size_t i = 0; i < biases.size(); ++i)
      if (biases[i].size() != o.biases[i].size()) return false;
    for (std::size_t i = 0; i < time_maps.size(); ++i)
      if (time_maps[i].rows() != o.time_maps[i].rows() || time_maps[i].cols() != o.time_maps[i].cols())
        return false;
    return true;
  }
};

using Gradients = Parameters;

namespace detail {

inline Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& z) { return 1.0 / (1.0 + (-z).exp()); }

}  // namespace detail

// Feedforward score model s_theta: R^n -> R^n with SiLU hidden layers and a
// linear output layer. When a TimeEmbedding is present the network is
// noise-conditional and each hidden pre-activation receives E_l * embed(t).
class ScoreNetwork {
public:
  struct Cache {
    Matrix input;               // n x N
    std::vector<Matrix> pre;    // hidden pre-activations z
    std::vector<Matrix> gate;   // sigmoid(z)
    std::vector<Matrix> post;   // hidden activations z * sigmoid(z)
    Vector embedding;           // empty when unconditional
  };

  ScoreNetwork() = default;

  // Zero-initialized network with the given shape.
  explicit ScoreNetwork(std::vector<int> layer_dims, std::optional<TimeEmbedding> embedding = {})
      : dims_(std::move(layer_dims)), embedding_(std::move(embedding)) {
    if (dims_.size() < 2) throw ConfigError("ScoreNetwork: need at least input and output layer");
    for (int d : dims_)
      if (d <= 0) throw ConfigError("ScoreNetwork: layer widths must be positive");
    if (dims_.front() != dims_.back())
      throw ConfigError("ScoreNetwork: input and output dimension must match");
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      params_.weights.push_back(Matrix::Zero(dims_[l + 1], dims_[l]));
      params_.biases.push_back(Vector::Zero(dims_[l + 1]));
    }
    if (embedding_) {
      for (std::size_t l = 1; l + 1 < dims_.size(); ++l)
        params_.time_maps.push_back(Matrix::Zero(dims_[l], embedding_->width()));
    }
  }

  // Scaled uniform init U[-a, a], a = sqrt(6 / (fan_in + fan_out)); zero biases.
  static ScoreNetwork initialized(std::vector<int> layer_dims, Rng& rng,
                                  std::optional<std::pair<int, double>> embed = {}) {
    std::optional<TimeEmbedding> emb;
    if (embed) emb = TimeEmbedding::random(embed->first, embed->second, rng);
    ScoreNetwork net(std::move(layer_dims), std::move(emb));
    auto fill = [&](Matrix& w) {
      const double a = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = a * (2.0 * rng.uniform() - 1.0);
    };
    for (auto& w : net.params_.weights) fill(w);
    for (auto& e : net.params_.time_maps) fill(e);
    return net;
  }

  int dim() const { return dims_.empty() ? 0 : dims_.front(); }
  bool conditional() const { return embedding_.has_value(); }
  const std::vector<int>& layer_dims() const { return dims_; }
  const std::optional<TimeEmbedding>& time_embedding() const { return embedding_; }
  Parameters& params() { return params_; }
  const Parameters& params() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  // Batched evaluation on y given as N x n (one sample per row).
  Matrix forward_batch(const Matrix& y, std::optional<double> t = {}) const {
    if (y.cols() != dim())
      throw InputError("forward_score: expected " + std::to_string(dim()) + " columns, got " +
                       std::to_string(y.cols()));
    return forward_columns(y.transpose(), t, nullptr).transpose();
  }

  // Single-sample evaluation.
  Vector forward(const Vector& y, std::optional<double> t = {}) const {
    if (y.size() != dim())
      throw InputError("forward_score: expected length " + std::to_string(dim()) + ", got " +
                       std::to_string(y.size()));
    return forward_columns(y, t, nullptr).col(0);
  }

  // Core pass on samples stored as columns (n x N). Fills `cache` when given.
  Matrix forward_columns(const Matrix& x, std::optional<double> t, Cache* cache) const {
    check_time(t);
    const std::size_t layers = params_.weights.size();
    Vector emb;
    if (embedding_) emb = fourier_time_embed(*embedding_, *t);
    if (cache) {
      cache->input = x;
      cache->pre.clear();
      cache->gate.clear();
      cache->post.clear();
      cache->embedding = emb;
    }
    Matrix a = x;
    for (std::size_t l = 0; l + 1 < layers; ++l) {
      Vector shift = params_.biases[l];
      if (embedding_) shift += params_.time_maps[l] * emb;
      Matrix z = params_.weights[l] * a;
      z.colwise() += shift;
      Matrix sg = detail::sigmoid(z.array()).matrix();
      Matrix h = z.cwiseProduct(sg);
      if (!h.allFinite()) throw NumericError("forward_score: non-finite activation in layer " + std::to_string(l));
      if (cache) {
        cache->pre.push_back(std::move(z));
        cache->gate.push_back(std::move(sg));
        cache->post.push_back(h);
      }
      a = std::move(h);
    }
    Matrix out = params_.weights.back() * a;
    out.colwise() += params_.biases.back();
    if (!out.allFinite())
      throw NumericError("forward_score: non-finite output in layer " + std::to_string(layers - 1));
    return out;
  }

  // Reverse pass. `d_out` is dLoss/dOutput in n x N layout.
  Gradients backward(const Cache& cache, const Matrix& d_out) const {
    const std::size_t layers = params_.weights.size();
    Gradients g = params_.zeros_like();
    Matrix delta = d_out;
    for (std::size_t l = layers; l-- > 0;) {
      const Matrix& below = l == 0 ? cache.input : cache.post[l - 1];
      g.weights[l].noalias() = delta * below.transpose();
      g.biases[l] = delta.rowwise().sum();
      if (l + 1 < layers && embedding_) g.time_maps[l].noalias() = g.biases[l] * cache.embedding.transpose();
      if (l == 0) break;
      Matrix da = params_.weights[l].transpose() * delta;
      const auto z = cache.pre[l - 1].array();
      const auto sg = cache.gate[l - 1].array();
      // d/dz [z sigmoid(z)] = sigmoid(z) (1 + z (1 - sigmoid(z)))
      delta = (da.array() * sg * (1.0 + z * (1.0 - sg))).matrix();
    }
    return g;
  }

private:
  void check_time(std::optional<double> t) const {
    if (embedding_ && !t) throw ConfigError("forward_score: noise-conditional network needs t");
    if (!embedding_ && t) throw ConfigError("forward_score: network is not noise-conditional but t was given");
    if (t && !(*t > 0.0)) throw InputError("forward_score: t must be positive");
  }

  std::vector<int> dims_;
  std::optional<TimeEmbedding> embedding_;
  Parameters params_;
};

// Loss callback over a batch of outputs (N x n). Returns the scalar loss and
// writes dLoss/dOutput (N x n) into the second argument.
using BatchLoss = std::function<double(const Matrix& outputs, Matrix& d_outputs)>;

struct LossAndGradients {
  double loss = 0.0;
  Gradients grads;
};

inline LossAndGradients loss_gradients(const ScoreNetwork& net, const Matrix& y, std::optional<double> t,
                                       const BatchLoss& loss_fn) {
  ScoreNetwork::Cache cache;
  const Matrix out = net.forward_columns(y.transpose(), t, &cache).transpose();
  Matrix d_out = Matrix::Zero(out.rows(), out.cols());
  LossAndGradients r;
  r.loss = loss_fn(out, d_out);
  if (!std::isfinite(r.loss)) throw NumericError("loss_gradients: non-finite loss");
  r.grads = net.backward(cache, d_out.transpose());
  return r;
}

// Global L2 norm clipping. Returns the norm before clipping.
inline double clip_global_norm(Gradients& g, double clip_norm) {
  const double norm = std::sqrt(g.squared_norm());
  if (norm > clip_norm) g.scale(clip_norm / norm);
  return norm;
}

struct AdamState {
  Parameters first_moment;
  Parameters second_moment;
  long step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_parameters(const Parameters& p) {
    AdamState s;
    s.first_moment = p.zeros_like();
    s.second_moment = p.zeros_like();
    return s;
  }
};

// Clip, then one bias-corrected Adam update.
inline void optimizer_step(ScoreNetwork& net, AdamState& state, Gradients grads, double lr, double clip_norm) {
  if (!grads.same_shape(net.params())) throw InputError("optimizer_step: gradient shapes do not match parameters");
  if (!grads.all_finite()) throw NumericError("optimizer_step: non-finite gradients");
  if (state.first_moment.weights.empty()) state = AdamState::for_parameters(net.params());
  clip_global_norm(grads, clip_norm);

  state.step_count += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
  const double step = lr / c1;
  const double sqrt_c2 = std::sqrt(c2);
  const double eps = state.eps;

  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    // lr * m_hat / (sqrt(v_hat) + eps), rearranged to avoid two divisions.
    p.array() -= step * m.array() / (v.array().sqrt() / sqrt_c2 + eps);
  };
  auto& P = net.params();
  for (std::size_t l = 0; l < P.weights.size(); ++l) {
    update(P.weights[l], state.first_moment.weights[l], state.second_moment.weights[l], grads.weights[l]);
    update(P.biases[l], state.first_moment.biases[l], state.second_moment.biases[l], grads.biases[l]);
  }
  for (std::size_t l = 0; l < P.time_maps.size(); ++l)
    update(P.time_maps[l], state.first_moment.time_maps[l], state.second_moment.time_maps[l], grads.time_maps[l]);
}

// Checkpoint format (JSON):
//   format: "scoremi-checkpoint", version: 1, activation: "silu",
//   layer_dims: [n, h1, ..., n],
//   parameters: flat array, per layer W row-major then b, then time maps,
//   embedding_frequencies: array or null.
inline nlohmann::json checkpoint_json(const ScoreNetwork& net) {
  nlohmann::json j;
  j["format"] = "scoremi-checkpoint";
  j["version"] = 1;
  j["activation"] = "silu";
  j["layer_dims"] = net.layer_dims();
  j["parameters"] = net.params().flatten();
  if (net.time_embedding()) {
    const auto& f = net.time_embedding()->frequencies;
    j["embedding_frequencies"] = std::vector<double>(f.data(), f.data() + f.size());
  } else {
    j["embedding_frequencies"] = nullptr;
  }
  return j;
}

inline ScoreNetwork network_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "scoremi-checkpoint")
      throw ConfigError("checkpoint: unexpected format tag");
    if (j.at("activation").get<std::string>() != "silu") throw ConfigError("checkpoint: unsupported activation");
    std::optional<TimeEmbedding> emb;
    if (!j.at("embedding_frequencies").is_null()) {
      const auto f = j.at("embedding_frequencies").get<std::vector<double>>();
      emb = TimeEmbedding{Eigen::Map<const Vector>(f.data(), static_cast<Eigen::Index>(f.size()))};
    }
    ScoreNetwork net(j.at("layer_dims").get<std::vector<int>>(), std::move(emb));
    const auto flat = j.at("parameters").get<std::vector<double>>();
    net.params().assign(flat);
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const ScoreNetwork& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out << checkpoint_json(net).dump();
  if (!out) throw IoError("failed writing checkpoint " + path);
}

inline ScoreNetwork load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + path + ": " + e.what());
  }
  return network_from_json(j);
}

}  // namespace scoremi
