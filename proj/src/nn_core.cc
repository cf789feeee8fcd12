#include "uai/nn_core.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "uai/errors.h"

namespace uai::nn {
namespace {

Matrix activation_backward(Activation activation, const Matrix& pre,
                           const Matrix& out, const Matrix& grad) {
  switch (activation) {
    case Activation::kLinear:
      return grad;
    case Activation::kRelu:
      return (pre.array() > 0.0).select(grad, 0.0);
    case Activation::kSigmoid:
      return (grad.array() * out.array() * (1.0 - out.array())).matrix();
    case Activation::kSoftmax: {
      // J^T g = p * (g - <p, g>) per column.
      const Eigen::RowVectorXd dot = (out.array() * grad.array()).colwise().sum();
      return (out.array() * (grad.rowwise() - dot).array()).matrix();
    }
  }
  return grad;
}

void check_probability_vector(const Vector& v, const char* what) {
  if ((v.array() < 0.0).any()) {
    throw StructuralError(std::string(what) + " has negative entries");
  }
  if (std::abs(v.sum() - 1.0) > 1e-6) {
    throw StructuralError(std::string(what) + " does not sum to 1");
  }
}

}  // namespace

std::string_view to_string(Activation activation) {
  switch (activation) {
    case Activation::kRelu:
      return "relu";
    case Activation::kSigmoid:
      return "sigmoid";
    case Activation::kLinear:
      return "linear";
    case Activation::kSoftmax:
      return "softmax";
  }
  return "linear";
}

Activation activation_from_string(std::string_view name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "linear") return Activation::kLinear;
  if (name == "softmax") return Activation::kSoftmax;
  throw FormatError("unknown activation '" + std::string(name) + "'");
}

DenseLayer make_dense_layer(Index in_dim, Index out_dim, Activation activation,
                            Rng& rng) {
  if (in_dim <= 0 || out_dim <= 0) {
    throw StructuralError("layer dimensions must be positive");
  }
  const double limit = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  std::uniform_real_distribution<double> uniform(-limit, limit);
  DenseLayer layer;
  layer.weights.resize(out_dim, in_dim);
  // Column-major fill order is part of the reproducibility contract.
  for (Index j = 0; j < in_dim; ++j) {
    for (Index i = 0; i < out_dim; ++i) layer.weights(i, j) = uniform(rng);
  }
  layer.bias = Vector::Zero(out_dim);
  layer.activation = activation;
  return layer;
}

void check_layer(const DenseLayer& layer) {
  if (layer.bias.size() != layer.weights.rows()) {
    throw StructuralError("bias length " + std::to_string(layer.bias.size()) +
                          " does not match out_dim " +
                          std::to_string(layer.weights.rows()));
  }
  if (!layer.weights.allFinite() || !layer.bias.allFinite()) {
    throw StructuralError("layer holds non-finite parameters");
  }
}

Matrix activate(Activation activation, const Matrix& pre) {
  switch (activation) {
    case Activation::kLinear:
      return pre;
    case Activation::kRelu:
      return pre.cwiseMax(0.0);
    case Activation::kSigmoid:
      return (1.0 / (1.0 + (-pre.array()).exp())).matrix();
    case Activation::kSoftmax: {
      const Eigen::RowVectorXd max = pre.colwise().maxCoeff();
      Matrix e = (pre.rowwise() - max).array().exp().matrix();
      const Eigen::RowVectorXd sum = e.colwise().sum();
      for (Index c = 0; c < e.cols(); ++c) e.col(c) /= sum(c);
      return e;
    }
  }
  return pre;
}

LayerStack::LayerStack(std::vector<DenseLayer> layers)
    : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    check_layer(layers_[i]);
    if (i > 0 && layers_[i].in_dim() != layers_[i - 1].out_dim()) {
      throw StructuralError("layer " + std::to_string(i) +
                            " input does not match previous output");
    }
  }
}

LayerStack LayerStack::build(Index in_dim, std::span<const Index> widths,
                             Activation hidden, Activation output, Rng& rng) {
  std::vector<DenseLayer> layers;
  Index fan_in = in_dim;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const bool last = i + 1 == widths.size();
    layers.push_back(
        make_dense_layer(fan_in, widths[i], last ? output : hidden, rng));
    fan_in = widths[i];
  }
  return LayerStack(std::move(layers));
}

Index LayerStack::in_dim() const {
  return layers_.empty() ? 0 : layers_.front().in_dim();
}

Index LayerStack::out_dim() const {
  return layers_.empty() ? 0 : layers_.back().out_dim();
}

Matrix LayerStack::forward(const Matrix& input, Tape* tape) const {
  if (input.rows() != in_dim()) {
    throw StructuralError("input has " + std::to_string(input.rows()) +
                          " rows, stack expects " + std::to_string(in_dim()));
  }
  if (tape != nullptr) tape->clear();
  Matrix current = input;
  for (const DenseLayer& layer : layers_) {
    Matrix pre = layer.weights * current;
    pre.colwise() += layer.bias;
    Matrix out = activate(layer.activation, pre);
    if (tape != nullptr) {
      tape->nodes_.push_back({std::move(current), std::move(pre), out});
    }
    current = std::move(out);
  }
  if (tape != nullptr) tape->complete_ = true;
  return current;
}

StackGradient LayerStack::backward(const Tape& tape, const Matrix& grad,
                                   GradientAt at) const {
  if (!tape.complete() || tape.nodes().size() != layers_.size()) {
    throw UsageError("backward called without a completed forward pass");
  }
  StackGradient result;
  result.layers.resize(layers_.size());
  Matrix upstream = grad;
  for (std::size_t n = layers_.size(); n-- > 0;) {
    const DenseLayer& layer = layers_[n];
    const Tape::Node& node = tape.nodes()[n];
    if (upstream.rows() != layer.out_dim() ||
        upstream.cols() != node.output.cols()) {
      throw StructuralError("gradient shape does not match layer output");
    }
    const bool pre_given = at == GradientAt::kPreActivation &&
                           n + 1 == layers_.size();
    const Matrix dz =
        pre_given ? upstream
                  : activation_backward(layer.activation, node.pre,
                                        node.output, upstream);
    result.layers[n].weights = dz * node.input.transpose();
    result.layers[n].bias = dz.rowwise().sum();
    upstream = layer.weights.transpose() * dz;
  }
  for (Index row : tape.stop_rows()) {
    if (row >= 0 && row < upstream.rows()) upstream.row(row).setZero();
  }
  result.input = std::move(upstream);
  return result;
}

Vector dense_forward(const DenseLayer& layer, const Vector& input, Tape* tape) {
  if (input.size() != layer.in_dim()) {
    throw StructuralError("input length " + std::to_string(input.size()) +
                          " does not match in_dim " +
                          std::to_string(layer.in_dim()));
  }
  Matrix pre = layer.weights * input + layer.bias;
  Matrix out = activate(layer.activation, pre);
  if (tape != nullptr) {
    tape->clear();
    tape->nodes_.push_back({input, pre, out});
    tape->complete_ = true;
  }
  return out.col(0);
}

StackGradient backward(const DenseLayer& layer, const Tape& tape,
                       const Vector& grad) {
  const LayerStack stack(std::vector<DenseLayer>{layer});
  return stack.backward(tape, grad);
}

double mse_loss(const Vector& x, const Vector& x_hat) {
  if (x.size() != x_hat.size()) {
    throw StructuralError("mse_loss: length mismatch");
  }
  return (x - x_hat).squaredNorm();
}

double cross_entropy(const Vector& target, const Vector& predicted) {
  if (target.size() != predicted.size()) {
    throw StructuralError("cross_entropy: length mismatch");
  }
  check_probability_vector(target, "target");
  check_probability_vector(predicted, "predicted");
  double loss = 0.0;
  for (Index i = 0; i < target.size(); ++i) {
    if (target(i) == 0.0) continue;
    loss -= target(i) * std::log(std::clamp(predicted(i), kProbabilityFloor, 1.0));
  }
  return loss;
}

double binary_cross_entropy(double y, double p) {
  const double q = std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

double binary_cross_entropy_logit(double y, double z) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

Vector gaussian_noise(const Vector& x, double phi, Rng& rng) {
  return gaussian_noise(Matrix(x), phi, rng).col(0);
}

Matrix gaussian_noise(const Matrix& x, double phi, Rng& rng) {
  if (phi < 0.0) throw UsageError("noise standard deviation must be >= 0");
  if (phi == 0.0) return x;
  std::normal_distribution<double> normal(0.0, phi);
  Matrix out = x;
  for (Index j = 0; j < out.cols(); ++j) {
    for (Index i = 0; i < out.rows(); ++i) out(i, j) += normal(rng);
  }
  return out;
}

OptimizerState make_optimizer_state(std::span<const ParamRef> params,
                                    const RmsPropConfig& config) {
  if (!(config.learning_rate > 0.0) || !(config.decay > 0.0 && config.decay < 1.0) ||
      !(config.epsilon > 0.0)) {
    throw UsageError("invalid RMSprop hyper-parameters");
  }
  OptimizerState state;
  state.config = config;
  for (const ParamRef& p : params) {
    state.accumulators.push_back(
        Vector::Zero(static_cast<Index>(p.values.size())));
  }
  return state;
}

void rmsprop_step(std::span<const ParamRef> params,
                  std::span<const Vector> grads, OptimizerState& state) {
  if (params.size() != grads.size() ||
      params.size() != state.accumulators.size()) {
    throw StructuralError("rmsprop_step: parameter/gradient count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto n = static_cast<Index>(params[i].values.size());
    if (grads[i].size() != n || state.accumulators[i].size() != n) {
      throw StructuralError("rmsprop_step: shape mismatch for " +
                            params[i].name);
    }
    if (!grads[i].allFinite()) {
      throw TrainingAborted("non-finite gradient for " + params[i].name);
    }
  }
  const double decay = state.config.decay;
  const double lr = state.config.learning_rate;
  const double eps = state.config.epsilon;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Eigen::Map<Eigen::ArrayXd> theta(params[i].values.data(),
                                     static_cast<Index>(params[i].values.size()));
    auto accum = state.accumulators[i].array();
    const auto g = grads[i].array();
    accum = decay * accum + (1.0 - decay) * g.square();
    theta -= lr * g / (accum.sqrt() + eps);
  }
}

std::string save_rng(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

void load_rng(Rng& rng, const std::string& state) {
  std::istringstream in(state);
  in >> rng;
  if (in.fail()) throw FormatError("corrupt RNG state");
}

}  // namespace uai::nn
