#ifndef UAI_NN_CORE_H_
#define UAI_NN_CORE_H_

// Dense feed-forward substrate: layers, tape-based backward, losses, input
// noise and RMSprop. Columns of every batch matrix are samples.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace uai::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using Rng = std::mt19937_64;

enum class Activation { kRelu, kSigmoid, kLinear, kSoftmax };

std::string_view to_string(Activation activation);
Activation activation_from_string(std::string_view name);

struct DenseLayer {
  Matrix weights;  // out_dim x in_dim
  Vector bias;     // out_dim
  Activation activation = Activation::kLinear;

  Index in_dim() const { return weights.cols(); }
  Index out_dim() const { return weights.rows(); }
};

// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
DenseLayer make_dense_layer(Index in_dim, Index out_dim, Activation activation,
                            Rng& rng);

// Throws StructuralError if bias and weight shapes disagree or any value is
// non-finite.
void check_layer(const DenseLayer& layer);

Matrix activate(Activation activation, const Matrix& pre);

// Recorded intermediate values of one forward pass through a layer stack.
// Rows of the stack input may be marked stop-gradient: their value flows
// forward, but backward() reports an exactly-zero gradient for them.
class Tape {
 public:
  struct Node {
    Matrix input;
    Matrix pre;
    Matrix output;
  };

  void clear() {
    nodes_.clear();
    complete_ = false;
  }
  void mark_stop_gradient(Index input_row) { stop_rows_.push_back(input_row); }
  const std::vector<Index>& stop_rows() const { return stop_rows_; }
  bool complete() const { return complete_; }
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  friend class LayerStack;
  friend Vector dense_forward(const DenseLayer&, const Vector&, Tape*);

  std::vector<Node> nodes_;
  std::vector<Index> stop_rows_;
  bool complete_ = false;
};

struct LayerGradient {
  Matrix weights;
  Vector bias;
};

struct StackGradient {
  std::vector<LayerGradient> layers;
  Matrix input;  // dLoss/dInput, stop-gradient rows zeroed
};

// What the gradient handed to backward() is taken with respect to.
enum class GradientAt { kOutput, kPreActivation };

class LayerStack {
 public:
  LayerStack() = default;
  explicit LayerStack(std::vector<DenseLayer> layers);

  // Builds in -> widths[0] -> ... -> widths.back(); `hidden` applies to all
  // layers but the last, which uses `output`.
  static LayerStack build(Index in_dim, std::span<const Index> widths,
                          Activation hidden, Activation output, Rng& rng);

  Index in_dim() const;
  Index out_dim() const;
  std::size_t size() const { return layers_.size(); }
  const DenseLayer& layer(std::size_t i) const { return layers_[i]; }
  DenseLayer& layer(std::size_t i) { return layers_[i]; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  // `tape` may be null for inference-only passes.
  Matrix forward(const Matrix& input, Tape* tape) const;

  // Throws UsageError if `tape` does not hold a completed forward pass.
  StackGradient backward(const Tape& tape, const Matrix& grad,
                         GradientAt at = GradientAt::kOutput) const;

 private:
  std::vector<DenseLayer> layers_;
};

// Single-sample convenience; records onto `tape` when given.
Vector dense_forward(const DenseLayer& layer, const Vector& input,
                     Tape* tape = nullptr);

// Backward through a single-layer tape (as produced by dense_forward).
StackGradient backward(const DenseLayer& layer, const Tape& tape,
                       const Vector& grad);

// Squared L2 norm of (x - x_hat).
double mse_loss(const Vector& x, const Vector& x_hat);

// -sum target_i * ln(max(predicted_i, 1e-12)). Both arguments must be
// probability vectors summing to 1 within 1e-6.
double cross_entropy(const Vector& target, const Vector& predicted);

// Clamped binary cross-entropy of label y in {0,1} against probability p.
double binary_cross_entropy(double y, double p);
// Same loss from the pre-sigmoid logit z; stays exact when sigmoid(z)
// rounds to 0 or 1.
double binary_cross_entropy_logit(double y, double z);

inline constexpr double kProbabilityFloor = 1e-12;

// x + N(0, phi^2) noise, i.i.d. per entry. phi == 0 returns x unchanged and
// draws nothing from `rng`.
Vector gaussian_noise(const Vector& x, double phi, Rng& rng);
Matrix gaussian_noise(const Matrix& x, double phi, Rng& rng);

// A named, contiguous view of one trainable tensor.
struct ParamRef {
  std::string name;
  std::span<double> values;
};

struct RmsPropConfig {
  double learning_rate = 0.01;
  double decay = 0.9;
  double epsilon = 1e-10;
};

struct OptimizerState {
  RmsPropConfig config;
  std::vector<Vector> accumulators;  // mirrors the parameter blocks
};

OptimizerState make_optimizer_state(std::span<const ParamRef> params,
                                    const RmsPropConfig& config);

// accum <- decay * accum + (1 - decay) * g^2
// theta <- theta - lr * g / (sqrt(accum) + eps)
// Throws TrainingAborted (leaving everything untouched) on a non-finite
// gradient, StructuralError on shape disagreement.
void rmsprop_step(std::span<const ParamRef> params,
                  std::span<const Vector> grads, OptimizerState& state);

// Textual engine state, for checkpoints.
std::string save_rng(const Rng& rng);
void load_rng(Rng& rng, const std::string& state);

}  // namespace uai::nn

#endif  // UAI_NN_CORE_H_
