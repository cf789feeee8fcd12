#include "doctest.h"

#include <cmath>
#include <random>

#include "uai/errors.h"
#include "uai/nn_core.h"

namespace nn = uai::nn;
using nn::Matrix;
using nn::Vector;

namespace {

nn::DenseLayer layer_of(Matrix w, Vector b, nn::Activation act) {
  return {std::move(w), std::move(b), act};
}

// Scalar loss sum_j <c_j, stack(x_j)> used by the finite-difference oracle.
double probe_loss(const nn::LayerStack& stack, const Matrix& x, const Matrix& c) {
  return (stack.forward(x, nullptr).array() * c.array()).sum();
}

double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

}  // namespace

TEST_CASE("dense_forward on hand-checked layers") {
  SUBCASE("zero map") {
    auto layer = layer_of(Matrix::Zero(3, 2), Vector::Zero(3), nn::Activation::kLinear);
    Vector x(2);
    x << 4.0, -7.5;
    CHECK(nn::dense_forward(layer, x).isZero(0.0));
  }
  SUBCASE("relu identity") {
    auto layer = layer_of(Matrix::Identity(2, 2), Vector::Zero(2), nn::Activation::kRelu);
    Vector x(2);
    x << -1.0, 2.0;
    const Vector y = nn::dense_forward(layer, x);
    CHECK(y(0) == 0.0);
    CHECK(y(1) == 2.0);
  }
  SUBCASE("hand matrix multiply") {
    Matrix w(2, 2);
    w << 1, 2, 3, 4;
    Vector b(2);
    b << 0.5, -0.5;
    Vector x = Vector::Ones(2);
    const Vector y = nn::dense_forward(layer_of(w, b, nn::Activation::kLinear), x);
    CHECK(y(0) == doctest::Approx(3.5));
    CHECK(y(1) == doctest::Approx(6.5));
  }
  SUBCASE("dimension mismatch") {
    auto layer = layer_of(Matrix::Zero(1, 2), Vector::Zero(1), nn::Activation::kLinear);
    CHECK_THROWS_AS(nn::dense_forward(layer, Vector::Zero(3)), uai::StructuralError);
  }
}

TEST_CASE("backward on scalar examples") {
  SUBCASE("linear derivative") {
    auto layer = layer_of(Matrix::Constant(1, 1, 3.0), Vector::Zero(1), nn::Activation::kLinear);
    nn::Tape tape;
    nn::dense_forward(layer, Vector::Constant(1, 2.0), &tape);
    const auto g = nn::backward(layer, tape, Vector::Ones(1));
    CHECK(g.layers[0].weights(0, 0) == 2.0);
  }
  SUBCASE("sigmoid at zero") {
    auto layer = layer_of(Matrix::Ones(1, 1), Vector::Zero(1), nn::Activation::kSigmoid);
    nn::Tape tape;
    nn::dense_forward(layer, Vector::Zero(1), &tape);
    const auto g = nn::backward(layer, tape, Vector::Ones(1));
    CHECK(g.input(0, 0) == doctest::Approx(0.25));
  }
  SUBCASE("stop-gradient row is exactly zero") {
    Matrix w(1, 2);
    w << 1.7, -0.3;
    auto layer = layer_of(w, Vector::Zero(1), nn::Activation::kSigmoid);
    nn::Tape tape;
    tape.mark_stop_gradient(1);
    Vector x(2);
    x << 0.4, 2.0;
    nn::dense_forward(layer, x, &tape);
    const auto g = nn::backward(layer, tape, Vector::Ones(1));
    CHECK(g.input(1, 0) == 0.0);
    CHECK(g.input(0, 0) != 0.0);
    // The weight on the stopped input still learns from its value.
    CHECK(g.layers[0].weights(0, 1) != 0.0);
  }
  SUBCASE("backward before forward") {
    auto layer = layer_of(Matrix::Ones(1, 1), Vector::Zero(1), nn::Activation::kLinear);
    nn::Tape tape;
    CHECK_THROWS_AS(nn::backward(layer, tape, Vector::Ones(1)), uai::UsageError);
  }
}

TEST_CASE("analytic gradients match central differences on random stacks") {
  nn::Rng rng(7);
  const nn::Activation acts[] = {nn::Activation::kRelu, nn::Activation::kSigmoid,
                                 nn::Activation::kLinear, nn::Activation::kSoftmax};
  std::uniform_int_distribution<int> dim(1, 8);
  for (int trial = 0; trial < 24; ++trial) {
    const nn::Activation hidden = acts[trial % 3];
    const nn::Activation output = acts[(trial / 3) % 4];
    const nn::Index in = dim(rng);
    const nn::Index widths[] = {dim(rng), dim(rng) + 1};
    nn::LayerStack stack = nn::LayerStack::build(in, widths, hidden, output, rng);
    for (std::size_t l = 0; l < stack.size(); ++l) {
      stack.layer(l).bias = Vector::Random(stack.layer(l).out_dim()) * 0.3;
    }
    const Matrix x = Matrix::Random(in, 3);
    const Matrix c = Matrix::Random(widths[1], 3);

    nn::Tape tape;
    stack.forward(x, &tape);
    const nn::StackGradient g = stack.backward(tape, c);

    const double h = 1e-5;
    for (std::size_t l = 0; l < stack.size(); ++l) {
      Matrix& w = stack.layer(l).weights;
      for (nn::Index i = 0; i < w.size(); ++i) {
        const double keep = w.data()[i];
        w.data()[i] = keep + h;
        const double up = probe_loss(stack, x, c);
        w.data()[i] = keep - h;
        const double down = probe_loss(stack, x, c);
        w.data()[i] = keep;
        const double numeric = (up - down) / (2 * h);
        CHECK(rel_error(g.layers[l].weights.data()[i], numeric) < 1e-4);
      }
      Vector& b = stack.layer(l).bias;
      for (nn::Index i = 0; i < b.size(); ++i) {
        const double keep = b(i);
        b(i) = keep + h;
        const double up = probe_loss(stack, x, c);
        b(i) = keep - h;
        const double down = probe_loss(stack, x, c);
        b(i) = keep;
        CHECK(rel_error(g.layers[l].bias(i), (up - down) / (2 * h)) < 1e-4);
      }
    }
  }
}

TEST_CASE("rmsprop_step update rule") {
  nn::RmsPropConfig config{0.01, 0.9, 1e-10};
  SUBCASE("first step, hand evaluation") {
    std::vector<double> theta{1.0};
    std::vector<nn::ParamRef> params{{"t", theta}};
    auto state = nn::make_optimizer_state(params, config);
    std::vector<Vector> grads{Vector::Constant(1, 4.0)};
    nn::rmsprop_step(params, grads, state);
    CHECK(state.accumulators[0](0) == doctest::Approx(1.6));
    CHECK(theta[0] - 1.0 == doctest::Approx(-0.031623).epsilon(1e-5));
  }
  SUBCASE("zero gradient leaves parameters unchanged and decays accumulator") {
    std::vector<double> theta{0.3, -2.0};
    std::vector<nn::ParamRef> params{{"t", theta}};
    auto state = nn::make_optimizer_state(params, config);
    state.accumulators[0] << 2.0, 0.5;
    std::vector<Vector> grads{Vector::Zero(2)};
    for (int i = 0; i < 10; ++i) nn::rmsprop_step(params, grads, state);
    CHECK(theta[0] == 0.3);
    CHECK(theta[1] == -2.0);
    CHECK(state.accumulators[0](0) < 2.0);
    CHECK(state.accumulators[0](0) >= 0.0);
  }
  SUBCASE("second identical step moves less") {
    std::vector<double> theta{0.0};
    std::vector<nn::ParamRef> params{{"t", theta}};
    auto state = nn::make_optimizer_state(params, config);
    std::vector<Vector> grads{Vector::Constant(1, 0.7)};
    nn::rmsprop_step(params, grads, state);
    const double first = std::abs(theta[0]);
    nn::rmsprop_step(params, grads, state);
    const double second = std::abs(theta[0]) - first;
    CHECK(second < first);
    CHECK(second > 0.0);
  }
  SUBCASE("non-finite gradient aborts without touching state") {
    std::vector<double> theta{1.0, 2.0};
    std::vector<nn::ParamRef> params{{"t", theta}};
    auto state = nn::make_optimizer_state(params, config);
    Vector g(2);
    g << 1.0, std::nan("");
    std::vector<Vector> grads{g};
    CHECK_THROWS_AS(nn::rmsprop_step(params, grads, state), uai::TrainingAborted);
    CHECK(theta[0] == 1.0);
    CHECK(state.accumulators[0].isZero(0.0));
  }
}

TEST_CASE("mse_loss") {
  Vector a(2), b(2);
  a << 3, 4;
  b << 0, 0;
  CHECK(nn::mse_loss(a, a) == 0.0);
  CHECK(nn::mse_loss(a, b) == 25.0);
  Vector e(2);
  e << 1, 0;
  CHECK(nn::mse_loss(e, b) == 1.0);
  CHECK_THROWS_AS(nn::mse_loss(a, Vector::Zero(3)), uai::StructuralError);
}

TEST_CASE("cross_entropy") {
  Vector onehot = Vector::Zero(10);
  onehot(3) = 1.0;
  CHECK(nn::cross_entropy(onehot, onehot) == 0.0);
  CHECK(nn::cross_entropy(onehot, Vector::Constant(10, 0.1)) ==
        doctest::Approx(2.302585).epsilon(1e-6));
  Vector target(2), predicted(2);
  target << 1, 0;
  predicted << 0.25, 0.75;
  CHECK(nn::cross_entropy(target, predicted) == doctest::Approx(1.386294).epsilon(1e-6));
  Vector negative(2);
  negative << 1.5, -0.5;
  CHECK_THROWS_AS(nn::cross_entropy(negative, predicted), uai::StructuralError);
  CHECK(nn::binary_cross_entropy(1.0, 0.25) == doctest::Approx(1.386294).epsilon(1e-6));
  CHECK(nn::binary_cross_entropy_logit(1.0, std::log(0.25 / 0.75)) ==
        doctest::Approx(1.386294).epsilon(1e-6));
  CHECK(nn::binary_cross_entropy_logit(0.0, 0.7) ==
        doctest::Approx(nn::binary_cross_entropy(0.0, 1.0 / (1.0 + std::exp(-0.7)))).epsilon(1e-12));
  // Saturated logits keep their exact loss instead of hitting the clamp.
  CHECK(nn::binary_cross_entropy_logit(0.0, 60.0) == doctest::Approx(60.0).epsilon(1e-12));
}

TEST_CASE("gaussian_noise") {
  nn::Rng rng(123);
  Vector x = Vector::LinSpaced(5, -1.0, 1.0);
  CHECK(nn::gaussian_noise(x, 0.0, rng) == x);

  const Matrix samples = nn::gaussian_noise(Matrix(Matrix::Zero(1, 100000)), 0.1, rng);
  const double mean = samples.mean();
  const double sd = std::sqrt((samples.array() - mean).square().sum() / (samples.size() - 1));
  CHECK(std::abs(mean) < 0.002);
  CHECK(sd >= 0.098);
  CHECK(sd <= 0.102);

  nn::Rng a(99), b(99);
  CHECK(nn::gaussian_noise(x, 0.3, a) == nn::gaussian_noise(x, 0.3, b));
}

TEST_CASE("rng state round-trips") {
  nn::Rng rng(5);
  rng.discard(17);
  nn::Rng copy;
  nn::load_rng(copy, nn::save_rng(rng));
  CHECK(copy() == rng());
  CHECK_THROWS_AS(nn::load_rng(copy, "not a state"), uai::FormatError);
}
