#include "uai/models.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "uai/errors.h"

namespace uai {
namespace {

using nn::Index;
using nn::Matrix;
using nn::Vector;
using json = nlohmann::json;

constexpr int kModelSchemaVersion = 1;
constexpr int kOptimizerSchemaVersion = 1;

// Forward state of the base network for one batch.
struct BasePass {
  nn::Tape first;   // encoder or trunk
  nn::Tape second;  // decoder or softmax output
  Matrix latent;    // d x B
  Matrix output;    // reconstruction or class probabilities
  Vector score;     // per column
};

BasePass dae_pass(const DaeModel& model, const Batch& batch,
                  const Matrix* noise, bool record) {
  BasePass pass;
  nn::Tape* first = record ? &pass.first : nullptr;
  nn::Tape* second = record ? &pass.second : nullptr;
  if (noise != nullptr) {
    if (noise->rows() != batch.features.rows() ||
        noise->cols() != batch.features.cols()) {
      throw StructuralError("noise matrix does not match the batch");
    }
    pass.latent = model.encoder.forward(batch.features + *noise, first);
  } else {
    pass.latent = model.encoder.forward(batch.features, first);
  }
  pass.output = model.decoder.forward(pass.latent, second);
  pass.score = (batch.features - pass.output).colwise().squaredNorm().transpose();
  return pass;
}

void check_onehot(const ClassNetModel& model, const Batch& batch) {
  if (batch.class_onehot.size() == 0) {
    throw UsageError("ClassNet requires class labels, the batch has none");
  }
  if (batch.class_onehot.rows() != model.num_classes() ||
      batch.class_onehot.cols() != batch.features.cols()) {
    throw StructuralError("class label matrix is " +
                          std::to_string(batch.class_onehot.rows()) + "x" +
                          std::to_string(batch.class_onehot.cols()) +
                          ", expected " + std::to_string(model.num_classes()) +
                          " rows per sample");
  }
}

BasePass classnet_pass(const ClassNetModel& model, const Batch& batch,
                       bool record) {
  check_onehot(model, batch);
  BasePass pass;
  pass.latent = model.trunk.forward(batch.features, record ? &pass.first : nullptr);
  pass.output = model.output.forward(pass.latent, record ? &pass.second : nullptr);
  const Matrix logp =
      pass.output.array().max(nn::kProbabilityFloor).log().matrix();
  pass.score = -(batch.class_onehot.array() * logp.array()).colwise().sum().transpose();
  return pass;
}

BasePass base_pass(const CompositeModel& model, const Batch& batch,
                   const Matrix* noise, bool record) {
  if (batch.features.rows() != model.input_dim()) {
    throw StructuralError("batch has " + std::to_string(batch.features.rows()) +
                          " features, model expects " +
                          std::to_string(model.input_dim()));
  }
  if (const auto* dae = std::get_if<DaeModel>(&model.base)) {
    return dae_pass(*dae, batch, noise, record);
  }
  return classnet_pass(std::get<ClassNetModel>(model.base), batch, record);
}

void append_stack_grads(const nn::StackGradient& g, std::vector<Vector>& out) {
  for (const nn::LayerGradient& layer : g.layers) {
    out.emplace_back(Eigen::Map<const Vector>(layer.weights.data(),
                                              layer.weights.size()));
    out.push_back(layer.bias);
  }
}

void append_zero_grads(const nn::LayerStack& stack, std::vector<Vector>& out) {
  for (const nn::DenseLayer& layer : stack.layers()) {
    out.push_back(Vector::Zero(layer.weights.size()));
    out.push_back(Vector::Zero(layer.bias.size()));
  }
}

void append_stack_refs(nn::LayerStack& stack, const std::string& prefix,
                       std::vector<nn::ParamRef>& out) {
  for (std::size_t i = 0; i < stack.size(); ++i) {
    nn::DenseLayer& layer = stack.layer(i);
    const std::string name = prefix + "." + std::to_string(i);
    out.push_back({name + ".weight",
                   {layer.weights.data(), static_cast<std::size_t>(layer.weights.size())}});
    out.push_back({name + ".bias",
                   {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}});
  }
}

json layer_to_json(const nn::DenseLayer& layer) {
  return {
      {"activation", nn::to_string(layer.activation)},
      {"rows", layer.weights.rows()},
      {"cols", layer.weights.cols()},
      {"weights", std::vector<double>(layer.weights.data(),
                                      layer.weights.data() + layer.weights.size())},
      {"bias", std::vector<double>(layer.bias.data(),
                                   layer.bias.data() + layer.bias.size())},
  };
}

nn::DenseLayer layer_from_json(const json& doc) {
  nn::DenseLayer layer;
  const auto rows = doc.at("rows").get<Index>();
  const auto cols = doc.at("cols").get<Index>();
  const auto weights = doc.at("weights").get<std::vector<double>>();
  const auto bias = doc.at("bias").get<std::vector<double>>();
  if (rows <= 0 || cols <= 0 || static_cast<Index>(weights.size()) != rows * cols ||
      static_cast<Index>(bias.size()) != rows) {
    throw FormatError("layer shape does not match its parameter arrays");
  }
  layer.weights = Eigen::Map<const Matrix>(weights.data(), rows, cols);
  layer.bias = Eigen::Map<const Vector>(bias.data(), rows);
  layer.activation = nn::activation_from_string(doc.at("activation").get<std::string>());
  return layer;
}

json stack_to_json(const nn::LayerStack& stack) {
  json layers = json::array();
  for (const nn::DenseLayer& layer : stack.layers()) layers.push_back(layer_to_json(layer));
  return layers;
}

nn::LayerStack stack_from_json(const json& doc) {
  std::vector<nn::DenseLayer> layers;
  for (const json& layer : doc) layers.push_back(layer_from_json(layer));
  return nn::LayerStack(std::move(layers));
}

}  // namespace

std::string_view to_string(BaseKind kind) {
  return kind == BaseKind::kDae ? "dae" : "classnet";
}

DaeModel make_dae(Index input_dim, std::span<const Index> hidden_sizes,
                  nn::Activation decoder_output, double noise_phi, nn::Rng& rng) {
  if (hidden_sizes.empty()) throw UsageError("hidden_sizes must not be empty");
  if (noise_phi < 0.0) throw UsageError("noise_phi must be >= 0");
  std::vector<Index> decoder_widths(hidden_sizes.begin(), hidden_sizes.end() - 1);
  std::reverse(decoder_widths.begin(), decoder_widths.end());
  decoder_widths.push_back(input_dim);

  DaeModel model;
  model.encoder = nn::LayerStack::build(input_dim, hidden_sizes, nn::Activation::kRelu,
                                        nn::Activation::kLinear, rng);
  model.decoder = nn::LayerStack::build(hidden_sizes.back(), decoder_widths,
                                        nn::Activation::kRelu, decoder_output, rng);
  model.noise_phi = noise_phi;
  return model;
}

DaeOutput dae_forward(const DaeModel& model, const Vector& x, nn::Rng* rng) {
  if (x.size() != model.input_dim()) {
    throw StructuralError("input length " + std::to_string(x.size()) +
                          " does not match DAE input " +
                          std::to_string(model.input_dim()));
  }
  const Vector input = rng != nullptr ? nn::gaussian_noise(x, model.noise_phi, *rng) : x;
  DaeOutput out;
  out.latent = model.encoder.forward(input, nullptr).col(0);
  out.reconstruction = model.decoder.forward(out.latent, nullptr).col(0);
  out.score = nn::mse_loss(x, out.reconstruction);
  return out;
}

ClassNetModel make_classnet(Index input_dim, Index num_classes,
                            std::span<const Index> hidden_sizes, nn::Rng& rng) {
  if (hidden_sizes.empty()) throw UsageError("hidden_sizes must not be empty");
  if (num_classes < 2) throw UsageError("ClassNet needs at least two classes");
  ClassNetModel model;
  model.trunk = nn::LayerStack::build(input_dim, hidden_sizes, nn::Activation::kRelu,
                                      nn::Activation::kRelu, rng);
  const Index output_width[] = {num_classes};
  model.output = nn::LayerStack::build(hidden_sizes.back(), output_width,
                                       nn::Activation::kSoftmax,
                                       nn::Activation::kSoftmax, rng);
  return model;
}

ClassNetOutput classnet_forward(const ClassNetModel& model, const Vector& x_x,
                                const Vector& x_y) {
  if (x_y.size() == 0) {
    throw UsageError("ClassNet requires a class label for every instance");
  }
  if (x_y.size() != model.num_classes()) {
    throw StructuralError("class label has " + std::to_string(x_y.size()) +
                          " entries, model has " +
                          std::to_string(model.num_classes()) + " classes");
  }
  if (x_x.size() != model.input_dim()) {
    throw StructuralError("input length does not match ClassNet input");
  }
  ClassNetOutput out;
  out.latent = model.trunk.forward(x_x, nullptr).col(0);
  out.prediction = model.output.forward(out.latent, nullptr).col(0);
  out.score = nn::cross_entropy(x_y, out.prediction);
  return out;
}

UaiHead make_uai_head(Index latent_dim) {
  UaiHead head;
  head.layer.weights = Matrix::Zero(1, latent_dim + 1);
  head.layer.bias = Vector::Zero(1);
  head.layer.activation = nn::Activation::kSigmoid;
  return head;
}

double uai_score(const UaiHead& head, const Vector& latent, double score,
                 nn::Tape* tape) {
  if (latent.size() != head.latent_dim()) {
    throw StructuralError("latent length " + std::to_string(latent.size()) +
                          " does not match head width " +
                          std::to_string(head.latent_dim()));
  }
  Vector input(latent.size() + 1);
  input << latent, score;
  if (tape != nullptr) tape->mark_stop_gradient(latent.size());
  return nn::dense_forward(head.layer, input, tape)(0);
}

Index CompositeModel::input_dim() const {
  return std::visit([](const auto& m) { return m.input_dim(); }, base);
}

Index CompositeModel::latent_dim() const {
  return std::visit([](const auto& m) { return m.latent_dim(); }, base);
}

std::vector<nn::ParamRef> CompositeModel::parameters() {
  std::vector<nn::ParamRef> refs;
  if (auto* dae = std::get_if<DaeModel>(&base)) {
    append_stack_refs(dae->encoder, "encoder", refs);
    append_stack_refs(dae->decoder, "decoder", refs);
  } else {
    auto& net = std::get<ClassNetModel>(base);
    append_stack_refs(net.trunk, "trunk", refs);
    append_stack_refs(net.output, "output", refs);
  }
  refs.push_back({"head.weight",
                  {head.layer.weights.data(),
                   static_cast<std::size_t>(head.layer.weights.size())}});
  refs.push_back({"head.bias", {head.layer.bias.data(), 1}});
  return refs;
}

std::vector<std::string> CompositeModel::parameter_names() const {
  std::vector<std::string> names;
  auto add_stack = [&names](const nn::LayerStack& stack, const std::string& prefix) {
    for (std::size_t i = 0; i < stack.size(); ++i) {
      names.push_back(prefix + "." + std::to_string(i) + ".weight");
      names.push_back(prefix + "." + std::to_string(i) + ".bias");
    }
  };
  if (const auto* dae = std::get_if<DaeModel>(&base)) {
    add_stack(dae->encoder, "encoder");
    add_stack(dae->decoder, "decoder");
  } else {
    const auto& net = std::get<ClassNetModel>(base);
    add_stack(net.trunk, "trunk");
    add_stack(net.output, "output");
  }
  names.push_back("head.weight");
  names.push_back("head.bias");
  return names;
}

CompositeModel make_composite(std::variant<DaeModel, ClassNetModel> base) {
  CompositeModel model{std::move(base), {}};
  model.head = make_uai_head(model.latent_dim());
  return model;
}

ScoreTable score_batch(const CompositeModel& model, const Batch& batch) {
  BasePass pass = base_pass(model, batch, nullptr, false);
  ScoreTable table;
  Matrix logits = model.head.layer.weights.leftCols(model.latent_dim()) * pass.latent;
  logits.array() += model.head.layer.weights(0, model.latent_dim()) *
                        pass.score.transpose().array() +
                    model.head.layer.bias(0);
  constexpr double kLow = std::numeric_limits<double>::min();
  const double high = std::nextafter(1.0, 0.0);
  table.uai_score = nn::activate(nn::Activation::kSigmoid, logits)
                        .row(0)
                        .transpose()
                        .cwiseMax(kLow)
                        .cwiseMin(high);
  table.uai_logit = logits.row(0).transpose();
  table.latent = std::move(pass.latent);
  table.base_score = std::move(pass.score);
  return table;
}

LossValue evaluate_loss(const CompositeModel& model, const Batch& batch,
                        const LabelStore& labels, const LossOptions& options,
                        std::vector<Vector>* grads) {
  const Index batch_size = batch.size();
  if (batch_size == 0) throw UsageError("empty batch");
  if (static_cast<Index>(batch.indices.size()) != batch_size) {
    throw StructuralError("batch indices do not match its columns");
  }
  if (options.frozen_scores != nullptr && options.frozen_scores->size() != batch_size) {
    throw StructuralError("frozen scores do not match the batch");
  }
  const bool use_base = options.terms != LossTerms::kUaiOnly;
  const bool use_uai = options.terms != LossTerms::kBaseOnly;
  const Index d = model.latent_dim();

  const Index base_columns = options.base_columns < 0 ? batch_size : options.base_columns;
  if (base_columns > batch_size) throw StructuralError("base_columns exceeds the batch");

  BasePass pass = base_pass(model, batch, options.noise, grads != nullptr);

  LossValue value;
  if (use_base && base_columns > 0) value.base = pass.score.head(base_columns).mean();

  // The labeled subset, where the indicator of L_uai is 1.
  std::vector<Index> columns;
  std::vector<double> targets;
  for (Index c = 0; c < batch_size; ++c) {
    if (auto y = labels.get(batch.indices[static_cast<std::size_t>(c)])) {
      columns.push_back(c);
      targets.push_back(static_cast<double>(*y));
    }
  }
  value.labeled = columns.size();
  value.scores = pass.score;
  const auto n_labeled = static_cast<Index>(columns.size());

  nn::LayerStack head_stack;
  nn::Tape head_tape;
  Matrix head_out;
  if (use_uai && n_labeled > 0) {
    Matrix head_in(d + 1, n_labeled);
    for (Index j = 0; j < n_labeled; ++j) {
      const Index c = columns[static_cast<std::size_t>(j)];
      head_in.col(j).head(d) = pass.latent.col(c);
      head_in(d, j) = options.frozen_scores != nullptr ? (*options.frozen_scores)(c)
                                                       : pass.score(c);
    }
    head_stack = nn::LayerStack({model.head.layer});
    head_tape.mark_stop_gradient(d);
    head_out = head_stack.forward(head_in, &head_tape);
    const Matrix logits = (model.head.layer.weights * head_in).array() + model.head.bias();
    double sum = 0.0;
    for (Index j = 0; j < n_labeled; ++j) {
      sum += nn::binary_cross_entropy_logit(targets[static_cast<std::size_t>(j)], logits(0, j));
    }
    value.uai = sum / static_cast<double>(n_labeled);
  }

  if (grads == nullptr) return value;
  grads->clear();

  // Gradient reaching the latent code, from the head and from the base loss.
  Matrix latent_grad = Matrix::Zero(d, batch_size);
  Vector head_weight_grad = Vector::Zero(d + 1);
  Vector head_bias_grad = Vector::Zero(1);
  if (use_uai && n_labeled > 0) {
    Matrix dz(1, n_labeled);
    for (Index j = 0; j < n_labeled; ++j) {
      dz(0, j) = (head_out(0, j) - targets[static_cast<std::size_t>(j)]) /
                 static_cast<double>(n_labeled);
    }
    const nn::StackGradient g =
        head_stack.backward(head_tape, dz, nn::GradientAt::kPreActivation);
    head_weight_grad = g.layers[0].weights.row(0).transpose();
    head_bias_grad = g.layers[0].bias;
    for (Index j = 0; j < n_labeled; ++j) {
      latent_grad.col(columns[static_cast<std::size_t>(j)]) += g.input.col(j).head(d);
    }
  }

  if (const auto* dae = std::get_if<DaeModel>(&model.base)) {
    nn::StackGradient decoder_grad;
    if (use_base) {
      Matrix recon_grad = (2.0 / static_cast<double>(std::max<Index>(base_columns, 1))) *
                          (pass.output - batch.features);
      recon_grad.rightCols(batch_size - base_columns).setZero();
      decoder_grad = dae->decoder.backward(pass.second, recon_grad);
      latent_grad += decoder_grad.input;
    }
    append_stack_grads(dae->encoder.backward(pass.first, latent_grad), *grads);
    if (use_base) {
      append_stack_grads(decoder_grad, *grads);
    } else {
      append_zero_grads(dae->decoder, *grads);
    }
  } else {
    const auto& net = std::get<ClassNetModel>(model.base);
    nn::StackGradient output_grad;
    if (use_base) {
      Matrix dz = (pass.output - batch.class_onehot) /
                  static_cast<double>(std::max<Index>(base_columns, 1));
      dz.rightCols(batch_size - base_columns).setZero();
      output_grad = net.output.backward(pass.second, dz, nn::GradientAt::kPreActivation);
      latent_grad += output_grad.input;
    }
    append_stack_grads(net.trunk.backward(pass.first, latent_grad), *grads);
    if (use_base) {
      append_stack_grads(output_grad, *grads);
    } else {
      append_zero_grads(net.output, *grads);
    }
  }
  grads->push_back(std::move(head_weight_grad));
  grads->push_back(std::move(head_bias_grad));
  return value;
}

double full_loss(const CompositeModel& model, const Batch& batch,
                 const LabelStore& labels) {
  return evaluate_loss(model, batch, labels, {}).total();
}

LossValue train_step(CompositeModel& model, const Batch& batch,
                     const LabelStore& labels, nn::OptimizerState& optimizer,
                     nn::Rng& rng, LossTerms terms, Index base_columns) {
  Matrix noise;
  LossOptions options;
  options.terms = terms;
  options.base_columns = base_columns;
  if (const auto* dae = std::get_if<DaeModel>(&model.base); dae != nullptr &&
                                                             dae->noise_phi > 0.0) {
    noise = nn::gaussian_noise(Matrix(Matrix::Zero(batch.features.rows(), batch.features.cols())),
                               dae->noise_phi, rng);
    options.noise = &noise;
  }
  std::vector<Vector> grads;
  const LossValue value = evaluate_loss(model, batch, labels, options, &grads);
  if (!std::isfinite(value.total())) {
    throw TrainingAborted("non-finite loss (base " + std::to_string(value.base) +
                          ", uai " + std::to_string(value.uai) + ")");
  }
  const std::vector<nn::ParamRef> params = model.parameters();
  nn::rmsprop_step(params, grads, optimizer);
  return value;
}

nn::OptimizerState make_optimizer(CompositeModel& model,
                                  const nn::RmsPropConfig& config) {
  const std::vector<nn::ParamRef> params = model.parameters();
  return nn::make_optimizer_state(params, config);
}

json model_to_json(const CompositeModel& model) {
  json doc = {{"version", kModelSchemaVersion},
              {"kind", to_string(model.kind())},
              {"head", layer_to_json(model.head.layer)}};
  if (const auto* dae = std::get_if<DaeModel>(&model.base)) {
    doc["noise_phi"] = dae->noise_phi;
    doc["encoder"] = stack_to_json(dae->encoder);
    doc["decoder"] = stack_to_json(dae->decoder);
  } else {
    const auto& net = std::get<ClassNetModel>(model.base);
    doc["trunk"] = stack_to_json(net.trunk);
    doc["output"] = stack_to_json(net.output);
  }
  return doc;
}

CompositeModel model_from_json(const json& doc) {
  if (doc.at("version").get<int>() != kModelSchemaVersion) {
    throw MigrationError("model schema version " + doc.at("version").dump() +
                         " is not supported (expected " +
                         std::to_string(kModelSchemaVersion) + ")");
  }
  CompositeModel model;
  const auto kind = doc.at("kind").get<std::string>();
  if (kind == "dae") {
    DaeModel dae;
    dae.encoder = stack_from_json(doc.at("encoder"));
    dae.decoder = stack_from_json(doc.at("decoder"));
    dae.noise_phi = doc.at("noise_phi").get<double>();
    if (dae.decoder.in_dim() != dae.encoder.out_dim() ||
        dae.decoder.out_dim() != dae.encoder.in_dim()) {
      throw FormatError("decoder does not mirror encoder");
    }
    model.base = std::move(dae);
  } else if (kind == "classnet") {
    ClassNetModel net;
    net.trunk = stack_from_json(doc.at("trunk"));
    net.output = stack_from_json(doc.at("output"));
    if (net.output.in_dim() != net.trunk.out_dim()) {
      throw FormatError("output layer does not match trunk");
    }
    model.base = std::move(net);
  } else {
    throw FormatError("unknown model kind '" + kind + "'");
  }
  model.head.layer = layer_from_json(doc.at("head"));
  if (model.head.latent_dim() != model.latent_dim()) {
    throw FormatError("head width does not match latent dimension");
  }
  return model;
}

json optimizer_to_json(const nn::OptimizerState& state) {
  json accumulators = json::array();
  for (const Vector& a : state.accumulators) {
    accumulators.push_back(std::vector<double>(a.data(), a.data() + a.size()));
  }
  return {{"version", kOptimizerSchemaVersion},
          {"learning_rate", state.config.learning_rate},
          {"decay", state.config.decay},
          {"epsilon", state.config.epsilon},
          {"accumulators", std::move(accumulators)}};
}

nn::OptimizerState optimizer_from_json(const json& doc) {
  if (doc.at("version").get<int>() != kOptimizerSchemaVersion) {
    throw MigrationError("optimizer schema version " + doc.at("version").dump() +
                         " is not supported");
  }
  nn::OptimizerState state;
  state.config.learning_rate = doc.at("learning_rate").get<double>();
  state.config.decay = doc.at("decay").get<double>();
  state.config.epsilon = doc.at("epsilon").get<double>();
  for (const json& a : doc.at("accumulators")) {
    const auto values = a.get<std::vector<double>>();
    state.accumulators.emplace_back(Eigen::Map<const Vector>(values.data(),
                                                             static_cast<Index>(values.size())));
  }
  return state;
}

}  // namespace uai
