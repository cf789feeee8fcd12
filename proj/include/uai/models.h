#ifndef UAI_MODELS_H_
#define UAI_MODELS_H_

// The two unsupervised base detectors (denoising autoencoder and
// feature-to-class MLP), the logistic UAI head that turns either into an
// active detector, and the joint loss used to train them.

#include "json.hpp"

#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "uai/batch.h"
#include "uai/label_store.h"
#include "uai/nn_core.h"

namespace uai {

enum class BaseKind { kDae, kClassNet };

std::string_view to_string(BaseKind kind);

// Encoder input -> hidden[0] -> ... -> hidden.back() (= latent d) and a
// mirrored, independently-weighted decoder d -> ... -> hidden[0] -> input.
// Hidden layers are relu; the code layer itself is linear.
struct DaeModel {
  nn::LayerStack encoder;
  nn::LayerStack decoder;
  double noise_phi = 0.1;

  nn::Index input_dim() const { return encoder.in_dim(); }
  nn::Index latent_dim() const { return encoder.out_dim(); }
};

DaeModel make_dae(nn::Index input_dim, std::span<const nn::Index> hidden_sizes,
                  nn::Activation decoder_output, double noise_phi, nn::Rng& rng);

struct DaeOutput {
  nn::Vector latent;
  nn::Vector reconstruction;
  double score = 0.0;  // ||x - x_hat||^2
};

// With `rng` set the input is corrupted with N(0, phi^2) noise (training
// mode); with `rng` null the clean input is used (scoring mode).
DaeOutput dae_forward(const DaeModel& model, const nn::Vector& x,
                      nn::Rng* rng = nullptr);

// Trunk input -> hidden (relu, last hidden is the latent) and a softmax
// output layer over the classes.
struct ClassNetModel {
  nn::LayerStack trunk;
  nn::LayerStack output;  // one softmax layer

  nn::Index input_dim() const { return trunk.in_dim(); }
  nn::Index latent_dim() const { return trunk.out_dim(); }
  nn::Index num_classes() const { return output.out_dim(); }
};

ClassNetModel make_classnet(nn::Index input_dim, nn::Index num_classes,
                            std::span<const nn::Index> hidden_sizes,
                            nn::Rng& rng);

struct ClassNetOutput {
  nn::Vector latent;
  nn::Vector prediction;
  double score = 0.0;  // H(x_y, x_hat_y)
};

// Throws UsageError if `x_y` is empty (no class label available) and
// StructuralError if it is not one-hot over num_classes.
ClassNetOutput classnet_forward(const ClassNetModel& model,
                                const nn::Vector& x_x, const nn::Vector& x_y);

// Logistic layer over [l; s]. The score row is marked stop-gradient.
struct UaiHead {
  nn::DenseLayer layer;  // 1 x (d + 1), sigmoid

  nn::Index latent_dim() const { return layer.in_dim() - 1; }
  auto weight() const { return layer.weights.row(0); }
  double bias() const { return layer.bias(0); }
};

// Zero-initialized, so every instance starts at 0.5.
UaiHead make_uai_head(nn::Index latent_dim);

double uai_score(const UaiHead& head, const nn::Vector& latent, double score,
                 nn::Tape* tape = nullptr);

struct CompositeModel {
  std::variant<DaeModel, ClassNetModel> base;
  UaiHead head;

  BaseKind kind() const {
    return std::holds_alternative<DaeModel>(base) ? BaseKind::kDae
                                                  : BaseKind::kClassNet;
  }
  nn::Index input_dim() const;
  nn::Index latent_dim() const;

  // Trainable tensors in a fixed order: base blocks first, then
  // head.weight and head.bias.
  std::vector<nn::ParamRef> parameters();
  std::vector<std::string> parameter_names() const;
};

CompositeModel make_composite(std::variant<DaeModel, ClassNetModel> base);

// Clean-input scores for every column of a batch.
struct ScoreTable {
  nn::Matrix latent;      // d x B
  nn::Vector base_score;  // s_DAE or s_Class
  nn::Vector uai_score;   // s_uai, clamped strictly inside (0, 1)
  nn::Vector uai_logit;   // pre-sigmoid head output; ranks without saturation
};

ScoreTable score_batch(const CompositeModel& model, const Batch& batch);

enum class LossTerms { kFull, kBaseOnly, kUaiOnly };

struct LossOptions {
  LossTerms terms = LossTerms::kFull;
  // DAE input corruption for this evaluation (D x B); null means clean.
  const nn::Matrix* noise = nullptr;
  // Replaces the live base score fed to the head. Evaluating with the
  // scores frozen at their current values is the function whose gradient
  // the stop-gradient rule defines.
  const nn::Vector* frozen_scores = nullptr;
  // L_base covers only the first base_columns columns (all when negative);
  // later columns are labeled points that feed L_uai alone.
  nn::Index base_columns = -1;
};

struct LossValue {
  double base = 0.0;         // mean L_base over the base columns
  double uai = 0.0;          // mean H(y, s_uai) over labeled batch members
  std::size_t labeled = 0;   // labeled members of the batch
  nn::Vector scores;         // base score of every column in this pass

  double total() const { return base + uai; }
};

// Loss of `batch` and, when `grads` is given, its gradient with respect to
// parameters() (same order and flattened shapes).
LossValue evaluate_loss(const CompositeModel& model, const Batch& batch,
                        const LabelStore& labels, const LossOptions& options,
                        std::vector<nn::Vector>* grads = nullptr);

// L_base + L_uai on clean inputs.
double full_loss(const CompositeModel& model, const Batch& batch,
                 const LabelStore& labels);

// One forward/backward/RMSprop update of base and head jointly. Draws the
// DAE input noise from `rng`. Throws TrainingAborted on a non-finite loss
// or gradient, leaving the model unchanged.
LossValue train_step(CompositeModel& model, const Batch& batch,
                     const LabelStore& labels, nn::OptimizerState& optimizer,
                     nn::Rng& rng, LossTerms terms = LossTerms::kFull,
                     nn::Index base_columns = -1);

nn::OptimizerState make_optimizer(CompositeModel& model,
                                  const nn::RmsPropConfig& config);

// Checkpoint encoding. Doubles are written with round-trip precision so a
// save/load cycle is bit-exact.
nlohmann::json model_to_json(const CompositeModel& model);
CompositeModel model_from_json(const nlohmann::json& doc);
nlohmann::json optimizer_to_json(const nn::OptimizerState& state);
nn::OptimizerState optimizer_from_json(const nlohmann::json& doc);

}  // namespace uai

#endif  // UAI_MODELS_H_
