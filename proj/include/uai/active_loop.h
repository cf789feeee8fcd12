#ifndef UAI_ACTIVE_LOOP_H_
#define UAI_ACTIVE_LOOP_H_

// Budgeted expert-in-the-loop training: pretrain the base network, then
// alternate between training on the labels gathered so far, sending the
// top-k unlabeled points to an expert and absorbing the answers.

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uai/dataset.h"
#include "uai/errors.h"
#include "uai/label_store.h"
#include "uai/models.h"

namespace uai {

enum class ModelKind { kDae, kClassNet, kDaeUai, kClassNetUai };

std::string_view to_string(ModelKind kind);
// Accepts "dae", "classnet", "dae-uai"/"dae_uai", "classnet-uai"/"classnet_uai".
ModelKind model_kind_from_string(std::string_view name);
bool uses_head(ModelKind kind);
BaseKind base_of(ModelKind kind);

// Which score a UAI model ranks by in a given round. Base-only models always
// rank by their base score. The switching policies rank by the base score
// until the label store holds a positive (and, for kSwitchOnBothClasses, a
// negative as well), then by s_uai.
enum class RankingPolicy {
  kSwitchOnBothClasses,
  kSwitchOnFirstPositive,
  kAlwaysUai,
  kAlwaysBase,
};

std::string_view to_string(RankingPolicy policy);
RankingPolicy ranking_policy_from_string(std::string_view name);

struct RunConfig {
  std::size_t budget = 0;
  std::size_t k = 10;
  int steps_pre = 5000;
  int steps_active = 100;
  double learning_rate = 0.01;
  std::size_t batch_size = 256;
  ModelKind model_kind = ModelKind::kDaeUai;
  std::vector<nn::Index> hidden_sizes = {256, 64, 8};
  double noise_phi = 0.1;
  std::uint64_t seed = 0;
  RankingPolicy policy = RankingPolicy::kSwitchOnBothClasses;
  // DAE output layer; unset picks sigmoid for unit-interval data and linear
  // otherwise.
  std::optional<nn::Activation> decoder_output;
};

nlohmann::json to_json(const RunConfig& config);
// Missing fields keep their defaults; unknown fields are a UsageError.
RunConfig run_config_from_json(const nlohmann::json& doc);

// Throws UsageError naming the offending fields.
void validate(const RunConfig& config, const Dataset& dataset);

// k used in benchmark mode when none is given: 3 for datasets with fewer
// than 100 known anomalies, 10 otherwise.
std::size_t default_k(const Dataset& dataset);

// The k unlabeled indices with the highest scores, best first; ties go to
// the lower index.
std::vector<std::size_t> select_top_k(std::span<const double> scores,
                                      const LabelStore& labeled, std::size_t k);

class Expert {
 public:
  virtual ~Expert() = default;
  // One label (0 normal, 1 anomaly) per index, in order. Throws
  // ExpertUnavailable when no answer can be given right now.
  virtual std::vector<int> audit(std::span<const std::size_t> indices) = 0;
};

class ExpertUnavailable : public Error {
 public:
  using Error::Error;
};

// Answers from the dataset's hidden ground truth.
class OracleExpert : public Expert {
 public:
  explicit OracleExpert(const Dataset& dataset);
  std::vector<int> audit(std::span<const std::size_t> indices) override;
  std::size_t audits() const { return audits_; }

 private:
  const Dataset& dataset_;
  std::size_t audits_ = 0;
};

enum class ScoreSource { kBase, kUai };

std::string_view to_string(ScoreSource source);

struct AuditRound {
  std::size_t round = 0;  // 1-based
  std::vector<std::size_t> selected;
  std::vector<int> labels;
  std::vector<double> uai_scores;   // of the selected points; empty without a head
  std::vector<double> base_scores;  // of the selected points
  ScoreSource ranked_by = ScoreSource::kBase;
  std::size_t found = 0;  // cumulative anomalies after this round
};

struct RunResult {
  RunConfig config;
  std::string dataset;
  std::size_t dataset_size = 0;
  std::vector<AuditRound> rounds;
  std::vector<std::size_t> curve;  // anomalies found after each label
  std::vector<double> final_base_scores;
  std::vector<double> final_uai_scores;  // empty without a head
  bool complete = false;

  std::size_t found() const { return curve.empty() ? 0 : curve.back(); }
};

inline constexpr int kRunResultVersion = 1;

nlohmann::json to_json(const RunResult& result);
RunResult run_result_from_json(const nlohmann::json& doc);

// Algorithm state, resumable at every stage boundary.
//
//   kCreated --pretrain--> kReady --start_round--> kAwaitingLabels
//   kAwaitingLabels --submit--> kReady | kDone
//
// kReady with the budget spent is reported as kDone.
class ActiveRun {
 public:
  enum class Stage { kCreated, kReady, kAwaitingLabels, kDone };

  ActiveRun(const Dataset& dataset, RunConfig config);

  Stage stage() const;
  const RunConfig& config() const { return config_; }
  const Dataset& dataset() const { return dataset_; }
  const LabelStore& labels() const { return labels_; }
  const CompositeModel& model() const { return model_; }
  const std::vector<AuditRound>& rounds() const { return rounds_; }
  std::size_t spent() const { return labels_.size(); }

  // steps_pre steps on L_base with uniformly sampled batches.
  void pretrain();

  // Trains steps_active steps, scores every point and selects the next
  // min(k, budget - spent) indices, which become the pending queue.
  void start_round();

  const AuditRound& pending() const;
  // Clean-input scores of every point from the latest scoring pass.
  const ScoreTable& scores() const { return scores_; }

  // Absorbs the expert's answers for the pending queue, in queue order.
  void submit(std::span<const int> labels);

  // Runs to completion with `expert`. If the expert is unavailable the run
  // stops in kAwaitingLabels and can be continued later.
  void run(Expert& expert);

  RunResult result() const;

  nlohmann::json checkpoint() const;
  // Throws MigrationError on a checkpoint of another version.
  static ActiveRun restore(const Dataset& dataset, const nlohmann::json& checkpoint);

 private:
  void train(int steps, LossTerms terms);
  void rescore();
  ScoreSource ranking_source() const;

  const Dataset& dataset_;
  RunConfig config_;
  CompositeModel model_;
  nn::OptimizerState optimizer_;
  nn::Rng rng_;
  LabelStore labels_;
  std::vector<AuditRound> rounds_;
  std::optional<AuditRound> pending_;
  ScoreTable scores_;
  bool pretrained_ = false;
};

std::string_view to_string(ActiveRun::Stage stage);

// pretrain, then rounds until the budget is spent.
RunResult run_active(const Dataset& dataset, const RunConfig& config, Expert& expert);

}  // namespace uai

#endif  // UAI_ACTIVE_LOOP_H_
