#include "uai/active_loop.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace uai {

using nlohmann::json;
using nn::Index;
using nn::Matrix;
using nn::Vector;

namespace {

constexpr int kCheckpointVersion = 1;
constexpr std::size_t kScoringChunk = 4096;

std::string normalized(std::string_view name) {
  std::string s(name);
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

json round_to_json(const AuditRound& round) {
  return {{"round", round.round},
          {"selected", round.selected},
          {"labels", round.labels},
          {"uai_scores", round.uai_scores},
          {"base_scores", round.base_scores},
          {"ranked_by", to_string(round.ranked_by)},
          {"found", round.found}};
}

AuditRound round_from_json(const json& doc) {
  AuditRound round;
  round.round = doc.at("round").get<std::size_t>();
  round.selected = doc.at("selected").get<std::vector<std::size_t>>();
  round.labels = doc.at("labels").get<std::vector<int>>();
  round.uai_scores = doc.at("uai_scores").get<std::vector<double>>();
  round.base_scores = doc.at("base_scores").get<std::vector<double>>();
  round.ranked_by = doc.at("ranked_by").get<std::string>() == "uai" ? ScoreSource::kUai
                                                                    : ScoreSource::kBase;
  round.found = doc.at("found").get<std::size_t>();
  return round;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kDae:
      return "dae";
    case ModelKind::kClassNet:
      return "classnet";
    case ModelKind::kDaeUai:
      return "dae-uai";
    case ModelKind::kClassNetUai:
      return "classnet-uai";
  }
  return "?";
}

ModelKind model_kind_from_string(std::string_view name) {
  const std::string s = normalized(name);
  if (s == "dae") return ModelKind::kDae;
  if (s == "classnet") return ModelKind::kClassNet;
  if (s == "dae-uai") return ModelKind::kDaeUai;
  if (s == "classnet-uai") return ModelKind::kClassNetUai;
  throw UsageError("unknown model '" + std::string(name) +
                   "' (expected dae, classnet, dae-uai or classnet-uai)");
}

bool uses_head(ModelKind kind) {
  return kind == ModelKind::kDaeUai || kind == ModelKind::kClassNetUai;
}

BaseKind base_of(ModelKind kind) {
  return kind == ModelKind::kDae || kind == ModelKind::kDaeUai ? BaseKind::kDae
                                                               : BaseKind::kClassNet;
}

std::string_view to_string(RankingPolicy policy) {
  switch (policy) {
    case RankingPolicy::kSwitchOnBothClasses:
      return "switch-on-both-classes";
    case RankingPolicy::kSwitchOnFirstPositive:
      return "switch-on-first-positive";
    case RankingPolicy::kAlwaysUai:
      return "always-uai";
    case RankingPolicy::kAlwaysBase:
      return "always-base";
  }
  return "?";
}

RankingPolicy ranking_policy_from_string(std::string_view name) {
  const std::string s = normalized(name);
  if (s == "switch-on-both-classes") return RankingPolicy::kSwitchOnBothClasses;
  if (s == "switch-on-first-positive") return RankingPolicy::kSwitchOnFirstPositive;
  if (s == "always-uai") return RankingPolicy::kAlwaysUai;
  if (s == "always-base") return RankingPolicy::kAlwaysBase;
  throw UsageError("unknown ranking policy '" + std::string(name) + "'");
}

std::string_view to_string(ScoreSource source) {
  return source == ScoreSource::kUai ? "uai" : "base";
}

std::string_view to_string(ActiveRun::Stage stage) {
  switch (stage) {
    case ActiveRun::Stage::kCreated:
      return "created";
    case ActiveRun::Stage::kReady:
      return "ready";
    case ActiveRun::Stage::kAwaitingLabels:
      return "awaiting-labels";
    case ActiveRun::Stage::kDone:
      return "done";
  }
  return "?";
}

json to_json(const RunConfig& config) {
  json doc = {{"budget", config.budget},
              {"k", config.k},
              {"steps_pre", config.steps_pre},
              {"steps_active", config.steps_active},
              {"learning_rate", config.learning_rate},
              {"batch_size", config.batch_size},
              {"model", to_string(config.model_kind)},
              {"hidden_sizes", config.hidden_sizes},
              {"noise_phi", config.noise_phi},
              {"seed", config.seed},
              {"policy", to_string(config.policy)}};
  doc["decoder_output"] =
      config.decoder_output ? json(nn::to_string(*config.decoder_output)) : json();
  return doc;
}

RunConfig run_config_from_json(const json& doc) {
  if (!doc.is_object()) throw UsageError("run config must be a JSON object");
  static const std::set<std::string> known = {
      "budget", "k", "steps_pre", "steps_active", "learning_rate", "batch_size",
      "model", "hidden_sizes", "noise_phi", "seed", "policy", "decoder_output"};
  for (const auto& [key, value] : doc.items()) {
    if (!known.contains(key)) throw UsageError("unknown run config field '" + key + "'");
  }
  RunConfig config;
  try {
    if (doc.contains("budget")) config.budget = doc["budget"].get<std::size_t>();
    if (doc.contains("k")) config.k = doc["k"].get<std::size_t>();
    if (doc.contains("steps_pre")) config.steps_pre = doc["steps_pre"].get<int>();
    if (doc.contains("steps_active")) config.steps_active = doc["steps_active"].get<int>();
    if (doc.contains("learning_rate")) config.learning_rate = doc["learning_rate"].get<double>();
    if (doc.contains("batch_size")) config.batch_size = doc["batch_size"].get<std::size_t>();
    if (doc.contains("model")) {
      config.model_kind = model_kind_from_string(doc["model"].get<std::string>());
    }
    if (doc.contains("hidden_sizes")) {
      config.hidden_sizes = doc["hidden_sizes"].get<std::vector<Index>>();
    }
    if (doc.contains("noise_phi")) config.noise_phi = doc["noise_phi"].get<double>();
    if (doc.contains("seed")) config.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("policy")) {
      config.policy = ranking_policy_from_string(doc["policy"].get<std::string>());
    }
    if (doc.contains("decoder_output") && !doc["decoder_output"].is_null()) {
      config.decoder_output =
          nn::activation_from_string(doc["decoder_output"].get<std::string>());
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid run config: ") + e.what());
  }
  return config;
}

void validate(const RunConfig& config, const Dataset& dataset) {
  if (dataset.size() == 0) throw UsageError("dataset is empty");
  if (config.k < 1) throw UsageError("k must be at least 1");
  if (config.budget > 0 && config.k > config.budget) {
    throw UsageError("k (" + std::to_string(config.k) + ") must not exceed budget (" +
                     std::to_string(config.budget) + ")");
  }
  if (config.budget > dataset.size()) {
    throw UsageError("budget (" + std::to_string(config.budget) + ") exceeds the " +
                     std::to_string(dataset.size()) + " points of the dataset");
  }
  if (config.steps_pre < 0 || config.steps_active < 0) {
    throw UsageError("step counts must not be negative");
  }
  if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate)) {
    throw UsageError("learning_rate must be positive");
  }
  if (config.batch_size < 1) throw UsageError("batch_size must be at least 1");
  if (config.hidden_sizes.empty()) throw UsageError("hidden_sizes must not be empty");
  for (Index h : config.hidden_sizes) {
    if (h < 1) throw UsageError("hidden_sizes entries must be positive");
  }
  if (!(config.noise_phi >= 0.0) || !std::isfinite(config.noise_phi)) {
    throw UsageError("noise_phi must be a finite value >= 0");
  }
  if (base_of(config.model_kind) == BaseKind::kClassNet &&
      (!dataset.has_classes() || dataset.num_classes < 2)) {
    throw UsageError("model " + std::string(to_string(config.model_kind)) +
                     " needs a dataset with at least two classes");
  }
}

std::size_t default_k(const Dataset& dataset) {
  return dataset.has_truth() && dataset.anomaly_count() < 100 ? 3 : 10;
}

std::vector<std::size_t> select_top_k(std::span<const double> scores,
                                      const LabelStore& labeled, std::size_t k) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labeled.contains(i)) pool.push_back(i);
  }
  // NaN ranks last so the comparison stays a strict weak order.
  auto key = [&](std::size_t i) {
    return std::isnan(scores[i]) ? -std::numeric_limits<double>::infinity() : scores[i];
  };
  auto better = [&](std::size_t a, std::size_t b) {
    const double sa = key(a);
    const double sb = key(b);
    return sa > sb || (sa == sb && a < b);
  };
  const std::size_t take = std::min(k, pool.size());
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take), pool.end(),
                    better);
  pool.resize(take);
  return pool;
}

OracleExpert::OracleExpert(const Dataset& dataset) : dataset_(dataset) {
  if (!dataset.has_truth()) throw UsageError("the oracle expert needs ground-truth flags");
}

std::vector<int> OracleExpert::audit(std::span<const std::size_t> indices) {
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= dataset_.size()) {
      throw StructuralError("audit index " + std::to_string(i) + " outside a dataset of " +
                            std::to_string(dataset_.size()) + " points");
    }
    labels.push_back(dataset_.truth[i]);
  }
  audits_ += indices.size();
  return labels;
}

json to_json(const RunResult& result) {
  json rounds = json::array();
  for (const auto& r : result.rounds) rounds.push_back(round_to_json(r));
  return {{"version", kRunResultVersion},
          {"config", to_json(result.config)},
          {"dataset", result.dataset},
          {"dataset_size", result.dataset_size},
          {"rounds", rounds},
          {"curve", result.curve},
          {"found", result.found()},
          {"final_base_scores", result.final_base_scores},
          {"final_uai_scores", result.final_uai_scores},
          {"complete", result.complete}};
}

RunResult run_result_from_json(const json& doc) {
  if (doc.at("version").get<int>() != kRunResultVersion) {
    throw MigrationError("run result version " + doc.at("version").dump() +
                         " is not supported (expected " + std::to_string(kRunResultVersion) + ")");
  }
  RunResult result;
  result.config = run_config_from_json(doc.at("config"));
  result.dataset = doc.at("dataset").get<std::string>();
  result.dataset_size = doc.at("dataset_size").get<std::size_t>();
  for (const auto& r : doc.at("rounds")) result.rounds.push_back(round_from_json(r));
  result.curve = doc.at("curve").get<std::vector<std::size_t>>();
  result.final_base_scores = doc.at("final_base_scores").get<std::vector<double>>();
  result.final_uai_scores = doc.at("final_uai_scores").get<std::vector<double>>();
  result.complete = doc.at("complete").get<bool>();
  return result;
}

ActiveRun::ActiveRun(const Dataset& dataset, RunConfig config)
    : dataset_(dataset), config_(std::move(config)), rng_(config_.seed) {
  validate(config_, dataset_);
  if (base_of(config_.model_kind) == BaseKind::kDae) {
    const nn::Activation output = config_.decoder_output.value_or(
        dataset_.meta.scaling == kUnitInterval ? nn::Activation::kSigmoid
                                               : nn::Activation::kLinear);
    model_ = make_composite(
        make_dae(dataset_.dim(), config_.hidden_sizes, output, config_.noise_phi, rng_));
  } else {
    model_ = make_composite(
        make_classnet(dataset_.dim(), dataset_.num_classes, config_.hidden_sizes, rng_));
  }
  optimizer_ = make_optimizer(model_, {config_.learning_rate, 0.9, 1e-10});
}

ActiveRun::Stage ActiveRun::stage() const {
  if (!pretrained_) return Stage::kCreated;
  if (pending_) return Stage::kAwaitingLabels;
  if (spent() >= config_.budget) return Stage::kDone;
  return Stage::kReady;
}

void ActiveRun::train(int steps, LossTerms terms) {
  const std::size_t n = dataset_.size();
  std::uniform_int_distribution<std::size_t> draw(0, n - 1);
  const std::vector<std::size_t>& labeled = labels_.order();
  const bool with_labels = terms != LossTerms::kBaseOnly && !labeled.empty();
  std::vector<std::size_t> picks;
  for (int step = 0; step < steps; ++step) {
    // Uniform draws come first and carry L_base; the labeled points added
    // after them only feed L_uai, so L_base keeps the weighting of uniform
    // sampling however often a labeled point is revisited.
    picks.clear();
    std::size_t uniform = config_.batch_size;
    if (with_labels && labeled.size() > config_.batch_size) uniform = config_.batch_size / 2;
    for (std::size_t j = 0; j < uniform; ++j) picks.push_back(draw(rng_));
    if (with_labels && labeled.size() <= config_.batch_size) {
      picks.insert(picks.end(), labeled.begin(), labeled.end());
    } else if (with_labels) {
      std::uniform_int_distribution<std::size_t> draw_labeled(0, labeled.size() - 1);
      for (std::size_t j = uniform; j < config_.batch_size; ++j) {
        picks.push_back(labeled[draw_labeled(rng_)]);
      }
    }
    train_step(model_, make_batch(dataset_, picks), labels_, optimizer_, rng_, terms,
               static_cast<Index>(uniform));
  }
}

void ActiveRun::rescore() {
  const std::size_t n = dataset_.size();
  const Index d = model_.latent_dim();
  scores_.latent.resize(d, static_cast<Index>(n));
  scores_.base_score.resize(static_cast<Index>(n));
  scores_.uai_score.resize(static_cast<Index>(n));
  scores_.uai_logit.resize(static_cast<Index>(n));
  std::vector<std::size_t> chunk;
  for (std::size_t start = 0; start < n; start += kScoringChunk) {
    const std::size_t end = std::min(n, start + kScoringChunk);
    chunk.resize(end - start);
    std::iota(chunk.begin(), chunk.end(), start);
    const ScoreTable part = score_batch(model_, make_batch(dataset_, chunk));
    const auto s = static_cast<Index>(start);
    const auto len = static_cast<Index>(end - start);
    scores_.latent.middleCols(s, len) = part.latent;
    scores_.base_score.segment(s, len) = part.base_score;
    scores_.uai_score.segment(s, len) = part.uai_score;
    scores_.uai_logit.segment(s, len) = part.uai_logit;
  }
}

ScoreSource ActiveRun::ranking_source() const {
  if (!uses_head(config_.model_kind)) return ScoreSource::kBase;
  switch (config_.policy) {
    case RankingPolicy::kAlwaysUai:
      return ScoreSource::kUai;
    case RankingPolicy::kAlwaysBase:
      return ScoreSource::kBase;
    case RankingPolicy::kSwitchOnFirstPositive:
      return labels_.positives() > 0 ? ScoreSource::kUai : ScoreSource::kBase;
    case RankingPolicy::kSwitchOnBothClasses:
      return labels_.positives() > 0 && labels_.positives() < labels_.size() ? ScoreSource::kUai
                                                                            : ScoreSource::kBase;
  }
  return ScoreSource::kBase;
}

void ActiveRun::pretrain() {
  if (stage() != Stage::kCreated) throw UsageError("run is already pretrained");
  train(config_.steps_pre, LossTerms::kBaseOnly);
  pretrained_ = true;
  rescore();
}

void ActiveRun::start_round() {
  if (stage() != Stage::kReady) {
    throw UsageError(std::string("cannot start a round in stage ") +
                     std::string(to_string(stage())));
  }
  train(config_.steps_active,
        uses_head(config_.model_kind) ? LossTerms::kFull : LossTerms::kBaseOnly);
  rescore();

  AuditRound round;
  round.round = rounds_.size() + 1;
  round.ranked_by = ranking_source();
  // The logit orders points exactly like s_uai but does not saturate.
  const Vector& ranking =
      round.ranked_by == ScoreSource::kUai ? scores_.uai_logit : scores_.base_score;
  round.selected = select_top_k({ranking.data(), static_cast<std::size_t>(ranking.size())},
                                labels_, std::min(config_.k, config_.budget - spent()));
  if (round.selected.empty()) throw UsageError("no unlabeled points left to select");
  for (std::size_t i : round.selected) {
    const auto c = static_cast<Index>(i);
    round.base_scores.push_back(scores_.base_score(c));
    if (uses_head(config_.model_kind)) round.uai_scores.push_back(scores_.uai_score(c));
  }
  round.found = rounds_.empty() ? 0 : rounds_.back().found;
  pending_ = std::move(round);
}

const AuditRound& ActiveRun::pending() const {
  if (!pending_) throw UsageError("no audit is pending");
  return *pending_;
}

void ActiveRun::submit(std::span<const int> labels) {
  if (!pending_) throw UsageError("no audit is pending");
  if (labels.size() != pending_->selected.size()) {
    throw UsageError("expected " + std::to_string(pending_->selected.size()) + " labels, got " +
                     std::to_string(labels.size()));
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw UsageError("labels must be 0 or 1");
  }
  AuditRound round = std::move(*pending_);
  pending_.reset();
  for (std::size_t j = 0; j < labels.size(); ++j) {
    labels_.add(round.selected[j], labels[j]);
    round.labels.push_back(labels[j]);
    round.found += static_cast<std::size_t>(labels[j]);
  }
  rounds_.push_back(std::move(round));
}

void ActiveRun::run(Expert& expert) {
  if (stage() == Stage::kCreated) pretrain();
  while (true) {
    switch (stage()) {
      case Stage::kReady:
        start_round();
        break;
      case Stage::kAwaitingLabels: {
        std::vector<int> answers;
        try {
          answers = expert.audit(pending_->selected);
        } catch (const ExpertUnavailable&) {
          return;
        }
        submit(answers);
        break;
      }
      case Stage::kDone:
      case Stage::kCreated:
        return;
    }
  }
}

RunResult ActiveRun::result() const {
  RunResult result;
  result.config = config_;
  result.dataset = dataset_.meta.name;
  result.dataset_size = dataset_.size();
  result.rounds = rounds_;
  std::size_t found = 0;
  for (const AuditRound& r : rounds_) {
    for (int y : r.labels) {
      found += static_cast<std::size_t>(y);
      result.curve.push_back(found);
    }
  }
  if (pretrained_) {
    result.final_base_scores = to_std(scores_.base_score);
    if (uses_head(config_.model_kind)) result.final_uai_scores = to_std(scores_.uai_score);
  }
  result.complete = stage() == Stage::kDone;
  return result;
}

json ActiveRun::checkpoint() const {
  json labels = json::array();
  for (std::size_t i : labels_.order()) labels.push_back({i, *labels_.get(i)});
  json rounds = json::array();
  for (const auto& r : rounds_) rounds.push_back(round_to_json(r));
  return {{"version", kCheckpointVersion},
          {"config", to_json(config_)},
          {"dataset", {{"name", dataset_.meta.name},
                       {"points", dataset_.size()},
                       {"fingerprint", fingerprint(dataset_)}}},
          {"model", model_to_json(model_)},
          {"optimizer", optimizer_to_json(optimizer_)},
          {"rng", nn::save_rng(rng_)},
          {"pretrained", pretrained_},
          {"labels", labels},
          {"rounds", rounds},
          {"pending", pending_ ? round_to_json(*pending_) : json()}};
}

ActiveRun ActiveRun::restore(const Dataset& dataset, const json& doc) {
  if (!doc.contains("version") || doc.at("version") != kCheckpointVersion) {
    throw MigrationError("checkpoint version " + doc.value("version", json()).dump() +
                         " is not supported (expected " + std::to_string(kCheckpointVersion) +
                         ")");
  }
  try {
    const json& source = doc.at("dataset");
    if (source.at("points").get<std::size_t>() != dataset.size() ||
        source.at("fingerprint").get<std::uint64_t>() != fingerprint(dataset)) {
      throw StructuralError("checkpoint was taken on a different dataset ('" +
                            source.at("name").get<std::string>() + "')");
    }
    ActiveRun run(dataset, run_config_from_json(doc.at("config")));
    run.model_ = model_from_json(doc.at("model"));
    run.optimizer_ = optimizer_from_json(doc.at("optimizer"));
    nn::load_rng(run.rng_, doc.at("rng").get<std::string>());
    run.pretrained_ = doc.at("pretrained").get<bool>();
    for (const auto& entry : doc.at("labels")) {
      run.labels_.add(entry.at(0).get<std::size_t>(), entry.at(1).get<int>());
    }
    for (const auto& r : doc.at("rounds")) run.rounds_.push_back(round_from_json(r));
    if (!doc.at("pending").is_null()) run.pending_ = round_from_json(doc.at("pending"));
    // Scores are a pure function of the restored parameters.
    if (run.pretrained_) run.rescore();
    return run;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

RunResult run_active(const Dataset& dataset, const RunConfig& config, Expert& expert) {
  ActiveRun run(dataset, config);
  run.run(expert);
  return run.result();
}

}  // namespace uai
