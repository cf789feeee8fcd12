#include "uai/run_manager.h"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <random>

#include "uai/errors.h"
#include "uai/files.h"

namespace uai {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kRecordVersion = 1;

bool valid_name(const std::string& name) {
  if (name.empty() || name.size() > 128 || name.front() == '.') return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
}

std::string new_run_id() {
  static std::mt19937_64 gen{std::random_device{}()};
  char buf[32];
  std::snprintf(buf, sizeof buf, "run-%016llx", static_cast<unsigned long long>(gen()));
  return buf;
}

std::string hex(std::uint64_t value) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

json summary_of(std::span<const double> values) {
  if (values.empty()) return json();
  double sum = 0.0;
  for (double v : values) sum += v;
  return {{"min", *std::min_element(values.begin(), values.end())},
          {"mean", sum / static_cast<double>(values.size())},
          {"max", *std::max_element(values.begin(), values.end())}};
}

}  // namespace

std::string_view to_string(RunStatus status) {
  switch (status) {
    case RunStatus::kPretraining:
      return "PRETRAINING";
    case RunStatus::kTraining:
      return "TRAINING";
    case RunStatus::kAwaitingLabels:
      return "AWAITING_LABELS";
    case RunStatus::kDone:
      return "DONE";
    case RunStatus::kAborted:
      return "ABORTED";
  }
  return "ABORTED";
}

std::string_view to_string(ExpertMode mode) {
  return mode == ExpertMode::kOracle ? "oracle" : "human";
}

ExpertMode expert_mode_from_string(std::string_view name) {
  if (name == "oracle") return ExpertMode::kOracle;
  if (name == "human") return ExpertMode::kHuman;
  throw UsageError("unknown expert '" + std::string(name) + "' (expected oracle or human)");
}

fs::path resolve_data_dir(const std::string& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("UAI_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return "uai-data";
}

// `run` belongs to the worker while `busy` is set and to request handlers
// (under the manager mutex) otherwise. Everything else is guarded by the
// mutex; the json views are what readers see while a worker is training.
struct RunManager::Entry {
  std::string id;
  std::string dataset_name;
  std::shared_ptr<const Dataset> dataset;
  ExpertMode expert = ExpertMode::kHuman;
  std::string create_key;
  std::unique_ptr<ActiveRun> run;
  json checkpoint;
  json submissions = json::object();  // idempotency key -> reply
  bool aborted = false;
  std::string error;
  bool busy = false;
  bool queued = false;

  RunStatus status = RunStatus::kPretraining;
  json metrics;
  json queue;
  RunStatus derive_status() const {
    if (aborted) return RunStatus::kAborted;
    switch (run->stage()) {
      case ActiveRun::Stage::kCreated:
        return RunStatus::kPretraining;
      case ActiveRun::Stage::kReady:
        return RunStatus::kTraining;
      case ActiveRun::Stage::kAwaitingLabels:
        // The oracle answers on the spot; only people keep a run parked.
        return expert == ExpertMode::kHuman ? RunStatus::kAwaitingLabels : RunStatus::kTraining;
      case ActiveRun::Stage::kDone:
        return RunStatus::kDone;
    }
    return RunStatus::kAborted;
  }

  // Rebuilds the views from `run`; the caller must own it.
  void refresh() {
    status = derive_status();
    const auto& rounds = run->rounds();
    json curve = json::array();
    json per_round = json::array();
    std::size_t labels = 0;
    std::size_t found = 0;
    for (const AuditRound& r : rounds) {
      for (int y : r.labels) {
        ++labels;
        found += static_cast<std::size_t>(y);
        curve.push_back({{"labels", labels}, {"found", found}});
      }
      per_round.push_back({{"round", r.round},
                           {"ranked_by", to_string(r.ranked_by)},
                           {"size", r.selected.size()},
                           {"found", r.found},
                           {"uai_score", summary_of(r.uai_scores)},
                           {"base_score", summary_of(r.base_scores)}});
    }
    metrics = {{"version", kApiVersion},
               {"run_id", id},
               {"status", to_string(status)},
               {"expert", to_string(expert)},
               {"budget", {{"spent", run->spent()}, {"total", run->config().budget}}},
               {"found", found},
               {"curve", curve},
               {"rounds", per_round}};

    queue = json();
    if (status == RunStatus::kAwaitingLabels) {
      const AuditRound& pending = run->pending();
      const Dataset& ds = *dataset;
      json items = json::array();
      for (std::size_t j = 0; j < pending.selected.size(); ++j) {
        const std::size_t i = pending.selected[j];
        const auto col = ds.features.col(static_cast<nn::Index>(i));
        items.push_back({{"rank", j + 1},
                         {"index", i},
                         {"id", ds.ids[i]},
                         {"s_uai", pending.uai_scores.empty() ? json() : json(pending.uai_scores[j])},
                         {"s_base", pending.base_scores[j]},
                         {"features", std::vector<double>(col.begin(), col.end())}});
      }
      queue = {{"version", kApiVersion},
               {"run_id", id},
               {"round", pending.round},
               {"ranked_by", to_string(pending.ranked_by)},
               {"feature_names", ds.meta.feature_names},
               {"image_shape", ds.meta.image_shape},
               {"items", items}};
    }
  }

  json record() const {
    return {{"version", kRecordVersion}, {"run_id", id},
            {"dataset", dataset_name},   {"expert", to_string(expert)},
            {"create_key", create_key},  {"submissions", submissions},
            {"aborted", aborted},        {"error", error},
            {"checkpoint", checkpoint}};
  }
};

RunManager::RunManager(ManagerOptions options) : options_(std::move(options)) {
  if (options_.data_dir.empty()) throw UsageError("no data directory given");
  std::error_code ec;
  fs::create_directories(options_.data_dir / "datasets", ec);
  fs::create_directories(options_.data_dir / "runs", ec);
  if (ec) throw IoError("cannot create data directory " + options_.data_dir.string());
  load_datasets();
  load_runs();
  const std::size_t n = std::max<std::size_t>(1, options_.workers);
  for (std::size_t i = 0; i < n; ++i) workers_.emplace_back([this] { worker_loop(); });
}

RunManager::~RunManager() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  work_ready_.notify_all();
  for (auto& t : workers_) t.join();
}

void RunManager::load_datasets() {
  for (const auto& item : fs::directory_iterator(options_.data_dir / "datasets")) {
    if (item.path().extension() != ".uaids") continue;
    auto ds = std::make_shared<Dataset>(load_dataset(item.path()));
    datasets_[item.path().stem().string()] = std::move(ds);
  }
}

void RunManager::load_runs() {
  for (const auto& item : fs::directory_iterator(options_.data_dir / "runs")) {
    if (item.path().extension() != ".json") continue;
    json doc;
    try {
      doc = json::parse(read_file(item.path()));
    } catch (const json::exception& e) {
      throw FormatError("unreadable run record " + item.path().string() + ": " + e.what());
    }
    if (doc.value("version", -1) != kRecordVersion) {
      throw MigrationError("run record " + item.path().string() + " has version " +
                           doc.value("version", json()).dump() + " (expected " +
                           std::to_string(kRecordVersion) + ")");
    }
    auto entry = std::make_unique<Entry>();
    entry->id = doc.at("run_id").get<std::string>();
    entry->dataset_name = doc.at("dataset").get<std::string>();
    auto ds = datasets_.find(entry->dataset_name);
    if (ds == datasets_.end()) {
      throw NotFoundError("run " + entry->id + " refers to unknown dataset '" +
                          entry->dataset_name + "'");
    }
    entry->dataset = ds->second;
    entry->expert = expert_mode_from_string(doc.at("expert").get<std::string>());
    entry->create_key = doc.at("create_key").get<std::string>();
    entry->submissions = doc.at("submissions");
    entry->aborted = doc.at("aborted").get<bool>();
    entry->error = doc.at("error").get<std::string>();
    entry->checkpoint = doc.at("checkpoint");
    entry->run = std::make_unique<ActiveRun>(ActiveRun::restore(*entry->dataset, entry->checkpoint));
    entry->refresh();
    if (!entry->create_key.empty()) create_keys_[entry->create_key] = entry->id;
    Entry& ref = *entry;
    runs_[entry->id] = std::move(entry);
    if (!settled(ref)) enqueue(ref);
  }
}

void RunManager::persist(const Entry& entry) const {
  write_file_atomic(options_.data_dir / "runs" / (entry.id + ".json"), entry.record().dump());
}

RunManager::Entry& RunManager::find(const std::string& id) const {
  auto it = runs_.find(id);
  if (it == runs_.end()) throw NotFoundError("no run '" + id + "'");
  return *it->second;
}

bool RunManager::settled(const Entry& entry) const {
  return entry.status == RunStatus::kDone || entry.status == RunStatus::kAborted ||
         entry.status == RunStatus::kAwaitingLabels;
}

void RunManager::enqueue(Entry& entry) {
  if (entry.queued) return;
  entry.queued = true;
  queue_.push_back(entry.id);
  work_ready_.notify_one();
}

void RunManager::worker_loop() {
  std::unique_lock lock(mutex_);
  while (true) {
    work_ready_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
    if (stopping_) return;
    Entry& entry = *runs_.at(queue_.front());
    queue_.pop_front();
    entry.queued = false;
    if (entry.busy || settled(entry)) continue;
    entry.busy = true;
    lock.unlock();
    advance(entry);
    lock.lock();
    entry.busy = false;
    changed_.notify_all();
  }
}

// One stage transition per iteration, each followed by a checkpoint, until
// the run needs a person, finishes, is aborted or the manager shuts down.
void RunManager::advance(Entry& entry) {
  while (true) {
    ActiveRun& run = *entry.run;
    std::string failure;
    try {
      switch (run.stage()) {
        case ActiveRun::Stage::kCreated:
          run.pretrain();
          break;
        case ActiveRun::Stage::kReady:
          run.start_round();
          break;
        case ActiveRun::Stage::kAwaitingLabels: {
          if (entry.expert == ExpertMode::kHuman) return;
          OracleExpert oracle(*entry.dataset);
          run.submit(oracle.audit(run.pending().selected));
          break;
        }
        case ActiveRun::Stage::kDone:
          return;
      }
    } catch (const std::exception& e) {
      failure = e.what();
    }
    json checkpoint = run.checkpoint();
    std::lock_guard lock(mutex_);
    entry.checkpoint = std::move(checkpoint);
    if (!failure.empty()) {
      entry.aborted = true;
      entry.error = failure;
    }
    entry.refresh();
    persist(entry);
    changed_.notify_all();
    if (settled(entry) || stopping_) return;
  }
}

json RunManager::register_dataset(const std::string& name, Dataset dataset) {
  if (!valid_name(name)) {
    throw UsageError("dataset name '" + name + "' must use letters, digits, '-', '_' or '.'");
  }
  dataset.meta.name = name;
  {
    std::lock_guard lock(mutex_);
    if (auto it = datasets_.find(name); it != datasets_.end()) {
      if (fingerprint(*it->second) != fingerprint(dataset) ||
          it->second->truth != dataset.truth) {
        throw ConflictError("dataset '" + name + "' is already registered with other contents");
      }
    } else {
      save_dataset(dataset, options_.data_dir / "datasets" / (name + ".uaids"));
      datasets_[name] = std::make_shared<Dataset>(std::move(dataset));
    }
  }
  return describe_dataset(name);
}

std::shared_ptr<const Dataset> RunManager::dataset(const std::string& name) const {
  std::lock_guard lock(mutex_);
  auto it = datasets_.find(name);
  if (it == datasets_.end()) throw NotFoundError("no dataset '" + name + "'");
  return it->second;
}

json RunManager::describe_dataset(const std::string& name) const {
  const auto ds = dataset(name);
  // Anomaly counts stay out: this document is shown to the auditors.
  return {{"version", kApiVersion},
          {"name", name},
          {"points", ds->size()},
          {"dimension", ds->dim()},
          {"classes", ds->num_classes},
          {"scaling", ds->meta.scaling},
          {"source", ds->meta.source},
          {"has_truth", ds->has_truth()},
          {"feature_names", ds->meta.feature_names},
          {"image_shape", ds->meta.image_shape},
          {"fingerprint", hex(fingerprint(*ds))}};
}

json RunManager::list_datasets() const {
  std::vector<std::string> names;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [name, ds] : datasets_) names.push_back(name);
  }
  json items = json::array();
  for (const auto& name : names) items.push_back(describe_dataset(name));
  return {{"version", kApiVersion}, {"datasets", items}};
}

std::string RunManager::create_run(const CreateRunRequest& request) {
  std::unique_lock lock(mutex_);
  if (!request.idempotency_key.empty()) {
    if (auto it = create_keys_.find(request.idempotency_key); it != create_keys_.end()) {
      return it->second;
    }
  }
  auto ds = datasets_.find(request.dataset);
  if (ds == datasets_.end()) throw NotFoundError("no dataset '" + request.dataset + "'");
  if (request.expert == ExpertMode::kOracle && !ds->second->has_truth()) {
    throw UsageError("dataset '" + request.dataset + "' has no ground truth for an oracle expert");
  }
  auto entry = std::make_unique<Entry>();
  entry->dataset_name = request.dataset;
  entry->dataset = ds->second;
  entry->expert = request.expert;
  entry->create_key = request.idempotency_key;
  entry->run = std::make_unique<ActiveRun>(*entry->dataset, request.config);
  do {
    entry->id = new_run_id();
  } while (runs_.contains(entry->id));
  entry->checkpoint = entry->run->checkpoint();
  entry->refresh();
  persist(*entry);
  const std::string id = entry->id;
  if (!entry->create_key.empty()) create_keys_[entry->create_key] = id;
  Entry& ref = *entry;
  runs_[id] = std::move(entry);
  enqueue(ref);
  return id;
}

json RunManager::get_run(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const Entry& e = find(id);
  json doc = {{"version", kApiVersion},
              {"run_id", e.id},
              {"dataset", e.dataset_name},
              {"expert", to_string(e.expert)},
              {"status", to_string(e.status)},
              {"config", e.checkpoint.at("config")},
              {"budget", e.metrics.at("budget")},
              {"found", e.metrics.at("found")},
              {"rounds", e.metrics.at("rounds").size()},
              {"error", e.error.empty() ? json() : json(e.error)}};
  return doc;
}

json RunManager::list_runs() const {
  std::vector<std::string> ids;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [id, e] : runs_) ids.push_back(id);
  }
  json items = json::array();
  for (const auto& id : ids) items.push_back(get_run(id));
  return {{"version", kApiVersion}, {"runs", items}};
}

json RunManager::get_queue(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const Entry& e = find(id);
  if (e.status != RunStatus::kAwaitingLabels) {
    throw ConflictError("run " + id + " is " + std::string(to_string(e.status)) +
                        ", not AWAITING_LABELS");
  }
  return e.queue;
}

json RunManager::submit_labels(const std::string& id, const std::vector<Answer>& answers,
                               const std::string& idempotency_key) {
  std::lock_guard lock(mutex_);
  Entry& e = find(id);
  if (!idempotency_key.empty() && e.submissions.contains(idempotency_key)) {
    return e.submissions.at(idempotency_key);
  }
  if (e.status != RunStatus::kAwaitingLabels || e.busy) {
    throw ConflictError("run " + id + " is " + std::string(to_string(e.status)) +
                        " and takes no labels now");
  }
  const AuditRound& pending = e.run->pending();
  std::map<std::size_t, int> given;
  std::vector<std::size_t> offenders;
  for (const Answer& a : answers) {
    const bool queued =
        std::find(pending.selected.begin(), pending.selected.end(), a.index) != pending.selected.end();
    if (!queued || given.contains(a.index)) {
      offenders.push_back(a.index);
      continue;
    }
    if (a.label != 0 && a.label != 1) {
      throw UsageError("label for index " + std::to_string(a.index) + " must be 0 or 1");
    }
    given[a.index] = a.label;
  }
  std::vector<std::size_t> missing;
  for (std::size_t i : pending.selected) {
    if (!given.contains(i)) missing.push_back(i);
  }
  if (!offenders.empty()) {
    throw RejectedSubmission("answers name indices outside the pending queue or repeat them",
                             offenders);
  }
  if (!missing.empty()) {
    throw RejectedSubmission("answers do not cover the pending queue", missing);
  }
  std::vector<int> labels;
  for (std::size_t i : pending.selected) labels.push_back(given.at(i));
  const std::size_t round = pending.round;
  e.run->submit(labels);
  e.checkpoint = e.run->checkpoint();
  e.refresh();
  json reply = {{"version", kApiVersion},
                {"run_id", id},
                {"round", round},
                {"accepted", labels.size()},
                {"budget", e.metrics.at("budget")},
                {"status", to_string(e.status)}};
  if (!idempotency_key.empty()) e.submissions[idempotency_key] = reply;
  persist(e);
  if (!settled(e)) enqueue(e);
  changed_.notify_all();
  return reply;
}

json RunManager::get_metrics(const std::string& id) const {
  std::lock_guard lock(mutex_);
  return find(id).metrics;
}

json RunManager::abort_run(const std::string& id) {
  std::lock_guard lock(mutex_);
  Entry& e = find(id);
  if (e.status == RunStatus::kDone) throw ConflictError("run " + id + " is already DONE");
  if (!e.aborted) {
    e.aborted = true;
    e.status = RunStatus::kAborted;
    e.metrics["status"] = to_string(e.status);
    e.queue = json();
    persist(e);
    changed_.notify_all();
  }
  return {{"version", kApiVersion}, {"run_id", id}, {"status", to_string(e.status)}};
}

json RunManager::get_result(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const Entry& e = find(id);
  if (e.status != RunStatus::kDone || e.busy) {
    throw ConflictError("run " + id + " is " + std::string(to_string(e.status)) + ", not DONE");
  }
  return to_json(e.run->result());
}

RunStatus RunManager::status(const std::string& id) const {
  std::lock_guard lock(mutex_);
  return find(id).status;
}

RunStatus RunManager::wait_until_settled(const std::string& id,
                                         std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mutex_);
  const Entry& e = find(id);
  changed_.wait_for(lock, timeout, [&] { return settled(e) && !e.busy; });
  return e.status;
}

}  // namespace uai
