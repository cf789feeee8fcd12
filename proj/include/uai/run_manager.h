#ifndef UAI_RUN_MANAGER_H_
#define UAI_RUN_MANAGER_H_

// Hosts active runs for the HTTP service: a dataset registry, a worker pool
// that advances runs between expert boundaries, and file persistence under a
// data directory so that a restarted service picks up where it stopped.
//
// Layout of the data directory:
//   datasets/<name>.uaids   registered datasets
//   runs/<id>.json          run record and the ActiveRun checkpoint taken at
//                           its last stage boundary, written as one file

#include "json.hpp"

#include <condition_variable>
#include <chrono>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "uai/active_loop.h"
#include "uai/dataset.h"

namespace uai {

enum class RunStatus { kPretraining, kTraining, kAwaitingLabels, kDone, kAborted };

std::string_view to_string(RunStatus status);

enum class ExpertMode { kOracle, kHuman };

std::string_view to_string(ExpertMode mode);
ExpertMode expert_mode_from_string(std::string_view name);

inline constexpr int kApiVersion = 1;

struct ManagerOptions {
  std::filesystem::path data_dir;
  std::size_t workers = 1;  // runs trained concurrently
};

struct CreateRunRequest {
  std::string dataset;
  RunConfig config;
  ExpertMode expert = ExpertMode::kHuman;
  std::string idempotency_key;  // empty disables replay detection
};

struct Answer {
  std::size_t index = 0;
  int label = 0;
};

// Resolves the data directory: the explicit value if nonempty, else
// $UAI_DATA_DIR, else ./uai-data.
std::filesystem::path resolve_data_dir(const std::string& explicit_dir);

class RunManager {
 public:
  // Loads registered datasets and every persisted run; runs that were in
  // flight are requeued from their last checkpoint.
  explicit RunManager(ManagerOptions options);
  ~RunManager();

  RunManager(const RunManager&) = delete;
  RunManager& operator=(const RunManager&) = delete;

  // Registering the same name twice is accepted only for identical contents.
  nlohmann::json register_dataset(const std::string& name, Dataset dataset);
  nlohmann::json list_datasets() const;
  nlohmann::json describe_dataset(const std::string& name) const;
  std::shared_ptr<const Dataset> dataset(const std::string& name) const;

  // Returns the run id; a repeated idempotency key returns the first id.
  std::string create_run(const CreateRunRequest& request);

  nlohmann::json list_runs() const;
  nlohmann::json get_run(const std::string& id) const;
  // ConflictError unless the run is awaiting labels.
  nlohmann::json get_queue(const std::string& id) const;
  // Answers must cover the pending queue exactly; otherwise the store is left
  // untouched. Replaying an idempotency key returns the original reply.
  nlohmann::json submit_labels(const std::string& id, const std::vector<Answer>& answers,
                               const std::string& idempotency_key);
  nlohmann::json get_metrics(const std::string& id) const;
  nlohmann::json abort_run(const std::string& id);
  // RunResult document; ConflictError until the run is done.
  nlohmann::json get_result(const std::string& id) const;

  RunStatus status(const std::string& id) const;
  // Blocks until no worker has anything left to do for the run (done,
  // aborted, or parked for a human) or the timeout passes.
  RunStatus wait_until_settled(const std::string& id, std::chrono::milliseconds timeout) const;

  const std::filesystem::path& data_dir() const { return options_.data_dir; }

 private:
  struct Entry;

  Entry& find(const std::string& id) const;
  bool settled(const Entry& entry) const;
  void enqueue(Entry& entry);
  void worker_loop();
  void advance(Entry& entry);
  void persist(const Entry& entry) const;
  void load_datasets();
  void load_runs();

  ManagerOptions options_;
  mutable std::mutex mutex_;
  mutable std::condition_variable changed_;
  std::condition_variable work_ready_;
  std::map<std::string, std::shared_ptr<const Dataset>> datasets_;
  std::map<std::string, std::unique_ptr<Entry>> runs_;
  std::map<std::string, std::string> create_keys_;
  std::deque<std::string> queue_;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace uai

#endif  // UAI_RUN_MANAGER_H_
