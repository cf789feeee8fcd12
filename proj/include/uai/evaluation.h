#ifndef UAI_EVALUATION_H_
#define UAI_EVALUATION_H_

#include "json.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uai/active_loop.h"
#include "uai/dataset.h"
#include "uai/label_store.h"
#include "uai/models.h"

namespace uai {

struct CurvePoint {
  std::size_t labels = 0;  // labels spent
  std::size_t found = 0;   // anomalies among them

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

using DiscoveryCurve = std::vector<CurvePoint>;

// Recounted from the audit log alone, one point per label.
DiscoveryCurve discovery_curve(const RunResult& run);
DiscoveryCurve discovery_curve(std::span<const AuditRound> rounds);

// Pointwise statistics over seeds, one entry per budget 1..n.
struct SeedBand {
  std::vector<double> mean;
  std::vector<std::size_t> min;
  std::vector<std::size_t> max;

  std::size_t size() const { return mean.size(); }
  friend bool operator==(const SeedBand&, const SeedBand&) = default;
};

// Throws UsageError when the runs disagree on budget or labels spent.
SeedBand aggregate_seeds(std::span<const RunResult> runs);
SeedBand aggregate_curves(std::span<const DiscoveryCurve> curves);

struct F1Score {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t predicted = 0;
};

// Predicts the audited positives plus the best-scored unaudited points, up
// to ceil(rho * N) in total; audited normals are never predicted. When the
// audited positives alone exceed that size they are the whole prediction.
F1Score f1_at_contamination(std::span<const double> scores, const LabelStore& audited,
                            std::span<const std::uint8_t> truth, double rho);

// min(1.5 x anomalies, 0.1 x N), both rounded down.
std::size_t default_benchmark_budget(const Dataset& dataset);

struct SnapshotRow {
  std::size_t index = 0;
  double latent = 0.0;
  double score = 0.0;
  std::optional<int> truth;
};

struct LatentScoreSnapshot {
  std::size_t budget = 0;  // labels spent when taken
  std::vector<SnapshotRow> rows;
};

// Clean-input (l, s_base) for every point. Needs a latent width of 1.
LatentScoreSnapshot latent_score_snapshot(const CompositeModel& model, const Dataset& dataset,
                                          std::size_t budget);
// Columns index,l,s,truth (truth empty when unknown).
void write_snapshot_csv(const LatentScoreSnapshot& snapshot, const std::filesystem::path& path);

struct ModelReport {
  std::string model;
  std::string dataset;
  std::size_t budget = 0;
  std::size_t k = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<DiscoveryCurve> curves;
  SeedBand band;
  std::vector<double> f1;  // one per seed; empty without truth
  std::optional<double> rho;

  friend bool operator==(const ModelReport&, const ModelReport&) = default;
};

struct Report {
  std::vector<ModelReport> models;
  nlohmann::json notes = nlohmann::json::object();

  friend bool operator==(const Report&, const Report&) = default;
};

inline constexpr int kReportVersion = 1;

// Summarizes seeded runs of one model. `dataset` supplies truth for F1 at
// rho = its anomaly fraction; pass nullptr to skip F1.
ModelReport summarize_runs(std::span<const RunResult> runs, const Dataset* dataset);

nlohmann::json report_to_json(const Report& report);
Report report_from_json(const nlohmann::json& doc);
// Rows model,budget,mean,min,max with a header line.
std::string report_to_csv(const Report& report);

enum class ReportFormat { kJson, kCsv };

// Throws IoError when the file cannot be written.
void export_report(const Report& report, ReportFormat format, const std::filesystem::path& path);

}  // namespace uai

#endif  // UAI_EVALUATION_H_
