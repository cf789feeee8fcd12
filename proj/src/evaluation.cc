#include "uai/evaluation.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "uai/errors.h"
#include "uai/files.h"

namespace uai {

using nlohmann::json;
using nn::Index;

DiscoveryCurve discovery_curve(std::span<const AuditRound> rounds) {
  DiscoveryCurve curve;
  std::size_t labels = 0;
  std::size_t found = 0;
  for (const AuditRound& round : rounds) {
    for (int y : round.labels) {
      ++labels;
      found += y == 1 ? 1 : 0;
      curve.push_back({labels, found});
    }
  }
  return curve;
}

DiscoveryCurve discovery_curve(const RunResult& run) { return discovery_curve(run.rounds); }

SeedBand aggregate_curves(std::span<const DiscoveryCurve> curves) {
  SeedBand band;
  if (curves.empty()) return band;
  const std::size_t n = curves.front().size();
  for (const auto& c : curves) {
    if (c.size() != n) {
      throw UsageError("curves cover different budgets (" + std::to_string(n) + " vs " +
                       std::to_string(c.size()) + " labels)");
    }
  }
  band.mean.resize(n);
  band.min.resize(n);
  band.max.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t lo = std::numeric_limits<std::size_t>::max();
    std::size_t hi = 0;
    double sum = 0.0;
    for (const auto& c : curves) {
      if (c[j].labels != j + 1) throw StructuralError("curve points must be one per label");
      lo = std::min(lo, c[j].found);
      hi = std::max(hi, c[j].found);
      sum += static_cast<double>(c[j].found);
    }
    band.mean[j] = sum / static_cast<double>(curves.size());
    band.min[j] = lo;
    band.max[j] = hi;
  }
  return band;
}

SeedBand aggregate_seeds(std::span<const RunResult> runs) {
  std::vector<DiscoveryCurve> curves;
  for (const RunResult& run : runs) {
    if (run.config.budget != runs.front().config.budget) {
      throw UsageError("runs have different budgets");
    }
    curves.push_back(discovery_curve(run));
  }
  return aggregate_curves(curves);
}

F1Score f1_at_contamination(std::span<const double> scores, const LabelStore& audited,
                            std::span<const std::uint8_t> truth, double rho) {
  const std::size_t n = scores.size();
  if (truth.size() != n) throw StructuralError("scores and truth differ in length");
  if (!(rho >= 0.0 && rho <= 1.0)) throw UsageError("contamination must be in [0, 1]");
  const auto target =
      std::min(n, static_cast<std::size_t>(std::ceil(rho * static_cast<double>(n) - 1e-9)));

  std::vector<std::uint8_t> predicted(n, 0);
  std::size_t count = 0;
  for (std::size_t i : audited.order()) {
    if (i >= n) throw StructuralError("audited index outside the score vector");
    if (*audited.get(i) == 1) {
      predicted[i] = 1;
      ++count;
    }
  }
  if (count < target) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n; ++i) {
      if (!audited.contains(i)) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (std::isnan(scores[a])) return false;
      if (std::isnan(scores[b])) return true;
      return scores[a] > scores[b];
    });
    for (std::size_t j = 0; j < order.size() && count < target; ++j) {
      predicted[order[j]] = 1;
      ++count;
    }
  }

  std::size_t tp = 0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    positives += truth[i];
    tp += predicted[i] && truth[i] ? 1 : 0;
  }
  F1Score out;
  out.predicted = count;
  out.precision = count == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(count);
  out.recall = positives == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(positives);
  out.f1 = out.precision + out.recall == 0.0
               ? 0.0
               : 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

std::size_t default_benchmark_budget(const Dataset& dataset) {
  if (!dataset.has_truth()) throw UsageError("benchmark budget needs ground truth");
  const std::size_t by_anomalies = dataset.anomaly_count() * 3 / 2;
  return std::min(by_anomalies, dataset.size() / 10);
}

LatentScoreSnapshot latent_score_snapshot(const CompositeModel& model, const Dataset& dataset,
                                          std::size_t budget) {
  if (model.latent_dim() != 1) {
    throw UsageError("latent snapshots need a latent width of 1, the model has " +
                     std::to_string(model.latent_dim()));
  }
  const ScoreTable table = score_batch(model, make_batch(dataset));
  LatentScoreSnapshot snapshot;
  snapshot.budget = budget;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto c = static_cast<Index>(i);
    SnapshotRow row{i, table.latent(0, c), table.base_score(c), std::nullopt};
    if (dataset.has_truth()) row.truth = dataset.truth[i];
    snapshot.rows.push_back(row);
  }
  return snapshot;
}

void write_snapshot_csv(const LatentScoreSnapshot& snapshot, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "index,l,s,truth\n";
  for (const auto& row : snapshot.rows) {
    out << row.index << ',' << row.latent << ',' << row.score << ',';
    if (row.truth) out << *row.truth;
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

ModelReport summarize_runs(std::span<const RunResult> runs, const Dataset* dataset) {
  if (runs.empty()) throw UsageError("no runs to summarize");
  ModelReport report;
  const RunResult& first = runs.front();
  report.model = std::string(to_string(first.config.model_kind));
  report.dataset = first.dataset;
  report.budget = first.config.budget;
  report.k = first.config.k;
  for (const RunResult& run : runs) {
    if (run.config.model_kind != first.config.model_kind || run.dataset != first.dataset) {
      throw UsageError("runs mix models or datasets");
    }
    report.seeds.push_back(run.config.seed);
    report.curves.push_back(discovery_curve(run));
  }
  report.band = aggregate_curves(report.curves);

  if (dataset != nullptr && dataset->has_truth()) {
    const double rho = *dataset->meta.anomaly_fraction;
    report.rho = rho;
    for (const RunResult& run : runs) {
      // Scored with whatever the run ranked by in its last round.
      const bool by_uai = !run.final_uai_scores.empty() && !run.rounds.empty() &&
                          run.rounds.back().ranked_by == ScoreSource::kUai;
      const auto& scores = by_uai ? run.final_uai_scores : run.final_base_scores;
      if (scores.size() != dataset->size()) {
        throw StructuralError("run scores do not cover the dataset");
      }
      LabelStore audited;
      for (const AuditRound& round : run.rounds) {
        for (std::size_t j = 0; j < round.labels.size(); ++j) {
          audited.add(round.selected[j], round.labels[j]);
        }
      }
      report.f1.push_back(f1_at_contamination(scores, audited, dataset->truth, rho).f1);
    }
  }
  return report;
}

namespace {

json curve_to_json(const DiscoveryCurve& curve) {
  json points = json::array();
  for (const auto& p : curve) points.push_back({p.labels, p.found});
  return points;
}

DiscoveryCurve curve_from_json(const json& doc) {
  DiscoveryCurve curve;
  for (const auto& p : doc) curve.push_back({p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>()});
  return curve;
}

}  // namespace

json report_to_json(const Report& report) {
  json models = json::array();
  for (const ModelReport& m : report.models) {
    json curves = json::array();
    for (const auto& c : m.curves) curves.push_back(curve_to_json(c));
    models.push_back({{"model", m.model},
                      {"dataset", m.dataset},
                      {"budget", m.budget},
                      {"k", m.k},
                      {"seeds", m.seeds},
                      {"curves", curves},
                      {"band", {{"mean", m.band.mean}, {"min", m.band.min}, {"max", m.band.max}}},
                      {"f1", m.f1},
                      {"rho", m.rho ? json(*m.rho) : json()}});
  }
  return {{"version", kReportVersion}, {"models", models}, {"notes", report.notes}};
}

Report report_from_json(const json& doc) {
  if (doc.value("version", -1) != kReportVersion) {
    throw MigrationError("report version " + doc.value("version", json()).dump() +
                         " is not supported (expected " + std::to_string(kReportVersion) + ")");
  }
  Report report;
  report.notes = doc.value("notes", json::object());
  for (const auto& m : doc.at("models")) {
    ModelReport r;
    r.model = m.at("model").get<std::string>();
    r.dataset = m.at("dataset").get<std::string>();
    r.budget = m.at("budget").get<std::size_t>();
    r.k = m.at("k").get<std::size_t>();
    r.seeds = m.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& c : m.at("curves")) r.curves.push_back(curve_from_json(c));
    r.band.mean = m.at("band").at("mean").get<std::vector<double>>();
    r.band.min = m.at("band").at("min").get<std::vector<std::size_t>>();
    r.band.max = m.at("band").at("max").get<std::vector<std::size_t>>();
    r.f1 = m.at("f1").get<std::vector<double>>();
    if (!m.at("rho").is_null()) r.rho = m.at("rho").get<double>();
    report.models.push_back(std::move(r));
  }
  return report;
}

std::string report_to_csv(const Report& report) {
  std::ostringstream out;
  out.precision(10);
  out << "model,budget,mean,min,max\n";
  for (const ModelReport& m : report.models) {
    for (std::size_t j = 0; j < m.band.size(); ++j) {
      out << m.model << ',' << j + 1 << ',' << m.band.mean[j] << ',' << m.band.min[j] << ','
          << m.band.max[j] << '\n';
    }
  }
  return out.str();
}

void export_report(const Report& report, ReportFormat format, const std::filesystem::path& path) {
  write_file_atomic(path, format == ReportFormat::kJson ? report_to_json(report).dump(2) + "\n"
                                                        : report_to_csv(report));
}

}  // namespace uai
