#ifndef UAI_DATASET_H_
#define UAI_DATASET_H_

#include "json.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uai/batch.h"
#include "uai/nn_core.h"

namespace uai {

// Scaling tags recorded in DatasetMeta::scaling.
inline constexpr const char* kUnitInterval = "unit-interval";
inline constexpr const char* kZScore = "z-score";
inline constexpr const char* kNoScaling = "none";

struct DatasetMeta {
  std::string name;
  std::string source;
  std::string scaling = kNoScaling;
  std::optional<double> anomaly_fraction;  // lambda, when truth is known
  std::vector<std::string> feature_names;  // empty, or one per feature
  std::vector<int> image_shape;            // e.g. {28, 28}; empty for tables
  nlohmann::json provenance = nlohmann::json::object();  // synthesis, subsampling
  std::vector<std::string> warnings;
};

// Immutable after construction. Features are stored one sample per column.
struct Dataset {
  nn::Matrix features;              // D x N
  std::vector<int> classes;         // N class ids in [0, num_classes), or empty
  int num_classes = 0;
  std::vector<std::uint8_t> truth;  // N anomaly flags, or empty when unknown
  std::vector<std::size_t> ids;     // N stable ids from the source
  DatasetMeta meta;

  std::size_t size() const { return static_cast<std::size_t>(features.cols()); }
  nn::Index dim() const { return features.rows(); }
  bool has_classes() const { return !classes.empty(); }
  bool has_truth() const { return !truth.empty(); }
  std::size_t anomaly_count() const;
};

// Per-feature z-score with the sample standard deviation; features whose
// spread is negligible become all zeros.
void zscore_features(nn::Matrix& features);

// Fills ids (if empty) and anomaly_fraction from the data, then checks the
// invariants. Throws StructuralError on inconsistent lengths, class ids out
// of range or non-finite features.
void finalize(Dataset& dataset);

// The model-facing view of `indices`: features, one-hot classes, indices.
Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);
Batch make_batch(const Dataset& dataset);  // every point, in order

// The subset at `indices` (in that order), keeping ids and metadata.
Dataset select_rows(const Dataset& dataset, std::span<const std::size_t> indices);

// FNV-1a over the feature bytes and class ids; identifies the data a run
// checkpoint was taken on.
std::uint64_t fingerprint(const Dataset& dataset);

struct DatasetStats {
  std::size_t points = 0;
  nn::Index dimension = 0;
  int classes = 0;
  std::optional<std::size_t> anomalies;
  std::optional<double> anomaly_fraction;  // unknown without truth
};

DatasetStats dataset_stats(const Dataset& dataset);
nlohmann::json to_json(const DatasetStats& stats);

// Keeps round(fraction * n) points of every (class, anomaly flag) stratum,
// chosen uniformly with `seed`, in original order. Recorded in provenance.
Dataset stratified_subsample(const Dataset& dataset, double fraction,
                             std::uint64_t seed);

// Self-describing container: magic, JSON header (metadata, labels, truth,
// ids), then the raw little-endian doubles of the feature matrix.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace uai

#endif  // UAI_DATASET_H_
