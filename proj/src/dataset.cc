#include "uai/dataset.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <utility>

#include "uai/errors.h"

namespace uai {

using nlohmann::json;
using nn::Index;
using nn::Matrix;

static_assert(std::endian::native == std::endian::little,
              "container format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'U', 'A', 'I', 'D', 'S', 'E', 'T', '\n'};
constexpr int kContainerVersion = 1;

json meta_to_json(const DatasetMeta& meta) {
  json doc = {
      {"name", meta.name},
      {"source", meta.source},
      {"scaling", meta.scaling},
      {"feature_names", meta.feature_names},
      {"image_shape", meta.image_shape},
      {"provenance", meta.provenance},
      {"warnings", meta.warnings},
  };
  doc["anomaly_fraction"] = meta.anomaly_fraction ? json(*meta.anomaly_fraction) : json();
  return doc;
}

DatasetMeta meta_from_json(const json& doc) {
  DatasetMeta meta;
  meta.name = doc.at("name").get<std::string>();
  meta.source = doc.at("source").get<std::string>();
  meta.scaling = doc.at("scaling").get<std::string>();
  meta.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
  meta.image_shape = doc.at("image_shape").get<std::vector<int>>();
  meta.provenance = doc.at("provenance");
  meta.warnings = doc.at("warnings").get<std::vector<std::string>>();
  if (!doc.at("anomaly_fraction").is_null()) {
    meta.anomaly_fraction = doc.at("anomaly_fraction").get<double>();
  }
  return meta;
}

}  // namespace

std::size_t Dataset::anomaly_count() const {
  return static_cast<std::size_t>(std::count(truth.begin(), truth.end(), 1));
}

void zscore_features(Matrix& features) {
  const Index n = features.cols();
  for (Index f = 0; f < features.rows(); ++f) {
    auto row = features.row(f);
    const double mean = row.mean();
    row.array() -= mean;
    const double sd = n > 1 ? std::sqrt(row.squaredNorm() / static_cast<double>(n - 1)) : 0.0;
    if (sd > 1e-12 * std::max(1.0, std::abs(mean))) {
      row /= sd;
    } else {
      row.setZero();
    }
  }
}

void finalize(Dataset& dataset) {
  const std::size_t n = dataset.size();
  if (dataset.ids.empty()) {
    dataset.ids.resize(n);
    std::iota(dataset.ids.begin(), dataset.ids.end(), std::size_t{0});
  }
  if (dataset.ids.size() != n) throw StructuralError("ids do not match the point count");
  if (!dataset.classes.empty()) {
    if (dataset.classes.size() != n) {
      throw StructuralError("class labels do not match the point count");
    }
    for (int c : dataset.classes) {
      if (c < 0 || c >= dataset.num_classes) {
        throw StructuralError("class id " + std::to_string(c) + " outside [0, " +
                              std::to_string(dataset.num_classes) + ")");
      }
    }
  }
  if (!dataset.truth.empty()) {
    if (dataset.truth.size() != n) {
      throw StructuralError("anomaly flags do not match the point count");
    }
    for (auto t : dataset.truth) {
      if (t > 1) throw StructuralError("anomaly flags must be 0 or 1");
    }
    dataset.meta.anomaly_fraction =
        n == 0 ? 0.0 : static_cast<double>(dataset.anomaly_count()) / static_cast<double>(n);
  } else {
    dataset.meta.anomaly_fraction.reset();
  }
  if (!dataset.features.allFinite()) {
    throw StructuralError("feature matrix contains non-finite values");
  }
  if (!dataset.meta.feature_names.empty() &&
      static_cast<Index>(dataset.meta.feature_names.size()) != dataset.dim()) {
    throw StructuralError("feature names do not match the dimension");
  }
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  const auto b = static_cast<Index>(indices.size());
  Batch batch;
  batch.features.resize(dataset.dim(), b);
  if (dataset.has_classes()) batch.class_onehot = Matrix::Zero(dataset.num_classes, b);
  batch.indices.assign(indices.begin(), indices.end());
  for (Index j = 0; j < b; ++j) {
    const std::size_t i = indices[static_cast<std::size_t>(j)];
    if (i >= dataset.size()) {
      throw StructuralError("index " + std::to_string(i) + " outside a dataset of " +
                            std::to_string(dataset.size()) + " points");
    }
    batch.features.col(j) = dataset.features.col(static_cast<Index>(i));
    if (dataset.has_classes()) batch.class_onehot(dataset.classes[i], j) = 1.0;
  }
  return batch;
}

Batch make_batch(const Dataset& dataset) {
  std::vector<std::size_t> all(dataset.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return make_batch(dataset, all);
}

Dataset select_rows(const Dataset& dataset, std::span<const std::size_t> indices) {
  Dataset out;
  out.meta = dataset.meta;
  out.num_classes = dataset.num_classes;
  out.features.resize(dataset.dim(), static_cast<Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const std::size_t i = indices[j];
    if (i >= dataset.size()) throw StructuralError("row index out of range");
    out.features.col(static_cast<Index>(j)) = dataset.features.col(static_cast<Index>(i));
    out.ids.push_back(dataset.ids[i]);
    if (dataset.has_classes()) out.classes.push_back(dataset.classes[i]);
    if (dataset.has_truth()) out.truth.push_back(dataset.truth[i]);
  }
  finalize(out);
  return out;
}

std::uint64_t fingerprint(const Dataset& dataset) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  auto mix = [&hash](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      hash ^= p[i];
      hash *= 0x100000001b3ull;
    }
  };
  const Index rows = dataset.dim();
  const Index cols = static_cast<Index>(dataset.size());
  mix(&rows, sizeof rows);
  mix(&cols, sizeof cols);
  mix(dataset.features.data(), static_cast<std::size_t>(dataset.features.size()) * sizeof(double));
  mix(dataset.classes.data(), dataset.classes.size() * sizeof(int));
  return hash;
}

DatasetStats dataset_stats(const Dataset& dataset) {
  DatasetStats stats;
  stats.points = dataset.size();
  stats.dimension = dataset.dim();
  stats.classes = dataset.num_classes;
  if (dataset.has_truth()) {
    stats.anomalies = dataset.anomaly_count();
    stats.anomaly_fraction =
        stats.points == 0 ? 0.0
                          : static_cast<double>(*stats.anomalies) / static_cast<double>(stats.points);
  }
  return stats;
}

json to_json(const DatasetStats& stats) {
  json doc = {{"points", stats.points}, {"dimension", stats.dimension}, {"classes", stats.classes}};
  doc["anomalies"] = stats.anomalies ? json(*stats.anomalies) : json();
  doc["anomaly_fraction"] = stats.anomaly_fraction ? json(*stats.anomaly_fraction) : json();
  return doc;
}

Dataset stratified_subsample(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw UsageError("subsample fraction must be in (0, 1]");
  }
  std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int c = dataset.has_classes() ? dataset.classes[i] : -1;
    const int t = dataset.has_truth() ? dataset.truth[i] : -1;
    strata[{c, t}].push_back(i);
  }
  nn::Rng rng(seed);
  std::vector<std::size_t> keep;
  for (auto& [key, members] : strata) {
    const auto n = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(members.size())));
    std::shuffle(members.begin(), members.end(), rng);
    keep.insert(keep.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n));
  }
  std::sort(keep.begin(), keep.end());
  Dataset out = select_rows(dataset, keep);
  out.meta.provenance["subsample"] = {{"fraction", fraction}, {"seed", seed},
                                      {"source_points", dataset.size()}};
  return out;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  json header = {
      {"version", kContainerVersion},
      {"rows", dataset.dim()},
      {"cols", dataset.size()},
      {"num_classes", dataset.num_classes},
      {"classes", dataset.classes},
      {"truth", dataset.truth},
      {"ids", dataset.ids},
      {"meta", meta_to_json(dataset.meta)},
  };
  const std::string text = header.dump();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    const std::uint64_t length = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(dataset.features.data()),
              static_cast<std::streamsize>(dataset.features.size() * sizeof(double)));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move dataset into place at " + path.string() + ": " + ec.message());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw FormatError(path.string() + " is not a dataset container", 0);
  }
  std::uint64_t length = 0;
  if (!in.read(reinterpret_cast<char*>(&length), sizeof length) || length > (1ull << 34)) {
    throw FormatError("bad header length", sizeof kMagic);
  }
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) {
    throw FormatError("truncated header", sizeof kMagic + sizeof length);
  }
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("unreadable header: ") + e.what(), sizeof kMagic + sizeof length);
  }
  if (header.value("version", -1) != kContainerVersion) {
    throw MigrationError("dataset container version " + header.value("version", json()).dump() +
                         " is not supported (expected " + std::to_string(kContainerVersion) + ")");
  }
  Dataset dataset;
  try {
    const auto rows = header.at("rows").get<Index>();
    const auto cols = header.at("cols").get<Index>();
    dataset.features.resize(rows, cols);
    dataset.num_classes = header.at("num_classes").get<int>();
    dataset.classes = header.at("classes").get<std::vector<int>>();
    dataset.truth = header.at("truth").get<std::vector<std::uint8_t>>();
    dataset.ids = header.at("ids").get<std::vector<std::size_t>>();
    dataset.meta = meta_from_json(header.at("meta"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what(), sizeof kMagic + sizeof length);
  }
  const auto offset = static_cast<long long>(sizeof kMagic + sizeof length + length);
  if (!in.read(reinterpret_cast<char*>(dataset.features.data()),
               static_cast<std::streamsize>(dataset.features.size() * sizeof(double)))) {
    throw FormatError("truncated feature block", offset);
  }
  finalize(dataset);
  return dataset;
}

}  // namespace uai
