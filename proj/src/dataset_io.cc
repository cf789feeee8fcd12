#include "uai/dataset_io.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "uai/errors.h"

namespace uai {

using nn::Index;

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t big_endian_u32(const std::vector<unsigned char>& bytes, std::size_t at,
                             const std::string& what) {
  if (at + 4 > bytes.size()) throw FormatError(what + ": truncated header", static_cast<long long>(at));
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

// Returns the dimension sizes after checking the magic number.
std::vector<std::uint32_t> idx_header(const std::vector<unsigned char>& bytes,
                                      std::uint32_t magic, const std::string& what) {
  const std::uint32_t found = big_endian_u32(bytes, 0, what);
  if (found != magic) {
    std::ostringstream msg;
    msg << what << ": bad magic 0x" << std::hex << found << ", expected 0x" << magic;
    throw FormatError(msg.str(), 0);
  }
  const std::size_t ndim = magic & 0xff;
  std::vector<std::uint32_t> dims;
  for (std::size_t d = 0; d < ndim; ++d) dims.push_back(big_endian_u32(bytes, 4 + 4 * d, what));
  return dims;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::optional<double> parse_number(const std::string& cell) {
  const std::string t = trim(cell);
  if (t.empty()) return std::nullopt;
  double value = 0.0;
  const char* begin = t.data();
  if (*begin == '+') ++begin;
  const auto [end, ec] = std::from_chars(begin, t.data() + t.size(), value);
  if (ec != std::errc() || end != t.data() + t.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto image_bytes = read_bytes(images);
  const auto label_bytes = read_bytes(labels);
  const auto image_dims = idx_header(image_bytes, 0x00000803, images.filename().string());
  const auto label_dims = idx_header(label_bytes, 0x00000801, labels.filename().string());

  const std::size_t n = image_dims[0];
  const std::size_t rows = image_dims[1];
  const std::size_t cols = image_dims[2];
  const std::size_t pixels = rows * cols;
  if (pixels == 0) throw FormatError("image dimensions must be positive", 8);
  const std::size_t image_start = 16;
  if (image_bytes.size() != image_start + n * pixels) {
    throw FormatError(images.filename().string() + ": expected " +
                          std::to_string(image_start + n * pixels) + " bytes, found " +
                          std::to_string(image_bytes.size()),
                      static_cast<long long>(std::min(image_bytes.size(), image_start + n * pixels)));
  }
  if (label_dims[0] != n) {
    throw FormatError("label count " + std::to_string(label_dims[0]) + " does not match image count " +
                          std::to_string(n),
                      4);
  }
  const std::size_t label_start = 8;
  if (label_bytes.size() != label_start + n) {
    throw FormatError(labels.filename().string() + ": expected " + std::to_string(label_start + n) +
                          " bytes, found " + std::to_string(label_bytes.size()),
                      static_cast<long long>(std::min(label_bytes.size(), label_start + n)));
  }

  Dataset dataset;
  dataset.features.resize(static_cast<Index>(pixels), static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < pixels; ++p) {
      dataset.features(static_cast<Index>(p), static_cast<Index>(i)) =
          image_bytes[image_start + i * pixels + p] / 255.0;
    }
  }
  int max_class = -1;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = label_bytes[label_start + i];
    dataset.classes.push_back(c);
    max_class = std::max(max_class, c);
  }
  dataset.num_classes = max_class + 1;
  dataset.meta.name = images.stem().string();
  dataset.meta.source = "idx:" + images.string();
  dataset.meta.scaling = kUnitInterval;
  dataset.meta.image_shape = {static_cast<int>(rows), static_cast<int>(cols)};
  finalize(dataset);
  return dataset;
}

std::vector<CsvRecord> parse_csv(const std::string& text, char delimiter) {
  std::vector<CsvRecord> records;
  CsvRecord current;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  long long row = 1;
  current.row = row;

  auto end_field = [&] {
    current.fields.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    const bool blank = current.fields.size() == 1 && current.fields[0].empty();
    if (!blank) records.push_back(std::move(current));
    current = CsvRecord{};
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (ch == '\n') ++row;
        field += ch;
      }
      continue;
    }
    if (ch == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (ch == delimiter) {
      end_field();
    } else if (ch == '\n' || ch == '\r') {
      if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_record();
      current.row = ++row;
    } else {
      field += ch;
      field_started = true;
    }
  }
  if (in_quotes) throw FormatError("unterminated quoted field", current.row);
  if (field_started || !field.empty() || !current.fields.empty()) end_record();
  return records;
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::vector<CsvRecord> records = parse_csv(text, schema.delimiter);
  if (records.empty()) throw FormatError("empty CSV file", 1);

  const std::size_t width = records.front().fields.size();
  std::vector<std::string> names;
  if (schema.has_header) {
    for (const auto& f : records.front().fields) names.push_back(trim(f));
    records.erase(records.begin());
  } else {
    for (std::size_t c = 0; c < width; ++c) names.push_back(std::to_string(c));
  }
  for (const auto& r : records) {
    if (r.fields.size() != width) {
      throw FormatError("row has " + std::to_string(r.fields.size()) + " fields, expected " +
                            std::to_string(width),
                        r.row);
    }
  }
  auto column_of = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw UsageError("CSV has no column '" + name + "'");
    return static_cast<std::size_t>(it - names.begin());
  };

  std::optional<std::size_t> label_col;
  if (!schema.label_column.empty()) label_col = column_of(schema.label_column);
  std::set<std::size_t> categorical;
  for (const auto& c : schema.categorical_columns) categorical.insert(column_of(c));

  // Output feature columns: numeric ones map 1:1, categorical ones expand to
  // one column per distinct value (sorted).
  struct Source {
    std::size_t column;
    std::optional<std::string> level;
  };
  std::vector<Source> sources;
  std::vector<std::string> feature_names;
  for (std::size_t c = 0; c < width; ++c) {
    if (label_col && c == *label_col) continue;
    if (categorical.contains(c)) {
      std::set<std::string> levels;
      for (const auto& r : records) levels.insert(trim(r.fields[c]));
      for (const auto& level : levels) {
        sources.push_back({c, level});
        feature_names.push_back(names[c] + "=" + level);
      }
    } else {
      sources.push_back({c, std::nullopt});
      feature_names.push_back(names[c]);
    }
  }

  const auto n = static_cast<Index>(records.size());
  Dataset dataset;
  dataset.features.resize(static_cast<Index>(sources.size()), n);
  for (Index i = 0; i < n; ++i) {
    const CsvRecord& r = records[static_cast<std::size_t>(i)];
    for (std::size_t f = 0; f < sources.size(); ++f) {
      const std::string& cell = r.fields[sources[f].column];
      double value;
      if (sources[f].level) {
        value = trim(cell) == *sources[f].level ? 1.0 : 0.0;
      } else {
        const auto parsed = parse_number(cell);
        if (!parsed) {
          throw FormatError("non-numeric value '" + cell + "' in column '" +
                                names[sources[f].column] + "'",
                            r.row);
        }
        value = *parsed;
      }
      dataset.features(static_cast<Index>(f), i) = value;
    }
  }

  if (label_col) {
    if (schema.label_role == LabelRole::kTruth) {
      for (const auto& r : records) {
        const std::string cell = trim(r.fields[*label_col]);
        if (!schema.anomaly_value.empty()) {
          dataset.truth.push_back(cell == schema.anomaly_value ? 1 : 0);
        } else {
          const auto parsed = parse_number(cell);
          if (!parsed) throw FormatError("non-numeric label '" + cell + "'", r.row);
          dataset.truth.push_back(*parsed != 0.0 ? 1 : 0);
        }
      }
    } else {
      std::map<std::string, int> ids;
      for (const auto& r : records) ids.emplace(trim(r.fields[*label_col]), 0);
      int next = 0;
      for (auto& [level, id] : ids) id = next++;
      for (const auto& r : records) dataset.classes.push_back(ids.at(trim(r.fields[*label_col])));
      dataset.num_classes = next;
    }
  }

  zscore_features(dataset.features);

  dataset.meta.name = path.stem().string();
  dataset.meta.source = "csv:" + path.string();
  dataset.meta.scaling = kZScore;
  dataset.meta.feature_names = std::move(feature_names);
  finalize(dataset);
  return dataset;
}

}  // namespace uai
