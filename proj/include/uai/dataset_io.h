#ifndef UAI_DATASET_IO_H_
#define UAI_DATASET_IO_H_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "uai/dataset.h"

namespace uai {

// Reads an IDX image file (magic 0x00000803) and its label file (0x00000801).
// Pixels are scaled to [0, 1]; labels become class ids. No anomaly truth.
Dataset load_idx(const std::filesystem::path& images,
                 const std::filesystem::path& labels);

enum class LabelRole { kTruth, kClass };

struct CsvSchema {
  std::string label_column;  // header name, or 0-based position without header
  LabelRole label_role = LabelRole::kTruth;
  // For kTruth: cells equal to this string are anomalies. When empty the
  // cell is read as a number and any nonzero value is an anomaly.
  std::string anomaly_value;
  char delimiter = ',';
  bool has_header = true;
  // Columns (names, or positions without header) expanded to one-hot.
  std::vector<std::string> categorical_columns;
};

// Features are z-scored per column (constant columns become 0). Throws
// FormatError with the 1-based file row on ragged rows or non-numeric cells
// outside a categorical column.
Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);

// Splits RFC-4180 records: quoted fields may contain the delimiter, doubled
// quotes and line breaks. Each record carries the file row it started on.
struct CsvRecord {
  std::vector<std::string> fields;
  long long row = 0;
};
std::vector<CsvRecord> parse_csv(const std::string& text, char delimiter);

}  // namespace uai

#endif  // UAI_DATASET_IO_H_
