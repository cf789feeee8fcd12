#ifndef UAI_DATASET_SOURCE_H_
#define UAI_DATASET_SOURCE_H_

// Declarative description of where a dataset comes from, shared by the CLI
// and the HTTP service:
//
//   {"kind": "container", "path": P}
//   {"kind": "csv", "path": P, "label_column": C, "label_role": "truth"|"class",
//    "anomaly_value": V, "delimiter": ",", "has_header": true,
//    "categorical_columns": [...]}
//   {"kind": "idx", "images": P, "labels": P}
//   {"kind": "generator", "name": G, "seed": S}
//
// G is one of mixture-clustered, mixture-low-density, prototypes. Optional
// "subsample": {"fraction", "seed"} and "synthesize": <synthesis spec> are
// applied in that order after loading.

#include "json.hpp"

#include <string_view>

#include "uai/dataset.h"

namespace uai {

Dataset load_source(const nlohmann::json& source);

// Command-line shorthand: a path ending in .uaids or .csv, "idx:IMAGES,LABELS"
// or "gen:NAME[:SEED]". CSV files get label_column "label" read as truth.
nlohmann::json source_from_string(std::string_view text);

}  // namespace uai

#endif  // UAI_DATASET_SOURCE_H_
