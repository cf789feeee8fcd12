#include "uai/dataset_source.h"

#include <string>

#include "uai/dataset_io.h"
#include "uai/errors.h"
#include "uai/synthesis.h"

namespace uai {

using nlohmann::json;

namespace {

Dataset from_generator(const std::string& name, std::uint64_t seed) {
  if (name == "mixture-clustered" || name == "mixture-low-density") {
    MixtureSpec spec;
    spec.regime = name == "mixture-clustered" ? AnomalyRegime::kClustered
                                              : AnomalyRegime::kLowDensity;
    return make_two_regime_mixture(spec, seed);
  }
  if (name == "prototypes") return make_prototype_classes(PrototypeSpec{}, seed);
  throw UsageError("unknown generator '" + name +
                   "' (expected mixture-clustered, mixture-low-density or prototypes)");
}

CsvSchema csv_schema(const json& source) {
  CsvSchema schema;
  schema.label_column = source.value("label_column", std::string("label"));
  const std::string role = source.value("label_role", std::string("truth"));
  if (role != "truth" && role != "class") {
    throw UsageError("label_role must be truth or class, got '" + role + "'");
  }
  schema.label_role = role == "truth" ? LabelRole::kTruth : LabelRole::kClass;
  schema.anomaly_value = source.value("anomaly_value", std::string());
  const std::string delimiter = source.value("delimiter", std::string(","));
  if (delimiter.size() != 1) throw UsageError("delimiter must be a single character");
  schema.delimiter = delimiter[0];
  schema.has_header = source.value("has_header", true);
  schema.categorical_columns =
      source.value("categorical_columns", std::vector<std::string>{});
  return schema;
}

}  // namespace

Dataset load_source(const json& source) {
  if (!source.is_object()) throw UsageError("dataset source must be an object");
  Dataset dataset;
  try {
    const std::string kind = source.at("kind").get<std::string>();
    if (kind == "container") {
      dataset = load_dataset(source.at("path").get<std::string>());
    } else if (kind == "csv") {
      dataset = load_csv(source.at("path").get<std::string>(), csv_schema(source));
    } else if (kind == "idx") {
      dataset = load_idx(source.at("images").get<std::string>(),
                         source.at("labels").get<std::string>());
    } else if (kind == "generator") {
      dataset = from_generator(source.at("name").get<std::string>(),
                               source.value("seed", std::uint64_t{0}));
    } else {
      throw UsageError("unknown dataset kind '" + kind + "'");
    }
    if (source.contains("subsample")) {
      const json& sub = source.at("subsample");
      dataset = stratified_subsample(dataset, sub.at("fraction").get<double>(),
                                     sub.value("seed", std::uint64_t{0}));
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed dataset source: ") + e.what());
  }
  if (source.contains("synthesize")) {
    dataset = synthesize(dataset, synthetic_spec_from_json(source.at("synthesize")));
  }
  return dataset;
}

json source_from_string(std::string_view text) {
  const std::string s(text);
  if (s.rfind("gen:", 0) == 0) {
    const std::string rest = s.substr(4);
    const auto colon = rest.find(':');
    json source = {{"kind", "generator"}, {"name", rest.substr(0, colon)}};
    if (colon != std::string::npos) {
      try {
        source["seed"] = std::stoull(rest.substr(colon + 1));
      } catch (const std::exception&) {
        throw UsageError("generator seed in '" + s + "' is not a number");
      }
    }
    return source;
  }
  if (s.rfind("idx:", 0) == 0) {
    const std::string rest = s.substr(4);
    const auto comma = rest.find(',');
    if (comma == std::string::npos) throw UsageError("expected idx:IMAGES,LABELS");
    return {{"kind", "idx"}, {"images", rest.substr(0, comma)}, {"labels", rest.substr(comma + 1)}};
  }
  auto ends_with = [&s](std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with(".csv")) return {{"kind", "csv"}, {"path", s}};
  return {{"kind", "container"}, {"path", s}};
}

}  // namespace uai
