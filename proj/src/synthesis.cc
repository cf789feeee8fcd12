#include "uai/synthesis.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "uai/errors.h"
#include "uai/models.h"

namespace uai {

using nlohmann::json;
using nn::Index;
using nn::Matrix;
using nn::Vector;

namespace {

// Generators emit points group by group; shuffling keeps dataset position
// from carrying any information about class or anomaly status.
Dataset shuffled(const Dataset& dataset, nn::Rng& rng) {
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  Dataset out = select_rows(dataset, order);
  out.ids.clear();
  finalize(out);
  return out;
}

}  // namespace

std::string_view to_string(SynthesisMode mode) {
  return mode == SynthesisMode::kReducedClass ? "reduced-class" : "hard";
}

SynthesisMode synthesis_mode_from_string(std::string_view name) {
  if (name == "reduced-class" || name == "reduced_class") return SynthesisMode::kReducedClass;
  if (name == "hard") return SynthesisMode::kHard;
  throw UsageError("unknown synthesis mode '" + std::string(name) + "'");
}

json to_json(const SyntheticSpec& spec) {
  json doc = {{"mode", to_string(spec.mode)}, {"seed", spec.seed}};
  if (spec.mode == SynthesisMode::kReducedClass) {
    doc["anomaly_classes"] = spec.anomaly_classes;
    doc["keep_fraction"] = spec.keep_fraction;
  } else {
    doc["weak_classifier"] = {{"hidden_width", spec.weak.hidden_width},
                              {"train_steps", spec.weak.train_steps},
                              {"learning_rate", spec.weak.learning_rate},
                              {"batch_size", spec.weak.batch_size},
                              {"min_accuracy", spec.weak.min_accuracy}};
  }
  return doc;
}

SyntheticSpec synthetic_spec_from_json(const json& doc) {
  if (!doc.is_object()) throw UsageError("synthesis spec must be an object");
  SyntheticSpec spec;
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "mode") {
        spec.mode = synthesis_mode_from_string(value.get<std::string>());
      } else if (key == "anomaly_classes") {
        spec.anomaly_classes = value.get<std::vector<int>>();
      } else if (key == "keep_fraction") {
        spec.keep_fraction = value.get<double>();
      } else if (key == "seed") {
        spec.seed = value.get<std::uint64_t>();
      } else if (key == "weak_classifier") {
        for (const auto& [wk, wv] : value.items()) {
          if (wk == "hidden_width") {
            spec.weak.hidden_width = wv.get<Index>();
          } else if (wk == "train_steps") {
            spec.weak.train_steps = wv.get<int>();
          } else if (wk == "learning_rate") {
            spec.weak.learning_rate = wv.get<double>();
          } else if (wk == "batch_size") {
            spec.weak.batch_size = wv.get<Index>();
          } else if (wk == "min_accuracy") {
            spec.weak.min_accuracy = wv.get<double>();
          } else {
            throw UsageError("unknown weak classifier field '" + wk + "'");
          }
        }
      } else {
        throw UsageError("unknown synthesis field '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed synthesis spec: ") + e.what());
  }
  if (spec.weak.hidden_width < 1 || spec.weak.train_steps < 0 || spec.weak.batch_size < 1 ||
      !(spec.weak.learning_rate > 0.0)) {
    throw UsageError("weak classifier needs width >= 1, steps >= 0, batch >= 1 and lr > 0");
  }
  return spec;
}

Dataset synthesize_reduced_class(const Dataset& base, const SyntheticSpec& spec) {
  if (!base.has_classes()) throw UsageError("reduced-class synthesis needs class labels");
  if (spec.anomaly_classes.empty()) throw UsageError("no anomaly classes given");
  if (!(spec.keep_fraction > 0.0 && spec.keep_fraction <= 1.0)) {
    throw UsageError("keep fraction must be in (0, 1]");
  }
  const std::set<int> anomalous(spec.anomaly_classes.begin(), spec.anomaly_classes.end());
  for (int c : anomalous) {
    if (c < 0 || c >= base.num_classes) {
      throw UsageError("anomaly class " + std::to_string(c) + " is not a class of the dataset");
    }
  }
  std::vector<int> remaining;
  for (int c = 0; c < base.num_classes; ++c) {
    if (!anomalous.contains(c)) remaining.push_back(c);
  }
  if (remaining.empty()) throw UsageError("every class is an anomaly class");

  nn::Rng rng(spec.seed);
  std::vector<std::uint8_t> keep(base.size(), 1);
  std::size_t anomalies = 0;
  for (int c : anomalous) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < base.size(); ++i) {
      if (base.classes[i] == c) members.push_back(i);
    }
    // The epsilon keeps products such as 0.3 * 10 from flooring to 2.
    const auto kept = static_cast<std::size_t>(
        std::floor(spec.keep_fraction * static_cast<double>(members.size()) + 1e-9));
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t j = kept; j < members.size(); ++j) keep[members[j]] = 0;
    anomalies += kept;
  }
  if (anomalies == 0) {
    throw UsageError("keep fraction " + std::to_string(spec.keep_fraction) +
                     " leaves no anomalies");
  }

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (keep[i]) rows.push_back(i);
  }
  Dataset out = select_rows(base, rows);
  out.truth.assign(out.size(), 0);
  std::uniform_int_distribution<std::size_t> pick(0, remaining.size() - 1);
  for (std::size_t j = 0; j < out.size(); ++j) {
    if (anomalous.contains(out.classes[j])) {
      out.truth[j] = 1;
      out.classes[j] = remaining[pick(rng)];
    }
  }
  std::string tag;
  for (int c : anomalous) tag += (tag.empty() ? "" : "-") + std::to_string(c);
  out.meta.name = base.meta.name + "_" + tag;
  out.meta.provenance["synthesis"] = to_json(spec);
  finalize(out);
  return out;
}

Dataset synthesize_hard(const Dataset& base, const SyntheticSpec& spec) {
  if (!base.has_classes()) throw UsageError("hard synthesis needs class labels");
  if (base.size() == 0) throw UsageError("hard synthesis needs a nonempty dataset");
  const WeakClassifierSpec& weak = spec.weak;
  nn::Rng rng(spec.seed);
  const Index hidden[] = {weak.hidden_width};
  CompositeModel model = make_composite(make_classnet(base.dim(), base.num_classes, hidden, rng));
  nn::OptimizerState optimizer = make_optimizer(model, {weak.learning_rate, 0.9, 1e-10});
  const LabelStore no_labels;
  std::uniform_int_distribution<std::size_t> draw(0, base.size() - 1);
  std::vector<std::size_t> picks(static_cast<std::size_t>(weak.batch_size));
  for (int step = 0; step < weak.train_steps; ++step) {
    for (auto& p : picks) p = draw(rng);
    train_step(model, make_batch(base, picks), no_labels, optimizer, rng, LossTerms::kBaseOnly);
  }

  const auto& net = std::get<ClassNetModel>(model.base);
  const Matrix probs = net.output.forward(net.trunk.forward(base.features, nullptr), nullptr);
  Dataset out = base;
  out.truth.assign(out.size(), 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Index predicted = 0;
    probs.col(static_cast<Index>(i)).maxCoeff(&predicted);
    if (predicted == base.classes[i]) {
      ++correct;
    } else {
      out.truth[i] = 1;
    }
  }
  const double accuracy = static_cast<double>(correct) / static_cast<double>(out.size());
  json record = to_json(spec);
  record["training_accuracy"] = accuracy;
  out.meta.provenance["synthesis"] = record;
  out.meta.name = base.meta.name + "_hard";
  if (accuracy < weak.min_accuracy) {
    out.meta.warnings.push_back("weak classifier accuracy " + std::to_string(accuracy) +
                                " is below the configured minimum " +
                                std::to_string(weak.min_accuracy));
  }
  if (correct == out.size()) {
    out.meta.warnings.push_back("weak classifier misclassified nothing; the dataset has no anomalies");
  }
  finalize(out);
  return out;
}

Dataset synthesize(const Dataset& base, const SyntheticSpec& spec) {
  return spec.mode == SynthesisMode::kReducedClass ? synthesize_reduced_class(base, spec)
                                                   : synthesize_hard(base, spec);
}

Dataset make_prototype_classes(const PrototypeSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2 || spec.per_class < 1 || spec.dim < 1) {
    throw UsageError("prototype dataset needs at least 2 classes, 1 point each, 1 dimension");
  }
  if (!(spec.atypical_spread >= 0.0)) throw UsageError("atypical_spread must be >= 0");
  if (!(spec.blend_min >= 0.0 && spec.blend_min <= spec.blend_max && spec.blend_max <= 1.0)) {
    throw UsageError("blend range must satisfy 0 <= blend_min <= blend_max <= 1");
  }
  nn::Rng rng(seed);
  std::normal_distribution<double> normal;
  auto gaussian = [&](Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j) {
      for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
    }
    return m;
  };
  std::vector<Vector> prototypes;
  std::vector<Matrix> loadings;
  for (int c = 0; c < spec.classes; ++c) {
    prototypes.push_back(gaussian(spec.dim, 1).col(0) * spec.separation);
    loadings.push_back(gaussian(spec.dim, spec.rank) * spec.within);
  }
  auto typical = [&](int c) -> Vector {
    return prototypes[c] + loadings[c] * gaussian(spec.rank, 1).col(0);
  };
  std::bernoulli_distribution atypical(spec.atypical_fraction);
  std::uniform_real_distribution<double> blend(spec.blend_min, spec.blend_max);
  std::uniform_int_distribution<int> other(0, spec.classes - 2);

  Dataset out;
  out.num_classes = spec.classes;
  out.features.resize(spec.dim, static_cast<Index>(spec.classes) * spec.per_class);
  Index column = 0;
  for (int c = 0; c < spec.classes; ++c) {
    for (int i = 0; i < spec.per_class; ++i) {
      Vector x = typical(c);
      if (atypical(rng)) {
        int d = other(rng);
        if (d >= c) ++d;
        const double t = blend(rng);
        x = (1.0 - t) * x + t * typical(d) + spec.atypical_spread * gaussian(spec.dim, 1).col(0);
      }
      out.features.col(column++) = x + spec.noise * gaussian(spec.dim, 1).col(0);
      out.classes.push_back(c);
    }
  }
  zscore_features(out.features);
  out.meta.name = "prototypes";
  out.meta.source = "generated";
  out.meta.scaling = kZScore;
  out.meta.provenance["generator"] = {
      {"kind", "prototype-classes"}, {"seed", seed},
      {"classes", spec.classes}, {"per_class", spec.per_class},
      {"dim", spec.dim}, {"rank", spec.rank},
      {"separation", spec.separation}, {"within", spec.within},
      {"noise", spec.noise}, {"atypical_fraction", spec.atypical_fraction},
      {"blend_min", spec.blend_min}, {"blend_max", spec.blend_max},
      {"atypical_spread", spec.atypical_spread}};
  finalize(out);
  return shuffled(out, rng);
}

Dataset make_two_regime_mixture(const MixtureSpec& spec, std::uint64_t seed) {
  // Cluster centres and the class each one belongs to (class 0 spans two).
  const double centres[4][2] = {{-3.0, -3.0}, {3.0, -3.0}, {-3.0, 3.0}, {3.0, 3.0}};
  const int cluster_class[4] = {0, 1, 2, 0};
  const double dense_centre[2] = {0.0, 0.0};

  nn::Rng rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(-spec.box, spec.box);
  std::uniform_int_distribution<int> any_class(0, 2);

  const int total = spec.normal_points + spec.dense_points + spec.scattered_points;
  Dataset out;
  out.num_classes = 3;
  out.features.resize(2, total);
  std::vector<std::uint8_t> dense(static_cast<std::size_t>(total), 0);
  std::vector<std::uint8_t> scattered(static_cast<std::size_t>(total), 0);
  Index column = 0;
  for (int i = 0; i < spec.normal_points; ++i) {
    const int k = i % 4;
    out.features(0, column) = centres[k][0] + spec.cluster_sd * normal(rng);
    out.features(1, column) = centres[k][1] + spec.cluster_sd * normal(rng);
    out.classes.push_back(cluster_class[k]);
    ++column;
  }
  for (int i = 0; i < spec.dense_points; ++i) {
    out.features(0, column) = dense_centre[0] + spec.dense_sd * normal(rng);
    out.features(1, column) = dense_centre[1] + spec.dense_sd * normal(rng);
    out.classes.push_back(any_class(rng));
    dense[static_cast<std::size_t>(column)] = 1;
    ++column;
  }
  for (int i = 0; i < spec.scattered_points; ++i) {
    const double x = uniform(rng);
    const double y = uniform(rng);
    int nearest = 0;
    double best = 1e300;
    for (int k = 0; k < 4; ++k) {
      const double d = std::hypot(x - centres[k][0], y - centres[k][1]);
      if (d < best) {
        best = d;
        nearest = k;
      }
    }
    out.features(0, column) = x;
    out.features(1, column) = y;
    out.classes.push_back(cluster_class[nearest]);
    scattered[static_cast<std::size_t>(column)] = 1;
    ++column;
  }
  out.truth = spec.regime == AnomalyRegime::kClustered ? dense : scattered;
  zscore_features(out.features);
  out.meta.name = spec.regime == AnomalyRegime::kClustered ? "mixture_clustered"
                                                           : "mixture_low_density";
  out.meta.source = "generated";
  out.meta.scaling = kZScore;
  out.meta.feature_names = {"x", "y"};
  out.meta.provenance["generator"] = {
      {"kind", "two-regime-mixture"}, {"seed", seed},
      {"regime", spec.regime == AnomalyRegime::kClustered ? "clustered" : "low-density"},
      {"normal_points", spec.normal_points}, {"dense_points", spec.dense_points},
      {"scattered_points", spec.scattered_points}, {"cluster_sd", spec.cluster_sd},
      {"dense_sd", spec.dense_sd}, {"box", spec.box}};
  finalize(out);
  return shuffled(out, rng);
}

}  // namespace uai
