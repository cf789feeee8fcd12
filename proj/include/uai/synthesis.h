#ifndef UAI_SYNTHESIS_H_
#define UAI_SYNTHESIS_H_

// Anomaly benchmarks built from labeled data, plus the bundled synthetic
// datasets used when no image data is available.

#include "json.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

#include "uai/dataset.h"

namespace uai {

enum class SynthesisMode { kReducedClass, kHard };

std::string_view to_string(SynthesisMode mode);
SynthesisMode synthesis_mode_from_string(std::string_view name);

struct WeakClassifierSpec {
  nn::Index hidden_width = 64;
  int train_steps = 250;
  double learning_rate = 0.01;
  nn::Index batch_size = 256;
  double min_accuracy = 0.6;
};

struct SyntheticSpec {
  SynthesisMode mode = SynthesisMode::kReducedClass;
  std::vector<int> anomaly_classes;  // reduced_class only
  double keep_fraction = 0.1;
  std::uint64_t seed = 0;
  WeakClassifierSpec weak;
};

nlohmann::json to_json(const SyntheticSpec& spec);
// Missing fields keep their defaults; unknown fields are a UsageError.
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& doc);

// Keeps floor(keep_fraction * n_c) uniformly chosen points of every anomaly
// class c, flags them as anomalies and moves each to a class drawn
// uniformly from the non-anomaly classes. Other points are untouched.
Dataset synthesize_reduced_class(const Dataset& base, const SyntheticSpec& spec);

// Trains a one-hidden-layer softmax classifier on every point and flags the
// points it misclassifies. Features and classes are unchanged. Training
// accuracy is recorded in the provenance; an accuracy below
// spec.weak.min_accuracy or an empty anomaly set adds a warning.
Dataset synthesize_hard(const Dataset& base, const SyntheticSpec& spec);

// Dispatches on spec.mode.
Dataset synthesize(const Dataset& base, const SyntheticSpec& spec);

// Labeled stand-in for an image corpus: `classes` classes in `dim`
// dimensions, each a Gaussian around its own prototype with a few
// class-specific directions of variation. A small fraction of every class
// is drawn as a blend with a point of another class (the ambiguous digits of
// a real corpus), weighted toward the other class by a uniform factor in
// [blend_min, blend_max]. Features are z-scored; no anomaly truth.
struct PrototypeSpec {
  int classes = 10;
  int per_class = 1000;
  nn::Index dim = 24;
  nn::Index rank = 3;
  double separation = 2.0;  // spread of class prototypes
  double within = 1.0;      // scale of the class-specific directions
  double noise = 0.35;      // isotropic noise
  double atypical_fraction = 0.08;
  double blend_min = 0.2;
  double blend_max = 0.8;
  double atypical_spread = 0.0;  // extra isotropic noise on blended points
};

Dataset make_prototype_classes(const PrototypeSpec& spec, std::uint64_t seed);

// Two-dimensional mixture with both anomaly regimes present at once: three
// classes spread over four well-separated clusters, one small dense
// cluster whose points carry uniformly random class labels, and isolated
// points scattered uniformly over the whole box (labeled by the nearest
// normal cluster). `regime` decides which group is flagged anomalous; the
// geometry is identical in both.
enum class AnomalyRegime { kClustered, kLowDensity };

struct MixtureSpec {
  int normal_points = 9000;  // split evenly over the four clusters
  int dense_points = 100;
  int scattered_points = 120;
  double cluster_sd = 0.5;
  double dense_sd = 0.25;
  double box = 6.0;  // scattered points are uniform in [-box, box]^2
  AnomalyRegime regime = AnomalyRegime::kClustered;
};

Dataset make_two_regime_mixture(const MixtureSpec& spec, std::uint64_t seed);

}  // namespace uai

#endif  // UAI_SYNTHESIS_H_
