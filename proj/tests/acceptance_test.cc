// Exit criteria for the whole system. Prints one PASS/FAIL line per
// criterion and exits nonzero if any fails. `--only NAME` runs one.
//
// Set UAI_MNIST_DIR to a directory holding train-images-idx3-ubyte and
// train-labels-idx1-ubyte to run the discovery and robustness criteria on
// MNIST; otherwise they run on the bundled generators.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "test_util.h"
#include "uai/active_loop.h"
#include "uai/dataset_io.h"
#include "uai/evaluation.h"
#include "uai/files.h"
#include "uai/synthesis.h"

namespace uai {
namespace {

using nn::Index;
using nn::Matrix;
using nn::Vector;

// Pinned thresholds.
constexpr double kGradientTolerance = 1e-4;
constexpr double kGradientSeconds = 10.0;
constexpr int kSelectionCases = 1000;
constexpr int kF1Cases = 20;
constexpr int kSeeds = 5;
constexpr std::size_t kDiscoveryBudget = 200;
constexpr std::size_t kDiscoveryK = 10;
constexpr int kDeskStepsPre = 2000;
constexpr double kUaiOverDaeFactor = 3.0;
constexpr double kRobustnessFactor = 0.8;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// Gradients

void randomize(CompositeModel& model, nn::Rng& rng) {
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto& p : model.parameters()) {
    if (p.name.ends_with(".bias")) {
      for (double& b : p.values) b = u(rng);
    }
  }
  std::uniform_real_distribution<double> w(-0.8, 0.8);
  for (Index j = 0; j < model.head.layer.weights.cols(); ++j) model.head.layer.weights(0, j) = w(rng);
  model.head.layer.bias(0) = u(rng);
}

LabelStore labels_for(Index batch, nn::Rng& rng) {
  LabelStore labels;
  labels.add(0, 1);
  labels.add(1, 0);
  for (Index j = 2; j < batch; ++j) {
    if (rng() % 2 == 0) labels.add(static_cast<std::size_t>(j), static_cast<int>(rng() % 2));
  }
  return labels;
}

// Worst relative error between the analytic gradient of L_full and central
// differences of L_full with the base scores held at their current values.
double worst_gradient_error(CompositeModel model, const Batch& batch, const LabelStore& labels,
                            const Matrix* noise, std::size_t* checked) {
  LossOptions options;
  options.noise = noise;
  std::vector<Vector> grads;
  const LossValue at = evaluate_loss(model, batch, labels, options, &grads);
  const Vector frozen = at.scores;
  options.frozen_scores = &frozen;
  auto params = model.parameters();
  double worst = 0.0;
  const double h = 1e-5;
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t i = 0; i < params[b].values.size(); ++i) {
      double& theta = params[b].values[i];
      const double keep = theta;
      theta = keep + h;
      const double up = evaluate_loss(model, batch, labels, options).total();
      theta = keep - h;
      const double down = evaluate_loss(model, batch, labels, options).total();
      theta = keep;
      worst = std::max(worst, testing::relative_error(grads[b](static_cast<Index>(i)),
                                                      (up - down) / (2 * h)));
      ++*checked;
    }
  }
  return worst;
}

Outcome gradient_suite() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    nn::Rng rng(seed);
    const Index dim = 4 + static_cast<Index>(rng() % 13);  // 4..16
    const Index latent = 1 + static_cast<Index>(rng() % 4);
    const Index hidden[] = {6 + static_cast<Index>(rng() % 5), latent};
    const Index batch_size = 9;
    {
      auto model = make_composite(make_dae(dim, hidden, nn::Activation::kLinear, 0.1, rng));
      randomize(model, rng);
      const Batch batch = testing::random_batch(dim, batch_size, 0, rng);
      const Matrix noise = nn::gaussian_noise(Matrix(Matrix::Zero(dim, batch_size)), 0.1, rng);
      const LabelStore labels = labels_for(batch_size, rng);
      worst = std::max(worst, worst_gradient_error(model, batch, labels, &noise, &checked));
      auto sig = make_composite(make_dae(dim, hidden, nn::Activation::kSigmoid, 0.1, rng));
      randomize(sig, rng);
      worst = std::max(worst, worst_gradient_error(sig, batch, labels, nullptr, &checked));
    }
    {
      const Index classes = 2 + static_cast<Index>(rng() % 4);
      auto model = make_composite(make_classnet(dim, classes, hidden, rng));
      randomize(model, rng);
      const Batch batch = testing::random_batch(dim, batch_size, classes, rng);
      worst = std::max(worst,
                       worst_gradient_error(model, batch, labels_for(batch_size, rng), nullptr, &checked));
    }
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst < kGradientTolerance && seconds < kGradientSeconds,
          fmt("%zu partials, worst relative error %.2e (< %.0e), %.2fs (< %.0fs)", checked, worst,
              kGradientTolerance, seconds, kGradientSeconds)};
}

Outcome stop_gradient() {
  LossOptions uai_only;
  uai_only.terms = LossTerms::kUaiOnly;
  std::size_t blocked = 0;
  bool all_zero = true;
  bool reaches_encoder = true;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    nn::Rng rng(100 + seed);
    const Index hidden[] = {7, 3};
    for (int base = 0; base < 2; ++base) {
      CompositeModel model =
          base == 0 ? make_composite(make_dae(6, hidden, nn::Activation::kLinear, 0.1, rng))
                    : make_composite(make_classnet(6, 3, hidden, rng));
      randomize(model, rng);
      const Batch batch = testing::random_batch(6, 8, base == 0 ? 0 : 3, rng);
      std::vector<Vector> grads;
      evaluate_loss(model, batch, labels_for(8, rng), uai_only, &grads);
      const auto names = model.parameter_names();
      const std::string blocked_prefix = base == 0 ? "decoder" : "output";
      const std::string open_prefix = base == 0 ? "encoder" : "trunk";
      bool open = false;
      for (std::size_t b = 0; b < names.size(); ++b) {
        if (names[b].starts_with(blocked_prefix)) {
          blocked += static_cast<std::size_t>(grads[b].size());
          for (Index i = 0; i < grads[b].size(); ++i) {
            // Bit pattern of +0.0.
            if (std::signbit(grads[b](i)) || grads[b](i) != 0.0) all_zero = false;
          }
        }
        if (names[b].starts_with(open_prefix) && !grads[b].isZero(0.0)) open = true;
      }
      reaches_encoder = reaches_encoder && open;
    }
  }
  return {all_zero && reaches_encoder,
          fmt("%zu decoder/output partials %s; encoder/trunk gradient %s on every net", blocked,
              all_zero ? "exactly 0" : "NOT all zero", reaches_encoder ? "nonzero" : "zero")};
}

// ---------------------------------------------------------------------------
// Selection

std::vector<std::size_t> sort_oracle(const std::vector<double>& s, const LabelStore& labeled,
                                     std::size_t k) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!labeled.contains(i)) idx.push_back(i);
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (s[a] != s[b]) return s[a] > s[b];
    return a < b;
  });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

Outcome selection_oracle() {
  nn::Rng rng(2024);
  int mismatches = 0;
  int with_ties = 0;
  for (int trial = 0; trial < kSelectionCases; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    std::vector<double> s(n);
    const bool coarse = trial % 2 == 0;
    std::normal_distribution<double> normal;
    for (auto& v : s) v = coarse ? static_cast<double>(rng() % 5) : normal(rng);
    std::set<double> distinct(s.begin(), s.end());
    if (distinct.size() < n) ++with_ties;
    LabelStore labeled;
    for (std::size_t i = 0; i < n; ++i) {
      if (rng() % 3 == 0) labeled.add(i, static_cast<int>(rng() % 2));
    }
    const std::size_t k = 1 + rng() % (n + 3);
    if (select_top_k(s, labeled, k) != sort_oracle(s, labeled, k)) ++mismatches;
  }
  return {mismatches == 0,
          fmt("%d cases (%d with ties), %d mismatches", kSelectionCases, with_ties, mismatches)};
}

// ---------------------------------------------------------------------------
// Synthesis

Dataset balanced_fixture() {
  Dataset ds;
  ds.num_classes = 10;
  ds.features.resize(3, 1000);
  for (int c = 0; c < 10; ++c) {
    for (int i = 0; i < 100; ++i) {
      ds.features.col(c * 100 + i) << c, i, 0.25 * c * i;
      ds.classes.push_back(c);
    }
  }
  ds.meta.name = "balanced";
  finalize(ds);
  return ds;
}

Outcome synthesis_fractions() {
  const Dataset base = balanced_fixture();
  SyntheticSpec one;
  one.anomaly_classes = {0};
  SyntheticSpec three;
  three.anomaly_classes = {0, 1, 2};
  const Dataset a = synthesize(base, one);
  const Dataset b = synthesize(base, three);
  // Exact rational checks: anomalies * 91 == points, anomalies * 73 == 3 * points.
  const bool ok_a = a.anomaly_count() * 91 == a.size();
  const bool ok_b = b.anomaly_count() * 73 == 3 * b.size();
  return {ok_a && ok_b, fmt("one class %zu/%zu (want 1/91), three classes %zu/%zu (want 3/73)",
                            a.anomaly_count(), a.size(), b.anomaly_count(), b.size())};
}

// ---------------------------------------------------------------------------
// Benchmarks

std::optional<Dataset> mnist() {
  const char* dir = std::getenv("UAI_MNIST_DIR");
  if (dir == nullptr) return std::nullopt;
  const std::filesystem::path root(dir);
  const auto images = root / "train-images-idx3-ubyte";
  const auto labels = root / "train-labels-idx1-ubyte";
  if (!std::filesystem::exists(images) || !std::filesystem::exists(labels)) return std::nullopt;
  return load_idx(images, labels);
}

struct Tally {
  std::vector<std::size_t> found;
  double mean() const {
    double sum = 0.0;
    for (auto f : found) sum += static_cast<double>(f);
    return found.empty() ? 0.0 : sum / static_cast<double>(found.size());
  }
  std::string list() const {
    std::string out;
    for (auto f : found) out += (out.empty() ? "" : ",") + std::to_string(f);
    return out;
  }
};

Tally benchmark(const Dataset& ds, ModelKind kind, std::size_t budget, std::size_t k) {
  Tally t;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    RunConfig c;
    c.model_kind = kind;
    c.budget = budget;
    c.k = k;
    c.steps_pre = kDeskStepsPre;
    c.seed = static_cast<std::uint64_t>(seed);
    OracleExpert oracle(ds);
    t.found.push_back(run_active(ds, c, oracle).found());
  }
  return t;
}

Outcome discovery_reproduction() {
  Dataset ds;
  std::string origin;
  if (auto digits = mnist()) {
    SyntheticSpec spec;
    spec.anomaly_classes = {0};
    ds = stratified_subsample(synthesize(*digits, spec), 0.1, 1);
    origin = "MNIST_0 10% subsample";
  } else {
    ds = make_two_regime_mixture(MixtureSpec{}, 1);
    origin = "2-D mixture, clustered anomalies";
  }
  const Tally dae = benchmark(ds, ModelKind::kDae, kDiscoveryBudget, kDiscoveryK);
  const Tally dae_uai = benchmark(ds, ModelKind::kDaeUai, kDiscoveryBudget, kDiscoveryK);
  const Tally net = benchmark(ds, ModelKind::kClassNet, kDiscoveryBudget, kDiscoveryK);
  const Tally net_uai = benchmark(ds, ModelKind::kClassNetUai, kDiscoveryBudget, kDiscoveryK);
  const bool pass = dae_uai.mean() >= kUaiOverDaeFactor * dae.mean() && net_uai.mean() >= net.mean();
  return {pass, fmt("%s (%zu points, %zu anomalies, b=%zu k=%zu): dae %.1f [%s], dae-uai %.1f [%s] "
                    "(need >= %.1f); classnet %.1f [%s], classnet-uai %.1f [%s]",
                    origin.c_str(), ds.size(), ds.anomaly_count(), kDiscoveryBudget, kDiscoveryK,
                    dae.mean(), dae.list().c_str(), dae_uai.mean(), dae_uai.list().c_str(),
                    kUaiOverDaeFactor * dae.mean(), net.mean(), net.list().c_str(), net_uai.mean(),
                    net_uai.list().c_str())};
}

Outcome robustness_on(const Dataset& ds) {
  const std::size_t budget = default_benchmark_budget(ds);
  const std::size_t k = default_k(ds);
  const Tally dae = benchmark(ds, ModelKind::kDae, budget, k);
  const Tally net = benchmark(ds, ModelKind::kClassNet, budget, k);
  const Tally dae_uai = benchmark(ds, ModelKind::kDaeUai, budget, k);
  const Tally net_uai = benchmark(ds, ModelKind::kClassNetUai, budget, k);
  const double floor = kRobustnessFactor * std::max(dae.mean(), net.mean());
  const bool pass = dae_uai.mean() >= floor && net_uai.mean() >= floor;
  return {pass, fmt("%s (%zu points, %zu anomalies, b=%zu k=%zu): dae %.1f [%s], classnet %.1f [%s], "
                    "dae-uai %.1f [%s], classnet-uai %.1f [%s], need >= %.1f",
                    ds.meta.name.c_str(), ds.size(), ds.anomaly_count(), budget, k, dae.mean(),
                    dae.list().c_str(), net.mean(), net.list().c_str(), dae_uai.mean(),
                    dae_uai.list().c_str(), net_uai.mean(), net_uai.list().c_str(), floor)};
}

Dataset labeled_base() {
  if (auto digits = mnist()) return stratified_subsample(*digits, 0.1, 1);
  return make_prototype_classes(PrototypeSpec{}, 7);
}

Outcome robustness() {
  const Dataset base = labeled_base();
  SyntheticSpec reduced;
  reduced.anomaly_classes = {0};
  reduced.seed = 3;
  SyntheticSpec hard;
  hard.mode = SynthesisMode::kHard;
  hard.seed = 3;
  const Outcome a = robustness_on(synthesize(base, reduced));
  const Outcome b = robustness_on(synthesize(base, hard));
  return {a.pass && b.pass,
          std::string(a.pass ? "ok " : "FAILED ") + a.detail + "; " + (b.pass ? "ok " : "FAILED ") +
              b.detail};
}

// ---------------------------------------------------------------------------
// Determinism

Dataset small_mixture() {
  MixtureSpec spec;
  spec.normal_points = 800;
  spec.dense_points = 20;
  spec.scattered_points = 20;
  return make_two_regime_mixture(spec, 11);
}

RunConfig small_config(ModelKind kind) {
  RunConfig c;
  c.model_kind = kind;
  c.budget = 40;
  c.k = 5;
  c.steps_pre = 300;
  c.steps_active = 30;
  c.batch_size = 64;
  c.hidden_sizes = {32, 8, 2};
  c.seed = 77;
  return c;
}

std::string result_bytes(const ActiveRun& run) { return to_json(run.result()).dump(); }

Outcome determinism() {
  const Dataset ds = small_mixture();
  const auto dir = testing::scratch_dir("acceptance_resume");
  int identical = 0;
  int resumed = 0;
  int cases = 0;
  for (ModelKind kind : {ModelKind::kDaeUai, ModelKind::kClassNetUai, ModelKind::kDae}) {
    const RunConfig c = small_config(kind);
    OracleExpert first_oracle(ds);
    const std::string first = to_json(run_active(ds, c, first_oracle)).dump();
    OracleExpert second_oracle(ds);
    if (to_json(run_active(ds, c, second_oracle)).dump() == first) ++identical;

    // Crash points: after pretraining, with a queue pending, between rounds.
    for (int crash_at = 0; crash_at < 3; ++crash_at) {
      ++cases;
      OracleExpert oracle(ds);
      const auto file = dir / ("run-" + std::to_string(crash_at) + ".json");
      {
        ActiveRun run(ds, c);
        run.pretrain();
        for (int round = 0; crash_at > 0 && round < 2; ++round) {
          run.start_round();
          run.submit(oracle.audit(run.pending().selected));
        }
        if (crash_at == 1) run.start_round();
        write_file_atomic(file, run.checkpoint().dump());
      }
      ActiveRun restored = ActiveRun::restore(ds, nlohmann::json::parse(read_file(file)));
      OracleExpert rest(ds);
      restored.run(rest);
      if (result_bytes(restored) == first) ++resumed;
    }
  }
  return {identical == 3 && resumed == cases,
          fmt("%d/3 repeated runs byte-identical, %d/%d resumed runs byte-identical", identical,
              resumed, cases)};
}

// ---------------------------------------------------------------------------
// Curves and F1

double f1_by_confusion(const std::vector<double>& s, const std::vector<std::pair<std::size_t, int>>& audited,
                       const std::vector<std::uint8_t>& truth, double rho) {
  const std::size_t n = s.size();
  const auto quota = static_cast<std::size_t>(std::ceil(rho * static_cast<double>(n) - 1e-9));
  std::vector<bool> predicted(n, false), seen(n, false);
  std::size_t count = 0;
  for (auto [i, y] : audited) {
    seen[i] = true;
    if (y == 1) {
      predicted[i] = true;
      ++count;
    }
  }
  // Repeatedly take the best remaining unaudited point.
  while (count < quota) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < n; ++i) {
      if (seen[i] || predicted[i]) continue;
      if (!best || s[i] > s[*best]) best = i;
    }
    if (!best) break;
    predicted[*best] = true;
    ++count;
  }
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += predicted[i] && truth[i];
    fp += predicted[i] && !truth[i];
    fn += !predicted[i] && truth[i];
  }
  const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

Outcome curves_and_f1() {
  const Dataset ds = small_mixture();
  int curves = 0;
  int bad_curves = 0;
  for (ModelKind kind : {ModelKind::kDae, ModelKind::kDaeUai, ModelKind::kClassNet, ModelKind::kClassNetUai}) {
    for (std::size_t budget : {std::size_t{7}, std::size_t{40}}) {
      RunConfig c = small_config(kind);
      c.budget = budget;
      c.k = 3;
      c.steps_pre = 100;
      OracleExpert oracle(ds);
      const RunResult r = run_active(ds, c, oracle);
      const DiscoveryCurve curve = discovery_curve(r);
      const std::size_t cap = std::min(budget, ds.anomaly_count());
      bool ok = curve.size() == budget;
      for (std::size_t j = 0; ok && j < curve.size(); ++j) {
        ok = curve[j].found <= cap && curve[j].found <= j + 1 &&
             (j == 0 || curve[j].found >= curve[j - 1].found);
      }
      ++curves;
      if (!ok) ++bad_curves;
    }
  }

  nn::Rng rng(99);
  int f1_mismatch = 0;
  for (int trial = 0; trial < kF1Cases; ++trial) {
    std::vector<double> s(10);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : s) v = u(rng);
    std::vector<std::uint8_t> truth(10);
    for (auto& t : truth) t = rng() % 3 == 0;
    LabelStore audited;
    std::vector<std::pair<std::size_t, int>> pairs;
    for (std::size_t i = 0; i < 10; ++i) {
      if (rng() % 4 == 0) {
        audited.add(i, truth[i]);
        pairs.emplace_back(i, truth[i]);
      }
    }
    const double rho = static_cast<double>(1 + rng() % 4) / 10.0;
    const double got = f1_at_contamination(s, audited, truth, rho).f1;
    if (std::abs(got - f1_by_confusion(s, pairs, truth, rho)) > 1e-12) ++f1_mismatch;
  }
  return {bad_curves == 0 && f1_mismatch == 0,
          fmt("%d curves, %d violations; %d F1 cases, %d mismatches", curves, bad_curves, kF1Cases,
              f1_mismatch)};
}

}  // namespace
}  // namespace uai

int main(int argc, char** argv) {
  std::string only;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--only") only = argv[i + 1];
  }
  const std::vector<std::pair<std::string, std::function<uai::Outcome()>>> criteria = {
      {"gradient-suite", uai::gradient_suite},
      {"stop-gradient", uai::stop_gradient},
      {"selection-oracle", uai::selection_oracle},
      {"synthesis-fractions", uai::synthesis_fractions},
      {"discovery-reproduction", uai::discovery_reproduction},
      {"robustness", uai::robustness},
      {"determinism", uai::determinism},
      {"curves-and-f1", uai::curves_and_f1},
  };
  int failed = 0;
  int ran = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && name != only) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    uai::Outcome outcome;
    try {
      outcome = check();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %-24s %7.1fs  %s\n", outcome.pass ? "PASS" : "FAIL", name.c_str(), seconds,
                outcome.detail.c_str());
    std::fflush(stdout);
    if (!outcome.pass) ++failed;
  }
  if (ran == 0) {
    std::fprintf(stderr, "no criterion named %s\n", only.c_str());
    return 2;
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
