#include "uai/cli.h"

#include "CLI11.hpp"
#include "json.hpp"

#include <csignal>
#include <map>
#include <ostream>
#include <pthread.h>
#include <thread>

#include "uai/active_loop.h"
#include "uai/dataset_source.h"
#include "uai/errors.h"
#include "uai/evaluation.h"
#include "uai/files.h"
#include "uai/http_service.h"
#include "uai/run_manager.h"
#include "uai/synthesis.h"

namespace uai {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunFlags {
  std::string dataset;
  std::vector<std::string> models = {"dae-uai"};
  std::optional<std::size_t> budget;
  std::optional<std::size_t> k;
  std::vector<std::uint64_t> seeds = {1};
  std::string expert = "oracle";
  std::string out;
  std::string config;
  std::optional<int> steps_pre;
  std::optional<int> steps_active;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::vector<nn::Index> hidden;
  std::optional<double> noise;
  std::string policy;
  bool snapshot = false;
};

struct SynthFlags {
  std::string dataset;
  std::string mode = "reduced-class";
  std::vector<int> classes;
  double keep = 0.1;
  std::uint64_t seed = 0;
  WeakClassifierSpec weak;
  std::string out;
};

struct EvalFlags {
  std::vector<std::string> runs;
  std::string dataset;
  std::string format = "json";
  std::string out;
};

struct ServeFlags {
  std::string data_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t workers = 1;
};

int do_run(const RunFlags& f, std::ostream& out) {
  if (f.expert != "oracle") {
    throw UsageError("--expert " + f.expert + " is not available here; human runs go through serve");
  }
  const Dataset dataset = load_source(source_from_string(f.dataset));
  if (!dataset.has_truth()) throw UsageError("--dataset has no ground truth for an oracle expert");

  RunConfig base;
  if (!f.config.empty()) base = run_config_from_json(json::parse(read_file(f.config)));
  if (f.budget) base.budget = *f.budget;
  else if (f.config.empty()) base.budget = default_benchmark_budget(dataset);
  if (f.k) base.k = *f.k;
  else if (f.config.empty()) base.k = default_k(dataset);
  if (base.budget > 0 && base.k > base.budget) {
    throw UsageError("--k (" + std::to_string(base.k) + ") must not exceed --budget (" +
                     std::to_string(base.budget) + ")");
  }
  if (f.steps_pre) base.steps_pre = *f.steps_pre;
  if (f.steps_active) base.steps_active = *f.steps_active;
  if (f.lr) base.learning_rate = *f.lr;
  if (f.batch_size) base.batch_size = *f.batch_size;
  if (!f.hidden.empty()) base.hidden_sizes = f.hidden;
  if (f.noise) base.noise_phi = *f.noise;
  if (!f.policy.empty()) base.policy = ranking_policy_from_string(f.policy);

  std::vector<ModelKind> kinds;
  for (const auto& m : f.models) kinds.push_back(model_kind_from_string(m));
  for (ModelKind kind : kinds) {
    RunConfig c = base;
    c.model_kind = kind;
    validate(c, dataset);
  }

  const fs::path dir = f.out;
  std::error_code ec;
  fs::create_directories(dir / "runs", ec);
  if (f.snapshot) fs::create_directories(dir / "snapshots", ec);
  if (ec) throw IoError("cannot create " + dir.string());

  Report report;
  report.notes = {{"dataset", dataset.meta.name},
                  {"points", dataset.size()},
                  {"anomalies", dataset.anomaly_count()}};
  for (ModelKind kind : kinds) {
    std::vector<RunResult> results;
    for (std::uint64_t seed : f.seeds) {
      RunConfig c = base;
      c.model_kind = kind;
      c.seed = seed;
      ActiveRun run(dataset, c);
      OracleExpert oracle(dataset);
      run.run(oracle);
      RunResult result = run.result();
      const std::string stem = std::string(to_string(kind)) + "-seed" + std::to_string(seed);
      write_file_atomic(dir / "runs" / (stem + ".json"), to_json(result).dump() + "\n");
      if (f.snapshot && run.model().latent_dim() == 1) {
        write_snapshot_csv(latent_score_snapshot(run.model(), dataset, run.spent()),
                           dir / "snapshots" / (stem + ".csv"));
      }
      results.push_back(std::move(result));
    }
    ModelReport m = summarize_runs(results, &dataset);
    const double mean = m.band.size() == 0 ? 0.0 : m.band.mean.back();
    out << m.model << ": found " << mean << " anomalies (mean over " << results.size()
        << " seeds) with budget " << m.budget << "\n";
    report.models.push_back(std::move(m));
  }
  export_report(report, ReportFormat::kJson, dir / "report.json");
  export_report(report, ReportFormat::kCsv, dir / "report.csv");
  return kExitOk;
}

int do_synthesize(const SynthFlags& f, std::ostream& out) {
  SyntheticSpec spec;
  spec.mode = synthesis_mode_from_string(f.mode);
  spec.anomaly_classes = f.classes;
  spec.keep_fraction = f.keep;
  spec.seed = f.seed;
  spec.weak = f.weak;
  const Dataset result = synthesize(load_source(source_from_string(f.dataset)), spec);
  if (!f.out.empty()) save_dataset(result, f.out);
  json doc = to_json(dataset_stats(result));
  doc["name"] = result.meta.name;
  doc["warnings"] = result.meta.warnings;
  out << doc.dump(2) << "\n";
  return kExitOk;
}

int do_stats(const std::string& source, std::ostream& out) {
  const Dataset dataset = load_source(source_from_string(source));
  json doc = to_json(dataset_stats(dataset));
  doc["name"] = dataset.meta.name;
  doc["scaling"] = dataset.meta.scaling;
  doc["warnings"] = dataset.meta.warnings;
  out << doc.dump(2) << "\n";
  return kExitOk;
}

int do_evaluate(const EvalFlags& f, std::ostream& out) {
  std::vector<fs::path> files;
  for (const auto& p : f.runs) {
    if (fs::is_directory(p)) {
      for (const auto& item : fs::directory_iterator(p)) {
        if (item.path().extension() == ".json") files.push_back(item.path());
      }
    } else {
      files.push_back(p);
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageError("--runs names no run files");
  std::map<std::string, std::vector<RunResult>> by_model;
  std::vector<std::string> order;
  for (const auto& file : files) {
    RunResult r = run_result_from_json(json::parse(read_file(file)));
    const std::string model(to_string(r.config.model_kind));
    if (!by_model.contains(model)) order.push_back(model);
    by_model[model].push_back(std::move(r));
  }
  std::optional<Dataset> dataset;
  if (!f.dataset.empty()) dataset = load_source(source_from_string(f.dataset));
  Report report;
  for (const auto& model : order) {
    report.models.push_back(summarize_runs(by_model[model], dataset ? &*dataset : nullptr));
  }
  if (f.format != "json" && f.format != "csv") throw UsageError("--format must be json or csv");
  const ReportFormat format = f.format == "json" ? ReportFormat::kJson : ReportFormat::kCsv;
  if (f.out.empty()) {
    out << (format == ReportFormat::kJson ? report_to_json(report).dump(2) + "\n"
                                          : report_to_csv(report));
  } else {
    export_report(report, format, f.out);
  }
  return kExitOk;
}

int do_serve(const ServeFlags& f, std::ostream& out) {
  // Signals are taken by a dedicated thread; every other thread inherits
  // the blocked mask.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  RunManager manager({resolve_data_dir(f.data_dir), f.workers});
  HttpService service(manager);
  const int port = service.bind(f.host, f.port);
  if (port < 0) throw IoError("cannot bind " + f.host + ":" + std::to_string(f.port));
  out << "serving on http://" << f.host << ":" << port << " (data in "
      << manager.data_dir().string() << ")" << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    service.stop();
  });
  service.serve();
  waiter.join();
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Active anomaly detection with expert feedback"};
  app.require_subcommand(1);

  RunFlags rf;
  CLI::App* run = app.add_subcommand("run", "seeded benchmark runs with an oracle expert");
  run->add_option("--dataset", rf.dataset, "dataset file (.uaids/.csv), idx:IMG,LBL or gen:NAME[:SEED]")
      ->required();
  run->add_option("--model", rf.models, "dae, classnet, dae-uai, classnet-uai")->delimiter(',');
  run->add_option("--budget", rf.budget, "labels to spend (default min(1.5 x anomalies, N/10))");
  run->add_option("--k", rf.k, "labels per round (default 3 below 100 anomalies, else 10)");
  run->add_option("--seeds", rf.seeds, "comma-separated seeds")->delimiter(',');
  run->add_option("--expert", rf.expert, "oracle");
  run->add_option("--out", rf.out, "output directory")->required();
  run->add_option("--config", rf.config, "run config JSON; flags override it");
  run->add_option("--steps-pre", rf.steps_pre);
  run->add_option("--steps-active", rf.steps_active);
  run->add_option("--lr", rf.lr);
  run->add_option("--batch-size", rf.batch_size);
  run->add_option("--hidden", rf.hidden, "hidden widths, last one is the latent")->delimiter(',');
  run->add_option("--noise", rf.noise, "DAE input noise standard deviation");
  run->add_option("--policy", rf.policy,
                  "switch-on-both-classes, switch-on-first-positive, always-uai, always-base");
  run->add_flag("--snapshot", rf.snapshot, "write (l, s) per point when the latent width is 1");

  SynthFlags sf;
  CLI::App* synth = app.add_subcommand("synthesize", "derive an anomaly dataset from a labeled one");
  synth->add_option("--dataset", sf.dataset)->required();
  synth->add_option("--mode", sf.mode, "reduced-class or hard");
  synth->add_option("--classes", sf.classes, "anomaly classes (reduced-class)")->delimiter(',');
  synth->add_option("--keep", sf.keep, "fraction of each anomaly class kept");
  synth->add_option("--seed", sf.seed);
  synth->add_option("--weak-width", sf.weak.hidden_width);
  synth->add_option("--weak-steps", sf.weak.train_steps);
  synth->add_option("--weak-lr", sf.weak.learning_rate);
  synth->add_option("--out", sf.out, "write the dataset container here");

  std::string stats_source;
  CLI::App* stats = app.add_subcommand("stats", "print dataset statistics");
  stats->add_option("--dataset", stats_source)->required();

  EvalFlags ef;
  CLI::App* eval = app.add_subcommand("evaluate", "aggregate run results into a report");
  eval->add_option("--runs", ef.runs, "run result files or directories")->required();
  eval->add_option("--dataset", ef.dataset, "adds F1 at the dataset's contamination");
  eval->add_option("--format", ef.format, "json or csv");
  eval->add_option("--out", ef.out, "report file (default stdout)");

  ServeFlags vf;
  CLI::App* serve = app.add_subcommand("serve", "HTTP service for expert-in-the-loop runs");
  serve->add_option("--data-dir", vf.data_dir, "defaults to $UAI_DATA_DIR, then ./uai-data");
  serve->add_option("--host", vf.host);
  serve->add_option("--port", vf.port);
  serve->add_option("--workers", vf.workers, "runs trained at once");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failed = &app;
    for (const CLI::App* sub : app.get_subcommands()) failed = sub;
    err << failed->help();
    return kExitConfig;
  }

  try {
    if (*run) return do_run(rf, out);
    if (*synth) return do_synthesize(sf, out);
    if (*stats) return do_stats(stats_source, out);
    if (*eval) return do_evaluate(ef, out);
    if (*serve) return do_serve(vf, out);
  } catch (const TrainingAborted& e) {
    err << "aborted: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    err << "error: malformed JSON: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "aborted: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace uai
