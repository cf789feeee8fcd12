#include "doctest.h"

#include <chrono>

#include "test_util.h"
#include "uai/errors.h"
#include "uai/files.h"
#include "uai/run_manager.h"
#include "uai/synthesis.h"

using namespace uai;
using namespace std::chrono_literals;
using nlohmann::json;

namespace {

Dataset fixture() {
  MixtureSpec spec;
  spec.normal_points = 300;
  spec.dense_points = 10;
  spec.scattered_points = 10;
  Dataset ds = make_two_regime_mixture(spec, 4);
  ds.meta.name = "mix";
  return ds;
}

RunConfig small_config() {
  RunConfig c;
  c.model_kind = ModelKind::kDaeUai;
  c.hidden_sizes = {8, 2};
  c.steps_pre = 30;
  c.steps_active = 5;
  c.batch_size = 32;
  c.budget = 12;
  c.k = 4;
  c.seed = 3;
  return c;
}

std::vector<Answer> answer_queue(const json& queue, const Dataset& ds) {
  std::vector<Answer> answers;
  for (const auto& item : queue.at("items")) {
    const auto i = item.at("index").get<std::size_t>();
    answers.push_back({i, ds.truth[i]});
  }
  return answers;
}

bool mentions_truth(const json& doc) {
  if (doc.is_object()) {
    for (const auto& [key, value] : doc.items()) {
      if (key == "truth" || key == "anomalies" || key == "anomaly_count" || key == "is_anomaly") {
        return true;
      }
      if (mentions_truth(value)) return true;
    }
  }
  if (doc.is_array()) {
    for (const auto& v : doc) {
      if (mentions_truth(v)) return true;
    }
  }
  return false;
}

}  // namespace

TEST_CASE("names") {
  CHECK(to_string(RunStatus::kAwaitingLabels) == "AWAITING_LABELS");
  CHECK(to_string(RunStatus::kPretraining) == "PRETRAINING");
  CHECK(expert_mode_from_string("oracle") == ExpertMode::kOracle);
  CHECK(expert_mode_from_string(to_string(ExpertMode::kHuman)) == ExpertMode::kHuman);
  CHECK_THROWS_AS(expert_mode_from_string("robot"), UsageError);
  CHECK(resolve_data_dir("/x/y") == "/x/y");
}

TEST_CASE("datasets register once") {
  RunManager m({testing::scratch_dir("rm_datasets"), 1});
  const Dataset ds = fixture();
  const json desc = m.register_dataset("mix", ds);
  CHECK(desc["points"] == 320);
  CHECK(desc["has_truth"] == true);
  CHECK_FALSE(mentions_truth(desc));
  CHECK(m.register_dataset("mix", ds) == desc);
  Dataset other = ds;
  other.features(0, 0) += 1.0;
  CHECK_THROWS_AS(m.register_dataset("mix", other), ConflictError);
  CHECK_THROWS_AS(m.register_dataset("../evil", ds), UsageError);
  CHECK(m.list_datasets()["datasets"].size() == 1);
  CHECK_THROWS_AS(m.describe_dataset("nope"), NotFoundError);
}

TEST_CASE("oracle run finishes on its own") {
  RunManager m({testing::scratch_dir("rm_oracle"), 1});
  const Dataset ds = fixture();
  m.register_dataset("mix", ds);
  const std::string id = m.create_run({"mix", small_config(), ExpertMode::kOracle, ""});
  REQUIRE(m.wait_until_settled(id, 60s) == RunStatus::kDone);
  const json result = m.get_result(id);
  const RunResult r = run_result_from_json(result);
  CHECK(r.curve.size() == 12);
  CHECK(r.rounds.size() == 3);

  // The same config driven directly gives the same audit trail.
  OracleExpert oracle(ds);
  const RunResult direct = run_active(ds, small_config(), oracle);
  CHECK(direct.curve == r.curve);
  for (std::size_t j = 0; j < r.rounds.size(); ++j) {
    CHECK(direct.rounds[j].selected == r.rounds[j].selected);
  }

  const json metrics = m.get_metrics(id);
  CHECK(metrics["curve"].size() == 12);
  CHECK(metrics["found"] == r.found());
  CHECK(m.get_run(id)["budget"]["spent"] == 12);
  CHECK_THROWS_AS(m.get_queue(id), ConflictError);
  CHECK_THROWS_AS(m.abort_run(id), ConflictError);
}

TEST_CASE("oracle runs need truth") {
  RunManager m({testing::scratch_dir("rm_notruth"), 1});
  Dataset ds = fixture();
  ds.truth.clear();
  m.register_dataset("blind", ds);
  CHECK_THROWS_AS(m.create_run({"blind", small_config(), ExpertMode::kOracle, ""}), UsageError);
  CHECK_THROWS_AS(m.create_run({"missing", small_config(), ExpertMode::kHuman, ""}),
                  NotFoundError);
  RunConfig bad = small_config();
  bad.k = 50;
  CHECK_THROWS_AS(m.create_run({"blind", bad, ExpertMode::kHuman, ""}), UsageError);
}

TEST_CASE("human run round trip") {
  const auto dir = testing::scratch_dir("rm_human");
  const Dataset ds = fixture();
  RunManager m({dir, 1});
  m.register_dataset("mix", ds);
  const std::string id = m.create_run({"mix", small_config(), ExpertMode::kHuman, "create-1"});
  CHECK(m.create_run({"mix", small_config(), ExpertMode::kHuman, "create-1"}) == id);
  REQUIRE(m.wait_until_settled(id, 60s) == RunStatus::kAwaitingLabels);

  const json queue = m.get_queue(id);
  CHECK_FALSE(mentions_truth(queue));
  CHECK_FALSE(mentions_truth(m.get_run(id)));
  REQUIRE(queue["items"].size() == 4);
  CHECK(queue["round"] == 1);
  CHECK(queue["items"][0]["rank"] == 1);
  CHECK(queue["items"][0]["features"].size() == ds.dim());
  CHECK_THROWS_AS(m.get_result(id), ConflictError);

  SUBCASE("bad submissions leave the run untouched") {
    auto answers = answer_queue(queue, ds);
    auto superset = answers;
    std::size_t outsider = 0;
    while (std::any_of(answers.begin(), answers.end(),
                       [&](const Answer& a) { return a.index == outsider; })) {
      ++outsider;
    }
    superset.push_back({outsider, 0});
    try {
      m.submit_labels(id, superset, "");
      FAIL("superset accepted");
    } catch (const RejectedSubmission& e) {
      CHECK(e.offenders() == std::vector<std::size_t>{outsider});
    }
    auto subset = answers;
    subset.pop_back();
    try {
      m.submit_labels(id, subset, "");
      FAIL("subset accepted");
    } catch (const RejectedSubmission& e) {
      CHECK(e.offenders() == std::vector<std::size_t>{answers.back().index});
    }
    auto duplicated = answers;
    duplicated.push_back(answers.front());
    CHECK_THROWS_AS(m.submit_labels(id, duplicated, ""), RejectedSubmission);
    auto bad_label = answers;
    bad_label[0].label = 2;
    CHECK_THROWS_AS(m.submit_labels(id, bad_label, ""), UsageError);
    CHECK(m.get_metrics(id)["budget"]["spent"] == 0);
    CHECK(m.get_queue(id) == queue);
  }

  SUBCASE("labels drive the run to completion") {
    const json reply = m.submit_labels(id, answer_queue(queue, ds), "labels-1");
    CHECK(reply["accepted"] == 4);
    CHECK(reply["round"] == 1);
    CHECK(m.submit_labels(id, answer_queue(queue, ds), "labels-1") == reply);
    for (int round = 2; round <= 3; ++round) {
      REQUIRE(m.wait_until_settled(id, 60s) == RunStatus::kAwaitingLabels);
      const json q = m.get_queue(id);
      CHECK(q["round"] == round);
      m.submit_labels(id, answer_queue(q, ds), "");
    }
    REQUIRE(m.wait_until_settled(id, 60s) == RunStatus::kDone);
    OracleExpert oracle(ds);
    const RunResult direct = run_active(ds, small_config(), oracle);
    CHECK(run_result_from_json(m.get_result(id)).curve == direct.curve);
  }

  SUBCASE("abort") {
    CHECK(m.abort_run(id)["status"] == "ABORTED");
    CHECK(m.abort_run(id)["status"] == "ABORTED");
    CHECK_THROWS_AS(m.submit_labels(id, answer_queue(queue, ds), ""), ConflictError);
    CHECK_THROWS_AS(m.get_queue(id), ConflictError);
  }
  CHECK_THROWS_AS(m.get_run("run-missing"), NotFoundError);
}

TEST_CASE("restart resumes from the last checkpoint") {
  const auto dir = testing::scratch_dir("rm_restart");
  const Dataset ds = fixture();
  std::string id;
  json first_queue;
  {
    RunManager m({dir, 1});
    m.register_dataset("mix", ds);
    id = m.create_run({"mix", small_config(), ExpertMode::kHuman, "k"});
    REQUIRE(m.wait_until_settled(id, 60s) == RunStatus::kAwaitingLabels);
    first_queue = m.get_queue(id);
    m.submit_labels(id, answer_queue(first_queue, ds), "round-1");
    REQUIRE(m.wait_until_settled(id, 60s) == RunStatus::kAwaitingLabels);
  }
  RunManager m({dir, 1});
  CHECK(m.list_datasets()["datasets"].size() == 1);
  CHECK(m.create_run({"mix", small_config(), ExpertMode::kHuman, "k"}) == id);
  REQUIRE(m.status(id) == RunStatus::kAwaitingLabels);
  const json q = m.get_queue(id);
  CHECK(q["round"] == 2);
  // A replayed key from before the restart is still recognized.
  CHECK(m.submit_labels(id, answer_queue(first_queue, ds), "round-1")["round"] == 1);
  m.submit_labels(id, answer_queue(q, ds), "");
  REQUIRE(m.wait_until_settled(id, 60s) == RunStatus::kAwaitingLabels);
  m.submit_labels(id, answer_queue(m.get_queue(id), ds), "");
  REQUIRE(m.wait_until_settled(id, 60s) == RunStatus::kDone);
  OracleExpert oracle(ds);
  CHECK(run_result_from_json(m.get_result(id)).curve == run_active(ds, small_config(), oracle).curve);
}

TEST_CASE("in-flight oracle runs resume after a restart") {
  const auto dir = testing::scratch_dir("rm_inflight");
  const Dataset ds = fixture();
  RunConfig c = small_config();
  c.steps_pre = 400;
  std::string id;
  {
    RunManager m({dir, 1});
    m.register_dataset("mix", ds);
    id = m.create_run({"mix", c, ExpertMode::kOracle, ""});
  }
  RunManager m({dir, 1});
  REQUIRE(m.wait_until_settled(id, 120s) == RunStatus::kDone);
  OracleExpert oracle(ds);
  CHECK(run_result_from_json(m.get_result(id)).curve == run_active(ds, c, oracle).curve);
}

TEST_CASE("foreign run records are refused") {
  const auto dir = testing::scratch_dir("rm_foreign");
  {
    RunManager m({dir, 1});
  }
  write_file_atomic(dir / "runs" / "run-x.json", json{{"version", 99}}.dump());
  CHECK_THROWS_AS(RunManager({dir, 1}), MigrationError);
}
