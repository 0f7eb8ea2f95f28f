#include <gtest/gtest.h>

#include <algorithm>

#include "stt/error.hpp"
#include "stt/replay.hpp"
#include "support.hpp"

using namespace stt;
using stt::testing::fixture_path;
using stt::testing::read_file;
using stt::testing::TempDir;

namespace {

ReplayResult replay(const std::string& name, PipelineMode mode = PipelineMode::Guided,
                    ReplayOptions options = {}) {
  options.mode = mode;
  options.clock = fixed_clock("2024-05-01T12:00:00.000Z");
  return run_replay(load_fixture(fixture_path(name)), options);
}

int count(const ReplayResult& r, EventKind kind) {
  int n = 0;
  for (const auto& e : r.events) n += e.kind == kind;
  return n;
}

// Seq of the StatusChanged event moving `task` to `to`, or 0.
std::uint64_t status_change_seq(const ReplayResult& r, const std::string& task,
                                const std::string& to) {
  for (const auto& e : r.events) {
    if (e.kind == EventKind::StatusChanged && e.payload["task"] == task && e.payload["to"] == to) {
      return e.seq;
    }
  }
  return 0;
}

int invalids_before(const ReplayResult& r, const std::string& task, std::uint64_t seq) {
  int n = 0;
  for (const auto& e : r.events) {
    if (e.seq < seq && e.kind == EventKind::InvalidCommandRecorded && e.payload["task"] == task) {
      ++n;
    }
  }
  return n;
}

void expect_fold_matches(const ReplayResult& r) {
  EXPECT_EQ(fold_transcript(r.events, r.driver->graph()), r.driver->session().stt());
}

}  // namespace

TEST(ReplayTest, CapLikeGuided) {
  const auto r = replay("cap_like.json");
  EXPECT_EQ(r.final_phase, Phase::terminated(Outcome::Succeeded));
  EXPECT_EQ(count(r, EventKind::PromptSent), 31);
  EXPECT_EQ(r.metrics.queries_total, 31);
  EXPECT_EQ(r.metrics.subtasks_completed, 6);
  EXPECT_EQ(r.metrics.subtasks_total, 6);
  EXPECT_EQ(r.metrics.queries_to_deepest_subtask, 31);
  EXPECT_EQ(format_average(r.metrics.avg_queries_per_completed_subtask()), "5.17");
  EXPECT_TRUE(r.failure.empty());
  expect_fold_matches(r);
}

TEST(ReplayTest, CapLikeBaseline) {
  const auto r = replay("cap_like.json", PipelineMode::Baseline);
  EXPECT_EQ(r.final_phase, Phase::terminated(Outcome::Aborted));
  EXPECT_EQ(r.metrics.queries_total, 17);
  EXPECT_EQ(r.metrics.subtasks_completed, 3);
  EXPECT_EQ(r.metrics.queries_to_deepest_subtask, 12);
  EXPECT_EQ(format_average(r.metrics.avg_queries_per_completed_subtask()), "4.00");
  EXPECT_GE(r.driver->session().ptt().revision(), 3);
  EXPECT_EQ(count(r, EventKind::SelectionCommitted), 0);
  // The tree is never touched beyond the initial focus.
  for (const auto& st : r.driver->session().stt().task_states()) {
    EXPECT_TRUE(st.status == TaskStatus::ToDo || st.status == TaskStatus::InProgress)
        << st.task.str();
  }
}

TEST(ReplayTest, FiveInvalidCommandsFailTheTaskOnTheFifth) {
  const auto r = replay("five_invalid.json");
  EXPECT_EQ(r.final_phase, Phase::terminated(Outcome::Aborted));
  EXPECT_EQ(r.metrics.queries_total, 10);
  EXPECT_EQ(r.metrics.subtasks_completed, 1);
  EXPECT_EQ(r.metrics.subtasks_total, 2);
  const auto failed_at = status_change_seq(r, "T1594", "failed");
  ASSERT_NE(failed_at, 0u);
  EXPECT_EQ(invalids_before(r, "T1594", failed_at), 5);
  EXPECT_EQ(r.driver->session().stt().in_progress(), TaskId("T1046"));
  expect_fold_matches(r);
}

TEST(ReplayTest, LowerInvalidThresholdFailsEarlier) {
  ReplayOptions o;
  o.max_invalid_commands = 3;
  const auto r = replay("five_invalid.json", PipelineMode::Guided, o);
  const auto failed_at = status_change_seq(r, "T1594", "failed");
  ASSERT_NE(failed_at, 0u);
  EXPECT_EQ(invalids_before(r, "T1594", failed_at), 3);
}

TEST(ReplayTest, RepetitionStopsTheSession) {
  const auto r = replay("repetition.json");
  EXPECT_EQ(r.final_phase, Phase::terminated(Outcome::Failed));
  EXPECT_EQ(r.metrics.queries_total, 7);
  EXPECT_EQ(r.metrics.queries_to_deepest_subtask, 2);
  EXPECT_EQ(r.metrics.subtasks_completed, 1);
  EXPECT_EQ(r.metrics.subtasks_total, 4);
  ASSERT_FALSE(r.events.empty());
  EXPECT_EQ(r.events.back().kind, EventKind::SessionTerminated);
}

TEST(ReplayTest, TruncationCountsOnlyUpToTheDeepestCheckpoint) {
  const auto r = replay("truncation.json");
  EXPECT_EQ(r.final_phase, Phase::terminated(Outcome::Aborted));
  EXPECT_EQ(r.metrics.queries_total, 11);
  EXPECT_EQ(r.metrics.queries_to_deepest_subtask, 5);
  EXPECT_EQ(r.metrics.subtasks_completed, 2);
  EXPECT_EQ(r.metrics.subtasks_total, 4);
}

TEST(ReplayTest, SelectionIsForcedAfterTwoRePrompts) {
  const auto r = replay("selection_constraint.json");
  EXPECT_EQ(r.final_phase, Phase::terminated(Outcome::Succeeded));
  EXPECT_EQ(r.metrics.queries_total, 6);
  int commits = 0;
  for (const auto& e : r.events) {
    if (e.kind != EventKind::SelectionCommitted) continue;
    ++commits;
    EXPECT_EQ(e.payload["forced"], true);
    const auto& cands = e.payload["candidates"];
    EXPECT_NE(std::find(cands.begin(), cands.end(), e.payload["task"]), cands.end());
    EXPECT_EQ(e.payload["task"], cands.front());
  }
  EXPECT_EQ(commits, 1);
}

TEST(ReplayTest, DeterministicWithAFixedClock) {
  TempDir a("replay-a"), b("replay-b");
  ReplayOptions oa, ob;
  oa.session_dir = a.path();
  ob.session_dir = b.path();
  replay("cap_like.json", PipelineMode::Guided, oa);
  replay("cap_like.json", PipelineMode::Guided, ob);
  const auto ta = read_file(a / "transcript.jsonl");
  EXPECT_FALSE(ta.empty());
  EXPECT_EQ(ta, read_file(b / "transcript.jsonl"));
  EXPECT_EQ(read_file(a / "state.json"), read_file(b / "state.json"));
  EXPECT_EQ(read_file(a / "metrics.json"), read_file(b / "metrics.json"));
  EXPECT_TRUE(std::filesystem::exists(a / "session.json"));
}

TEST(ReplayTest, TwentyEntryScriptMakesTwentyQueries) {
  // Chain A -> B -> ... -> G: one initial prompt, three prompts per intermediate task and a
  // final summarization on the leaf.
  TempDir tmp;
  nlohmann::json graph{{"schema_version", 1}, {"initial_task", "A"}, {"tasks", nlohmann::json::array()}};
  const std::string ids = "ABCDEFG";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::string id(1, ids[i]);
    nlohmann::json next = nlohmann::json::array();
    if (i + 1 < ids.size()) next.push_back(std::string(1, ids[i + 1]));
    graph["tasks"].push_back({{"id", id},
                              {"name", "Step " + id},
                              {"tactic", "Chain"},
                              {"description", "Do step " + id},
                              {"next", next}});
  }
  stt::testing::write_file(tmp / "chain.json", graph.dump(2));

  nlohmann::json script = nlohmann::json::array();
  script.push_back({{"match", {{"template", "Initial"}}}, {"response", "run step A"}});
  nlohmann::json outputs = nlohmann::json::array();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    script.push_back({{"match", {{"template", "OutputSummarization"}}},
                      {"response", "Key Findings:\n- ok\nNext Step:\nProceed to the next task."}});
    outputs.push_back({{"classification", "output"}, {"text", "output " + std::to_string(i)}});
    if (i + 1 == ids.size()) break;
    const std::string next(1, ids[i + 1]);
    script.push_back({{"match", {{"template", "TaskSelection"}}}, {"response", next}});
    script.push_back(
        {{"match", {{"template", "CommandGeneration"}}}, {"response", "run step " + next}});
  }
  ASSERT_EQ(script.size(), 20u);
  const nlohmann::json doc{
      {"name", "chain"},
      {"graph", "chain.json"},
      {"target", "10.0.0.9"},
      {"subtasks_total", 1},
      {"guided",
       {{"provider_script", script},
        {"tool_outputs", outputs},
        {"checkpoints",
         {{{"after", {{"kind", "ResponseReceived"}, {"count", 20}}}, {"label", "end"}, {"index", 1}}}}}}};
  ReplayOptions o;
  o.clock = fixed_clock("t");
  const auto r = run_replay(parse_fixture(doc, tmp.path()), o);
  EXPECT_EQ(r.final_phase, Phase::terminated(Outcome::Succeeded));
  EXPECT_EQ(r.metrics.queries_total, 20);
  EXPECT_EQ(r.driver->gateway().records().size(), 20u);
  EXPECT_EQ(r.driver->session().stt().status(TaskId("G")), TaskStatus::Completed);
}

TEST(LoadFixture, RejectsBrokenFixtures) {
  const auto base = fixture_path("cap_like.json").parent_path();
  auto good = nlohmann::json::parse(read_file(fixture_path("selection_constraint.json")));
  std::vector<nlohmann::json> bad;
  {
    auto d = good;
    d.erase("target");
    bad.push_back(d);
  }
  {
    auto d = good;
    d["graph"] = "missing.json";
    bad.push_back(d);
  }
  {
    auto d = good;
    d["guided"]["tool_outputs"][0]["classification"] = "maybe";
    bad.push_back(d);
  }
  {
    auto d = good;
    d["guided"]["checkpoints"][0]["after"]["kind"] = "NotAKind";
    bad.push_back(d);
  }
  {
    auto d = good;
    d.erase("guided");
    bad.push_back(d);
  }
  {
    auto d = good;
    d["guided"]["provider_script"] = 5;
    bad.push_back(d);
  }
  for (const auto& d : bad) {
    try {
      const auto f = parse_fixture(d, base);
      // A fixture without any mode section may only fail once a mode is requested.
      f.script(PipelineMode::Guided);
      ADD_FAILURE() << d.dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::FixtureInvalid) << d.dump() << " " << e.what();
    }
  }
}

TEST(LoadFixture, MissingFileIsFixtureInvalid) {
  try {
    load_fixture(fixture_path("does_not_exist.json"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FixtureInvalid);
  }
}
