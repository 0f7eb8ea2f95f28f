#include <gtest/gtest.h>

#include <random>
#include <set>
#include <thread>

#include "stt/engine.hpp"
#include "stt/error.hpp"
#include "stt/replay.hpp"
#include "stt/transcript.hpp"
#include "support.hpp"

using namespace stt;
using stt::testing::TempDir;
using stt::testing::read_file;
using stt::testing::write_file;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return ErrorCode::InvalidArgument;
}

struct ReplayRun {
  ReplayResult result;
  std::string transcript;
  nlohmann::json state;
};

ReplayRun cap_like(const TempDir& dir, PipelineMode mode = PipelineMode::Guided) {
  const auto fixture = load_fixture(stt::testing::fixture_path("cap_like.json"));
  ReplayOptions opts;
  opts.mode = mode;
  opts.session_dir = dir.path();
  opts.clock = fixed_clock("2024-05-01T12:00:00.000Z");
  ReplayRun run{run_replay(fixture, opts), "", {}};
  SessionDirectory sd(dir.path());
  run.transcript = read_file(sd.transcript_path());
  run.state = nlohmann::json::parse(read_file(sd.state_path()));
  return run;
}

}  // namespace

TEST(Append, FirstEventIsSequenceOne) {
  TranscriptLog log(fixed_clock("t"));
  const auto e = log.append(EventKind::PromptSent, {{"query", 1}});
  EXPECT_EQ(e.seq, 1u);
  EXPECT_EQ(e.at, "t");
  EXPECT_EQ(log.size(), 1u);
}

TEST(Append, GapIsRefused) {
  TranscriptLog log(fixed_clock("t"));
  for (int i = 0; i < 3; ++i) log.append(EventKind::PromptSent, nlohmann::json::object());
  EXPECT_EQ(code_of([&] {
              log.append_event({5, EventKind::PromptSent, nlohmann::json::object(), "t"});
            }),
            ErrorCode::SequenceGap);
  EXPECT_EQ(code_of([&] {
              log.append_event({3, EventKind::PromptSent, nlohmann::json::object(), "t"});
            }),
            ErrorCode::SequenceGap);
  log.append_event({4, EventKind::PromptSent, nlohmann::json::object(), "t"});
  EXPECT_EQ(log.last_seq(), 4u);
}

TEST(Checkpoints, MustIncrease) {
  TranscriptLog log(fixed_clock("t"));
  log.mark_checkpoint("user flag", 1);
  log.mark_checkpoint("root flag", 2);
  EXPECT_EQ(log.checkpoints().size(), 2u);
  EXPECT_EQ(log.checkpoints()[1], (Checkpoint{"root flag", 2, 2}));

  TranscriptLog other(fixed_clock("t"));
  other.mark_checkpoint("b", 2);
  EXPECT_EQ(code_of([&] { other.mark_checkpoint("a", 1); }), ErrorCode::OutOfOrderCheckpoint);
  EXPECT_EQ(code_of([&] { other.mark_checkpoint("a", 2); }), ErrorCode::OutOfOrderCheckpoint);
  EXPECT_EQ(other.size(), 1u);
}

TEST(EventFormat, LineHasFixedKeyOrder) {
  const TranscriptEvent e{7, EventKind::StatusChanged, {{"to", "completed"}, {"task", "T1"}}, "x"};
  EXPECT_EQ(event_to_line(e),
            R"({"seq":7,"kind":"StatusChanged","payload":{"task":"T1","to":"completed"},"at":"x"})");
  EXPECT_EQ(event_from_json(nlohmann::json::parse(event_to_line(e))), e);
}

TEST(EventFormat, RejectsExtraOrMistypedFields) {
  for (const char* doc :
       {R"({"seq":1,"kind":"PromptSent","payload":{},"at":"x","extra":1})",
        R"({"seq":-1,"kind":"PromptSent","payload":{},"at":"x"})",
        R"({"seq":1,"kind":"Nope","payload":{},"at":"x"})",
        R"({"seq":1,"kind":"PromptSent","payload":[],"at":"x"})"}) {
    EXPECT_EQ(code_of([&] { event_from_json(nlohmann::json::parse(doc)); }),
              ErrorCode::ParseError)
        << doc;
  }
}

TEST(Recovery, GarbageAndGapsEndThePrefix) {
  const std::string l1 = R"({"seq":1,"kind":"PromptSent","payload":{},"at":"x"})";
  const std::string l3 = R"({"seq":3,"kind":"PromptSent","payload":{},"at":"x"})";
  auto r = recover_transcript(l1 + "\n" + l3 + "\n");
  EXPECT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.valid_bytes, l1.size() + 1);
  EXPECT_TRUE(r.torn);

  r = recover_transcript(l1 + "\n{\"seq\":2");
  EXPECT_EQ(r.events.size(), 1u);
  EXPECT_TRUE(r.torn);

  // A complete object without its newline is still a torn write.
  r = recover_transcript(l1);
  EXPECT_TRUE(r.events.empty());
  EXPECT_EQ(r.valid_bytes, 0u);
}

TEST(Recovery, EveryByteOffsetOfARealTranscript) {
  TempDir dir("stt-recovery");
  const auto run = cap_like(dir);
  const auto& body = run.transcript;
  const auto full = recover_transcript(body);
  ASSERT_FALSE(full.torn);
  ASSERT_EQ(full.events.size(), run.result.events.size());
  const auto graph = run.result.driver->graph();

  // Offsets around every line boundary, the whole first line and a random spread.
  std::set<std::size_t> offsets{body.size()};
  for (std::size_t i = 0; i < 300 && i < body.size(); ++i) offsets.insert(i);
  for (auto p = body.find('\n'); p != std::string::npos; p = body.find('\n', p + 1)) {
    offsets.insert({p - 1, p, p + 1});
  }
  std::mt19937 rng(5);
  for (int i = 0; i < 400; ++i) offsets.insert(rng() % body.size());

  for (const auto off : offsets) {
    if (off > body.size()) continue;
    const auto cut = std::string_view(body).substr(0, off);
    const auto complete_lines =
        static_cast<std::size_t>(std::count(cut.begin(), cut.end(), '\n'));
    const auto r = recover_transcript(cut);
    ASSERT_EQ(r.events.size(), complete_lines) << off;
    ASSERT_EQ(r.valid_bytes, cut.rfind('\n') == std::string_view::npos ? 0 : cut.rfind('\n') + 1);
    for (std::size_t i = 0; i < r.events.size(); i += 17) ASSERT_EQ(r.events[i], full.events[i]);
    if (off % 7 == 0) {
      const auto want = fold_transcript(
          std::span(full.events).first(complete_lines), graph);
      EXPECT_TRUE(fold_transcript(r.events, graph) == want) << off;
    }
  }
}

TEST(Recovery, ReopenTruncatesTheTornTailAndContinues) {
  TempDir dir("stt-reopen");
  const auto path = dir / "t.jsonl";
  {
    auto log = TranscriptLog::open(path, fixed_clock("t"));
    for (int i = 0; i < 5; ++i) log->append(EventKind::PromptSent, {{"query", i + 1}});
  }
  auto body = read_file(path);
  const auto keep = body.size() - 10;
  write_file(path, body.substr(0, keep));

  auto log = TranscriptLog::open(path, fixed_clock("t"));
  EXPECT_TRUE(log->recovered_torn_tail());
  EXPECT_EQ(log->size(), 4u);
  const auto e = log->append(EventKind::SessionTerminated, {{"outcome", "Aborted"}});
  EXPECT_EQ(e.seq, 5u);
  log.reset();

  const auto again = read_transcript_file(path);
  EXPECT_FALSE(again.torn);
  ASSERT_EQ(again.events.size(), 5u);
  EXPECT_EQ(again.events.back().kind, EventKind::SessionTerminated);
}

TEST(Fold, ReplayEquivalenceWithTheStoredSnapshot) {
  TempDir dir("stt-fold");
  const auto run = cap_like(dir);
  const auto graph = run.result.driver->graph();
  const auto stored = state_from_json(run.state, graph);
  const auto folded = fold_transcript(run.result.events, graph);
  EXPECT_TRUE(folded == stored);
  EXPECT_TRUE(folded == run.result.driver->session().stt());
}

TEST(Fold, RolledBackStepsAreIgnored) {
  const auto graph = stt::testing::graph_of({{"A", {"B", "C"}}, {"B", {}}, {"C", {}}});
  std::vector<TranscriptEvent> events;
  auto add = [&](EventKind k, nlohmann::json p) {
    events.push_back({events.size() + 1, k, std::move(p), "t"});
  };
  add(EventKind::StatusChanged, {{"task", "A"}, {"from", "to-do"}, {"to", "in-progress"}});
  add(EventKind::StatusChanged, {{"task", "A"}, {"from", "in-progress"}, {"to", "completed"}});
  add(EventKind::PromptSent, nlohmann::json::object());
  add(EventKind::SelectionCommitted, {{"task", "B"}});  // seq 4, undone below
  add(EventKind::PromptSent, nlohmann::json::object());
  add(EventKind::ResponseReceived, {{"outcome", "ProviderError"}, {"rolled_back_from", 4}});
  add(EventKind::SelectionCommitted, {{"task", "C"}});

  const auto s = fold_transcript(events, graph);
  EXPECT_EQ(s.status(TaskId("B")), TaskStatus::ToDo);
  EXPECT_EQ(s.status(TaskId("C")), TaskStatus::InProgress);
}

TEST(Fold, FindingsAndInvalidCounts) {
  const auto graph = stt::testing::graph_of({{"A", {}}});
  std::vector<TranscriptEvent> events{
      {1, EventKind::StatusChanged, {{"task", "A"}, {"to", "in-progress"}}, "t1"},
      {2, EventKind::ResponseReceived, {{"task", "A"}, {"findings", {"x", "y"}}}, "t2"},
      {3, EventKind::InvalidCommandRecorded, {{"task", "A"}, {"count", 1}}, "t3"},
      {4, EventKind::InvalidCommandRecorded, {{"task", nullptr}, {"count", 1}}, "t4"},
  };
  const auto s = fold_transcript(events, graph);
  const auto& st = s.task_state(TaskId("A"));
  EXPECT_EQ(st.findings, (std::vector<Finding>{{"x", 2, "t2"}, {"y", 2, "t2"}}));
  EXPECT_EQ(st.invalid_command_count, 1);
}

TEST(Readers, WaitForMoreSeesAppendsFromAnotherThread) {
  TranscriptLog log(fixed_clock("t"));
  std::thread writer([&] {
    for (int i = 0; i < 50; ++i) log.append(EventKind::PromptSent, {{"i", i}});
  });
  std::uint64_t seen = 0;
  while (seen < 50) {
    if (!log.wait_for_more(seen, std::chrono::seconds(5))) break;
    const auto batch = log.events_from(seen + 1);
    for (const auto& e : batch) EXPECT_EQ(e.seq, ++seen);
  }
  writer.join();
  EXPECT_EQ(seen, 50u);
  EXPECT_FALSE(log.wait_for_more(50, std::chrono::milliseconds(10)));
}

TEST(Readers, ObserversMayAppend) {
  TranscriptLog log(fixed_clock("t"));
  int seen = 0;
  log.add_observer([&](const TranscriptEvent& e) {
    ++seen;
    if (e.kind == EventKind::ResponseReceived) log.mark_checkpoint("cp", e.seq);
  });
  log.append(EventKind::PromptSent, nlohmann::json::object());
  log.append(EventKind::ResponseReceived, nlohmann::json::object());
  EXPECT_EQ(seen, 3);
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log.events()[2].kind, EventKind::CheckpointMarked);
  EXPECT_EQ(log.checkpoints()[0].marked_at_event, 3u);
}

TEST(Readers, EventsFromBounds) {
  TranscriptLog log(fixed_clock("t"));
  for (int i = 0; i < 3; ++i) log.append(EventKind::PromptSent, nlohmann::json::object());
  EXPECT_EQ(log.events_from(0).size(), 3u);
  EXPECT_EQ(log.events_from(3).size(), 1u);
  EXPECT_TRUE(log.events_from(4).empty());
  EXPECT_FALSE(log.terminated());
  log.append(EventKind::SessionTerminated, nlohmann::json::object());
  EXPECT_TRUE(log.terminated());
}
