#include <benchmark/benchmark.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "stt/replay.hpp"
#include "stt/response_parsing.hpp"
#include "stt/task_graph.hpp"
#include "stt/task_state.hpp"
#include "stt/transcript.hpp"

using namespace stt;

namespace {

const std::filesystem::path kSource = STT_SOURCE_DIR;

GraphPtr sample_graph() {
  static const GraphPtr graph = load_graph_file(kSource / "graphs" / "attack_graph.json");
  return graph;
}

std::string cap_like_transcript() {
  static const std::string body = [] {
    const auto dir = std::filesystem::temp_directory_path() / "stt-bench-transcript";
    std::filesystem::remove_all(dir);
    ReplayOptions o;
    o.session_dir = dir;
    o.clock = fixed_clock("2024-05-01T12:00:00.000Z");
    run_replay(load_fixture(kSource / "fixtures" / "cap_like.json"), o);
    std::ifstream in(dir / "transcript.jsonl", std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    std::filesystem::remove_all(dir);
    return ss.str();
  }();
  return body;
}

}  // namespace

static void BM_CandidatesAfterInitial(benchmark::State& state) {
  SttState s(sample_graph());
  s.set_status(s.graph().initial_task(), TaskStatus::InProgress);
  s.set_status(s.graph().initial_task(), TaskStatus::Completed);
  for (auto _ : state) benchmark::DoNotOptimize(s.candidate_next_tasks());
}
BENCHMARK(BM_CandidatesAfterInitial);

static void BM_SnapshotRender(benchmark::State& state) {
  SttState s(sample_graph());
  s.set_status(s.graph().initial_task(), TaskStatus::InProgress);
  s.add_finding(s.graph().initial_task(), Finding{"HTTP port 80 open", 1, "t"});
  s.set_status(s.graph().initial_task(), TaskStatus::Completed);
  s.commit_selection(s.candidate_next_tasks().front().id);
  for (auto _ : state) benchmark::DoNotOptimize(s.snapshot());
}
BENCHMARK(BM_SnapshotRender);

static void BM_ParseSummary(benchmark::State& state) {
  std::string text = "## Key Findings\n";
  for (int i = 0; i < state.range(0); ++i) {
    text += "- port " + std::to_string(1000 + i) + "/tcp open service-" + std::to_string(i) + "\n";
  }
  text += "\n**Next Step:** The task is complete; proceed to the next task.\n";
  for (auto _ : state) benchmark::DoNotOptimize(parse_summary(text));
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations() * text.size()));
}
BENCHMARK(BM_ParseSummary)->Arg(4)->Arg(64)->Arg(512);

static void BM_RecoverTranscript(benchmark::State& state) {
  const auto body = cap_like_transcript();
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> cut(0, body.size());
  for (auto _ : state) {
    const auto view = std::string_view(body).substr(0, cut(rng));
    benchmark::DoNotOptimize(recover_transcript(view));
  }
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations() * body.size() / 2));
}
BENCHMARK(BM_RecoverTranscript);

static void BM_FoldTranscript(benchmark::State& state) {
  const auto events = recover_transcript(cap_like_transcript()).events;
  const auto graph = sample_graph();
  for (auto _ : state) benchmark::DoNotOptimize(fold_transcript(events, graph));
  state.counters["events"] = static_cast<double>(events.size());
}
BENCHMARK(BM_FoldTranscript);

static void BM_ReplayCapLike(benchmark::State& state) {
  const auto fixture = load_fixture(kSource / "fixtures" / "cap_like.json");
  ReplayOptions o;
  o.clock = fixed_clock("t");
  for (auto _ : state) benchmark::DoNotOptimize(run_replay(fixture, o));
}
BENCHMARK(BM_ReplayCapLike)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
