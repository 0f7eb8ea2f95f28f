#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>

#include "support.hpp"

using namespace stt::testing;

namespace {

struct Child {
  int code = -1;
  std::string output;
  std::string attempts;
};

// Runs the real binary with every IPv4/IPv6 connect() refused and logged.
Child run_denied(const TempDir& tmp, const std::string& args, const std::string& input = {},
                 const std::string& env = {}) {
  write_file(tmp / "stdin.txt", input);
  const auto log = tmp / "connects.log";
  const auto out = tmp / "out.txt";
  std::filesystem::remove(log);
  const std::string cmd = "LD_PRELOAD='" STT_NETDENY_SHIM "' STT_NETDENY_LOG='" + log.string() +
                          "' " + env + " '" STT_AGENT_BINARY "' " + args + " < '" +
                          (tmp / "stdin.txt").string() + "' > '" + out.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Child c;
  c.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  c.output = read_file(out);
  c.attempts = std::filesystem::exists(log) ? read_file(log) : std::string();
  return c;
}

}  // namespace

TEST(NoNetwork, FixtureReplayMakesNoConnections) {
  TempDir tmp;
  const auto c = run_denied(tmp, "--fixture '" + fixture_path("cap_like.json").string() +
                                     "' --session-dir '" + (tmp / "s").string() + "'");
  EXPECT_EQ(c.code, 0) << c.output;
  EXPECT_NE(c.output.find("Terminated(Succeeded)"), std::string::npos) << c.output;
  EXPECT_TRUE(c.attempts.empty()) << c.attempts;
}

TEST(NoNetwork, ValidateAndReportMakeNoConnections) {
  TempDir tmp;
  auto c = run_denied(tmp, "validate '" + graph_path().string() + "'");
  EXPECT_EQ(c.code, 0) << c.output;
  EXPECT_TRUE(c.attempts.empty());
  run_denied(tmp, "--fixture '" + fixture_path("truncation.json").string() + "' --session-dir '" +
                      (tmp / "s").string() + "'");
  c = run_denied(tmp, "report '" + (tmp / "s").string() + "'");
  EXPECT_EQ(c.code, 0) << c.output;
  EXPECT_TRUE(c.attempts.empty());
}

TEST(NoNetwork, ScriptedInteractiveSessionMakesNoConnections) {
  TempDir tmp;
  write_file(tmp / "script.json", R"(["nmap 10.0.0.1"])");
  const auto c = run_denied(tmp,
                            "--graph '" + graph_path().string() + "' --target 10.0.0.1 --script '" +
                                (tmp / "script.json").string() + "'",
                            ":abort\n");
  EXPECT_EQ(c.code, 0) << c.output;
  EXPECT_TRUE(c.attempts.empty()) << c.attempts;
}

TEST(NoNetwork, ShimCatchesALiveProvider) {
  // Positive control: an HTTP provider does try to connect, and the shim sees it.
  TempDir tmp;
  const auto c = run_denied(tmp,
                            "--graph '" + graph_path().string() +
                                "' --target 10.0.0.1 --provider-endpoint http://127.0.0.1:9/v1 "
                                "--model m --auth-env STT_SHIM_KEY",
                            "abort\n", "STT_SHIM_KEY=k");
  EXPECT_NE(c.attempts.find("connect"), std::string::npos) << c.output;
  EXPECT_NE(c.output.find("provider error"), std::string::npos) << c.output;
}
