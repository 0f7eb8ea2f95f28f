#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stt/task_state.hpp"

namespace stt {

enum class Recommendation { Proceed, Continue };

std::string_view to_string(Recommendation r) noexcept;

struct SummaryOutcome {
  std::vector<std::string> key_findings;
  Recommendation recommendation = Recommendation::Continue;
  std::string raw_response;
};

/// Extracts bullet or numbered lines under a "Key Findings" heading and classifies the
/// "Next Step" section by keyword. Never throws; anything unrecognized yields no findings
/// and Continue.
SummaryOutcome parse_summary(std::string_view response);

/// First candidate (in candidate order) whose id, or unambiguous name, occurs in the
/// response. Throws Error(SelectionUnrecognized) when none does.
TaskId parse_selection(std::string_view response, std::span<const Candidate> candidates);

/// Trim, collapse internal whitespace runs to one space, lowercase (ASCII).
std::string normalize_response(std::string_view text);

enum class RepetitionVerdict { Continue, Abort };

/// Last K normalized responses. Abort exactly when K entries exist and are all identical.
class RepetitionWindow {
 public:
  explicit RepetitionWindow(std::size_t size = 3);

  RepetitionVerdict push(std::string_view response);

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::deque<std::string>& entries() const noexcept { return entries_; }

 private:
  std::size_t capacity_;
  std::deque<std::string> entries_;
};

}  // namespace stt
