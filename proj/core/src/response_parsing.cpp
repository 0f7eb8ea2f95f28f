#include "stt/response_parsing.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <optional>

#include "stt/error.hpp"

namespace stt {

std::string_view to_string(Recommendation r) noexcept {
  return r == Recommendation::Proceed ? "Proceed" : "Continue";
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl + 1;
  }
  return lines;
}

// Drops markdown decoration around a heading or bullet body.
std::string strip_decoration(std::string_view s) {
  s = trim(s);
  while (!s.empty() && (s.front() == '#' || s.front() == '*' || s.front() == '_')) {
    s.remove_prefix(1);
  }
  std::string out(trim(s));
  for (std::string_view tok : {"**", "__"}) {
    for (auto p = out.find(tok); p != std::string::npos; p = out.find(tok)) out.erase(p, tok.size());
  }
  return std::string(trim(out));
}

// Returns the bullet body when `line` is a "- x", "* x", "• x", "1. x" or "1) x" item.
std::optional<std::string_view> bullet_body(std::string_view line) {
  auto s = trim(line);
  if (s.empty()) return std::nullopt;
  if (s.front() == '-' || s.front() == '*' || s.front() == '+') {
    if (s.size() > 1 && s[1] == '*') {
      // "**Bold**" is emphasis, not a bullet.
      return std::nullopt;
    }
    return trim(s.substr(1));
  }
  if (s.starts_with("\xE2\x80\xA2")) return trim(s.substr(3));
  std::size_t digits = 0;
  while (digits < s.size() && std::isdigit(static_cast<unsigned char>(s[digits]))) ++digits;
  if (digits > 0 && digits < s.size() && (s[digits] == '.' || s[digits] == ')')) {
    return trim(s.substr(digits + 1));
  }
  return std::nullopt;
}

enum class Section { None, Findings, NextStep, Other };

// Recognizes "Key Findings" / "Next Step" headings, bulleted or not, with optional trailing
// text after a colon. `rest` receives that trailing text.
std::optional<Section> heading_of(std::string_view line, std::string& rest) {
  std::string body;
  if (auto b = bullet_body(line)) {
    body = strip_decoration(*b);
  } else {
    body = strip_decoration(line);
  }
  const auto lo = lower(body);
  auto classify = [&](std::string_view key, Section sec) -> std::optional<Section> {
    if (!lo.starts_with(key)) return std::nullopt;
    auto tail = std::string_view(body).substr(key.size());
    while (!tail.empty() && (tail.front() == 's' || tail.front() == 'S')) tail.remove_prefix(1);
    tail = trim(tail);
    if (!tail.empty() && tail.front() != ':') {
      return std::nullopt;
    }
    if (!tail.empty()) tail.remove_prefix(1);
    rest = strip_decoration(tail);
    return sec;
  };
  if (auto s = classify("key finding", Section::Findings)) return s;
  if (auto s = classify("next step", Section::NextStep)) return s;
  if (auto s = classify("recommendation", Section::NextStep)) return s;
  // Any other "Heading:" line on its own closes the current section.
  if (!body.empty() && body.back() == ':' && body.size() < 60 && !bullet_body(line)) {
    rest.clear();
    return Section::Other;
  }
  return std::nullopt;
}

constexpr std::array<std::string_view, 12> kProceedPhrases{
    "proceed to the next",      "move on to the next",       "move to the next",
    "proceed with the next",    "mark the task as completed", "mark the current task as completed",
    "task is complete",         "task is completed",          "task can be considered complete",
    "task as complete",         "ready to proceed",           "should proceed"};

constexpr std::array<std::string_view, 10> kContinuePhrases{
    "continue with the current", "continue the current",   "continue working on",
    "stay on the current",       "not yet complete",       "not complete",
    "remain in-progress",        "remain in progress",     "further actions are required",
    "should continue"};

std::size_t first_hit(std::string_view hay, std::span<const std::string_view> phrases) {
  std::size_t best = std::string_view::npos;
  for (auto p : phrases) best = std::min(best, hay.find(p));
  return best;
}

}  // namespace

SummaryOutcome parse_summary(std::string_view response) {
  SummaryOutcome out;
  out.raw_response = std::string(response);

  Section section = Section::None;
  std::string next_step;
  for (auto line : split_lines(response)) {
    std::string rest;
    if (auto h = heading_of(line, rest)) {
      section = *h;
      if (section == Section::NextStep && !rest.empty()) next_step += rest + "\n";
      if (section == Section::Findings && !rest.empty()) out.key_findings.push_back(rest);
      continue;
    }
    if (section == Section::Findings) {
      if (auto b = bullet_body(line)) {
        auto text = strip_decoration(*b);
        if (!text.empty()) out.key_findings.push_back(std::move(text));
      }
    } else if (section == Section::NextStep) {
      next_step += std::string(line) + "\n";
    }
  }

  const auto lo = lower(next_step);
  const auto proceed = first_hit(lo, kProceedPhrases);
  const auto cont = first_hit(lo, kContinuePhrases);
  out.recommendation = (proceed != std::string_view::npos && proceed < cont)
                           ? Recommendation::Proceed
                           : Recommendation::Continue;
  return out;
}

namespace {

bool is_id_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

// Occurrence of `id` not embedded in a longer token (T1595 does not match T1595.001).
bool mentions_id(std::string_view text, std::string_view id) {
  for (auto p = text.find(id); p != std::string_view::npos; p = text.find(id, p + 1)) {
    const bool left_ok = p == 0 || !is_id_char(text[p - 1]);
    const auto end = p + id.size();
    bool right_ok = end >= text.size() || !is_id_char(text[end]);
    if (right_ok && end + 1 < text.size() && text[end] == '.' &&
        std::isdigit(static_cast<unsigned char>(text[end + 1]))) {
      right_ok = false;
    }
    if (left_ok && right_ok) return true;
  }
  return false;
}

// Occurrence of `name` that is not just part of a longer candidate name occurrence.
bool mentions_name(const std::string& text_lo, const std::string& name_lo,
                   const std::vector<std::string>& other_names_lo) {
  if (name_lo.empty()) return false;
  for (auto p = text_lo.find(name_lo); p != std::string::npos; p = text_lo.find(name_lo, p + 1)) {
    bool covered = false;
    for (const auto& other : other_names_lo) {
      if (other.size() <= name_lo.size()) continue;
      const auto inner = other.find(name_lo);
      if (inner == std::string::npos || inner > p) continue;
      if (text_lo.compare(p - inner, other.size(), other) == 0) covered = true;
    }
    if (!covered) return true;
  }
  return false;
}

}  // namespace

TaskId parse_selection(std::string_view response, std::span<const Candidate> candidates) {
  if (candidates.empty()) throw Error(ErrorCode::NoCandidates, "no candidates to select from");
  const auto text_lo = lower(response);
  std::vector<std::string> names_lo;
  names_lo.reserve(candidates.size());
  for (const auto& c : candidates) names_lo.push_back(lower(c.name));

  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (mentions_id(response, candidates[i].id.str())) return candidates[i].id;
    if (mentions_name(text_lo, names_lo[i], names_lo)) return candidates[i].id;
  }
  throw Error(ErrorCode::SelectionUnrecognized, "response names none of the candidate tasks");
}

std::string normalize_response(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char c : trim(text)) {
    if (std::isspace(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

RepetitionWindow::RepetitionWindow(std::size_t size) : capacity_(size) {
  if (size < 2) throw Error(ErrorCode::InvalidArgument, "repetition window must be at least 2");
}

RepetitionVerdict RepetitionWindow::push(std::string_view response) {
  entries_.push_back(normalize_response(response));
  if (entries_.size() > capacity_) entries_.pop_front();
  if (entries_.size() < capacity_) return RepetitionVerdict::Continue;
  const bool all_same = std::all_of(entries_.begin(), entries_.end(),
                                    [&](const std::string& e) { return e == entries_.front(); });
  return all_same ? RepetitionVerdict::Abort : RepetitionVerdict::Continue;
}

}  // namespace stt
