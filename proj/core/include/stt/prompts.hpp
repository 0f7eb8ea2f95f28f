#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace stt {

enum class TemplateId {
  Initial,
  OutputSummarization,
  TaskSelection,
  CommandGeneration,
  BaselineInitial,
  BaselineReasoning,
};

std::string_view to_string(TemplateId id) noexcept;
std::optional<TemplateId> parse_template_id(std::string_view text) noexcept;

/// Placeholder names. A template contains each of its placeholders exactly once, written
/// as `<name>`.
namespace placeholder {
inline constexpr std::string_view kTarget = "Target IP information";
inline constexpr std::string_view kFirstTask = "The first task and its description";
inline constexpr std::string_view kCompletedFindings = "Task findings in the completed task";
inline constexpr std::string_view kNextTasks = "List of the next tasks";
inline constexpr std::string_view kSelectedTask = "Description of selected task";
inline constexpr std::string_view kToolOutput = "Tool output";
inline constexpr std::string_view kCurrentPtt = "Current PTT";
inline constexpr std::string_view kTestResults = "Test results";
}  // namespace placeholder

/// A fully rendered prompt plus the values that were substituted into it.
struct PromptEnvelope {
  TemplateId template_id = TemplateId::Initial;
  std::string rendered_text;
  std::map<std::string, std::string> placeholders;

  friend bool operator==(const PromptEnvelope&, const PromptEnvelope&) = default;
};

/// Template text with `<name>` markers in place of substitutions.
std::string_view template_text(TemplateId id) noexcept;

/// Names of the placeholders in `id`, in order of appearance.
std::span<const std::string_view> template_placeholders(TemplateId id) noexcept;

/// Substitutes every placeholder of `id`. Values are inserted verbatim and never re-scanned.
/// Throws Error(InvalidArgument) when a placeholder is missing or an unknown one is given.
PromptEnvelope render_prompt(TemplateId id, std::map<std::string, std::string> values);

}  // namespace stt
