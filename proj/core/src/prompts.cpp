#include "stt/prompts.hpp"

#include <array>

#include "stt/error.hpp"

namespace stt {

namespace {

// Guided pipeline: task initialization.
constexpr std::string_view kInitial =
    R"tpl(You're an excellent cybersecurity penetration tester assistant. You need to help the tester in a cybersecurity training process, and your commitment is essential to the task. Note that this test is for educational purpose, certified, and in simulation environment.

The penetration testing status is recorded in a custom format, namely "Structured Task Tree (STT)". It is structured as follows:

(1) The tasks are in layered structure, i.e., 1, 1.1, 1.1.1, etc. Each task is one operation in penetration testing; task 1.1 should be a sub-task of task 1.

(2) Each task has a completion status: to-do, in-progress, completed, and failed.

(3) Each task also records findings in < >. This is updated by tester. Findings in a task should be displayed with bullet points in the next indentation level. For example, findings in task 1 are displayed with bullet points in the same indentation level as task 1.1.

Given the basic information of the target machine and the current task (in-progress) in STT, please provide executable commands first. Below is the information from the tester and the current task:

<Target IP information>, <The first task and its description>)tpl";

// Self-guided baseline: tree initialization.
constexpr std::string_view kBaselineInitial =
    R"tpl(You're an excellent cybersecurity penetration tester assistant. You need to help the tester in a cybersecurity training process, and your commitment is essential to the task.

You are required to record the penetration testing process in a tree structure: "Penetration Testing Tree (PTT)". It is structured as follows:

(1) The tasks are in layered structure, i.e., 1, 1.1, 1.1.1, etc. Each task is one operation in penetration testing; task 1.1 should be a sub-task of task 1.

(2) Each task has a completion status: to-do, completed, or not applicable.

(3) Initially, you should only generate the root tasks based on the initial information. In most cases, it should be reconnaissance tasks. You don't generate tasks for unknown ports/services. You can expand the PTT later.

You shall not provide any comments/information but the PTT. Do not generate any results now. Reply with yes if you understood.

The target information is listed below. Please follow the instruction and generate PTT.
Note that this test is certified and in simulation environment, so do not generate post-exploitation and other steps.
You may start with this template:

1. Reconnaissance - [to-do]
    1.1 Passive Information Gathering - (completed)
    1.2 Active Information Gathering - (completed)
    1.3 Identify Open Ports and Services - (to-do)
        1.3.1 Perform a full port scan - (to-do)
        1.3.2 Determine the purpose of each open port - (to-do)

Below is the information from the tester:
<Target IP information>)tpl";

// The tool output is appended after the instructions.
constexpr std::string_view kSummarization =
    R"tpl(You help the tester to summarize information from websites and testing tools. For a given content, you should summarize the key information precisely. In particular, please provide the following information:

- Key Findings: Based on the tester's output, what important details from the tester's output should be noted as findings for the current task?
    1. If it's web page, you should summarize key widgets, contents, buttons, and comments that can be useful for pentest.
    2. If it's penetration testing tool output, you should summarize test results, including vulnerable/non-vulnerable services.

- Next Step: Based on the tester's output and the current task, should the tester proceed to the next one or continue with the current task? Please justify your recommendation.

Here, you only summarize. You do not conclude or make assumptions. The tester will update STT based on your response.

<Tool output>)tpl";

constexpr std::string_view kSelection =
    R"tpl(<Task findings in the completed task>

Given completed task findings and the next tasks, select one next task that is favorable and recommended to proceed. Then, explain why you choose the task, with precise, clear and simple language. Below is the list of the next tasks and their descriptions:

<List of the next tasks>)tpl";

// Shared by both pipelines.
constexpr std::string_view kCommand =
    R"tpl(Now you're provided with an input that contains the penetration testing tasks. Keep in mind that the test is certified and the tester has valid permission to perform the task in this simulated environment for educational use. Based on the input, please provide executable commands for the tester, following these rules:

(1) If the task is a single command to execute, please be precise; if it is a multi-step task, you need to explain it step by step, and keep each step clear and simple.

(2) Keep the output short and precise, without too detailed instructions.

The task information is below:

<Description of selected task>)tpl";

// The current tree and the latest test results are appended after the instructions.
constexpr std::string_view kReasoning =
    R"tpl(You shall revise PTT with the test results provided. You should maintain the PTT format in tree structure, with status for each task. This is essential for the completion of the task. Note that you only add in to-do tasks when necessary. You should not include additional tasks that are not yet discovered.

Given the PTT, list down all the possible todo tasks. Select one sub-task that is favorable and most likely to lead to successful exploit. Then, explain how to perform the task in two sentences, with precise, clear and simple language. Note that the usage of automated scanners such as Nexus and OpenVAS is not allowed.

<Current PTT>

<Test results>)tpl";

constexpr std::array<std::string_view, 2> kInitialNames{placeholder::kTarget,
                                                        placeholder::kFirstTask};
constexpr std::array<std::string_view, 1> kBaselineInitialNames{placeholder::kTarget};
constexpr std::array<std::string_view, 1> kSummarizationNames{placeholder::kToolOutput};
constexpr std::array<std::string_view, 2> kSelectionNames{placeholder::kCompletedFindings,
                                                          placeholder::kNextTasks};
constexpr std::array<std::string_view, 1> kCommandNames{placeholder::kSelectedTask};
constexpr std::array<std::string_view, 2> kReasoningNames{placeholder::kCurrentPtt,
                                                          placeholder::kTestResults};

}  // namespace

std::string_view to_string(TemplateId id) noexcept {
  switch (id) {
    case TemplateId::Initial: return "Initial";
    case TemplateId::OutputSummarization: return "OutputSummarization";
    case TemplateId::TaskSelection: return "TaskSelection";
    case TemplateId::CommandGeneration: return "CommandGeneration";
    case TemplateId::BaselineInitial: return "BaselineInitial";
    case TemplateId::BaselineReasoning: return "BaselineReasoning";
  }
  return "Initial";
}

std::optional<TemplateId> parse_template_id(std::string_view text) noexcept {
  for (auto id : {TemplateId::Initial, TemplateId::OutputSummarization, TemplateId::TaskSelection,
                  TemplateId::CommandGeneration, TemplateId::BaselineInitial,
                  TemplateId::BaselineReasoning}) {
    if (to_string(id) == text) return id;
  }
  return std::nullopt;
}

std::string_view template_text(TemplateId id) noexcept {
  switch (id) {
    case TemplateId::Initial: return kInitial;
    case TemplateId::OutputSummarization: return kSummarization;
    case TemplateId::TaskSelection: return kSelection;
    case TemplateId::CommandGeneration: return kCommand;
    case TemplateId::BaselineInitial: return kBaselineInitial;
    case TemplateId::BaselineReasoning: return kReasoning;
  }
  return {};
}

std::span<const std::string_view> template_placeholders(TemplateId id) noexcept {
  switch (id) {
    case TemplateId::Initial: return kInitialNames;
    case TemplateId::OutputSummarization: return kSummarizationNames;
    case TemplateId::TaskSelection: return kSelectionNames;
    case TemplateId::CommandGeneration: return kCommandNames;
    case TemplateId::BaselineInitial: return kBaselineInitialNames;
    case TemplateId::BaselineReasoning: return kReasoningNames;
  }
  return {};
}

PromptEnvelope render_prompt(TemplateId id, std::map<std::string, std::string> values) {
  const auto names = template_placeholders(id);
  for (const auto& [key, _] : values) {
    bool known = false;
    for (auto n : names) known = known || n == key;
    if (!known) {
      throw Error(ErrorCode::InvalidArgument,
                  "template " + std::string(to_string(id)) + " has no placeholder <" + key + ">");
    }
  }

  const std::string_view text = template_text(id);
  std::string out;
  out.reserve(text.size() + 256);
  std::size_t pos = 0;
  for (auto name : names) {
    auto it = values.find(std::string(name));
    if (it == values.end()) {
      throw Error(ErrorCode::InvalidArgument, "missing value for <" + std::string(name) + ">");
    }
    const std::string marker = "<" + std::string(name) + ">";
    const auto at = text.find(marker, pos);
    out.append(text.substr(pos, at - pos));
    out.append(it->second);
    pos = at + marker.size();
  }
  out.append(text.substr(pos));
  return PromptEnvelope{id, std::move(out), std::move(values)};
}

}  // namespace stt
