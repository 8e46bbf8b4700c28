#pragma once

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lata/errors.hpp"
#include "lata/schema.hpp"
#include "lata/segment.hpp"

namespace lata {
struct Config;
namespace llm {
class LlmEndpoint;
struct ChatRequest;
}  // namespace llm

struct RubricItem {
  std::string item_id;
  double points = 0.0;
  std::string criterion;
};

struct Rubric {
  std::vector<RubricItem> items;
  double total() const;
};

struct ProblemEntry {
  std::string problem_id;
  std::string reference_solution_tex;
  Rubric rubric;
};

struct AssignmentPackage {
  std::string assignment_id;
  std::string title;
  std::vector<ProblemEntry> problems;
  SegmentationSpec segmentation;

  double total_points() const;
  const ProblemEntry& problem(std::string_view problem_id) const;
};

inline constexpr std::string_view kAssignmentFileName = "assignment.yml";

// Reads <dir>/assignment.yml and solutions/<problem_id>.tex (or the path the
// problem names). Throws ValidationError / DuplicateIdError with the key path.
AssignmentPackage load_assignment(const std::filesystem::path& dir);

struct ItemVerdict {
  std::string item_id;
  bool pass = false;
  std::string audit_reasoning;  // TA-facing
  std::string student_hint;     // student-facing
  std::string think_trace;      // audit only
  bool hint_replaced = false;
};

enum class ProblemFlag { None, NoWorkFound, NeedsHumanGrading, NeedsManualSegmentation };

const char* to_string(ProblemFlag f);
ProblemFlag problem_flag_from_string(std::string_view s);

// Flags under which the student document shows "under human review".
inline bool under_review(ProblemFlag f) {
  return f == ProblemFlag::NeedsHumanGrading || f == ProblemFlag::NeedsManualSegmentation;
}

struct ProblemAudit {
  std::string prompt_digest;
  std::string system_text;
  std::string user_text;
  std::vector<CoercionAttempt> attempts;
  std::string think_trace;
  std::vector<std::string> leak_events;
  std::string note;
};

struct ProblemGrade {
  std::string problem_id;
  // One verdict per rubric item, rubric order. Empty only while the problem
  // is under human review: no verdict is ever invented.
  std::vector<ItemVerdict> verdicts;
  double raw_points = 0.0;
  std::string graded_by_model;
  std::optional<SegmentMethod> segment_method;
  ProblemFlag flag = ProblemFlag::None;
  LlmFailure llm_failure = LlmFailure::None;
  ProblemAudit audit;
};

// Sum of points over passed items. Throws ValidationError unless the
// verdicts name every rubric item exactly once.
double score_verdicts(const Rubric& rubric, const std::vector<ItemVerdict>& verdicts);

// Longest run of identical characters shared by a and b after collapsing
// whitespace runs to single spaces and trimming both ends.
std::size_t longest_common_run(std::string_view a, std::string_view b);

struct GradeContext {
  std::string submission_label;  // anon_id, or sid when anonymization is off
  bool suspicious = false;
};

llm::Schema grading_schema(const Rubric& rubric);

llm::ChatRequest build_grade_prompt(const ProblemSegment& segment, std::string_view macro_block,
                                    const ProblemEntry& problem, const Config& config, const GradeContext& context);

// A missing or blank segment yields all-fail verdicts without a model call.
// Endpoint or schema failures flag the problem for human grading.
ProblemGrade grade_problem(const ProblemSegment* segment, std::string_view macro_block, const ProblemEntry& problem,
                           llm::LlmEndpoint& endpoint, const Config& config, const GradeContext& context);

// Flagged placeholder for problems that never reach the grader.
ProblemGrade review_placeholder(const ProblemEntry& problem, ProblemFlag flag, std::string note);

nlohmann::json to_json(const ProblemGrade& g);
ProblemGrade problem_grade_from_json(const nlohmann::json& j);

}  // namespace lata
