#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lata/grade.hpp"
#include "lata/ingest.hpp"
#include "lata/ledger.hpp"

namespace lata {
struct Config;
namespace llm {
class LlmEndpoint;
}

// Makes text inert inside a LaTeX paragraph: # $ % & _ { } ~ ^ \ are escaped,
// control characters other than newline and tab are dropped.
std::string escape_latex(std::string_view text);

// Template blocks are delimited by comment lines
//   %<<BLOCK:name>>
//   ...
//   %<<END>>
// and carry every hint and score the student sees.
inline constexpr std::string_view kBlockOpen = "%<<BLOCK:";
inline constexpr std::string_view kBlockClose = "%<<END>>";

// Block name -> whitespace-normalized content. Duplicate or unterminated
// blocks are reported as a block named "!malformed".
std::map<std::string, std::string> extract_blocks(std::string_view tex);

struct FeedbackDocument {
  std::string tex_source;
  std::string plain_text;  // fallback rendering of the same content
  std::string anon_id;
  std::string file_stem;  // filesystem-safe sid, or anon_id when the sid is unusable
};

// Filesystem-safe form of the sid: [A-Za-z0-9._-] kept, everything else '_'.
std::string report_file_stem(const StudentSubmission& sub);

// `entry` is null when the submission has no ledger entry (flagged problems).
FeedbackDocument render_feedback(const StudentSubmission& sub, const AssignmentPackage& assignment,
                                 const std::vector<ProblemGrade>& grades, const GradeLedgerEntry* entry);

struct CompileOutcome {
  enum class Status { Success, Failure } status = Status::Failure;
  std::filesystem::path pdf_path;
  std::string log_excerpt;
  int attempts = 0;
};

// Writes <workdir>/<stem>.tex and runs the configured compiler on it in
// nonstop mode. Throws CompilerMissingError or TimeoutError.
CompileOutcome compile_pdf(const std::string& tex_source, const std::string& stem,
                           const std::filesystem::path& workdir, const Config& config);

// First "!" line of the log with two lines before and six after; the log
// tail when there is no such line.
std::string log_excerpt(std::string_view log);

struct RepairAttempt {
  int attempt = 0;
  bool accepted = false;
  std::string reason;
};

struct HealOutcome {
  CompileOutcome compile;
  std::string final_source;
  std::vector<RepairAttempt> repairs;
  bool repaired = false;  // success came from a model-edited source
  bool used_fallback = false;
};

// Compiles the document; on failure asks the grader model for a corrected
// source up to config.repair_max_attempts times. A repair is accepted only
// if its template blocks are unchanged and it compiles. On exhaustion the
// outcome is a failure with used_fallback set; the caller writes
// doc.plain_text instead of a PDF. CompilerMissingError propagates.
HealOutcome self_heal_compile(const FeedbackDocument& doc, const std::filesystem::path& workdir,
                              llm::LlmEndpoint& endpoint, const Config& config);

}  // namespace lata
