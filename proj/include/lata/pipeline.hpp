#pragma once

#include <json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lata/config.hpp"
#include "lata/errors.hpp"
#include "lata/grade.hpp"
#include "lata/ingest.hpp"

namespace lata {
namespace llm {
class LlmEndpoint;
}

// A stage was asked to run before the stage it reads from.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

enum class Stage { Ingest, Segment, Grade, Report };
const char* to_string(Stage s);

struct PipelineOptions {
  Config config;
  std::filesystem::path export_dir;
  std::filesystem::path assignment_dir;
  std::filesystem::path output_dir;
  std::optional<std::filesystem::path> mock_transcript;
  std::optional<std::filesystem::path> record_transcript;
  // Corrections pass: artifacts go to <output_dir>/corrections and the
  // correction entries are appended next to this identified ledger.
  std::optional<std::filesystem::path> original_ledger;
};

struct SubmissionStatus {
  std::string anon_id;
  std::string status;  // "graded" or "flagged"
  std::optional<double> final_score;
  std::string artifact;  // path relative to the stage root
  std::vector<std::string> notes;
};

struct RunSummary {
  std::size_t submissions = 0;
  std::size_t graded = 0;
  std::size_t flagged_manual = 0;
  std::size_t llm_fallback_segmentations = 0;
  std::size_t repairs_attempted = 0;
  std::size_t repairs_succeeded = 0;
  std::size_t leak_events = 0;
  std::size_t suspicious_sanitize = 0;
  std::size_t endpoint_failures = 0;  // transport errors and replay misses
  std::size_t pdf_pending = 0;
  std::size_t text_fallbacks = 0;
  std::vector<std::string> repaired_documents;
  std::vector<SubmissionStatus> rows;

  bool reconciles() const { return graded + flagged_manual == submissions; }
  nlohmann::json to_json() const;
  std::string to_text() const;
};

// Stage files, relative to the stage root:
//   stages/ingest.json            submissions with identity and source
//   stages/segment/<anon_id>.json macro block, sanitize report, segments
//   stages/grade/<anon_id>.json   per-problem verdicts and audit data
// The report stage writes reports/, audit/, the ledgers, scores.csv and
// summary.{json,txt}. timings.json holds the only wall-clock measurements
// apart from the ledger's graded_at field.
class Pipeline {
 public:
  // Loads and validates the assignment package; throws before anything is written.
  explicit Pipeline(PipelineOptions options);
  ~Pipeline();

  const std::filesystem::path& stage_root() const { return root_; }
  const AssignmentPackage& assignment() const { return assignment_; }

  // Each stage returns the number of model calls that failed for want of
  // an endpoint (transport error or replay miss).
  std::size_t run_ingest();
  std::size_t run_segment();
  std::size_t run_grade();
  RunSummary run_report();
  RunSummary run_all();

 private:
  llm::LlmEndpoint& endpoint();
  void record_timing(Stage stage, double seconds);

  PipelineOptions opt_;
  AssignmentPackage assignment_;
  std::filesystem::path root_;
  std::unique_ptr<llm::LlmEndpoint> endpoint_;
};

// Reads an ingest stage file without touching anything else.
std::vector<StudentSubmission> load_ingest_stage(const std::filesystem::path& stage_root);

// Command-line entry point; returns the process exit code.
//   0 success, 1 invalid configuration, assignment, export or missing stage
//   input, 2 endpoint unavailable (or replay miss) while model calls were
//   needed, 3 any other failure.
int run_cli(int argc, char** argv);

}  // namespace lata
