#pragma once

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lata/timestamp.hpp"

namespace lata {

struct Config;

struct SubmissionMetadata {
  Timestamp submitted_at;
  Timestamp due_at;
  std::string assignment_id;
  int submission_count = 1;
  double extra_credit = 0.0;

  // max(0, submitted_at - due_at)
  std::chrono::seconds lateness() const;

  friend bool operator==(const SubmissionMetadata&, const SubmissionMetadata&) = default;
};

struct StudentSubmission {
  std::string internal_id;
  std::string sid;
  std::string name;
  std::string email;
  std::string directory;  // export subdirectory name
  std::string tex_file;   // file name inside `directory`, empty when none
  std::string tex_source;
  SubmissionMetadata metadata;
  std::string anon_id;
  std::optional<std::string> ungradeable;
  std::vector<std::string> warnings;

  friend bool operator==(const StudentSubmission&, const StudentSubmission&) = default;
};

struct IngestResult {
  std::vector<StudentSubmission> submissions;  // sorted by internal_id
  std::vector<std::string> warnings;
};

inline constexpr std::string_view kMetadataFileName = "submission_metadata.yml";

// Reads an export tree: <export>/<student_dir>/*.tex plus
// <export>/submission_metadata.yml. A student directory without a .tex
// file is kept and flagged ungradeable rather than aborting the batch.
IngestResult load_export(const std::filesystem::path& export_dir, const Config& config);

// First 8 lowercase hex characters of SHA-256(sid bytes ++ internal_id bytes).
std::string anonymize_id(std::string_view sid, std::string_view internal_id);

// Orders numeric ids numerically, everything else lexicographically.
bool internal_id_less(std::string_view a, std::string_view b);

// Replaces invalid UTF-8 sequences with U+FFFD; `replaced` counts them.
std::string to_valid_utf8(std::string_view bytes, std::size_t* replaced = nullptr);

struct IdentityMatch {
  std::string field;
};

// Case-insensitive scan for sid, name, email and the email local part
// (needles shorter than 4 characters are ignored).
std::optional<IdentityMatch> find_identity(const StudentSubmission& sub, std::string_view text);

// The only shape of a submission that LLM-facing code accepts.
struct LlmView {
  std::string anon_id;
  std::optional<std::string> sid;  // only when anonymization is off
  std::string macro_block;
  std::string body;

  std::string label() const { return sid ? *sid : anon_id; }
};

// Throws IdentityLeakError when anonymizing and an identity string occurs in
// the macro block or body.
LlmView llm_view(const StudentSubmission& sub, std::string macro_block, std::string body, const Config& config);

nlohmann::json to_json(const LlmView& view);
nlohmann::json to_json(const StudentSubmission& sub);
StudentSubmission submission_from_json(const nlohmann::json& j);

nlohmann::json ingest_report(const IngestResult& result);

}  // namespace lata
