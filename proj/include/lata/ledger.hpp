#pragma once

#include <json.hpp>

#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace lata {
struct Config;

enum class PassKind { Original, Correction };

const char* to_string(PassKind k);
PassKind pass_kind_from_string(std::string_view s);

struct ProblemPoints {
  std::string problem_id;
  double points = 0.0;
  friend bool operator==(const ProblemPoints&, const ProblemPoints&) = default;
};

struct GradeLedgerEntry {
  std::string anon_id;
  std::optional<std::string> sid;  // identified ledger only
  std::string assignment_id;
  PassKind pass_kind = PassKind::Original;
  std::vector<ProblemPoints> problems;
  double extra_credit = 0.0;
  double late_fraction = 0.0;
  double final_score = 0.0;
  std::string graded_at;  // the only wall-clock field
  std::string audit_ref;

  double raw_total() const;
  const ProblemPoints* problem(std::string_view problem_id) const;
  // Key used to pick the latest record: sid when present, else anon_id.
  std::string student_key() const { return sid ? *sid : anon_id; }
  friend bool operator==(const GradeLedgerEntry&, const GradeLedgerEntry&) = default;
};

// sum(raws) * (1 - late_fraction) + extra_credit, never below zero.
// RangeError on negative raws or extra credit, or late_fraction outside [0, 1].
double compute_final(const std::vector<double>& raws, double extra_credit, double late_fraction);

// Correction entry for `original`: per problem, original + fraction * max(0, new - original).
// Problems absent from new_raws keep their original points. Late fraction and
// extra credit are copied bit for bit. MissingOriginalError unless
// `original` is an original-pass entry.
GradeLedgerEntry apply_regrade(const GradeLedgerEntry& original, const std::vector<ProblemPoints>& new_raws,
                               const Config& config);

// SHA-256 over the serialized record minus graded_at and checksum.
std::string entry_checksum(const nlohmann::json& record);

// The sid is written only when include_sid is set.
nlohmann::json to_json(const GradeLedgerEntry& e, bool include_sid);
// Throws CorruptRecordError(0, ...) on missing fields or a checksum mismatch.
GradeLedgerEntry ledger_entry_from_json(const nlohmann::json& j);

struct CorruptRecord {
  std::size_t line = 0;
  std::string message;
};

struct LedgerContents {
  std::vector<GradeLedgerEntry> entries;  // file order
  std::vector<CorruptRecord> corrupt;

  // Last record per (student, assignment, pass kind), ordered by student key.
  std::vector<GradeLedgerEntry> latest() const;
  // Latest original-pass entry for the student, if any.
  const GradeLedgerEntry* original_for(std::string_view student_key, std::string_view assignment_id) const;
};

// Appends records; never rewrites existing lines.
void persist(const std::vector<GradeLedgerEntry>& entries, const std::filesystem::path& path, bool include_sid);
LedgerContents load_ledger(const std::filesystem::path& path);

struct LedgerPaths {
  std::filesystem::path identified;
  std::filesystem::path anonymized;
  static LedgerPaths under(const std::filesystem::path& output_dir);
};

// Single writer for both ledger files. Workers submit entries tagged with
// their submission's sequence number; the writer thread appends them in
// sequence order, so file contents do not depend on worker timing. A
// sequence number with no entry (flagged submission) must still be
// submitted as nullopt.
class LedgerWriter {
 public:
  explicit LedgerWriter(LedgerPaths paths, std::size_t first_seq = 0);
  ~LedgerWriter();
  LedgerWriter(const LedgerWriter&) = delete;
  LedgerWriter& operator=(const LedgerWriter&) = delete;

  void submit(std::size_t seq, std::optional<GradeLedgerEntry> entry);
  // Waits for every submitted sequence number up to the highest contiguous one.
  void close();
  std::size_t written() const;

 private:
  void run();

  LedgerPaths paths_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::map<std::size_t, std::optional<GradeLedgerEntry>> pending_;
  std::size_t next_seq_;
  std::size_t written_ = 0;
  bool closing_ = false;
  std::thread thread_;
};

// CSV for upload: header, then one row per student ordered by sid, with the
// correction entry taking precedence over the original.
// Columns: sid, anon_id, final_score, one per problem id, pass_kind.
std::string export_scores_csv(const std::vector<GradeLedgerEntry>& entries,
                              const std::vector<std::string>& problem_ids);
void export_scores(const std::vector<GradeLedgerEntry>& entries, const std::vector<std::string>& problem_ids,
                   const std::filesystem::path& path);

// Shortest round-trip decimal form, used wherever scores are printed.
std::string format_number(double v);

}  // namespace lata
