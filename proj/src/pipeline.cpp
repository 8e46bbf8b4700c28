#include "lata/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "lata/ingest.hpp"
#include "lata/ledger.hpp"
#include "lata/llm.hpp"
#include "lata/report.hpp"
#include "lata/segment.hpp"
#include "lata/texparse.hpp"
#include "lata/timestamp.hpp"

namespace lata {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Stage s) {
  switch (s) {
    case Stage::Ingest: return "ingest";
    case Stage::Segment: return "segment";
    case Stage::Grade: return "grade";
    case Stage::Report: return "report";
  }
  return "?";
}

namespace {

void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path, Stage needed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw MissingArtifactError("missing " + path.string() + "; run the " + std::string(to_string(needed)) +
                               " stage first");
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// Runs fn(0..n-1) on up to `workers` threads. Results must be stored by
// index so the merge order never depends on scheduling.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next++;
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

bool endpoint_failure(LlmFailure f) { return f == LlmFailure::Transport || f == LlmFailure::MockMiss; }

const char* failure_name(LlmFailure f) {
  switch (f) {
    case LlmFailure::Transport: return "transport";
    case LlmFailure::MockMiss: return "mock_miss";
    case LlmFailure::Schema: return "schema";
    case LlmFailure::None: break;
  }
  return "none";
}

json sanitize_json(const tex::SanitizeReport& r) {
  return {{"suspicious", r.suspicious},
          {"blocklist_hits", r.blocklist_hits},
          {"comments_removed", r.comments_removed},
          {"control_chars_removed", r.control_chars_removed}};
}

fs::path segment_file(const fs::path& root, const std::string& anon) {
  return root / "stages" / "segment" / (anon + ".json");
}
fs::path grade_file(const fs::path& root, const std::string& anon) {
  return root / "stages" / "grade" / (anon + ".json");
}

}  // namespace

json RunSummary::to_json() const {
  json j;
  j["counts"] = {{"submissions", submissions},
                 {"graded", graded},
                 {"flagged_manual", flagged_manual},
                 {"llm_fallback_segmentations", llm_fallback_segmentations},
                 {"repairs_attempted", repairs_attempted},
                 {"repairs_succeeded", repairs_succeeded},
                 {"leak_events", leak_events},
                 {"suspicious_sanitize", suspicious_sanitize},
                 {"endpoint_failures", endpoint_failures},
                 {"pdf_pending", pdf_pending},
                 {"text_fallbacks", text_fallbacks}};
  j["repaired_documents"] = repaired_documents;
  j["submissions"] = json::array();
  for (const auto& r : rows) {
    j["submissions"].push_back({{"anon_id", r.anon_id},
                                {"status", r.status},
                                {"final_score", r.final_score ? json(*r.final_score) : json(nullptr)},
                                {"artifact", r.artifact},
                                {"notes", r.notes}});
  }
  return j;
}

std::string RunSummary::to_text() const {
  std::ostringstream out;
  out << "submissions                 " << submissions << "\n"
      << "graded                      " << graded << "\n"
      << "flagged_manual              " << flagged_manual << "\n"
      << "llm_fallback_segmentations  " << llm_fallback_segmentations << "\n"
      << "repairs_attempted           " << repairs_attempted << "\n"
      << "repairs_succeeded           " << repairs_succeeded << "\n"
      << "leak_events                 " << leak_events << "\n"
      << "suspicious_sanitize         " << suspicious_sanitize << "\n"
      << "endpoint_failures           " << endpoint_failures << "\n"
      << "pdf_pending                 " << pdf_pending << "\n"
      << "text_fallbacks              " << text_fallbacks << "\n";
  if (!repaired_documents.empty()) {
    out << "\nrepaired documents (review before release):\n";
    for (const auto& d : repaired_documents) out << "  " << d << "\n";
  }
  out << "\n";
  for (const auto& r : rows) {
    out << r.anon_id << "  " << r.status << "  " << (r.final_score ? format_number(*r.final_score) : "-") << "  "
        << r.artifact << "\n";
    for (const auto& n : r.notes) out << "    " << n << "\n";
  }
  return out.str();
}

Pipeline::Pipeline(PipelineOptions options) : opt_(std::move(options)) {
  validate(opt_.config);
  assignment_ = load_assignment(opt_.assignment_dir);
  root_ = opt_.original_ledger ? opt_.output_dir / "corrections" : opt_.output_dir;
  endpoint_ = llm::LlmEndpoint::from_config(opt_.config, opt_.mock_transcript);
  if (opt_.original_ledger && !fs::is_regular_file(*opt_.original_ledger)) {
    throw MissingOriginalError("original ledger not found: " + opt_.original_ledger->string());
  }
  if (opt_.record_transcript) endpoint_->record_to(*opt_.record_transcript);
}

Pipeline::~Pipeline() = default;

llm::LlmEndpoint& Pipeline::endpoint() { return *endpoint_; }

void Pipeline::record_timing(Stage stage, double seconds) {
  const fs::path path = root_ / "timings.json";
  json j = json::object();
  if (std::ifstream in(path); in) j = json::parse(in, nullptr, false);
  if (!j.is_object()) j = json::object();
  j[to_string(stage)] = seconds;
  write_json(path, j);
}

std::vector<StudentSubmission> load_ingest_stage(const fs::path& stage_root) {
  const json j = read_json(stage_root / "stages" / "ingest.json", Stage::Ingest);
  std::vector<StudentSubmission> subs;
  for (const auto& s : j.at("submissions")) subs.push_back(submission_from_json(s));
  return subs;
}

std::size_t Pipeline::run_ingest() {
  const auto t0 = std::chrono::steady_clock::now();
  IngestResult result = load_export(opt_.export_dir, opt_.config);
  if (opt_.original_ledger) {
    const LedgerContents ledger = load_ledger(*opt_.original_ledger);
    for (auto& sub : result.submissions) {
      if (sub.ungradeable) continue;
      if (!ledger.original_for(sub.sid, assignment_.assignment_id)) {
        sub.ungradeable = MissingOriginalError("no original ledger entry for submission " + sub.anon_id).what();
        continue;
      }
      const bool corrected = std::any_of(ledger.entries.begin(), ledger.entries.end(), [&](const GradeLedgerEntry& e) {
        return e.pass_kind == PassKind::Correction && e.student_key() == sub.sid &&
               e.assignment_id == assignment_.assignment_id;
      });
      if (corrected) sub.ungradeable = "a correction is already recorded; one correction pass per student";
    }
  }
  json j;
  j["assignment_id"] = assignment_.assignment_id;
  j["warnings"] = result.warnings;
  j["submissions"] = json::array();
  for (const auto& s : result.submissions) j["submissions"].push_back(to_json(s));
  write_json(root_ / "stages" / "ingest.json", j);
  write_json(root_ / "ingest_report.json", ingest_report(result));
  record_timing(Stage::Ingest, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

std::size_t Pipeline::run_segment() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<StudentSubmission> subs = load_ingest_stage(root_);
  llm::LlmEndpoint& llm = endpoint();
  std::atomic<std::size_t> failures{0};
  parallel_for(subs.size(), opt_.config.worker_count, [&](std::size_t i) {
    const StudentSubmission& sub = subs[i];
    json j;
    j["anon_id"] = sub.anon_id;
    j["label"] = sub.anon_id;
    j["skipped"] = sub.ungradeable ? json(*sub.ungradeable) : json(nullptr);
    j["identity_flag"] = nullptr;
    j["macro_block"] = "";
    j["sanitize"] = sanitize_json(tex::SanitizeReport{});
    j["warnings"] = json::array();
    j["segmentation"] = nullptr;
    if (!sub.ungradeable) {
      const tex::TokenStream stream = tex::tokenize(sub.tex_source);
      const tex::MacroExtraction macros = tex::extract_macros(stream);
      const std::string block = tex::macro_block(macros.macros);
      const tex::DocumentBody body = tex::extract_body(stream);
      const tex::SanitizedInput clean = tex::sanitize_for_llm(block, body.text, opt_.config);
      for (const auto& issue : macros.issues) j["warnings"].push_back(issue.message);
      if (body.warning) j["warnings"].push_back(*body.warning);
      j["macro_block"] = block;
      j["sanitize"] = sanitize_json(clean.report);
      try {
        const LlmView view = llm_view(sub, clean.macro_block, clean.body, opt_.config);
        j["label"] = view.label();
        const SegmentationResult seg = segment(body.text, assignment_.segmentation, llm, opt_.config);
        if (endpoint_failure(seg.llm_failure)) ++failures;
        j["segmentation"] = to_json(seg);
      } catch (const IdentityLeakError& e) {
        j["identity_flag"] = e.what();
      }
    }
    write_json(segment_file(root_, sub.anon_id), j);
  });
  record_timing(Stage::Segment, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return failures;
}

std::size_t Pipeline::run_grade() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<StudentSubmission> subs = load_ingest_stage(root_);
  // Fail before grading anything when the segment stage has not run.
  for (const auto& sub : subs) {
    if (!fs::exists(segment_file(root_, sub.anon_id))) {
      throw MissingArtifactError("missing " + segment_file(root_, sub.anon_id).string() +
                                 "; run the segment stage first");
    }
  }
  llm::LlmEndpoint& llm = endpoint();
  std::atomic<std::size_t> failures{0};
  parallel_for(subs.size(), opt_.config.worker_count, [&](std::size_t i) {
    const StudentSubmission& sub = subs[i];
    const json seg_json = read_json(segment_file(root_, sub.anon_id), Stage::Segment);
    std::vector<ProblemGrade> grades;
    std::optional<std::string> skip_note;
    if (!seg_json.at("skipped").is_null()) skip_note = seg_json.at("skipped").get<std::string>();
    if (!seg_json.at("identity_flag").is_null()) skip_note = seg_json.at("identity_flag").get<std::string>();
    if (skip_note) {
      for (const auto& p : assignment_.problems) {
        grades.push_back(review_placeholder(p, ProblemFlag::NeedsHumanGrading, *skip_note));
      }
    } else {
      const SegmentationResult seg = segmentation_from_json(seg_json.at("segmentation"));
      const GradeContext ctx{seg_json.at("label").get<std::string>(),
                             seg_json.at("sanitize").at("suspicious").get<bool>()};
      const std::string block = seg_json.at("macro_block").get<std::string>();
      for (const auto& p : assignment_.problems) {
        const ProblemSegment* s = seg.find(p.problem_id);
        if (s == nullptr && seg.manual_flag) {
          ProblemGrade g = review_placeholder(p, ProblemFlag::NeedsManualSegmentation, *seg.manual_flag);
          g.llm_failure = seg.llm_failure;
          grades.push_back(std::move(g));
          continue;
        }
        ProblemGrade g = grade_problem(s, block, p, llm, opt_.config, ctx);
        if (endpoint_failure(g.llm_failure)) ++failures;
        grades.push_back(std::move(g));
      }
    }
    json out;
    out["anon_id"] = sub.anon_id;
    out["problems"] = json::array();
    for (const auto& g : grades) out["problems"].push_back(to_json(g));
    write_json(grade_file(root_, sub.anon_id), out);
  });
  record_timing(Stage::Grade, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return failures;
}

namespace {

struct ReportRow {
  SubmissionStatus status;
  bool fallback_segmentation = false;
  bool suspicious = false;
  std::size_t leak_events = 0;
  std::size_t endpoint_failures = 0;
  bool repair_attempted = false;
  bool repaired = false;
  bool pdf_pending = false;
  bool text_fallback = false;
  std::string artifact_name;
};

}  // namespace

RunSummary Pipeline::run_report() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<StudentSubmission> subs = load_ingest_stage(root_);
  std::vector<json> seg_files(subs.size()), grade_files(subs.size());
  for (std::size_t i = 0; i < subs.size(); ++i) {
    seg_files[i] = read_json(segment_file(root_, subs[i].anon_id), Stage::Segment);
    grade_files[i] = read_json(grade_file(root_, subs[i].anon_id), Stage::Grade);
  }

  const bool regrade = opt_.original_ledger.has_value();
  const LedgerPaths ledger_paths =
      regrade ? LedgerPaths{*opt_.original_ledger, opt_.original_ledger->parent_path() / "anonymized.jsonl"}
              : LedgerPaths::under(root_);
  const LedgerContents original = regrade ? load_ledger(*opt_.original_ledger) : LedgerContents{};
  const std::string graded_at = format_utc(run_clock_now());
  const fs::path audit_prefix = regrade ? fs::path("corrections") / "audit" : fs::path("audit");

  llm::LlmEndpoint& llm = endpoint();
  std::vector<ReportRow> rows(subs.size());
  {
    LedgerWriter writer(ledger_paths);
    parallel_for(subs.size(), opt_.config.worker_count, [&](std::size_t i) {
      const StudentSubmission& sub = subs[i];
      const json& seg_json = seg_files[i];
      ReportRow& row = rows[i];
      row.status.anon_id = sub.anon_id;

      std::vector<ProblemGrade> grades;
      for (const auto& g : grade_files[i].at("problems")) grades.push_back(problem_grade_from_json(g));
      bool flagged = sub.ungradeable.has_value();
      if (sub.ungradeable) row.status.notes.push_back(*sub.ungradeable);
      if (!seg_json.at("identity_flag").is_null()) {
        row.status.notes.push_back(seg_json.at("identity_flag").get<std::string>());
      }
      for (auto& g : grades) {
        row.leak_events += g.audit.leak_events.size();
        if (endpoint_failure(g.llm_failure)) ++row.endpoint_failures;
        if (!under_review(g.flag)) {
          // Points are always recomputed from the verdicts, so a hand-edited
          // grade file is honoured as written.
          try {
            g.raw_points = score_verdicts(assignment_.problem(g.problem_id).rubric, g.verdicts);
          } catch (const ValidationError& e) {
            g.flag = ProblemFlag::NeedsHumanGrading;
            g.audit.note = e.what();
          }
        }
        if (under_review(g.flag)) {
          flagged = true;
          row.status.notes.push_back(g.problem_id + ": " + to_string(g.flag) +
                                     (g.llm_failure != LlmFailure::None
                                          ? std::string(" (") + failure_name(g.llm_failure) + ")"
                                          : std::string()));
        } else if (g.flag == ProblemFlag::NoWorkFound) {
          row.status.notes.push_back(g.problem_id + ": no work found");
        }
        if (!g.audit.leak_events.empty()) {
          row.status.notes.push_back(g.problem_id + ": " + std::to_string(g.audit.leak_events.size()) +
                                     " hint(s) replaced by the leak guard");
        }
      }
      if (!seg_json.at("segmentation").is_null()) {
        const SegmentationResult seg = segmentation_from_json(seg_json.at("segmentation"));
        row.fallback_segmentation = seg.fallback_used;
        if (endpoint_failure(seg.llm_failure)) ++row.endpoint_failures;
      }
      row.suspicious = seg_json.at("sanitize").at("suspicious").get<bool>();
      if (row.suspicious) row.status.notes.push_back("possible prompt injection in source");

      std::optional<GradeLedgerEntry> entry;
      const std::string audit_ref = (audit_prefix / sub.anon_id).generic_string();
      if (!flagged) {
        std::vector<ProblemPoints> raws;
        for (const auto& g : grades) raws.push_back(ProblemPoints{g.problem_id, g.raw_points});
        if (regrade) {
          const GradeLedgerEntry* orig = original.original_for(sub.sid, assignment_.assignment_id);
          if (orig == nullptr) throw MissingOriginalError("no original ledger entry for " + sub.anon_id);
          entry = apply_regrade(*orig, raws, opt_.config);
          entry->anon_id = sub.anon_id;
        } else {
          GradeLedgerEntry e;
          e.anon_id = sub.anon_id;
          e.sid = sub.sid;
          e.assignment_id = assignment_.assignment_id;
          e.pass_kind = PassKind::Original;
          e.problems = raws;
          e.extra_credit = sub.metadata.extra_credit;
          e.late_fraction = opt_.config.late_policy.penalty(sub.metadata.lateness());
          std::vector<double> values;
          for (const auto& r : raws) values.push_back(r.points);
          e.final_score = compute_final(values, e.extra_credit, e.late_fraction);
          entry = std::move(e);
        }
        entry->graded_at = graded_at;
        entry->audit_ref = audit_ref;
        row.status.status = "graded";
        row.status.final_score = entry->final_score;
      } else {
        row.status.status = "flagged";
      }
      writer.submit(i, entry);

      const FeedbackDocument doc = render_feedback(sub, assignment_, grades, entry ? &*entry : nullptr);
      const fs::path reports = root_ / "reports";
      const fs::path work = root_ / ".work" / sub.anon_id;
      json report_audit;
      std::string final_source = doc.tex_source;
      try {
        const HealOutcome heal = self_heal_compile(doc, work, llm, opt_.config);
        final_source = heal.final_source;
        row.repair_attempted = !heal.repairs.empty();
        row.repaired = heal.repaired;
        json repairs = json::array();
        for (const auto& r : heal.repairs) {
          repairs.push_back({{"attempt", r.attempt}, {"accepted", r.accepted}, {"reason", r.reason}});
        }
        report_audit["repairs"] = repairs;
        if (heal.compile.status == CompileOutcome::Status::Success) {
          row.artifact_name = doc.file_stem + ".pdf";
          fs::create_directories(reports);
          fs::copy_file(heal.compile.pdf_path, reports / row.artifact_name, fs::copy_options::overwrite_existing);
          report_audit["status"] = heal.repaired ? "repaired" : "compiled";
        } else {
          row.text_fallback = true;
          row.artifact_name = doc.file_stem + ".txt";
          write_text(reports / row.artifact_name, doc.plain_text);
          report_audit["status"] = "text_fallback";
          report_audit["log_excerpt"] = heal.compile.log_excerpt;
          row.status.notes.push_back("PDF repair failed; plain-text feedback emitted");
        }
      } catch (const CompilerMissingError& e) {
        row.pdf_pending = true;
        row.artifact_name = doc.file_stem + ".txt";
        write_text(reports / row.artifact_name, doc.plain_text);
        report_audit["status"] = "pdf_pending";
        report_audit["note"] = e.what();
        row.status.notes.push_back("PDF pending: no LaTeX compiler available");
      } catch (const TimeoutError& e) {
        row.text_fallback = true;
        row.artifact_name = doc.file_stem + ".txt";
        write_text(reports / row.artifact_name, doc.plain_text);
        report_audit["status"] = "text_fallback";
        report_audit["note"] = e.what();
        row.status.notes.push_back("compiler timed out; plain-text feedback emitted");
      }
      if (row.repaired) row.status.notes.push_back("PDF compiled from a model-repaired source");
      write_text(reports / (doc.file_stem + ".tex"), final_source);
      row.status.artifact = (fs::path("reports") / row.artifact_name).generic_string();

      json bundle;
      bundle["anon_id"] = sub.anon_id;
      bundle["segment"] = seg_json;
      bundle["problems"] = grade_files[i].at("problems");
      bundle["report"] = report_audit;
      bundle["ledger_entry"] = entry ? to_json(*entry, false) : json(nullptr);
      if (entry) bundle["ledger_entry"].erase("graded_at");
      write_json(root_ / "audit" / sub.anon_id / "bundle.json", bundle);
    });
    writer.close();
  }
  std::error_code ec;
  fs::remove_all(root_ / ".work", ec);

  std::vector<std::string> problem_ids;
  for (const auto& p : assignment_.problems) problem_ids.push_back(p.problem_id);
  std::vector<GradeLedgerEntry> latest;
  for (auto& e : load_ledger(ledger_paths.identified).latest()) {
    if (e.assignment_id == assignment_.assignment_id) latest.push_back(std::move(e));
  }
  export_scores(latest, problem_ids, root_ / "scores.csv");

  RunSummary summary;
  summary.submissions = subs.size();
  for (auto& row : rows) {
    (row.status.status == "graded" ? summary.graded : summary.flagged_manual)++;
    summary.llm_fallback_segmentations += row.fallback_segmentation;
    summary.repairs_attempted += row.repair_attempted;
    summary.repairs_succeeded += row.repaired;
    summary.leak_events += row.leak_events;
    summary.suspicious_sanitize += row.suspicious;
    summary.endpoint_failures += row.endpoint_failures;
    summary.pdf_pending += row.pdf_pending;
    summary.text_fallbacks += row.text_fallback;
    if (row.repaired) summary.repaired_documents.push_back(row.status.artifact);
    summary.rows.push_back(std::move(row.status));
  }
  write_json(root_ / "summary.json", summary.to_json());
  write_text(root_ / "summary.txt", summary.to_text());
  record_timing(Stage::Report, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return summary;
}

RunSummary Pipeline::run_all() {
  run_ingest();
  run_segment();
  run_grade();
  return run_report();
}

}  // namespace lata
