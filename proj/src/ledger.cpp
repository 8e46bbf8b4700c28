#include "lata/ledger.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "lata/config.hpp"
#include "lata/digest.hpp"
#include "lata/errors.hpp"

namespace lata {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(PassKind k) { return k == PassKind::Original ? "original" : "correction"; }

PassKind pass_kind_from_string(std::string_view s) {
  if (s == "original") return PassKind::Original;
  if (s == "correction") return PassKind::Correction;
  throw ValidationError("pass_kind", "unknown pass kind '" + std::string(s) + "'");
}

double GradeLedgerEntry::raw_total() const {
  double sum = 0.0;
  for (const auto& p : problems) sum += p.points;
  return sum;
}

const ProblemPoints* GradeLedgerEntry::problem(std::string_view problem_id) const {
  for (const auto& p : problems) {
    if (p.problem_id == problem_id) return &p;
  }
  return nullptr;
}

double compute_final(const std::vector<double>& raws, double extra_credit, double late_fraction) {
  double sum = 0.0;
  for (double r : raws) {
    if (!(r >= 0.0)) throw RangeError("raw points must be >= 0");
    sum += r;
  }
  if (!(extra_credit >= 0.0)) throw RangeError("extra credit must be >= 0");
  if (!(late_fraction >= 0.0 && late_fraction <= 1.0)) throw RangeError("late fraction must lie in [0, 1]");
  return std::max(0.0, sum * (1.0 - late_fraction) + extra_credit);
}

GradeLedgerEntry apply_regrade(const GradeLedgerEntry& original, const std::vector<ProblemPoints>& new_raws,
                               const Config& config) {
  if (original.pass_kind != PassKind::Original) {
    throw MissingOriginalError("regrade of " + original.anon_id + " requires an original-pass entry");
  }
  const double fraction = config.correction_credit_fraction;
  GradeLedgerEntry out = original;
  out.pass_kind = PassKind::Correction;
  for (auto& p : out.problems) {
    const auto it = std::find_if(new_raws.begin(), new_raws.end(),
                                 [&](const ProblemPoints& n) { return n.problem_id == p.problem_id; });
    if (it == new_raws.end()) continue;
    const double gain = std::max(0.0, it->points - p.points);
    // fraction 1 is plain replacement; computing it as orig + gain would
    // round differently from the new value itself
    p.points = fraction == 1.0 && gain > 0.0 ? it->points : p.points + fraction * gain;
  }
  std::vector<double> raws;
  for (const auto& p : out.problems) raws.push_back(p.points);
  out.final_score = compute_final(raws, out.extra_credit, out.late_fraction);
  return out;
}

std::string entry_checksum(const json& record) {
  json copy = record;
  copy.erase("graded_at");
  copy.erase("checksum");
  return sha256_hex(copy.dump());
}

json to_json(const GradeLedgerEntry& e, bool include_sid) {
  json j;
  j["anon_id"] = e.anon_id;
  if (include_sid && e.sid) j["sid"] = *e.sid;
  j["assignment_id"] = e.assignment_id;
  j["pass_kind"] = to_string(e.pass_kind);
  j["problems"] = json::array();
  for (const auto& p : e.problems) j["problems"].push_back({{"problem_id", p.problem_id}, {"points", p.points}});
  j["extra_credit"] = e.extra_credit;
  j["late_fraction"] = e.late_fraction;
  j["final_score"] = e.final_score;
  j["graded_at"] = e.graded_at;
  j["audit_ref"] = e.audit_ref;
  j["checksum"] = entry_checksum(j);
  return j;
}

GradeLedgerEntry ledger_entry_from_json(const json& j) {
  try {
    if (!j.is_object()) throw CorruptRecordError(0, "record is not an object");
    if (j.at("checksum").get<std::string>() != entry_checksum(j)) throw CorruptRecordError(0, "checksum mismatch");
    GradeLedgerEntry e;
    e.anon_id = j.at("anon_id").get<std::string>();
    if (j.contains("sid")) e.sid = j.at("sid").get<std::string>();
    e.assignment_id = j.at("assignment_id").get<std::string>();
    e.pass_kind = pass_kind_from_string(j.at("pass_kind").get<std::string>());
    for (const auto& p : j.at("problems")) {
      e.problems.push_back(ProblemPoints{p.at("problem_id").get<std::string>(), p.at("points").get<double>()});
    }
    e.extra_credit = j.at("extra_credit").get<double>();
    e.late_fraction = j.at("late_fraction").get<double>();
    e.final_score = j.at("final_score").get<double>();
    e.graded_at = j.at("graded_at").get<std::string>();
    e.audit_ref = j.at("audit_ref").get<std::string>();
    return e;
  } catch (const json::exception& ex) {
    throw CorruptRecordError(0, ex.what());
  } catch (const ValidationError& ex) {
    throw CorruptRecordError(0, ex.what());
  }
}

std::vector<GradeLedgerEntry> LedgerContents::latest() const {
  std::map<std::tuple<std::string, std::string, int>, GradeLedgerEntry> last;
  for (const auto& e : entries) {
    last[{e.student_key(), e.assignment_id, static_cast<int>(e.pass_kind)}] = e;
  }
  std::vector<GradeLedgerEntry> out;
  for (auto& [key, e] : last) out.push_back(std::move(e));
  return out;
}

const GradeLedgerEntry* LedgerContents::original_for(std::string_view student_key,
                                                     std::string_view assignment_id) const {
  const GradeLedgerEntry* found = nullptr;
  for (const auto& e : entries) {
    if (e.pass_kind == PassKind::Original && e.student_key() == student_key && e.assignment_id == assignment_id) {
      found = &e;
    }
  }
  return found;
}

namespace {

void append_lines(const std::vector<GradeLedgerEntry>& entries, const fs::path& path, bool include_sid) {
  if (entries.empty()) return;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot open ledger " + path.string());
  for (const auto& e : entries) out << to_json(e, include_sid).dump() << '\n';
  out.flush();
  if (!out) throw Error("write failed on ledger " + path.string());
}

}  // namespace

void persist(const std::vector<GradeLedgerEntry>& entries, const fs::path& path, bool include_sid) {
  append_lines(entries, path, include_sid);
}

LedgerContents load_ledger(const fs::path& path) {
  LedgerContents out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      out.entries.push_back(ledger_entry_from_json(j));
    } catch (const json::exception& ex) {
      out.corrupt.push_back(CorruptRecord{number, ex.what()});
    } catch (const CorruptRecordError& ex) {
      out.corrupt.push_back(CorruptRecord{number, CorruptRecordError(number, ex.what()).what()});
    }
  }
  return out;
}

LedgerPaths LedgerPaths::under(const fs::path& output_dir) {
  return LedgerPaths{output_dir / "ledger" / "identified.jsonl", output_dir / "ledger" / "anonymized.jsonl"};
}

LedgerWriter::LedgerWriter(LedgerPaths paths, std::size_t first_seq)
    : paths_(std::move(paths)), next_seq_(first_seq), thread_([this] { run(); }) {}

LedgerWriter::~LedgerWriter() {
  try {
    close();
  } catch (...) {
  }
}

void LedgerWriter::submit(std::size_t seq, std::optional<GradeLedgerEntry> entry) {
  {
    std::lock_guard lock(mutex_);
    pending_.emplace(seq, std::move(entry));
  }
  cv_.notify_all();
}

void LedgerWriter::close() {
  {
    std::lock_guard lock(mutex_);
    closing_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable()) thread_.join();
}

std::size_t LedgerWriter::written() const {
  std::lock_guard lock(mutex_);
  return written_;
}

void LedgerWriter::run() {
  for (;;) {
    std::vector<GradeLedgerEntry> batch;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [&] { return closing_ || pending_.count(next_seq_) > 0; });
      while (!pending_.empty() && pending_.begin()->first <= next_seq_) {
        auto node = pending_.extract(pending_.begin());
        if (node.key() == next_seq_) ++next_seq_;
        if (node.mapped()) batch.push_back(std::move(*node.mapped()));
      }
      if (batch.empty() && closing_ && pending_.count(next_seq_) == 0) {
        // Anything left is behind a gap; write it in order rather than drop it.
        for (auto& [seq, entry] : pending_) {
          if (entry) batch.push_back(std::move(*entry));
        }
        pending_.clear();
        if (batch.empty()) return;
      }
    }
    append_lines(batch, paths_.identified, true);
    append_lines(batch, paths_.anonymized, false);
    std::lock_guard lock(mutex_);
    written_ += batch.size();
  }
}

std::string format_number(double v) {
  if (v == 0.0) return "0";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

std::string export_scores_csv(const std::vector<GradeLedgerEntry>& entries,
                              const std::vector<std::string>& problem_ids) {
  std::map<std::string, const GradeLedgerEntry*> chosen;
  for (const auto& e : entries) {
    auto& slot = chosen[e.student_key()];
    if (slot == nullptr || e.pass_kind == PassKind::Correction || slot->pass_kind == e.pass_kind) slot = &e;
  }
  std::ostringstream out;
  out << "sid,anon_id,final_score";
  for (const auto& id : problem_ids) out << ',' << csv_field(id);
  out << ",pass_kind\n";
  for (const auto& [key, e] : chosen) {
    out << csv_field(e->sid.value_or("")) << ',' << csv_field(e->anon_id) << ',' << format_number(e->final_score);
    for (const auto& id : problem_ids) {
      out << ',';
      if (const auto* p = e->problem(id)) out << format_number(p->points);
    }
    out << ',' << to_string(e->pass_kind) << '\n';
  }
  return out.str();
}

void export_scores(const std::vector<GradeLedgerEntry>& entries, const std::vector<std::string>& problem_ids,
                   const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << export_scores_csv(entries, problem_ids);
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace lata
