#include "lata/ingest.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

#include "lata/config.hpp"
#include "lata/digest.hpp"
#include "lata/errors.hpp"

namespace lata {

namespace fs = std::filesystem;

std::chrono::seconds SubmissionMetadata::lateness() const {
  const auto d = submitted_at.utc - due_at.utc;
  return d.count() > 0 ? std::chrono::seconds{d} : std::chrono::seconds{0};
}

std::string anonymize_id(std::string_view sid, std::string_view internal_id) {
  std::string joined;
  joined.reserve(sid.size() + internal_id.size());
  joined.append(sid);
  joined.append(internal_id);
  return sha256_hex(joined).substr(0, 8);
}

bool internal_id_less(std::string_view a, std::string_view b) {
  auto numeric = [](std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  if (numeric(a) && numeric(b)) {
    auto strip = [](std::string_view s) {
      while (s.size() > 1 && s.front() == '0') s.remove_prefix(1);
      return s;
    };
    const auto sa = strip(a), sb = strip(b);
    if (sa.size() != sb.size()) return sa.size() < sb.size();
    if (sa != sb) return sa < sb;
  }
  return a < b;
}

std::string to_valid_utf8(std::string_view in, std::size_t* replaced) {
  std::string out;
  out.reserve(in.size());
  std::size_t bad = 0;
  std::size_t i = 0;
  while (i < in.size()) {
    const auto c = static_cast<unsigned char>(in[i]);
    std::size_t len = 0;
    std::uint32_t min_cp = 0;
    if (c < 0x80) {
      out.push_back(in[i++]);
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2, min_cp = 0x80;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3, min_cp = 0x800;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4, min_cp = 0x10000;
    }
    bool ok = len != 0 && i + len <= in.size();
    std::uint32_t cp = len ? (c & (0x7F >> len)) : 0;
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto cc = static_cast<unsigned char>(in[i + k]);
      if ((cc & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (ok && (cp < min_cp || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))) ok = false;
    if (ok) {
      out.append(in.substr(i, len));
      i += len;
    } else {
      out.append("\xEF\xBF\xBD");
      ++bad;
      ++i;
    }
  }
  if (replaced) *replaced = bad;
  return out;
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trimmed(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

struct MetadataRecord {
  std::string directory;
  std::string internal_id;
  std::string sid;
  std::string name;
  std::string email;
  SubmissionMetadata meta;
};

std::string scalar(const YAML::Node& node, const std::string& key, const std::string& where) {
  const YAML::Node v = node[key];
  if (!v || !v.IsScalar()) throw ValidationError(where + "." + key, "missing or not a scalar");
  return v.Scalar();
}

std::string scalar_or(const YAML::Node& node, const std::string& key, std::string fallback) {
  const YAML::Node v = node[key];
  return v && v.IsScalar() ? v.Scalar() : fallback;
}

Timestamp timestamp_at(const std::string& text, const std::string& key) {
  try {
    return parse_timestamp(text);
  } catch (const ParseError& e) {
    throw ValidationError(key, e.what());
  }
}

// Our fixture layout: assignment_id, due_at, submissions: [ {directory, ...} ].
std::vector<MetadataRecord> parse_fixture_metadata(const YAML::Node& root) {
  const std::string assignment_id = scalar(root, "assignment_id", "metadata");
  const std::string default_due = scalar(root, "due_at", "metadata");
  const YAML::Node subs = root["submissions"];
  if (!subs || !subs.IsSequence()) throw ValidationError("metadata.submissions", "expected a list");
  std::vector<MetadataRecord> out;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    const YAML::Node n = subs[i];
    const std::string where = "metadata.submissions[" + std::to_string(i) + "]";
    MetadataRecord r;
    r.directory = scalar(n, "directory", where);
    r.internal_id = scalar(n, "internal_id", where);
    r.sid = scalar(n, "sid", where);
    r.name = scalar_or(n, "name", "");
    r.email = scalar_or(n, "email", "");
    r.meta.assignment_id = assignment_id;
    r.meta.submitted_at = timestamp_at(scalar(n, "submitted_at", where), where + ".submitted_at");
    r.meta.due_at = timestamp_at(scalar_or(n, "due_at", default_due), where + ".due_at");
    try {
      r.meta.submission_count = std::stoi(scalar_or(n, "submission_count", "1"));
      r.meta.extra_credit = std::stod(scalar_or(n, "extra_credit", "0"));
    } catch (const std::exception&) {
      throw ValidationError(where, "submission_count / extra_credit must be numeric");
    }
    if (r.meta.submission_count < 1) throw ValidationError(where + ".submission_count", "must be >= 1");
    if (r.meta.extra_credit < 0) throw ValidationError(where + ".extra_credit", "must be >= 0");
    out.push_back(std::move(r));
  }
  return out;
}

// Adapter for the platform's native layout. Its keys are Ruby symbols, so
// a line like ":sid: '123'" parses as the key ":sid".
//   submission_<id>: { ":submitters": [{":name", ":sid", ":email"}], ":created_at", ":due_at" }
std::vector<MetadataRecord> parse_native_metadata(const YAML::Node& root, const std::string& assignment_id,
                                                  std::vector<std::string>& warnings) {
  std::vector<MetadataRecord> out;
  for (const auto& kv : root) {
    const std::string key = kv.first.Scalar();
    if (key.rfind("submission_", 0) != 0) continue;
    const YAML::Node n = kv.second;
    const YAML::Node submitters = n[":submitters"];
    if (!submitters || !submitters.IsSequence() || submitters.size() == 0) {
      throw ValidationError("metadata." + key + ".:submitters", "expected a non-empty list");
    }
    if (submitters.size() > 1) warnings.push_back(key + ": group submission, using the first submitter");
    const YAML::Node who = submitters[0];
    MetadataRecord r;
    r.directory = key;
    r.internal_id = key.substr(std::string("submission_").size());
    r.sid = scalar(who, ":sid", "metadata." + key);
    r.name = scalar_or(who, ":name", "");
    r.email = scalar_or(who, ":email", "");
    r.meta.assignment_id = assignment_id;
    r.meta.submitted_at = timestamp_at(scalar(n, ":created_at", "metadata." + key), "metadata." + key);
    const std::string due = scalar_or(n, ":due_at", "");
    if (due.empty()) {
      warnings.push_back(key + ": no due date in export; lateness not applied");
      r.meta.due_at = r.meta.submitted_at;
    } else {
      r.meta.due_at = timestamp_at(due, "metadata." + key + ".:due_at");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

IngestResult load_export(const fs::path& export_dir, const Config&) {
  if (!fs::is_directory(export_dir)) throw EmptyExportError("export directory does not exist: " + export_dir.string());
  const fs::path meta_path = export_dir / kMetadataFileName;
  if (!fs::exists(meta_path)) throw MissingMetadataError("missing " + meta_path.string());

  IngestResult result;
  YAML::Node root;
  try {
    root = YAML::LoadFile(meta_path.string());
  } catch (const YAML::Exception& e) {
    throw ParseError(meta_path.string() + ": " + e.what());
  }
  if (!root.IsMap()) throw ValidationError("metadata", "expected a mapping at top level");
  const std::vector<MetadataRecord> records =
      root["submissions"] ? parse_fixture_metadata(root)
                          : parse_native_metadata(root, export_dir.filename().string(), result.warnings);

  std::map<std::string, const MetadataRecord*> by_dir;
  for (const auto& r : records) {
    if (!by_dir.emplace(r.directory, &r).second) {
      throw DuplicateIdError("metadata", "duplicate directory '" + r.directory + "'");
    }
  }

  std::vector<fs::path> student_dirs;
  for (const auto& entry : fs::directory_iterator(export_dir)) {
    if (entry.is_directory()) student_dirs.push_back(entry.path());
  }
  if (student_dirs.empty()) throw EmptyExportError("no student directories in " + export_dir.string());
  std::sort(student_dirs.begin(), student_dirs.end());

  std::map<std::string, bool> seen;
  for (const auto& dir : student_dirs) {
    const std::string dir_name = dir.filename().string();
    const auto it = by_dir.find(dir_name);
    if (it == by_dir.end()) {
      result.warnings.push_back(dir_name + ": no metadata entry; skipped");
      continue;
    }
    seen[dir_name] = true;
    const MetadataRecord& r = *it->second;
    StudentSubmission sub;
    sub.internal_id = r.internal_id;
    sub.sid = r.sid;
    sub.name = r.name;
    sub.email = r.email;
    sub.directory = dir_name;
    sub.metadata = r.meta;
    sub.anon_id = anonymize_id(r.sid, r.internal_id);

    std::vector<fs::path> tex_files;
    for (const auto& f : fs::directory_iterator(dir)) {
      if (f.is_regular_file() && f.path().extension() == ".tex") tex_files.push_back(f.path());
    }
    // Largest file wins; ties broken by name for determinism.
    std::sort(tex_files.begin(), tex_files.end(), [](const fs::path& a, const fs::path& b) {
      const auto sa = fs::file_size(a), sb = fs::file_size(b);
      return sa != sb ? sa > sb : a.filename() < b.filename();
    });
    if (tex_files.empty()) {
      sub.ungradeable = "ungradeable: no source";
    } else {
      if (tex_files.size() > 1) {
        sub.warnings.push_back("multiple .tex files; using largest '" + tex_files.front().filename().string() + "'");
      }
      sub.tex_file = tex_files.front().filename().string();
      std::size_t replaced = 0;
      sub.tex_source = to_valid_utf8(read_file(tex_files.front()), &replaced);
      if (replaced > 0) {
        sub.warnings.push_back(std::to_string(replaced) + " invalid UTF-8 byte(s) replaced with U+FFFD");
      }
    }
    result.submissions.push_back(std::move(sub));
  }
  for (const auto& r : records) {
    if (!seen.count(r.directory)) result.warnings.push_back(r.directory + ": listed in metadata but not present");
  }
  std::sort(result.submissions.begin(), result.submissions.end(),
            [](const StudentSubmission& a, const StudentSubmission& b) {
              return internal_id_less(a.internal_id, b.internal_id);
            });
  return result;
}

std::optional<IdentityMatch> find_identity(const StudentSubmission& sub, std::string_view text) {
  const std::string haystack = lower(text);
  std::vector<std::pair<std::string, std::string>> needles = {
      {"sid", trimmed(sub.sid)}, {"name", trimmed(sub.name)}, {"email", trimmed(sub.email)}};
  if (const auto at = sub.email.find('@'); at != std::string::npos) {
    needles.emplace_back("email_local", trimmed(std::string_view(sub.email).substr(0, at)));
  }
  for (const auto& [field, value] : needles) {
    if (value.size() < 4) continue;
    if (haystack.find(lower(value)) != std::string::npos) return IdentityMatch{field};
  }
  return std::nullopt;
}

LlmView llm_view(const StudentSubmission& sub, std::string macro_block, std::string body, const Config& config) {
  if (config.anonymize) {
    for (std::string_view part : {std::string_view(macro_block), std::string_view(body)}) {
      if (auto hit = find_identity(sub, part)) {
        throw IdentityLeakError(hit->field, "submission " + sub.anon_id + ": identity field '" + hit->field +
                                                "' appears in LLM-facing text; flagged for manual handling");
      }
    }
  }
  LlmView view;
  view.anon_id = sub.anon_id;
  if (!config.anonymize) view.sid = sub.sid;
  view.macro_block = std::move(macro_block);
  view.body = std::move(body);
  return view;
}

nlohmann::json to_json(const LlmView& view) {
  nlohmann::json j;
  j["anon_id"] = view.anon_id;
  if (view.sid) j["sid"] = *view.sid;
  j["macro_block"] = view.macro_block;
  j["body"] = view.body;
  return j;
}

nlohmann::json to_json(const StudentSubmission& s) {
  nlohmann::json j;
  j["internal_id"] = s.internal_id;
  j["sid"] = s.sid;
  j["name"] = s.name;
  j["email"] = s.email;
  j["directory"] = s.directory;
  j["tex_file"] = s.tex_file;
  j["anon_id"] = s.anon_id;
  j["metadata"] = {{"assignment_id", s.metadata.assignment_id},
                   {"submitted_at", format_timestamp(s.metadata.submitted_at)},
                   {"due_at", format_timestamp(s.metadata.due_at)},
                   {"submission_count", s.metadata.submission_count},
                   {"extra_credit", s.metadata.extra_credit}};
  j["ungradeable"] = s.ungradeable ? nlohmann::json(*s.ungradeable) : nlohmann::json(nullptr);
  j["warnings"] = s.warnings;
  j["tex_source"] = s.tex_source;
  return j;
}

StudentSubmission submission_from_json(const nlohmann::json& j) {
  StudentSubmission s;
  s.internal_id = j.at("internal_id").get<std::string>();
  s.sid = j.at("sid").get<std::string>();
  s.name = j.at("name").get<std::string>();
  s.email = j.at("email").get<std::string>();
  s.directory = j.at("directory").get<std::string>();
  s.tex_file = j.at("tex_file").get<std::string>();
  s.anon_id = j.at("anon_id").get<std::string>();
  const auto& m = j.at("metadata");
  s.metadata.assignment_id = m.at("assignment_id").get<std::string>();
  s.metadata.submitted_at = parse_timestamp(m.at("submitted_at").get<std::string>());
  s.metadata.due_at = parse_timestamp(m.at("due_at").get<std::string>());
  s.metadata.submission_count = m.at("submission_count").get<int>();
  s.metadata.extra_credit = m.at("extra_credit").get<double>();
  if (!j.at("ungradeable").is_null()) s.ungradeable = j.at("ungradeable").get<std::string>();
  s.warnings = j.at("warnings").get<std::vector<std::string>>();
  s.tex_source = j.at("tex_source").get<std::string>();
  return s;
}

nlohmann::json ingest_report(const IngestResult& result) {
  nlohmann::json j;
  j["submission_count"] = result.submissions.size();
  j["warnings"] = result.warnings;
  j["ungradeable"] = nlohmann::json::array();
  j["submission_warnings"] = nlohmann::json::array();
  for (const auto& s : result.submissions) {
    if (s.ungradeable) {
      j["ungradeable"].push_back({{"anon_id", s.anon_id}, {"internal_id", s.internal_id}, {"reason", *s.ungradeable}});
    }
    for (const auto& w : s.warnings) {
      j["submission_warnings"].push_back({{"anon_id", s.anon_id}, {"internal_id", s.internal_id}, {"warning", w}});
    }
  }
  return j;
}

}  // namespace lata
