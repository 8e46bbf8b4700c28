#include <doctest.h>

#include <json.hpp>

#include <set>

#include "corpus.hpp"
#include "fake_model.hpp"
#include "lata/config.hpp"
#include "lata/ingest.hpp"
#include "lata/ledger.hpp"
#include "lata/pipeline.hpp"
#include "test_util.hpp"

using namespace lata;
using nlohmann::json;
using testutil::TempDir;
namespace fs = std::filesystem;

namespace {

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "lata");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  return run_cli(static_cast<int>(args.size()), argv.data());
}

fs::path write_config(const fs::path& dir, const std::string& endpoint, double correction_fraction = 1.0) {
  Config c;
  c.endpoint_url = endpoint;
  c.compiler = testutil::fake_compiler();
  c.compile_timeout = 20;
  c.llm_timeout = 5;
  c.correction_credit_fraction = correction_fraction;
  c.worker_count = 3;
  testutil::write_file(dir / "lata.yml", to_yaml(c));
  return dir / "lata.yml";
}

std::vector<std::string> common(const fs::path& cfg, const corpus::Corpus& c, const fs::path& out) {
  return {"--config", cfg.string(), "--assignment", c.assignment_dir.string(), "--out", out.string()};
}

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

// Files below root, minus wall-clock measurements.
std::map<std::string, std::string> comparable(const fs::path& root) {
  auto snap = testutil::snapshot(root);
  snap.erase("timings.json");
  for (auto& [name, text] : snap) {
    if (name.rfind("ledger/", 0) != 0) continue;
    std::string out;
    std::size_t at = 0;
    while (at < text.size()) {
      const auto nl = text.find('\n', at);
      json j = json::parse(text.substr(at, nl - at));
      j.erase("graded_at");
      out += j.dump() + "\n";
      at = nl == std::string::npos ? text.size() : nl + 1;
    }
    text = out;
  }
  return snap;
}

json read_json(const fs::path& p) { return json::parse(testutil::read_file(p)); }

}  // namespace

TEST_CASE("full run records, then replays to the same tree") {
  TempDir d;
  const corpus::Corpus c = corpus::write_corpus(d.path());
  fake::FakeModelServer server;
  const fs::path cfg = write_config(d.path(), server.url());
  const fs::path transcript = d / "transcript.ndjson";

  REQUIRE(cli(with({"run", "--export", c.export_dir.string(), "--record-transcript", transcript.string()},
                   common(cfg, c, d / "recorded"))) == 0);
  const fs::path down = write_config(d / "offline", "http://127.0.0.1:9");
  REQUIRE(cli(with({"run", "--export", c.export_dir.string(), "--mock-transcript", transcript.string()},
                   common(down, c, d / "replayed"))) == 0);

  const json summary = read_json(d / "replayed/summary.json");
  CHECK(summary["counts"]["submissions"] == 20);
  CHECK(summary["counts"]["graded"].get<int>() + summary["counts"]["flagged_manual"].get<int>() == 20);
  CHECK(summary["counts"]["endpoint_failures"] == 0);

  // Independent recount: one student artifact (PDF or text) per submission.
  std::set<std::string> stems;
  std::size_t artifacts = 0;
  for (const auto& e : fs::directory_iterator(d / "replayed/reports")) {
    const auto ext = e.path().extension();
    if (ext == ".pdf" || ext == ".txt") {
      ++artifacts;
      stems.insert(e.path().stem().string());
    }
  }
  CHECK(artifacts == 20);
  CHECK(stems.size() == 20);
  std::size_t graded = 0;
  for (const auto& row : summary["submissions"]) graded += row["status"] == "graded";
  CHECK(graded == summary["counts"]["graded"].get<std::size_t>());

  const auto scores = testutil::read_file(d / "replayed/scores.csv");
  CHECK(scores.rfind("sid,anon_id,final_score,P1,P2,pass_kind\n", 0) == 0);
  CHECK(scores.find("932001200,") != std::string::npos);

  CHECK(comparable(d / "recorded") == comparable(d / "replayed"));
}

TEST_CASE("missing assignment package fails before writing") {
  TempDir d;
  const corpus::Corpus c = corpus::write_corpus(d.path());
  fs::remove(c.assignment_dir / "assignment.yml");
  const fs::path cfg = write_config(d.path(), "http://127.0.0.1:9");
  CHECK(cli(with({"run", "--export", c.export_dir.string()}, common(cfg, c, d / "out"))) == 1);
  CHECK(!fs::exists(d / "out"));
  CHECK(cli({"run", "--bogus-flag"}) == 1);
}

TEST_CASE("invalid config exits 1") {
  TempDir d;
  const corpus::Corpus c = corpus::write_corpus(d.path());
  testutil::write_file(d / "bad.yml", "grading:\n  anonymize: \"yes\"\n");
  CHECK(cli(with({"run", "--export", c.export_dir.string()},
                 {"--config", (d / "bad.yml").string(), "--assignment", c.assignment_dir.string(), "--out",
                  (d / "out").string()})) == 1);
  CHECK(!fs::exists(d / "out"));
  CHECK(cli({"validate", "--config", (d / "bad.yml").string()}) == 1);
}

TEST_CASE("endpoint down while grading is needed exits 2") {
  TempDir d;
  const corpus::Corpus c = corpus::write_corpus(d.path());
  const fs::path cfg = write_config(d.path(), "http://127.0.0.1:9");
  CHECK(cli(with({"run", "--export", c.export_dir.string()}, common(cfg, c, d / "out"))) == 2);
  const json summary = read_json(d / "out/summary.json");
  CHECK(summary["counts"]["endpoint_failures"].get<int>() > 0);
  CHECK(summary["counts"]["graded"].get<int>() + summary["counts"]["flagged_manual"].get<int>() == 20);
}

TEST_CASE("staged execution equals a full run") {
  TempDir d;
  const corpus::Corpus c = corpus::write_corpus(d.path());
  fake::FakeModelServer server;
  const fs::path cfg = write_config(d.path(), server.url());
  REQUIRE(cli(with({"run", "--export", c.export_dir.string()}, common(cfg, c, d / "full"))) == 0);

  const auto staged = common(cfg, c, d / "staged");
  REQUIRE(cli(with({"ingest", "--export", c.export_dir.string()}, staged)) == 0);
  REQUIRE(cli(with({"segment"}, staged)) == 0);
  CHECK(testutil::snapshot(d / "staged/stages") == [&] {
    auto full = testutil::snapshot(d / "full/stages");
    for (auto it = full.begin(); it != full.end();) it = it->first.rfind("grade/", 0) == 0 ? full.erase(it) : ++it;
    return full;
  }());
  REQUIRE(cli(with({"grade"}, staged)) == 0);
  REQUIRE(cli(with({"report"}, staged)) == 0);
  CHECK(comparable(d / "staged") == comparable(d / "full"));
}

TEST_CASE("grade stage without segment artifacts exits 1") {
  TempDir d;
  const corpus::Corpus c = corpus::write_corpus(d.path());
  const fs::path cfg = write_config(d.path(), "http://127.0.0.1:9");
  const auto args = common(cfg, c, d / "out");
  REQUIRE(cli(with({"ingest", "--export", c.export_dir.string()}, args)) == 0);
  CHECK(cli(with({"grade"}, args)) == 1);
  CHECK(!fs::exists(d / "out/stages/grade"));
  CHECK(cli(with({"segment"}, common(cfg, c, d / "empty"))) == 1);
}

TEST_CASE("hand-edited verdicts flow into the report") {
  TempDir d;
  const corpus::Corpus c = corpus::write_corpus(d.path());
  fake::FakeModelServer server;
  const fs::path cfg = write_config(d.path(), server.url());
  const auto args = common(cfg, c, d / "out");
  REQUIRE(cli(with({"ingest", "--export", c.export_dir.string()}, args)) == 0);
  REQUIRE(cli(with({"segment"}, args)) == 0);
  REQUIRE(cli(with({"grade"}, args)) == 0);

  // Student 0 fails P1 item b under the planned pattern.
  const corpus::Student& s = c.students[0];
  REQUIRE(!corpus::planned_pass(0, "P1", "b"));
  const std::string anon = anonymize_id(s.sid, s.internal_id);
  const fs::path grade_file = d / "out/stages/grade" / (anon + ".json");
  json g = read_json(grade_file);
  bool edited = false;
  for (auto& p : g["problems"]) {
    if (p["problem_id"] != "P1") continue;
    for (auto& v : p["verdicts"]) {
      if (v["item_id"] == "b") {
        v["pass"] = true;
        v["student_hint"] = "Regraded by hand after office hours.";
        edited = true;
      }
    }
  }
  REQUIRE(edited);
  testutil::write_file(grade_file, g.dump(2));
  REQUIRE(cli(with({"report"}, args)) == 0);

  const std::string tex = testutil::read_file(d / "out/reports" / (s.sid + ".tex"));
  CHECK(tex.find("Regraded by hand after office hours.") != std::string::npos);
  const LedgerContents ledger = load_ledger(d / "out/ledger/identified.jsonl");
  bool found = false;
  for (const auto& e : ledger.entries) {
    if (e.sid != s.sid) continue;
    found = true;
    CHECK(e.problem("P1")->points == 6);
  }
  CHECK(found);
}

TEST_CASE("corrections pass") {
  TempDir d;
  const corpus::Corpus c = corpus::write_corpus(d.path());
  fake::FakeModelServer server;
  const fs::path cfg = write_config(d.path(), server.url(), 0.5);
  const auto args = common(cfg, c, d / "out");
  REQUIRE(cli(with({"run", "--export", c.export_dir.string()}, args)) == 0);
  const auto before = testutil::snapshot(d / "out");
  const LedgerContents original = load_ledger(d / "out/ledger/identified.jsonl");

  const corpus::Corpus fixes = corpus::write_corrections(d.path(), c, {0, 1}, true);
  REQUIRE(cli(with({"regrade", "--export", fixes.export_dir.string()}, args)) == 0);

  for (const auto& [name, bytes] : before) {
    const std::string now = testutil::read_file(d / "out" / name);
    if (name.rfind("ledger/", 0) == 0) {
      CHECK(now.substr(0, bytes.size()) == bytes);
    } else {
      CHECK_MESSAGE(now == bytes, name);
    }
  }
  CHECK(fs::exists(d / "out/corrections/summary.json"));

  const LedgerContents after = load_ledger(d / "out/ledger/identified.jsonl");
  for (std::size_t i : {0u, 1u}) {
    const std::string& sid = c.students[i].sid;
    const GradeLedgerEntry* o = original.original_for(sid, "hw3");
    REQUIRE(o);
    const GradeLedgerEntry* corr = nullptr;
    for (const auto& e : after.entries) {
      if (e.sid == sid && e.pass_kind == PassKind::Correction) corr = &e;
    }
    REQUIRE(corr);
    for (const char* pid : {"P1", "P2"}) {
      const double orig = o->problem(pid)->points;
      CHECK(corr->problem(pid)->points == doctest::Approx(orig + 0.5 * (6 - orig)));
    }
    CHECK(corr->late_fraction == o->late_fraction);
    CHECK(corr->extra_credit == o->extra_credit);
  }

  const json summary = read_json(d / "out/corrections/summary.json");
  CHECK(summary["counts"]["submissions"] == 3);
  CHECK(summary["counts"]["flagged_manual"] == 1);
  const std::string csv = testutil::read_file(d / "out/corrections/scores.csv");
  CHECK(csv.find(c.students[0].sid) != std::string::npos);
  CHECK(csv.find("correction") != std::string::npos);
  CHECK(csv.find("932009999") == std::string::npos);

  // A second correction for the same students is refused.
  CHECK(cli(with({"regrade", "--export", fixes.export_dir.string()},
                 common(cfg, c, d / "out"))) == 0);
  const json again = read_json(d / "out/corrections/summary.json");
  CHECK(again["counts"]["graded"] == 0);
}

TEST_CASE("regrade without an original ledger exits 1") {
  TempDir d;
  const corpus::Corpus c = corpus::write_corpus(d.path());
  const fs::path cfg = write_config(d.path(), "http://127.0.0.1:9");
  CHECK(cli(with({"regrade", "--export", c.export_dir.string()}, common(cfg, c, d / "out"))) == 1);
}
