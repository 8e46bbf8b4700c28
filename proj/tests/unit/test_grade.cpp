#include <doctest.h>

#include <json.hpp>
#include <random>

#include "corpus.hpp"
#include "fake_model.hpp"
#include "lata/config.hpp"
#include "lata/errors.hpp"
#include "lata/grade.hpp"
#include "lata/llm.hpp"
#include "test_util.hpp"

using namespace lata;
using nlohmann::json;
using testutil::TempDir;
using testutil::write_file;

namespace {

const char* kOneProblem =
    "assignment_id: q\n"
    "segmentation: {problem_ids: [P1]}\n"
    "problems:\n"
    "  - id: P1\n"
    "    rubric:\n"
    "      - {id: a, points: 2, criterion: first}\n"
    "      - {id: b, points: 2, criterion: second}\n"
    "      - {id: c, points: 2, criterion: third}\n";

ProblemEntry fixture_problem() {
  ProblemEntry p;
  p.problem_id = "P1";
  p.reference_solution_tex = corpus::reference_solutions()[0];
  p.rubric.items = {{"a", 2, "names a convergence test"}, {"b", 2, "computes the limiting ratio"}, {"c", 2, "states the sum"}};
  return p;
}

std::string verdict_reply(const std::vector<bool>& pass, const std::vector<std::string>& hints = {}) {
  json v = json::array();
  const char* ids[] = {"a", "b", "c", "d", "e"};
  for (std::size_t i = 0; i < pass.size(); ++i) {
    v.push_back({{"item_id", ids[i]},
                 {"pass", static_cast<bool>(pass[i])},
                 {"audit_reasoning", "reason"},
                 {"student_hint", i < hints.size() ? hints[i] : "think about it"}});
  }
  return json{{"verdicts", v}}.dump();
}

// Brute force over all substrings after collapsing and trimming whitespace.
std::size_t lcs_oracle(std::string a, std::string b) {
  auto collapse = [](const std::string& s) {
    std::string out;
    for (char c : s) {
      const bool ws = std::isspace(static_cast<unsigned char>(c));
      if (ws && !out.empty() && out.back() == ' ') continue;
      out += ws ? ' ' : c;
    }
    return out;
  };
  auto trim = [](std::string s) {
    if (!s.empty() && s.front() == ' ') s.erase(0, 1);
    if (!s.empty() && s.back() == ' ') s.pop_back();
    return s;
  };
  a = trim(collapse(a));
  b = trim(collapse(b));
  std::size_t best = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t len = best + 1; i + len <= a.size(); ++len) {
      if (b.find(a.substr(i, len)) == std::string::npos) break;
      best = len;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("fixture assignment loads with twelve points") {
  TempDir d;
  corpus::write_assignment(d.path());
  const AssignmentPackage a = load_assignment(d.path());
  CHECK(a.assignment_id == "hw3");
  CHECK(a.problems.size() == 2);
  CHECK(a.total_points() == 12.0);
  CHECK(a.problem("P2").rubric.total() == 6.0);
  CHECK(a.problem("P1").reference_solution_tex.find("ratio test") != std::string::npos);
  CHECK(a.segmentation.problem_ids == std::vector<std::string>{"P1", "P2"});
}

TEST_CASE("assignment validation") {
  auto load_with = [](const std::string& yaml, bool with_solution = true) {
    TempDir d;
    write_file(d / "assignment.yml", yaml);
    if (with_solution) write_file(d / "solutions/P1.tex", "ref");
    return load_assignment(d.path());
  };
  CHECK_NOTHROW(load_with(kOneProblem));
  std::string zero = kOneProblem;
  zero.replace(zero.find("points: 2"), 9, "points: 0");
  try {
    load_with(zero);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.key().find("points") != std::string::npos);
  }
  std::string cross = kOneProblem;
  cross.replace(cross.find("[P1]"), 4, "[P2]");
  CHECK_THROWS_AS(load_with(cross), ValidationError);
  std::string dup = kOneProblem;
  dup.replace(dup.find("id: b"), 5, "id: a");
  CHECK_THROWS_AS(load_with(dup), DuplicateIdError);
  CHECK_THROWS_AS(load_with(kOneProblem, false), ValidationError);
  CHECK_THROWS_AS(load_with(std::string(kOneProblem) + "rubrics: 1\n"), UnknownKeyError);
  TempDir empty;
  CHECK_THROWS(load_assignment(empty.path()));
}

TEST_CASE("grading schema enumerates exactly the rubric items") {
  const ProblemEntry p = fixture_problem();
  const llm::Schema s = grading_schema(p.rubric);
  CHECK(s.accepts(json::parse(verdict_reply({true, false, true}))));
  CHECK(!s.accepts(json::parse(verdict_reply({true, false}))));
  CHECK(!s.accepts(json::parse(verdict_reply({true, false, true, true}))));
  const json desc = s.describe();
  CHECK(desc.dump().find("\"a\"") != std::string::npos);

  ProblemSegment seg{"P1", "work", {0, 4}, SegmentMethod::Regex};
  const llm::ChatRequest req = build_grade_prompt(seg, "", p, Config{}, {"abcd1234", false});
  REQUIRE(req.response_schema.has_value());
  CHECK(req.response_schema->describe() == desc);
  CHECK(req.temperature == 0.0);
}

TEST_CASE("suspicious input raises the warning") {
  const ProblemEntry p = fixture_problem();
  ProblemSegment seg{"P1", "work", {0, 4}, SegmentMethod::Regex};
  const llm::ChatRequest calm = build_grade_prompt(seg, "", p, Config{}, {"abcd1234", false});
  const llm::ChatRequest alert = build_grade_prompt(seg, "", p, Config{}, {"abcd1234", true});
  CHECK(calm.system_text.find("WARNING") == std::string::npos);
  CHECK(alert.system_text.find("WARNING") != std::string::npos);
  CHECK(alert.user_text == calm.user_text);
}

TEST_CASE("prompt carries the label and no identity") {
  const ProblemEntry p = fixture_problem();
  ProblemSegment seg{"P1", "my work ok:a", {0, 12}, SegmentMethod::Regex};
  const llm::ChatRequest req = build_grade_prompt(seg, "\\newcommand{\\R}{\\mathbb{R}}", p, Config{}, {"305f4f2a", false});
  CHECK(req.user_text.find("Submission: 305f4f2a") != std::string::npos);
  CHECK(req.user_text.find("932001234") == std::string::npos);
  CHECK(fake::fenced_after(req.user_text, "Student work:") == "my work ok:a");
  CHECK(fake::fenced_after(req.user_text, "Student macro definitions:") == "\\newcommand{\\R}{\\mathbb{R}}");
}

TEST_CASE("score is the sum of passed items") {
  const ProblemEntry p = fixture_problem();
  llm::LlmEndpoint ep(fake::ScriptedBackend::queue({verdict_reply({true, false, true})}), 1);
  ProblemSegment seg{"P1", "work", {0, 4}, SegmentMethod::Regex};
  const ProblemGrade g = grade_problem(&seg, "", p, ep, Config{}, {"x", false});
  CHECK(g.raw_points == 4.0);
  CHECK(g.flag == ProblemFlag::None);
  REQUIRE(g.verdicts.size() == 3);
  CHECK(g.verdicts[1].pass == false);
  CHECK(g.segment_method == SegmentMethod::Regex);
}

TEST_CASE("verdicts are reordered to rubric order") {
  const ProblemEntry p = fixture_problem();
  json v = json::parse(verdict_reply({true, false, true}));
  std::swap(v["verdicts"][0], v["verdicts"][2]);
  llm::LlmEndpoint ep(fake::ScriptedBackend::queue({v.dump()}), 1);
  ProblemSegment seg{"P1", "work", {0, 4}, SegmentMethod::Regex};
  const ProblemGrade g = grade_problem(&seg, "", p, ep, Config{}, {"x", false});
  CHECK(g.verdicts[0].item_id == "a");
  CHECK(g.verdicts[2].item_id == "c");
}

TEST_CASE("hint quoting the reference is replaced") {
  const ProblemEntry p = fixture_problem();
  const std::string leak = "As the answer key says: " + p.reference_solution_tex.substr(13, 40);
  REQUIRE(lcs_oracle(leak, p.reference_solution_tex) >= 40);
  llm::LlmEndpoint ep(fake::ScriptedBackend::queue({verdict_reply({false, true, true}, {leak, "fine", "good"})}), 1);
  ProblemSegment seg{"P1", "work", {0, 4}, SegmentMethod::Regex};
  const Config cfg;
  const ProblemGrade g = grade_problem(&seg, "", p, ep, cfg, {"x", false});
  CHECK(g.verdicts[0].hint_replaced);
  CHECK(g.verdicts[0].student_hint != leak);
  CHECK(g.audit.leak_events.size() == 1);
  CHECK(!g.verdicts[1].hint_replaced);
  for (const auto& v : g.verdicts) {
    CHECK(lcs_oracle(v.student_hint, p.reference_solution_tex) < static_cast<std::size_t>(cfg.hint_leak_min_run));
  }
}

TEST_CASE("longest common run matches the brute force oracle") {
  std::mt19937 rng(31);
  std::uniform_int_distribution<int> len(0, 30), ch(0, 5);
  const char alphabet[] = {'a', 'b', 'c', ' ', '\n', 'd'};
  for (int i = 0; i < 1000; ++i) {
    std::string a, b;
    for (int n = len(rng); n > 0; --n) a += alphabet[ch(rng)];
    for (int n = len(rng); n > 0; --n) b += alphabet[ch(rng)];
    REQUIRE(longest_common_run(a, b) == lcs_oracle(a, b));
  }
  CHECK(longest_common_run("x  y", "x\ny") == 3);
}

TEST_CASE("missing or blank segment fails every item without a call") {
  const ProblemEntry p = fixture_problem();
  auto log = std::make_shared<fake::CallLog>();
  auto ep = fake::scripted_endpoint(fake::reply_for, log);
  const ProblemGrade none = grade_problem(nullptr, "", p, *ep, Config{}, {"x", false});
  CHECK(none.raw_points == 0.0);
  CHECK(none.flag == ProblemFlag::NoWorkFound);
  REQUIRE(none.verdicts.size() == 3);
  for (const auto& v : none.verdicts) CHECK(!v.pass);
  ProblemSegment blank{"P1", "  \n\t", {0, 4}, SegmentMethod::Regex};
  CHECK(grade_problem(&blank, "", p, *ep, Config{}, {"x", false}).flag == ProblemFlag::NoWorkFound);
  CHECK(log->size() == 0);
}

TEST_CASE("model failure flags the problem for a human") {
  const ProblemEntry p = fixture_problem();
  llm::LlmEndpoint ep(fake::ScriptedBackend::queue({"garbage"}), 1);
  ProblemSegment seg{"P1", "work", {0, 4}, SegmentMethod::Regex};
  const ProblemGrade g = grade_problem(&seg, "", p, ep, Config{}, {"x", false});
  CHECK(g.flag == ProblemFlag::NeedsHumanGrading);
  CHECK(g.llm_failure == LlmFailure::Schema);
  CHECK(g.verdicts.empty());
  CHECK(g.audit.attempts.size() == 3);
  CHECK(under_review(g.flag));
}

TEST_CASE("score_verdicts against a brute force sum") {
  std::mt19937 rng(41);
  std::uniform_int_distribution<int> n_items(1, 8), pts(1, 20), coin(0, 1);
  for (int i = 0; i < 1000; ++i) {
    Rubric r;
    std::vector<ItemVerdict> vs;
    double expect = 0;
    for (int k = n_items(rng); k > 0; --k) {
      const double points = pts(rng) / 2.0;
      r.items.push_back({"i" + std::to_string(k), points, "c"});
      const bool pass = coin(rng);
      vs.push_back({"i" + std::to_string(k), pass, "", "", "", false});
      if (pass) expect += points;
    }
    std::shuffle(vs.begin(), vs.end(), rng);
    REQUIRE(score_verdicts(r, vs) == expect);
    if (vs.size() > 1) {
      auto dup = vs;
      dup.back().item_id = dup.front().item_id;
      REQUIRE_THROWS_AS(score_verdicts(r, dup), ValidationError);
      dup.pop_back();
      REQUIRE_THROWS_AS(score_verdicts(r, dup), ValidationError);
    }
  }
}

TEST_CASE("problem grade json round trip") {
  const ProblemEntry p = fixture_problem();
  llm::LlmEndpoint ep(fake::ScriptedBackend::queue({"<think>t</think>" + verdict_reply({true, true, false})}), 1);
  ProblemSegment seg{"P1", "work", {0, 4}, SegmentMethod::Llm};
  const ProblemGrade g = grade_problem(&seg, "", p, ep, Config{}, {"x", false});
  const ProblemGrade back = problem_grade_from_json(to_json(g));
  CHECK(to_json(back) == to_json(g));
  CHECK(back.verdicts[0].think_trace == "t");
  for (auto f : {ProblemFlag::None, ProblemFlag::NoWorkFound, ProblemFlag::NeedsHumanGrading,
                 ProblemFlag::NeedsManualSegmentation}) {
    CHECK(problem_flag_from_string(to_string(f)) == f);
  }
}
