#include <doctest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "lata/config.hpp"
#include "lata/errors.hpp"
#include "test_util.hpp"

using namespace lata;
using std::chrono::hours;
using std::chrono::minutes;
using std::chrono::seconds;

TEST_CASE("minimal file turns anonymization on and keeps every default") {
  const Config c = parse_config("grading:\n  anonymize: true\n");
  CHECK(c.anonymize);
  CHECK(c.grader_model == "gpt-oss:120b");
  CHECK(c.segmenter_model == "gpt-oss:20b");
  CHECK(c.llm_max_retries == 3);
  CHECK(c.repair_max_attempts == 3);
  CHECK(c == Config{});
}

TEST_CASE("empty file is all defaults") { CHECK(parse_config("") == Config{}); }

TEST_CASE("quoted string for a boolean names the key") {
  try {
    parse_config("grading:\n  anonymize: \"yes please\"\n");
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.key() == "grading.anonymize");
  }
  CHECK_THROWS_AS(parse_config("grading:\n  anonymize: \"true\"\n"), ValidationError);
}

TEST_CASE("misspelled key is rejected") {
  CHECK_THROWS_AS(parse_config("grading:\n  anonymise: true\n"), UnknownKeyError);
  CHECK_THROWS_AS(parse_config("gradng:\n  anonymize: true\n"), UnknownKeyError);
  CHECK_THROWS_AS(parse_config("llm:\n  endpoint: http://x\n"), UnknownKeyError);
}

TEST_CASE("malformed YAML is a parse error") {
  CHECK_THROWS_AS(parse_config("grading: [unclosed\n"), ParseError);
}

TEST_CASE("range checks") {
  CHECK_THROWS_AS(parse_config("run:\n  worker_count: 0\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("grading:\n  correction_credit_fraction: 1.5\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("grading:\n  hint_leak_min_run: 7\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("grading:\n  late_policy:\n    per_day_fraction: -0.1\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("llm:\n  max_retries: -1\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("llm:\n  endpoint_url: not a url\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("llm:\n  grader_model: \"\"\n"), ValidationError);
  CHECK_NOTHROW(parse_config("llm:\n  max_retries: 0\nreport:\n  repair_max_attempts: 0\n"));
}

TEST_CASE("endpoint url parsing") {
  const EndpointUrl u = parse_endpoint_url("http://gpu-box.local:8000/api/");
  CHECK(u.scheme == "http");
  CHECK(u.host == "gpu-box.local");
  CHECK(u.port == 8000);
  CHECK(u.path == "/api");
  CHECK(parse_endpoint_url("http://127.0.0.1").port == 80);
  CHECK(parse_endpoint_url("https://h").port == 443);
  CHECK_THROWS_AS(parse_endpoint_url("ftp://h"), ValidationError);
  CHECK_THROWS_AS(parse_endpoint_url("http://"), ValidationError);
}

TEST_CASE("late penalty") {
  LatePolicy p;
  CHECK(p.penalty(seconds{0}) == 0.0);
  CHECK(p.penalty(seconds{-30}) == 0.0);
  CHECK(p.penalty(seconds{1}) == doctest::Approx(0.10));
  CHECK(p.penalty(hours{24}) == doctest::Approx(0.10));
  CHECK(p.penalty(hours{24} + seconds{1}) == doctest::Approx(0.20));
  CHECK(p.penalty(hours{24 * 30}) == doctest::Approx(1.0));
  p.cap_fraction = 0.25;
  CHECK(p.penalty(hours{24 * 5}) == doctest::Approx(0.25));
  p.grace_minutes = 15;
  CHECK(p.penalty(minutes{10}) == 0.0);
  CHECK(p.penalty(minutes{16}) == doctest::Approx(0.10));
}

TEST_CASE("late penalty matches the closed form for random lateness") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> frac(0.0, 1.0);
  std::uniform_int_distribution<long> late(-86400, 86400 * 12);
  for (int i = 0; i < 500; ++i) {
    LatePolicy p;
    p.per_day_fraction = frac(rng);
    p.cap_fraction = frac(rng);
    p.grace_minutes = std::floor(frac(rng) * 120);
    const long s = late(rng);
    const double past = static_cast<double>(s) - p.grace_minutes * 60;
    const double expect = past <= 0 ? 0.0 : std::min(p.cap_fraction, p.per_day_fraction * std::ceil(past / 86400.0));
    CHECK(p.penalty(seconds{s}) == doctest::Approx(expect));
  }
}

TEST_CASE("to_yaml round trip over random configs") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> frac(0.0, 1.0);
  std::uniform_int_distribution<int> small(0, 9);
  for (int i = 0; i < 200; ++i) {
    Config c;
    c.anonymize = small(rng) % 2 == 0;
    c.correction_credit_fraction = frac(rng);
    c.hint_leak_min_run = 8 + small(rng) * 5;
    c.late_policy.per_day_fraction = frac(rng);
    c.late_policy.grace_minutes = frac(rng) * 90;
    c.late_policy.cap_fraction = frac(rng);
    c.endpoint_url = "http://10.0.0." + std::to_string(small(rng)) + ":" + std::to_string(8000 + small(rng));
    c.grader_model = "model-" + std::to_string(small(rng));
    c.segmenter_model = "seg:" + std::to_string(small(rng)) + "b";
    c.llm_max_retries = small(rng);
    c.llm_timeout = 1 + frac(rng) * 900;
    c.in_flight_limit = 1 + small(rng);
    c.max_output_tokens = 256 * (1 + small(rng));
    c.compiler = small(rng) % 2 ? "pdflatex" : "/opt/tex/bin/lualatex";
    c.compile_timeout = 1 + frac(rng) * 200;
    c.repair_max_attempts = small(rng);
    c.worker_count = 1 + small(rng);
    c.paths.export_dir = "exports/run " + std::to_string(i);
    c.paths.assignment_dir = "hw: #" + std::to_string(i);
    c.paths.output_dir = "out";
    const Config back = parse_config(to_yaml(c));
    CHECK(back == c);
  }
}

TEST_CASE("load_config reads a file and reports a missing one") {
  testutil::TempDir dir;
  testutil::write_file(dir / "lata.yml", "llm:\n  grader_model: local-70b\nrun:\n  worker_count: 4\n");
  const Config c = load_config(dir / "lata.yml");
  CHECK(c.grader_model == "local-70b");
  CHECK(c.worker_count == 4);
  CHECK_THROWS_AS(load_config(dir / "missing.yml"), ParseError);
}
