#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <string_view>

namespace lata {

struct LatePolicy {
  double per_day_fraction = 0.10;
  double grace_minutes = 0.0;
  double cap_fraction = 1.0;

  // min(cap, per_day * ceil(days late after the grace period)); zero when not late.
  double penalty(std::chrono::seconds lateness) const;

  friend bool operator==(const LatePolicy&, const LatePolicy&) = default;
};

struct RunPaths {
  std::string export_dir;
  std::string assignment_dir;
  std::string output_dir = "lata-out";

  friend bool operator==(const RunPaths&, const RunPaths&) = default;
};

struct Config {
  // grading.*
  bool anonymize = true;
  double correction_credit_fraction = 1.0;
  int hint_leak_min_run = 24;
  LatePolicy late_policy;

  // llm.*
  std::string endpoint_url = "http://127.0.0.1:11434";
  std::string grader_model = "gpt-oss:120b";
  std::string segmenter_model = "gpt-oss:20b";
  int llm_max_retries = 3;
  double llm_timeout = 600.0;
  int in_flight_limit = 1;
  int max_output_tokens = 8192;

  // report.*
  std::string compiler = "pdflatex";
  double compile_timeout = 120.0;
  int repair_max_attempts = 3;

  // run.*
  int worker_count = 2;

  RunPaths paths;

  friend bool operator==(const Config&, const Config&) = default;
};

struct EndpointUrl {
  std::string scheme;
  std::string host;
  int port = 0;
  std::string path;  // without trailing slash; may be empty
};

// Throws ValidationError("llm.endpoint_url", ...) unless the text is
// http(s)://host[:port][/path].
EndpointUrl parse_endpoint_url(std::string_view url);

// Strict loader: unknown keys throw UnknownKeyError, wrongly typed or
// out-of-range values throw ValidationError naming the dotted key,
// malformed YAML throws ParseError.
Config load_config(const std::filesystem::path& path);
Config parse_config(std::string_view yaml_text);

// Emits every key, so parse_config(to_yaml(c)) == c.
std::string to_yaml(const Config& config);

void validate(const Config& config);

}  // namespace lata
