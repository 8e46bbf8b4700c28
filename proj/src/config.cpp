#include "lata/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include "lata/errors.hpp"

namespace lata {

double LatePolicy::penalty(std::chrono::seconds lateness) const {
  const double late_seconds =
      static_cast<double>(lateness.count()) - grace_minutes * 60.0;
  if (late_seconds <= 0.0) return 0.0;
  const double days = std::ceil(late_seconds / 86400.0);
  return std::min(cap_fraction, per_day_fraction * days);
}

EndpointUrl parse_endpoint_url(std::string_view url) {
  const std::string key = "llm.endpoint_url";
  EndpointUrl out;
  const auto sep = url.find("://");
  if (sep == std::string_view::npos) throw ValidationError(key, "missing scheme in '" + std::string(url) + "'");
  out.scheme = std::string(url.substr(0, sep));
  if (out.scheme != "http" && out.scheme != "https") {
    throw ValidationError(key, "unsupported scheme '" + out.scheme + "'");
  }
  std::string_view rest = url.substr(sep + 3);
  const auto slash = rest.find('/');
  std::string_view authority = rest.substr(0, slash);
  if (slash != std::string_view::npos) {
    std::string_view path = rest.substr(slash);
    while (!path.empty() && path.back() == '/') path.remove_suffix(1);
    out.path = std::string(path);
  }
  out.port = out.scheme == "https" ? 443 : 80;
  if (const auto colon = authority.rfind(':'); colon != std::string_view::npos &&
                                               authority.find(']') == std::string_view::npos) {
    const std::string port_text(authority.substr(colon + 1));
    authority = authority.substr(0, colon);
    try {
      std::size_t used = 0;
      out.port = std::stoi(port_text, &used);
      if (used != port_text.size() || out.port <= 0 || out.port > 65535) throw std::out_of_range("port");
    } catch (const std::exception&) {
      throw ValidationError(key, "bad port '" + port_text + "'");
    }
  }
  if (authority.empty()) throw ValidationError(key, "URL has no host");
  out.host = std::string(authority);
  return out;
}

namespace {

std::string join_key(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Quoted scalars carry the "!" tag; they never satisfy a bool or number slot.
bool is_plain_scalar(const YAML::Node& node) { return node.IsScalar() && node.Tag() != "!"; }

bool read_bool(const YAML::Node& node, const std::string& key) {
  if (is_plain_scalar(node)) {
    const std::string s = node.Scalar();
    if (s == "true" || s == "True" || s == "TRUE") return true;
    if (s == "false" || s == "False" || s == "FALSE") return false;
  }
  throw ValidationError(key, "expected boolean (true/false)");
}

long long read_int(const YAML::Node& node, const std::string& key) {
  if (is_plain_scalar(node)) {
    const std::string s = node.Scalar();
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
  }
  throw ValidationError(key, "expected integer");
}

double read_number(const YAML::Node& node, const std::string& key) {
  if (is_plain_scalar(node)) {
    const std::string s = node.Scalar();
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
  }
  throw ValidationError(key, "expected number");
}

std::string read_string(const YAML::Node& node, const std::string& key) {
  if (!node.IsScalar()) throw ValidationError(key, "expected string");
  return node.Scalar();
}

using FieldSetter = std::function<void(const YAML::Node&, const std::string&)>;

struct Section {
  std::map<std::string, FieldSetter> fields;
  std::map<std::string, Section> children;
};

void apply_section(const YAML::Node& node, const Section& section, const std::string& prefix) {
  if (!node || node.IsNull()) return;
  if (!node.IsMap()) throw ValidationError(prefix, "expected a mapping");
  for (const auto& kv : node) {
    const std::string name = kv.first.Scalar();
    const std::string key = join_key(prefix, name);
    if (auto f = section.fields.find(name); f != section.fields.end()) {
      f->second(kv.second, key);
    } else if (auto c = section.children.find(name); c != section.children.end()) {
      apply_section(kv.second, c->second, key);
    } else {
      throw UnknownKeyError(key);
    }
  }
}

Section schema_for(Config& c) {
  auto boolean = [](bool& slot) {
    return [&slot](const YAML::Node& n, const std::string& k) { slot = read_bool(n, k); };
  };
  auto integer = [](int& slot) {
    return [&slot](const YAML::Node& n, const std::string& k) {
      const long long v = read_int(n, k);
      if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
        throw ValidationError(k, "integer out of range");
      }
      slot = static_cast<int>(v);
    };
  };
  auto number = [](double& slot) {
    return [&slot](const YAML::Node& n, const std::string& k) { slot = read_number(n, k); };
  };
  auto text = [](std::string& slot) {
    return [&slot](const YAML::Node& n, const std::string& k) { slot = read_string(n, k); };
  };

  Section late;
  late.fields = {{"per_day_fraction", number(c.late_policy.per_day_fraction)},
                 {"grace_minutes", number(c.late_policy.grace_minutes)},
                 {"cap_fraction", number(c.late_policy.cap_fraction)}};

  Section grading;
  grading.fields = {{"anonymize", boolean(c.anonymize)},
                    {"correction_credit_fraction", number(c.correction_credit_fraction)},
                    {"hint_leak_min_run", integer(c.hint_leak_min_run)}};
  grading.children = {{"late_policy", late}};

  Section llm;
  llm.fields = {{"endpoint_url", text(c.endpoint_url)},
                {"grader_model", text(c.grader_model)},
                {"segmenter_model", text(c.segmenter_model)},
                {"max_retries", integer(c.llm_max_retries)},
                {"timeout_seconds", number(c.llm_timeout)},
                {"in_flight_limit", integer(c.in_flight_limit)},
                {"max_output_tokens", integer(c.max_output_tokens)}};

  Section report;
  report.fields = {{"compiler", text(c.compiler)},
                   {"compile_timeout_seconds", number(c.compile_timeout)},
                   {"repair_max_attempts", integer(c.repair_max_attempts)}};

  Section run;
  run.fields = {{"worker_count", integer(c.worker_count)}};

  Section paths;
  paths.fields = {{"export_dir", text(c.paths.export_dir)},
                  {"assignment_dir", text(c.paths.assignment_dir)},
                  {"output_dir", text(c.paths.output_dir)}};

  Section root;
  root.children = {{"grading", grading}, {"llm", llm}, {"report", report}, {"run", run}, {"paths", paths}};
  return root;
}

void require_fraction(double v, const char* key) {
  if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(key, "must be a fraction in [0, 1]");
}

}  // namespace

void validate(const Config& c) {
  require_fraction(c.correction_credit_fraction, "grading.correction_credit_fraction");
  require_fraction(c.late_policy.per_day_fraction, "grading.late_policy.per_day_fraction");
  require_fraction(c.late_policy.cap_fraction, "grading.late_policy.cap_fraction");
  if (c.late_policy.grace_minutes < 0) throw ValidationError("grading.late_policy.grace_minutes", "must be >= 0");
  if (c.hint_leak_min_run < 8) throw ValidationError("grading.hint_leak_min_run", "must be >= 8");
  parse_endpoint_url(c.endpoint_url);
  if (c.grader_model.empty()) throw ValidationError("llm.grader_model", "must be non-empty");
  if (c.segmenter_model.empty()) throw ValidationError("llm.segmenter_model", "must be non-empty");
  if (c.llm_max_retries < 0) throw ValidationError("llm.max_retries", "must be >= 0");
  if (!(c.llm_timeout > 0)) throw ValidationError("llm.timeout_seconds", "must be > 0");
  if (c.in_flight_limit < 1) throw ValidationError("llm.in_flight_limit", "must be >= 1");
  if (c.max_output_tokens < 1) throw ValidationError("llm.max_output_tokens", "must be >= 1");
  if (c.compiler.empty()) throw ValidationError("report.compiler", "must be non-empty");
  if (!(c.compile_timeout > 0)) throw ValidationError("report.compile_timeout_seconds", "must be > 0");
  if (c.repair_max_attempts < 0) throw ValidationError("report.repair_max_attempts", "must be >= 0");
  if (c.worker_count < 1) throw ValidationError("run.worker_count", "must be >= 1");
}

Config parse_config(std::string_view yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception& e) {
    throw ParseError(std::string("malformed YAML: ") + e.what());
  }
  Config config;
  const Section schema = schema_for(config);
  apply_section(root, schema, "");
  validate(config);
  return config;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string to_yaml(const Config& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(std::numeric_limits<double>::max_digits10);
  out << YAML::BeginMap;
  out << YAML::Key << "grading" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "anonymize" << YAML::Value << c.anonymize;
  out << YAML::Key << "correction_credit_fraction" << YAML::Value << c.correction_credit_fraction;
  out << YAML::Key << "hint_leak_min_run" << YAML::Value << c.hint_leak_min_run;
  out << YAML::Key << "late_policy" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "per_day_fraction" << YAML::Value << c.late_policy.per_day_fraction;
  out << YAML::Key << "grace_minutes" << YAML::Value << c.late_policy.grace_minutes;
  out << YAML::Key << "cap_fraction" << YAML::Value << c.late_policy.cap_fraction;
  out << YAML::EndMap << YAML::EndMap;

  out << YAML::Key << "llm" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "endpoint_url" << YAML::Value << YAML::DoubleQuoted << c.endpoint_url;
  out << YAML::Key << "grader_model" << YAML::Value << YAML::DoubleQuoted << c.grader_model;
  out << YAML::Key << "segmenter_model" << YAML::Value << YAML::DoubleQuoted << c.segmenter_model;
  out << YAML::Key << "max_retries" << YAML::Value << c.llm_max_retries;
  out << YAML::Key << "timeout_seconds" << YAML::Value << c.llm_timeout;
  out << YAML::Key << "in_flight_limit" << YAML::Value << c.in_flight_limit;
  out << YAML::Key << "max_output_tokens" << YAML::Value << c.max_output_tokens;
  out << YAML::EndMap;

  out << YAML::Key << "report" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "compiler" << YAML::Value << YAML::DoubleQuoted << c.compiler;
  out << YAML::Key << "compile_timeout_seconds" << YAML::Value << c.compile_timeout;
  out << YAML::Key << "repair_max_attempts" << YAML::Value << c.repair_max_attempts;
  out << YAML::EndMap;

  out << YAML::Key << "run" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "worker_count" << YAML::Value << c.worker_count;
  out << YAML::EndMap;

  out << YAML::Key << "paths" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "export_dir" << YAML::Value << YAML::DoubleQuoted << c.paths.export_dir;
  out << YAML::Key << "assignment_dir" << YAML::Value << YAML::DoubleQuoted << c.paths.assignment_dir;
  out << YAML::Key << "output_dir" << YAML::Value << YAML::DoubleQuoted << c.paths.output_dir;
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace lata
