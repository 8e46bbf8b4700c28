#pragma once

#include <json.hpp>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lata/texparse.hpp"

namespace lata {
struct Config;
namespace llm {
class LlmEndpoint;
}

// Marker lines shipped with the assignment template: %== P1 ==%
inline constexpr std::string_view kDefaultMarkerPattern = R"(%==\s*([A-Za-z0-9_.\-]+)\s*==%)";

struct SegmentationSpec {
  std::vector<std::string> problem_ids;
  std::vector<std::string> marker_patterns{std::string(kDefaultMarkerPattern)};
  bool require_all = true;

  // Throws ValidationError: ids non-empty and unique, every pattern compiles.
  void validate() const;
};

enum class SegmentMethod { Regex, Llm };

const char* to_string(SegmentMethod m);
SegmentMethod segment_method_from_string(std::string_view s);

struct ProblemSegment {
  std::string problem_id;
  std::string text;  // body slice at `span`
  tex::ByteSpan span;
  SegmentMethod method = SegmentMethod::Regex;

  friend bool operator==(const ProblemSegment&, const ProblemSegment&) = default;
};

enum class LlmFailure { None, Transport, MockMiss, Schema };

struct SegmentationResult {
  std::vector<ProblemSegment> segments;  // ordered by span start, non-overlapping
  std::vector<std::string> missing;      // in spec order
  bool fallback_used = false;
  std::vector<std::string> warnings;
  std::optional<std::string> manual_flag;  // "needs manual segmentation: ..."
  LlmFailure llm_failure = LlmFailure::None;

  const ProblemSegment* find(std::string_view problem_id) const;
};

// Each first marker for a known id opens a segment that runs to the next
// such marker or the end of the body; text is whitespace-trimmed.
SegmentationResult segment_regex(std::string_view body, const SegmentationSpec& spec);

// Asks the segmenter model for verbatim start/end anchors of `problem_ids`
// (all spec ids when empty) in the sanitized body; only anchors found
// verbatim become segments. Throws TransportError, MockMissError or
// SchemaCoercionError.
SegmentationResult segment_llm(std::string_view body, const SegmentationSpec& spec, llm::LlmEndpoint& endpoint,
                               const Config& config, const std::vector<std::string>& problem_ids = {});

// Regex first; the model is consulted only for ids the markers missed, and
// regex segments win any overlap. LLM failures become a manual flag.
SegmentationResult segment(std::string_view body, const SegmentationSpec& spec, llm::LlmEndpoint& endpoint,
                           const Config& config);

// Token that does not occur in `text`, derived from its digest.
std::string fence_token(std::string_view salt, std::string_view text);

nlohmann::json to_json(const SegmentationResult& r);
SegmentationResult segmentation_from_json(const nlohmann::json& j);

}  // namespace lata
