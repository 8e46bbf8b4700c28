#pragma once

#include <json.hpp>

#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lata/errors.hpp"
#include "lata/schema.hpp"

namespace lata {
struct Config;
}

namespace lata::llm {

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::string model;
  std::string system_text;
  std::string user_text;
  double temperature = 0.0;
  int max_output_tokens = 8192;
  std::optional<Schema> response_schema;
};

struct ChatResponse {
  std::string raw_text;
  std::string think_text;
  std::string clean_text;  // raw_text minus reasoning blocks
  double latency_seconds = 0.0;
  int prompt_tokens = 0;
  int completion_tokens = 0;
  bool think_unterminated = false;
};

struct ThinkSplit {
  std::string clean;
  std::string think;
  bool unterminated = false;
};

// Removes every <think>...</think> block (non-greedy, case-sensitive) from
// the visible text and concatenates their contents into `think`. An
// unterminated <think> hides everything after it; text before an orphan
// </think> is treated as reasoning (templates that pre-open the block).
// The clean text never contains either tag.
ThinkSplit strip_think(std::string_view raw);

struct BackendReply {
  std::string raw_text;
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual BackendReply send(const std::string& model, const std::vector<ChatMessage>& messages, double temperature,
                            int max_output_tokens) = 0;
  virtual std::string name() const = 0;
};

// OpenAI-compatible chat completion over HTTP: POST <base>/v1/chat/completions
// (or <base-path>/chat/completions when the URL carries a path).
class HttpBackend : public ChatBackend {
 public:
  HttpBackend(std::string base_url, double timeout_seconds);
  BackendReply send(const std::string& model, const std::vector<ChatMessage>& messages, double temperature,
                    int max_output_tokens) override;
  std::string name() const override { return "http"; }

 private:
  std::string base_url_;
  double timeout_seconds_;
};

// Stable key of a conversation: SHA-256 of canonical {model, messages} JSON.
std::string request_digest(const std::string& model, const std::vector<ChatMessage>& messages);

// Serves replies from a newline-delimited transcript of
// {"digest", "request", "response"} records. Unknown digests throw MockMissError.
class ReplayBackend : public ChatBackend {
 public:
  explicit ReplayBackend(const std::filesystem::path& transcript);
  BackendReply send(const std::string& model, const std::vector<ChatMessage>& messages, double temperature,
                    int max_output_tokens) override;
  std::string name() const override { return "mock"; }
  std::size_t size() const { return replies_.size(); }

 private:
  std::map<std::string, BackendReply> replies_;
};

nlohmann::json transcript_record(const std::string& model, const std::vector<ChatMessage>& messages,
                                 double temperature, int max_output_tokens, const BackendReply& reply);

// The single gateway to the inference host. Shareable across threads; at
// most `in_flight_limit` requests are outstanding at once.
class LlmEndpoint {
 public:
  LlmEndpoint(std::unique_ptr<ChatBackend> backend, int in_flight_limit);
  LlmEndpoint(const LlmEndpoint&) = delete;
  LlmEndpoint& operator=(const LlmEndpoint&) = delete;

  // Replay from `mock_transcript` when given, otherwise HTTP to config.endpoint_url.
  static std::unique_ptr<LlmEndpoint> from_config(const Config& config,
                                                  const std::optional<std::filesystem::path>& mock_transcript);

  // Appends every exchange to `transcript` (created or extended).
  void record_to(const std::filesystem::path& transcript);

  ChatResponse chat(const std::string& model, const std::vector<ChatMessage>& messages, double temperature,
                    int max_output_tokens);

  std::size_t call_count() const;
  std::string backend_name() const { return backend_->name(); }

 private:
  std::unique_ptr<ChatBackend> backend_;
  int limit_;
  mutable std::mutex mutex_;
  std::condition_variable slot_free_;
  int in_flight_ = 0;
  std::size_t calls_ = 0;
  std::mutex record_mutex_;
  std::optional<std::ofstream> recorder_;
};

struct StructuredResult {
  nlohmann::json value;
  ChatResponse response;                  // the accepted reply
  std::vector<CoercionAttempt> attempts;  // every reply, in order
  std::string think_text;                 // reasoning across all attempts
  std::string prompt_digest;
};

// Asks for JSON matching request.response_schema. Invalid replies are
// answered with the validator's messages and retried; at most
// max(1, max_attempts) replies are requested before SchemaCoercionError.
StructuredResult complete_structured(LlmEndpoint& endpoint, const ChatRequest& request, int max_attempts);

// First top-level JSON object in text; fenced ```json blocks are preferred.
std::optional<nlohmann::json> extract_json_object(std::string_view text);

std::string schema_instructions(const Schema& schema);

}  // namespace lata::llm
