#include "lata/llm.hpp"

#include <httplib.h>

#include <chrono>
#include <sstream>

#include "lata/config.hpp"
#include "lata/digest.hpp"

namespace lata::llm {

using nlohmann::json;

namespace {

constexpr std::string_view kOpen = "<think>";
constexpr std::string_view kClose = "</think>";

bool has_tag(std::string_view s) { return s.find(kOpen) != std::string_view::npos || s.find(kClose) != std::string_view::npos; }

ThinkSplit strip_once(std::string_view raw) {
  ThinkSplit out;
  std::size_t pos = 0;
  std::size_t segment_start = 0;  // start in out.clean of text since the last block
  while (pos < raw.size()) {
    const std::size_t open = raw.find(kOpen, pos);
    const std::size_t close = raw.find(kClose, pos);
    if (open == std::string_view::npos && close == std::string_view::npos) {
      out.clean.append(raw.substr(pos));
      break;
    }
    if (close != std::string_view::npos && (open == std::string_view::npos || close < open)) {
      out.think.append(out.clean, segment_start, std::string::npos);
      out.think.append(raw.substr(pos, close - pos));
      out.clean.resize(segment_start);
      pos = close + kClose.size();
      continue;
    }
    out.clean.append(raw.substr(pos, open - pos));
    const std::size_t body = open + kOpen.size();
    const std::size_t end = raw.find(kClose, body);
    if (end == std::string_view::npos) {
      out.think.append(raw.substr(body));
      out.unterminated = true;
      break;
    }
    out.think.append(raw.substr(body, end - body));
    pos = end + kClose.size();
    segment_start = out.clean.size();
  }
  return out;
}

json messages_json(const std::vector<ChatMessage>& messages) {
  json arr = json::array();
  for (const auto& m : messages) arr.push_back({{"role", m.role}, {"content", m.content}});
  return arr;
}

// Index one past the brace matching text[start] == '{', honoring JSON strings.
std::size_t match_object(std::string_view text, std::size_t start) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::string_view::npos;
}

std::optional<json> first_object(std::string_view text) {
  for (std::size_t start = text.find('{'); start != std::string_view::npos; start = text.find('{', start + 1)) {
    const std::size_t end = match_object(text, start);
    if (end == std::string_view::npos) continue;
    json parsed = json::parse(text.substr(start, end - start), nullptr, false);
    if (!parsed.is_discarded() && parsed.is_object()) return parsed;
  }
  return std::nullopt;
}

}  // namespace

ThinkSplit strip_think(std::string_view raw) {
  ThinkSplit result = strip_once(raw);
  // Removing a block can splice a new tag together ("<thi<think>x</think>nk>").
  while (has_tag(result.clean)) {
    ThinkSplit again = strip_once(result.clean);
    result.think += again.think;
    result.unterminated = result.unterminated || again.unterminated;
    result.clean = std::move(again.clean);
  }
  return result;
}

std::string request_digest(const std::string& model, const std::vector<ChatMessage>& messages) {
  const json key = {{"model", model}, {"messages", messages_json(messages)}};
  return sha256_hex(key.dump());
}

json transcript_record(const std::string& model, const std::vector<ChatMessage>& messages, double temperature,
                       int max_output_tokens, const BackendReply& reply) {
  return {{"digest", request_digest(model, messages)},
          {"request",
           {{"model", model},
            {"messages", messages_json(messages)},
            {"temperature", temperature},
            {"max_tokens", max_output_tokens}}},
          {"response",
           {{"raw_text", reply.raw_text},
            {"prompt_tokens", reply.prompt_tokens},
            {"completion_tokens", reply.completion_tokens}}}};
}

HttpBackend::HttpBackend(std::string base_url, double timeout_seconds)
    : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {}

BackendReply HttpBackend::send(const std::string& model, const std::vector<ChatMessage>& messages,
                               double temperature, int max_output_tokens) {
  const EndpointUrl url = parse_endpoint_url(base_url_);
  if (url.scheme != "http") throw TransportError("only plain http endpoints are supported: " + base_url_);
  httplib::Client client(url.host, url.port);
  const auto whole = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(timeout_seconds_));
  client.set_connection_timeout(std::min<std::chrono::microseconds>(whole, std::chrono::seconds(10)));
  client.set_read_timeout(whole);
  client.set_write_timeout(whole);

  const json body = {{"model", model},
                     {"messages", messages_json(messages)},
                     {"temperature", temperature},
                     {"max_tokens", max_output_tokens},
                     {"stream", false}};
  const std::string path = (url.path.empty() ? std::string("/v1") : url.path) + "/chat/completions";
  auto res = client.Post(path, body.dump(), "application/json");
  if (!res) {
    throw TransportError("POST " + base_url_ + path + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw TransportError("POST " + base_url_ + path + " returned HTTP " + std::to_string(res->status) + ": " +
                         res->body.substr(0, 200));
  }
  const json reply = json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.contains("choices") || !reply["choices"].is_array() ||
      reply["choices"].empty()) {
    throw TransportError("malformed chat completion response from " + base_url_);
  }
  const json& message = reply["choices"][0].value("message", json::object());
  BackendReply out;
  const json content = message.value("content", json(nullptr));
  out.raw_text = content.is_string() ? content.get<std::string>() : std::string();
  // Servers that split reasoning out of content get it folded back into a
  // think block so audit trails look the same for every backend.
  for (const char* key : {"reasoning_content", "reasoning"}) {
    const json r = message.value(key, json(nullptr));
    if (r.is_string() && !r.get_ref<const std::string&>().empty() &&
        out.raw_text.find(kOpen) == std::string::npos) {
      out.raw_text = std::string(kOpen) + r.get<std::string>() + std::string(kClose) + out.raw_text;
      break;
    }
  }
  if (reply.contains("usage") && reply["usage"].is_object()) {
    out.prompt_tokens = reply["usage"].value("prompt_tokens", 0);
    out.completion_tokens = reply["usage"].value("completion_tokens", 0);
  }
  return out;
}

ReplayBackend::ReplayBackend(const std::filesystem::path& transcript) {
  std::ifstream in(transcript, std::ios::binary);
  if (!in) throw ParseError("cannot read transcript " + transcript.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.contains("digest") || !rec.contains("response")) {
      throw ParseError(transcript.string() + ":" + std::to_string(line_no) + ": malformed transcript record");
    }
    BackendReply reply;
    reply.raw_text = rec["response"].value("raw_text", "");
    reply.prompt_tokens = rec["response"].value("prompt_tokens", 0);
    reply.completion_tokens = rec["response"].value("completion_tokens", 0);
    replies_.emplace(rec["digest"].get<std::string>(), std::move(reply));
  }
}

BackendReply ReplayBackend::send(const std::string& model, const std::vector<ChatMessage>& messages, double,
                                 int) {
  const std::string digest = request_digest(model, messages);
  const auto it = replies_.find(digest);
  if (it == replies_.end()) {
    throw MockMissError(digest, "no transcript record for request digest " + digest + " (model " + model + ")");
  }
  return it->second;
}

LlmEndpoint::LlmEndpoint(std::unique_ptr<ChatBackend> backend, int in_flight_limit)
    : backend_(std::move(backend)), limit_(std::max(1, in_flight_limit)) {}

std::unique_ptr<LlmEndpoint> LlmEndpoint::from_config(const Config& config,
                                                      const std::optional<std::filesystem::path>& mock_transcript) {
  std::unique_ptr<ChatBackend> backend;
  if (mock_transcript) {
    backend = std::make_unique<ReplayBackend>(*mock_transcript);
  } else {
    backend = std::make_unique<HttpBackend>(config.endpoint_url, config.llm_timeout);
  }
  return std::make_unique<LlmEndpoint>(std::move(backend), config.in_flight_limit);
}

void LlmEndpoint::record_to(const std::filesystem::path& transcript) {
  std::lock_guard lock(record_mutex_);
  recorder_.emplace(transcript, std::ios::binary | std::ios::app);
  if (!*recorder_) throw Error("cannot open transcript for recording: " + transcript.string());
}

ChatResponse LlmEndpoint::chat(const std::string& model, const std::vector<ChatMessage>& messages,
                               double temperature, int max_output_tokens) {
  {
    std::unique_lock lock(mutex_);
    slot_free_.wait(lock, [&] { return in_flight_ < limit_; });
    ++in_flight_;
    ++calls_;
  }
  struct Release {
    LlmEndpoint* self;
    ~Release() {
      {
        std::lock_guard lock(self->mutex_);
        --self->in_flight_;
      }
      self->slot_free_.notify_one();
    }
  } release{this};

  const auto started = std::chrono::steady_clock::now();
  BackendReply reply = backend_->send(model, messages, temperature, max_output_tokens);
  const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  {
    std::lock_guard lock(record_mutex_);
    if (recorder_) {
      *recorder_ << transcript_record(model, messages, temperature, max_output_tokens, reply).dump() << '\n';
      recorder_->flush();
    }
  }

  ChatResponse response;
  ThinkSplit split = strip_think(reply.raw_text);
  response.raw_text = std::move(reply.raw_text);
  response.think_text = std::move(split.think);
  response.clean_text = std::move(split.clean);
  response.think_unterminated = split.unterminated;
  response.latency_seconds = elapsed;
  response.prompt_tokens = reply.prompt_tokens;
  response.completion_tokens = reply.completion_tokens;
  return response;
}

std::size_t LlmEndpoint::call_count() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

std::optional<json> extract_json_object(std::string_view text) {
  // Fenced blocks first: ```json ... ``` or ``` ... ```
  for (std::size_t fence = text.find("```"); fence != std::string_view::npos;) {
    const std::size_t line_end = text.find('\n', fence);
    if (line_end == std::string_view::npos) break;
    const std::size_t close = text.find("```", line_end);
    if (close == std::string_view::npos) break;
    if (auto obj = first_object(text.substr(line_end, close - line_end))) return obj;
    fence = text.find("```", close + 3);
  }
  return first_object(text);
}

std::string schema_instructions(const Schema& schema) {
  std::ostringstream out;
  out << "Respond with a single JSON object and nothing else. It must validate against this schema "
         "(no additional fields, all required fields present):\n"
      << schema.describe().dump(2);
  return out.str();
}

StructuredResult complete_structured(LlmEndpoint& endpoint, const ChatRequest& request, int max_attempts) {
  if (!request.response_schema) throw Error("complete_structured requires a response schema");
  const Schema& schema = *request.response_schema;
  const int attempts_allowed = std::max(1, max_attempts);

  std::vector<ChatMessage> messages = {
      {"system", request.system_text + "\n\n" + schema_instructions(schema)},
      {"user", request.user_text},
  };
  StructuredResult result;
  result.prompt_digest = request_digest(request.model, messages);

  for (int attempt = 1; attempt <= attempts_allowed; ++attempt) {
    ChatResponse response = endpoint.chat(request.model, messages, request.temperature, request.max_output_tokens);
    if (!response.think_text.empty()) {
      if (!result.think_text.empty()) result.think_text += "\n";
      result.think_text += response.think_text;
    }
    std::string error;
    std::optional<json> value = extract_json_object(response.clean_text);
    if (!value) {
      error = "no JSON object found in the reply";
    } else if (auto problems = schema.validate(*value); !problems.empty()) {
      for (const auto& p : problems) error += (error.empty() ? "" : "; ") + p;
    }
    result.attempts.push_back(CoercionAttempt{response.raw_text, error});
    if (error.empty()) {
      result.value = std::move(*value);
      result.response = std::move(response);
      return result;
    }
    messages.push_back({"assistant", response.clean_text});
    messages.push_back({"user", "Your previous reply was rejected by the validator: " + error +
                                    "\nReply again with only the corrected JSON object."});
  }
  const std::string message = "no schema-valid reply after " + std::to_string(attempts_allowed) +
                              " attempt(s): " + result.attempts.back().error;
  throw SchemaCoercionError(message, std::move(result.attempts));
}

}  // namespace lata::llm
