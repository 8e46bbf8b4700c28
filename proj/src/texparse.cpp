#include "lata/texparse.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "lata/config.hpp"

namespace lata::tex {

const char* to_string(TokenKind kind) {
  switch (kind) {
    case TokenKind::ControlSequence: return "control_sequence";
    case TokenKind::GroupOpen: return "group_open";
    case TokenKind::GroupClose: return "group_close";
    case TokenKind::Comment: return "comment";
    case TokenKind::Text: return "text";
    case TokenKind::MathShift: return "math_shift";
  }
  return "unknown";
}

const char* to_string(MacroKind kind) {
  switch (kind) {
    case MacroKind::NewCommand: return "newcommand";
    case MacroKind::RenewCommand: return "renewcommand";
    case MacroKind::Def: return "def";
    case MacroKind::DeclareMathOperator: return "declare_math_operator";
    case MacroKind::ProvideCommand: return "providecommand";
  }
  return "unknown";
}

namespace {

bool is_letter(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0xC0) return 1;
  if (lead < 0xE0) return 2;
  if (lead < 0xF0) return 3;
  if (lead < 0xF8) return 4;
  return 1;
}

constexpr std::array<std::string_view, 5> kVerbatimEnvs = {"verbatim", "verbatim*", "Verbatim", "lstlisting",
                                                           "minted"};

class Tokenizer {
 public:
  explicit Tokenizer(std::string_view s) : s_(s) {}

  std::vector<Token> run() {
    while (pos_ < s_.size()) step();
    flush_text();
    return std::move(out_);
  }

 private:
  void step() {
    const char c = s_[pos_];
    switch (c) {
      case '\\': control_sequence(); break;
      case '{': emit(TokenKind::GroupOpen, pos_, pos_ + 1); break;
      case '}': emit(TokenKind::GroupClose, pos_, pos_ + 1); break;
      case '%': {
        std::size_t end = pos_;
        while (end < s_.size() && s_[end] != '\n' && s_[end] != '\r') ++end;
        emit(TokenKind::Comment, pos_, end);
        break;
      }
      case '$': {
        const std::size_t end = (pos_ + 1 < s_.size() && s_[pos_ + 1] == '$') ? pos_ + 2 : pos_ + 1;
        emit(TokenKind::MathShift, pos_, end);
        break;
      }
      default:
        if (text_start_ == npos) text_start_ = pos_;
        ++pos_;
    }
  }

  void control_sequence() {
    const std::size_t start = pos_;
    std::size_t end = pos_ + 1;
    if (end >= s_.size()) {
      // A lone trailing backslash is plain text.
      if (text_start_ == npos) text_start_ = pos_;
      ++pos_;
      return;
    }
    if (is_letter(s_[end])) {
      while (end < s_.size() && is_letter(s_[end])) ++end;
    } else {
      end = std::min(s_.size(), end + utf8_length(static_cast<unsigned char>(s_[end])));
    }
    emit(TokenKind::ControlSequence, start, end);
    const std::string_view name = s_.substr(start, end - start);
    if (name == "\\verb") {
      verb_argument();
    } else if (name == "\\begin") {
      verbatim_environment();
    }
  }

  // \verb*|...| : delimiter through matching delimiter on the same line.
  void verb_argument() {
    std::size_t p = pos_;
    if (p < s_.size() && s_[p] == '*') ++p;
    if (p >= s_.size()) return;
    const char delim = s_[p];
    if (is_letter(delim) || delim == ' ' || delim == '\n' || delim == '\r') return;
    std::size_t q = p + 1;
    while (q < s_.size() && s_[q] != delim && s_[q] != '\n') ++q;
    if (q >= s_.size() || s_[q] != delim) return;
    emit(TokenKind::Text, pos_, q + 1);
  }

  void verbatim_environment() {
    if (pos_ >= s_.size() || s_[pos_] != '{') return;
    const std::size_t close = s_.find('}', pos_);
    if (close == std::string_view::npos) return;
    const std::string_view env = s_.substr(pos_ + 1, close - pos_ - 1);
    if (std::find(kVerbatimEnvs.begin(), kVerbatimEnvs.end(), env) == kVerbatimEnvs.end()) return;
    emit(TokenKind::GroupOpen, pos_, pos_ + 1);
    emit(TokenKind::Text, pos_, close);
    emit(TokenKind::GroupClose, pos_, close + 1);
    const std::string terminator = "\\end{" + std::string(env) + "}";
    const std::size_t stop = s_.find(terminator, pos_);
    const std::size_t content_end = stop == std::string_view::npos ? s_.size() : stop;
    if (content_end > pos_) emit(TokenKind::Text, pos_, content_end);
  }

  void emit(TokenKind kind, std::size_t start, std::size_t end) {
    flush_text();
    out_.push_back(Token{kind, ByteSpan{start, end}});
    pos_ = end;
  }

  void flush_text() {
    if (text_start_ == npos) return;
    out_.push_back(Token{TokenKind::Text, ByteSpan{text_start_, pos_}});
    text_start_ = npos;
  }

  static constexpr std::size_t npos = std::string_view::npos;
  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t text_start_ = npos;
  std::vector<Token> out_;
};

// Byte-level scanner for definition syntax. Positions are offsets into the
// full source; npos signals failure.
class DefinitionScanner {
 public:
  static constexpr std::size_t npos = std::string_view::npos;

  explicit DefinitionScanner(std::string_view s) : s_(s) {}

  std::size_t skip_blank(std::size_t p) const {
    while (p < s_.size()) {
      if (std::isspace(static_cast<unsigned char>(s_[p]))) {
        ++p;
      } else if (s_[p] == '%') {
        while (p < s_.size() && s_[p] != '\n') ++p;
      } else {
        break;
      }
    }
    return p;
  }

  // p at a backslash; returns end of the control sequence.
  std::size_t control_sequence(std::size_t p) const {
    if (p >= s_.size() || s_[p] != '\\' || p + 1 >= s_.size()) return npos;
    std::size_t q = p + 1;
    if (is_letter(s_[q])) {
      while (q < s_.size() && is_letter(s_[q])) ++q;
      return q;
    }
    return std::min(s_.size(), q + utf8_length(static_cast<unsigned char>(s_[q])));
  }

  // p at '{'; returns one past the matching '}'.
  std::size_t group(std::size_t p) const {
    if (p >= s_.size() || s_[p] != '{') return npos;
    int depth = 0;
    for (std::size_t q = p; q < s_.size(); ++q) {
      switch (s_[q]) {
        case '\\': ++q; break;
        case '%':
          while (q + 1 < s_.size() && s_[q + 1] != '\n') ++q;
          break;
        case '{': ++depth; break;
        case '}':
          if (--depth == 0) return q + 1;
          break;
        default: break;
      }
    }
    return npos;
  }

  // p at '['; returns one past the matching ']' (braces protect brackets).
  std::size_t optional_argument(std::size_t p) const {
    if (p >= s_.size() || s_[p] != '[') return npos;
    for (std::size_t q = p + 1; q < s_.size(); ++q) {
      if (s_[q] == '\\') {
        ++q;
      } else if (s_[q] == '{') {
        const std::size_t g = group(q);
        if (g == npos) return npos;
        q = g - 1;
      } else if (s_[q] == ']') {
        return q + 1;
      }
    }
    return npos;
  }

  std::string_view slice(std::size_t a, std::size_t b) const { return s_.substr(a, b - a); }
  char at(std::size_t p) const { return p < s_.size() ? s_[p] : '\0'; }
  std::size_t size() const { return s_.size(); }

 private:
  std::string_view s_;
};

struct ParseOutcome {
  std::optional<MacroDef> def;
  std::optional<ExtractIssue> issue;
  std::size_t resume = 0;  // source offset to continue from
};

std::string_view trim(std::string_view v) {
  while (!v.empty() && std::isspace(static_cast<unsigned char>(v.front()))) v.remove_prefix(1);
  while (!v.empty() && std::isspace(static_cast<unsigned char>(v.back()))) v.remove_suffix(1);
  return v;
}

// Resumes on the line after `offset` so one broken definition does not
// swallow the rest of the preamble.
std::size_t next_line(std::string_view s, std::size_t offset) {
  const std::size_t nl = s.find('\n', offset);
  return nl == std::string_view::npos ? s.size() : nl + 1;
}

class DefinitionParser {
 public:
  DefinitionParser(std::string_view source, const DefinitionScanner& scan) : src_(source), scan_(scan) {}

  ParseOutcome parse(MacroKind kind, std::size_t cs_start, std::size_t cs_end) {
    kind_ = kind;
    start_ = cs_start;
    fallback_ = cs_end;
    MacroDef def;
    def.kind = kind;
    std::size_t p = cs_end;

    if (kind != MacroKind::Def && scan_.at(p) == '*') {
      def.starred = true;
      ++p;
    }
    p = scan_.skip_blank(p);

    // Name: \name or {\name}
    if (scan_.at(p) == '{') {
      const std::size_t inner = scan_.skip_blank(p + 1);
      const std::size_t name_end = scan_.control_sequence(inner);
      if (name_end == DefinitionScanner::npos) return malformed(p, "expected control sequence name");
      const std::size_t close = scan_.skip_blank(name_end);
      if (scan_.at(close) != '}') return malformed(p, "expected '}' after macro name");
      def.name = std::string(scan_.slice(inner + 1, name_end));
      p = close + 1;
    } else if (scan_.at(p) == '\\') {
      const std::size_t name_end = scan_.control_sequence(p);
      if (name_end == DefinitionScanner::npos) return malformed(p, "expected control sequence name");
      def.name = std::string(scan_.slice(p + 1, name_end));
      p = name_end;
    } else {
      return malformed(p, "expected macro name");
    }

    if (kind == MacroKind::Def) {
      // Parameter text up to the body brace: #1#2...
      std::size_t q = p;
      while (q < scan_.size() && scan_.at(q) != '{') {
        if (scan_.at(q) == '#' && std::isdigit(static_cast<unsigned char>(scan_.at(q + 1)))) {
          def.arity = std::max(def.arity, scan_.at(q + 1) - '0');
        }
        if (scan_.at(q) == '\\') ++q;
        ++q;
      }
      p = q;
    } else if (kind != MacroKind::DeclareMathOperator) {
      p = scan_.skip_blank(p);
      if (scan_.at(p) == '[') {
        const std::size_t end = scan_.optional_argument(p);
        if (end == DefinitionScanner::npos) return malformed(p, "unterminated '[' in arity");
        const std::string_view n = trim(scan_.slice(p + 1, end - 1));
        if (n.size() != 1 || !std::isdigit(static_cast<unsigned char>(n[0]))) {
          return malformed(p, "arity must be a single digit");
        }
        def.arity = n[0] - '0';
        p = scan_.skip_blank(end);
        if (scan_.at(p) == '[') {
          const std::size_t dend = scan_.optional_argument(p);
          if (dend == DefinitionScanner::npos) return malformed(p, "unterminated default argument");
          def.has_default = true;
          p = dend;
        }
      }
    }

    p = scan_.skip_blank(p);
    std::size_t body_end = DefinitionScanner::npos;
    if (scan_.at(p) == '{') {
      body_end = scan_.group(p);
      if (body_end == DefinitionScanner::npos) {
        ParseOutcome out;
        out.issue = ExtractIssue{ExtractIssue::Kind::UnterminatedGroup, p,
                                 std::string("unterminated group in \\") + def.name + " definition"};
        out.resume = next_line(src_, p);
        return out;
      }
    } else if (scan_.at(p) == '\\' && kind != MacroKind::Def) {
      body_end = scan_.control_sequence(p);
    }
    if (body_end == DefinitionScanner::npos) return malformed(p, "expected definition body");

    def.span = ByteSpan{start_, body_end};
    def.raw_text = std::string(scan_.slice(start_, body_end));
    ParseOutcome out;
    out.def = std::move(def);
    out.resume = body_end;
    return out;
  }

 private:
  ParseOutcome malformed(std::size_t at, const std::string& message) {
    ParseOutcome out;
    out.issue = ExtractIssue{ExtractIssue::Kind::Malformed, at,
                             std::string("\\") + to_string(kind_) + " at offset " + std::to_string(start_) + ": " +
                                 message};
    out.resume = fallback_;
    return out;
  }

  std::string_view src_;
  const DefinitionScanner& scan_;
  MacroKind kind_ = MacroKind::NewCommand;
  std::size_t start_ = 0;
  std::size_t fallback_ = 0;
};

std::optional<MacroKind> defining_kind(std::string_view cs) {
  if (cs == "\\newcommand") return MacroKind::NewCommand;
  if (cs == "\\renewcommand") return MacroKind::RenewCommand;
  if (cs == "\\providecommand") return MacroKind::ProvideCommand;
  if (cs == "\\DeclareMathOperator") return MacroKind::DeclareMathOperator;
  if (cs == "\\def") return MacroKind::Def;
  return std::nullopt;
}

bool is_blank_text(std::string_view v) {
  return std::all_of(v.begin(), v.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

// Matches \begin{document} / \end{document} starting at token i; returns the
// index of the closing brace token.
std::optional<std::size_t> match_document_marker(const TokenStream& ts, std::size_t i, std::string_view cs) {
  const auto& t = ts.tokens;
  if (t[i].kind != TokenKind::ControlSequence || ts.lexeme(t[i]) != cs) return std::nullopt;
  std::size_t j = i + 1;
  if (j < t.size() && t[j].kind == TokenKind::Text && is_blank_text(ts.lexeme(t[j]))) ++j;
  if (j + 2 >= t.size()) return std::nullopt;
  if (t[j].kind != TokenKind::GroupOpen) return std::nullopt;
  if (t[j + 1].kind != TokenKind::Text || trim(ts.lexeme(t[j + 1])) != "document") return std::nullopt;
  if (t[j + 2].kind != TokenKind::GroupClose) return std::nullopt;
  return j + 2;
}

std::string collapse_lower(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

bool is_stripped_control(unsigned char c) { return c < 0x20 && c != '\n' && c != '\t'; }

}  // namespace

TokenStream tokenize(std::string source) {
  TokenStream ts;
  ts.source = std::move(source);
  ts.tokens = Tokenizer(ts.source).run();
  return ts;
}

MacroExtraction extract_macros(const TokenStream& stream) {
  MacroExtraction out;
  const DefinitionScanner scan(stream.source);
  DefinitionParser parser(stream.source, scan);
  int depth = 0;
  std::size_t resume = 0;
  for (const Token& tok : stream.tokens) {
    if (tok.span.start < resume) continue;
    switch (tok.kind) {
      case TokenKind::GroupOpen: ++depth; break;
      case TokenKind::GroupClose: depth = std::max(0, depth - 1); break;
      case TokenKind::ControlSequence: {
        if (depth != 0) break;
        const auto kind = defining_kind(stream.lexeme(tok));
        if (!kind) break;
        ParseOutcome r = parser.parse(*kind, tok.span.start, tok.span.end);
        if (r.def) out.macros.push_back(std::move(*r.def));
        if (r.issue) out.issues.push_back(std::move(*r.issue));
        resume = r.resume;
        break;
      }
      default: break;
    }
  }
  return out;
}

std::string macro_block(const std::vector<MacroDef>& macros) {
  std::string out;
  for (const auto& m : macros) {
    if (!out.empty()) out.push_back('\n');
    out += m.raw_text;
  }
  return out;
}

DocumentBody extract_body(const TokenStream& stream) {
  std::optional<std::size_t> body_start;
  std::optional<std::size_t> body_end;
  const auto& t = stream.tokens;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!body_start) {
      if (auto close = match_document_marker(stream, i, "\\begin")) {
        body_start = t[*close].span.end;
        i = *close;
        continue;
      }
    }
    if (match_document_marker(stream, i, "\\end") && body_start && t[i].span.start >= *body_start) {
      body_end = t[i].span.start;
    }
  }
  DocumentBody body;
  if (body_start && body_end) {
    body.span = ByteSpan{*body_start, *body_end};
    body.text = stream.source.substr(*body_start, *body_end - *body_start);
  } else {
    body.span = ByteSpan{0, stream.source.size()};
    body.text = stream.source;
    body.warning = body_start ? "missing \\end{document}; using the whole source as body"
                              : "missing \\begin{document}; using the whole source as body";
  }
  return body;
}

void SanitizeReport::merge(const SanitizeReport& other) {
  suspicious = suspicious || other.suspicious;
  for (const auto& hit : other.blocklist_hits) {
    if (std::find(blocklist_hits.begin(), blocklist_hits.end(), hit) == blocklist_hits.end()) {
      blocklist_hits.push_back(hit);
    }
  }
  comments_removed += other.comments_removed;
  control_chars_removed += other.control_chars_removed;
}

StrippedText strip_for_llm(std::string_view text) {
  // Control characters go first so the comment pass sees the final byte layout.
  std::string cleaned;
  std::vector<std::size_t> offsets;
  cleaned.reserve(text.size());
  offsets.reserve(text.size());
  StrippedText out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (is_stripped_control(static_cast<unsigned char>(text[i]))) {
      ++out.control_chars_removed;
      continue;
    }
    cleaned.push_back(text[i]);
    offsets.push_back(i);
  }
  const TokenStream ts = tokenize(cleaned);
  out.text.reserve(cleaned.size());
  out.source_offsets.reserve(cleaned.size());
  for (const Token& tok : ts.tokens) {
    if (tok.kind == TokenKind::Comment) {
      ++out.comments_removed;
      continue;
    }
    out.text.append(ts.source, tok.span.start, tok.span.size());
    for (std::size_t k = tok.span.start; k < tok.span.end; ++k) out.source_offsets.push_back(offsets[k]);
  }
  return out;
}

const std::vector<std::string>& injection_blocklist() {
  static const std::vector<std::string> list = {"ignore previous",    "ignore all prior",  "system prompt",
                                                "you are the grader", "award full credit", "give full marks"};
  return list;
}

std::vector<std::string> find_injection_phrases(std::string_view text) {
  const std::string haystack = collapse_lower(text);
  std::vector<std::string> hits;
  for (const auto& phrase : injection_blocklist()) {
    if (haystack.find(phrase) != std::string::npos) hits.push_back(phrase);
  }
  return hits;
}

SanitizedInput sanitize_for_llm(std::string_view macro_block_text, std::string_view body, const Config&) {
  SanitizedInput out;
  for (std::string_view part : {macro_block_text, body}) {
    for (auto& hit : find_injection_phrases(part)) {
      if (std::find(out.report.blocklist_hits.begin(), out.report.blocklist_hits.end(), hit) ==
          out.report.blocklist_hits.end()) {
        out.report.blocklist_hits.push_back(std::move(hit));
      }
    }
  }
  out.report.suspicious = !out.report.blocklist_hits.empty();

  StrippedText m = strip_for_llm(macro_block_text);
  StrippedText b = strip_for_llm(body);
  out.report.comments_removed = m.comments_removed + b.comments_removed;
  out.report.control_chars_removed = m.control_chars_removed + b.control_chars_removed;
  out.macro_block = std::move(m.text);
  out.body = std::move(b.text);
  return out;
}

}  // namespace lata::tex
