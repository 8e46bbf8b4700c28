#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lata {
struct Config;
}

namespace lata::tex {

struct ByteSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - start; }
  friend bool operator==(const ByteSpan&, const ByteSpan&) = default;
};

enum class TokenKind { ControlSequence, GroupOpen, GroupClose, Comment, Text, MathShift };

const char* to_string(TokenKind kind);

struct Token {
  TokenKind kind;
  ByteSpan span;
};

// Owns its source; tokens index into it. Concatenating every lexeme in
// order reproduces `source` byte for byte.
struct TokenStream {
  std::string source;
  std::vector<Token> tokens;

  std::string_view lexeme(const Token& t) const {
    return std::string_view(source).substr(t.span.start, t.span.size());
  }
};

// Total over arbitrary bytes. Comments run from an unescaped '%' up to (not
// including) the line break. Contents of verbatim-like environments and
// \verb arguments are single text tokens.
TokenStream tokenize(std::string source);

enum class MacroKind { NewCommand, RenewCommand, Def, DeclareMathOperator, ProvideCommand };

const char* to_string(MacroKind kind);

struct MacroDef {
  MacroKind kind;
  std::string name;  // without the leading backslash
  int arity = 0;
  bool has_default = false;
  bool starred = false;
  ByteSpan span;
  std::string raw_text;
};

struct ExtractIssue {
  enum class Kind { UnterminatedGroup, Malformed };
  Kind kind;
  std::size_t offset;
  std::string message;
};

struct MacroExtraction {
  std::vector<MacroDef> macros;
  std::vector<ExtractIssue> issues;
};

// Definitions at group depth 0, in source order.
MacroExtraction extract_macros(const TokenStream& stream);

// Raw definitions joined by newlines.
std::string macro_block(const std::vector<MacroDef>& macros);

struct DocumentBody {
  std::string text;
  ByteSpan span;
  std::optional<std::string> warning;  // set when the document environment is missing
};

// Slice between the first \begin{document} and the last \end{document}.
DocumentBody extract_body(const TokenStream& stream);

struct SanitizeReport {
  bool suspicious = false;
  std::vector<std::string> blocklist_hits;
  std::size_t comments_removed = 0;
  std::size_t control_chars_removed = 0;

  void merge(const SanitizeReport& other);
};

// Text with comments and C0 control characters (other than \n and \t)
// removed. source_offsets[i] is the offset in the input of text[i].
struct StrippedText {
  std::string text;
  std::vector<std::size_t> source_offsets;
  std::size_t comments_removed = 0;
  std::size_t control_chars_removed = 0;
};

StrippedText strip_for_llm(std::string_view text);

const std::vector<std::string>& injection_blocklist();

// Blocklist phrases found in text (case-insensitive, whitespace-collapsed).
std::vector<std::string> find_injection_phrases(std::string_view text);

struct SanitizedInput {
  std::string macro_block;
  std::string body;
  SanitizeReport report;
};

// Idempotent. Flags injection-shaped phrases (also inside comments, which
// are then removed) but never deletes visible student text.
SanitizedInput sanitize_for_llm(std::string_view macro_block, std::string_view body, const Config& config);

}  // namespace lata::tex
