// Stand-in for pdflatex on hosts without a TeX distribution. Accepts the
// same command line, writes <job>.log in pdfTeX's error format and a small
// uncompressed <job>.pdf on success. Detects the failure classes the tests
// plant: unbalanced braces, mismatched environments, unbalanced inline or
// display math, and Unicode characters that were never declared.
//
// FAKE_PDFLATEX_SLEEP=<seconds> makes it hang first (timeout tests).

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace {

struct Failure {
  std::string message;  // without the leading "! "
  int line = 0;
  std::string context;
};

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Source with comments blanked, line structure kept.
std::string without_comments(const std::string& src) {
  std::string out;
  bool in_comment = false;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const char c = src[i];
    if (c == '\n') {
      in_comment = false;
      out += c;
      continue;
    }
    if (in_comment) continue;
    if (c == '\\' && i + 1 < src.size()) {
      out += c;
      out += src[++i];
      continue;
    }
    if (c == '%') {
      in_comment = true;
      continue;
    }
    out += c;
  }
  return out;
}

int line_of(const std::string& s, std::size_t pos) {
  int line = 1;
  for (std::size_t i = 0; i < pos && i < s.size(); ++i) line += s[i] == '\n';
  return line;
}

std::string line_text(const std::string& s, int line) {
  std::istringstream in(s);
  std::string l;
  for (int i = 1; std::getline(in, l); ++i) {
    if (i == line) return l;
  }
  return "";
}

unsigned decode_utf8(const std::string& s, std::size_t& i) {
  const auto b = static_cast<unsigned char>(s[i]);
  int extra = b >= 0xf0 ? 3 : b >= 0xe0 ? 2 : b >= 0xc0 ? 1 : 0;
  unsigned cp = extra == 3 ? b & 0x07 : extra == 2 ? b & 0x0f : extra == 1 ? b & 0x1f : b;
  for (int k = 0; k < extra && i + 1 < s.size(); ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[++i]) & 0x3f);
  return cp;
}

std::optional<Failure> check(const std::string& raw) {
  const std::string src = without_comments(raw);
  if (src.find("\\documentclass") == std::string::npos) return Failure{"LaTeX Error: Missing \\begin{document}.", 1, ""};

  std::set<unsigned> declared;
  for (std::size_t p = src.find("\\DeclareUnicodeCharacter{"); p != std::string::npos;
       p = src.find("\\DeclareUnicodeCharacter{", p + 1)) {
    declared.insert(static_cast<unsigned>(std::strtoul(src.c_str() + p + 25, nullptr, 16)));
  }

  std::vector<std::pair<std::string, std::size_t>> envs;
  int depth = 0;
  bool inline_math = false;
  std::size_t inline_at = 0;
  bool display_math = false;
  std::size_t display_at = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const char c = src[i];
    if (c == '\\' && i + 1 < src.size()) {
      const char n = src[i + 1];
      if (n == '[' || n == ']') {
        if ((n == '[') == display_math) {
          return Failure{n == '[' ? "Display math should end with $$." : "LaTeX Error: Bad math environment delimiter.",
                         line_of(src, i), line_text(src, line_of(src, i))};
        }
        display_math = n == '[';
        display_at = i;
        ++i;
        continue;
      }
      for (const char* kw : {"begin{", "end{"}) {
        const std::string k(kw);
        if (src.compare(i + 1, k.size(), k) == 0) {
          const std::size_t close = src.find('}', i + 1 + k.size());
          if (close == std::string::npos) break;
          const std::string name = src.substr(i + 1 + k.size(), close - i - 1 - k.size());
          if (k == "begin{") {
            envs.emplace_back(name, i);
          } else if (envs.empty() || envs.back().first != name) {
            const std::string open = envs.empty() ? "" : envs.back().first;
            return Failure{"LaTeX Error: \\begin{" + open + "} on input line " +
                               std::to_string(envs.empty() ? 0 : line_of(src, envs.back().second)) +
                               " ended by \\end{" + name + "}.",
                           line_of(src, i), line_text(src, line_of(src, i))};
          } else {
            envs.pop_back();
          }
        }
      }
      ++i;
      continue;
    }
    if (c == '{') ++depth;
    if (c == '}' && --depth < 0) return Failure{"Too many }'s.", line_of(src, i), line_text(src, line_of(src, i))};
    if (c == '$') {
      inline_math = !inline_math;
      inline_at = i;
    }
    if (static_cast<unsigned char>(c) >= 0x80) {
      const std::size_t at = i;
      const unsigned cp = decode_utf8(src, i);
      if (cp >= 0x2000 && !declared.count(cp)) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04X", cp);
        return Failure{"LaTeX Error: Unicode character " + src.substr(at, i - at + 1) + " (U+" + buf +
                           ")\n               not set up for use with LaTeX.",
                       line_of(src, at), line_text(src, line_of(src, at))};
      }
    }
  }
  if (inline_math) return Failure{"Missing $ inserted.", line_of(src, inline_at), line_text(src, line_of(src, inline_at))};
  if (display_math) {
    return Failure{"Missing $$ inserted.", line_of(src, display_at), line_text(src, line_of(src, display_at))};
  }
  if (!envs.empty()) {
    return Failure{"LaTeX Error: \\begin{" + envs.back().first + "} on input line " +
                       std::to_string(line_of(src, envs.back().second)) + " ended by \\end{document}.",
                   line_of(src, src.size()), ""};
  }
  if (depth != 0) return Failure{"File ended while scanning use of \\@argument.", line_of(src, src.size()), ""};
  if (src.find("\\end{document}") == std::string::npos) {
    return Failure{"Emergency stop.", line_of(src, src.size()), "*** (job aborted, no legal \\end found)"};
  }
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* s = std::getenv("FAKE_PDFLATEX_SLEEP")) {
    std::this_thread::sleep_for(std::chrono::duration<double>(std::atof(s)));
  }
  std::string outdir = ".";
  std::string input;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a.rfind("-output-directory=", 0) == 0) {
      outdir = a.substr(18);
    } else if (!a.empty() && a[0] != '-') {
      input = a;
    }
  }
  if (input.empty()) {
    std::cerr << "fake pdflatex: no input file\n";
    return 1;
  }
  std::string job = input.substr(input.find_last_of('/') + 1);
  if (job.size() > 4 && job.substr(job.size() - 4) == ".tex") job.resize(job.size() - 4);
  const std::string src = read_all(input);

  std::ofstream log(outdir + "/" + job + ".log", std::ios::binary | std::ios::trunc);
  log << "This is pdfTeX, Version 3.141592653-2.6-1.40.25 (fake)\n"
      << " restricted \\write18 enabled.\n"
      << "entering extended mode\n"
      << "(./" << job << ".tex\n"
      << "LaTeX2e <2023-11-01>\n";
  if (const auto failure = check(src)) {
    log << "\n! " << failure->message << "\n"
        << "l." << failure->line << " " << failure->context << "\n"
        << "\n"
        << "No pages of output.\n"
        << "Transcript written on " << job << ".log.\n";
    std::cout << "! " << failure->message << "\n";
    return 1;
  }
  std::ofstream pdf(outdir + "/" + job + ".pdf", std::ios::binary | std::ios::trunc);
  pdf << "%PDF-1.4\n% fake output, text stream follows\n" << without_comments(src) << "\n%%EOF\n";
  log << ")\nOutput written on " << job << ".pdf (1 page).\n"
      << "Transcript written on " << job << ".log.\n";
  return 0;
}
