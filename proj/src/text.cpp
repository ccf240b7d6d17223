#include "conper/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace conper::text {
namespace {

constexpr std::array<std::string_view, 22> kAbbreviations = {
    "mr", "mrs", "ms", "dr", "st", "jr", "sr", "prof", "gen", "col", "capt", "lt",
    "sgt", "vs", "etc", "e.g", "i.e", "mt", "ft", "no", "vol", "fig"};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

bool is_abbreviation(std::string_view text, std::size_t dot) {
  std::size_t start = dot;
  while (start > 0 && (is_alnum(text[start - 1]) || text[start - 1] == '.')) --start;
  const std::string word = to_lower(text.substr(start, dot - start));
  if (word.empty()) return false;
  if (word.size() == 1 && std::isalpha(static_cast<unsigned char>(word[0]))) return true;
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), word) != kAbbreviations.end();
}

void push_trimmed(std::string_view text, std::size_t b, std::size_t e, std::vector<Span>& out) {
  while (b < e && is_space(text[b])) ++b;
  while (e > b && is_space(text[e - 1])) --e;
  if (e > b) out.push_back({b, e});
}

}  // namespace

std::vector<Span> rule_based_sentence_spans(std::string_view text) {
  std::vector<Span> spans;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && (text[j] == '.' || text[j] == '!' || text[j] == '?')) ++j;
    while (j < text.size() && is_closer(text[j])) ++j;
    const bool at_boundary = j == text.size() || is_space(text[j]);
    const bool single_dot = (j - i == 1 || (j > i + 1 && is_closer(text[i + 1]))) && c == '.';
    if (at_boundary && !(single_dot && is_abbreviation(text, i))) {
      push_trimmed(text, start, j, spans);
      start = j;
    }
    i = j;
  }
  push_trimmed(text, start, text.size(), spans);
  return spans;
}

std::vector<std::string> split_sentences(std::string_view text, const SentenceSplitter& splitter) {
  std::vector<std::string> out;
  for (const Span& s : splitter(text)) out.emplace_back(text.substr(s.begin, s.size()));
  return out;
}

std::string join_sentences(const std::vector<std::string>& sentences) {
  std::string out;
  for (const auto& s : sentences) {
    if (!out.empty()) out += ' ';
    out += s;
  }
  return out;
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (is_space(c)) {
      ++i;
      continue;
    }
    if (is_alnum(c)) {
      std::size_t j = i;
      while (j < text.size() &&
             (is_alnum(text[j]) || (text[j] == '\'' && j + 1 < text.size() && is_alnum(text[j + 1]) && j > i)))
        ++j;
      tokens.emplace_back(text.substr(i, j - i));
      i = j;
    } else if (static_cast<unsigned char>(c) >= 0x80) {
      // keep multi-byte UTF-8 sequences whole
      std::size_t j = i + 1;
      while (j < text.size() && (static_cast<unsigned char>(text[j]) & 0xC0) == 0x80) ++j;
      tokens.emplace_back(text.substr(i, j - i));
      i = j;
    } else {
      tokens.emplace_back(1, c);
      ++i;
    }
  }
  return tokens;
}

bool is_word(std::string_view token) {
  return !token.empty() && std::any_of(token.begin(), token.end(), [](char c) { return is_alnum(c); });
}

std::vector<std::string> lower_words(std::string_view text) {
  std::vector<std::string> out;
  for (auto& t : word_tokens(text))
    if (is_word(t)) out.push_back(to_lower(t));
  return out;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::string scrub_utf8(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    unsigned min = 0;
    if (c < 0x80) len = 1;
    else if ((c & 0xE0) == 0xC0) len = 2, min = 0x80;
    else if ((c & 0xF0) == 0xE0) len = 3, min = 0x800;
    else if ((c & 0xF8) == 0xF0) len = 4, min = 0x10000;
    bool ok = len > 0 && i + len <= s.size();
    unsigned cp = len == 1 ? c : len == 2 ? (c & 0x1F) : len == 3 ? (c & 0x0F) : (c & 0x07);
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      ok = (b & 0xC0) == 0x80;
      cp = (cp << 6) | (b & 0x3F);
    }
    if (ok && len > 1) ok = cp >= min && cp <= 0x10FFFF && (cp < 0xD800 || cp > 0xDFFF);
    if (ok) {
      out.append(s.substr(i, len));
      i += len;
    } else {
      ++i;
    }
  }
  return out;
}

}  // namespace conper::text
