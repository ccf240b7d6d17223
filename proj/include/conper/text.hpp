#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace conper::text {

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
};

/// Pluggable sentence boundary detector returning trimmed spans.
using SentenceSplitter = std::function<std::vector<Span>(std::string_view)>;

/// Rule-based splitter: terminal punctuation (. ! ?) followed by optional
/// closing quotes/brackets and whitespace or end of text. Known abbreviations
/// and single-letter initials do not end a sentence.
std::vector<Span> rule_based_sentence_spans(std::string_view text);

std::vector<std::string> split_sentences(std::string_view text,
                                         const SentenceSplitter& splitter = rule_based_sentence_spans);

std::string join_sentences(const std::vector<std::string>& sentences);

/// Words and punctuation marks as separate tokens; apostrophes stay inside words.
std::vector<std::string> word_tokens(std::string_view text);

/// Only the alphanumeric tokens of word_tokens, lowercased.
std::vector<std::string> lower_words(std::string_view text);

bool is_word(std::string_view token);
std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

/// Drops bytes that do not form a well-formed UTF-8 sequence.
std::string scrub_utf8(std::string_view s);

}  // namespace conper::text
