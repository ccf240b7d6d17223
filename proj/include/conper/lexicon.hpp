#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

namespace conper::annotate {

enum class Pos { noun, verb, adjective, adverb, proper_noun, other };

struct LexEntry {
  Pos pos = Pos::other;
  std::string lemma;
};

/// Curated stop-word list, POS/lemma table and valence lexicon. The defaults
/// are compiled in; each table can be replaced from a file with the same
/// layout as the embedded text (see lexicon.cpp).
class Lexicon {
 public:
  static const Lexicon& builtin();

  static Lexicon from_text(std::string_view stopwords, std::string_view pos_table,
                           std::string_view valences);
  static Lexicon from_files(const std::string& stopwords_path, const std::string& pos_path,
                            const std::string& valence_path);

  bool is_stopword(std::string_view lower_word) const;

  /// Lexicon lookup, else suffix heuristics. `sentence_initial` disables the
  /// capitalized-word proper-noun rule.
  LexEntry analyze(std::string_view word, bool sentence_initial) const;

  /// Valence in [-4, 4] for lexicon words; nullopt otherwise.
  std::optional<double> valence(std::string_view lower_word) const;

  std::size_t pos_entries() const { return pos_.size(); }
  std::size_t valence_entries() const { return valence_.size(); }

 private:
  std::unordered_set<std::string> stop_;
  std::unordered_map<std::string, LexEntry> pos_;
  std::unordered_map<std::string, double> valence_;
};

}  // namespace conper::annotate
