#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "conper/corpus.hpp"
#include "conper/lexicon.hpp"

namespace conper::annotate {

/// Maps a text to one embedding row per token.
class TokenEmbedder {
 public:
  virtual ~TokenEmbedder() = default;
  virtual Eigen::MatrixXd embed(std::string_view text) const = 0;
};

/// Training-free embedder: each lowercased word gets a fixed pseudo-random
/// unit vector, so distinct words are nearly orthogonal. Punctuation is skipped.
class HashedWordEmbedder final : public TokenEmbedder {
 public:
  explicit HashedWordEmbedder(std::size_t dim = 256, std::uint64_t seed = 17) : dim_(dim), seed_(seed) {}
  Eigen::MatrixXd embed(std::string_view text) const override;
  Eigen::VectorXd word_vector(std::string_view lower_word) const;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Explicit word -> vector table; unknown words are an error.
class TableEmbedder final : public TokenEmbedder {
 public:
  explicit TableEmbedder(std::unordered_map<std::string, Eigen::VectorXd> table) : table_(std::move(table)) {}
  Eigen::MatrixXd embed(std::string_view text) const override;

 private:
  std::unordered_map<std::string, Eigen::VectorXd> table_;
};

/// Embedding recall: mean over reference tokens of the best cosine match
/// among candidate tokens.
double score_similarity(std::string_view candidate, std::string_view reference, const TokenEmbedder& embedder);

enum class TargetPolicy { best1, best2, random };

std::string_view to_string(TargetPolicy p);
TargetPolicy parse_target_policy(std::string_view s);

struct TargetAnnotation {
  std::vector<std::size_t> sentence_indices;  // best-first for best1/best2
  std::vector<double> scores;
  TargetPolicy policy = TargetPolicy::best1;
};

/// Ties go to the lower sentence index.
TargetAnnotation select_target(const std::vector<std::string>& story_sentences, std::string_view persona,
                               TargetPolicy policy, std::uint64_t seed, const TokenEmbedder& embedder);

struct SentimentScores {
  double negative = 0;
  double neutral = 1;
  double positive = 0;
  double compound = 0;
};

SentimentScores sentiment_distribution(std::string_view word, const Lexicon& lexicon = Lexicon::builtin());

/// A word counts as an emotion keyword when its negative or positive score exceeds this.
inline constexpr double kEmotionThreshold = 0.5;
inline constexpr std::size_t kNoCap = std::numeric_limits<std::size_t>::max();

enum class KeywordSource { emotion, event };

struct Keyword {
  std::string surface;
  KeywordSource source = KeywordSource::event;
  std::size_t sentence_index = 0;

  bool operator==(const Keyword&) const = default;
};

std::vector<Keyword> extract_keywords(std::string_view sentence, std::size_t cap, bool ensure_nonempty,
                                      std::uint64_t seed, std::size_t sentence_index = 0,
                                      const Lexicon& lexicon = Lexicon::builtin());

struct KeywordPlan {
  std::vector<Keyword> keywords;
  std::vector<std::size_t> per_sentence_counts;

  bool operator==(const KeywordPlan&) const = default;
};

/// Sentence i draws its fallback word with derive_seed(seed, i).
KeywordPlan extract_plan(const std::vector<std::string>& story_sentences, std::size_t cap, std::uint64_t seed = 0,
                         const Lexicon& lexicon = Lexicon::builtin());

/// Uncapped, no fallback. Sentence indices run over context then persona.
std::vector<Keyword> extract_input_keywords(std::string_view context, std::string_view persona,
                                            const Lexicon& lexicon = Lexicon::builtin());

/// Uncapped, no fallback keywords of free text (used for target sentences).
std::vector<Keyword> extract_text_keywords(std::string_view text, const Lexicon& lexicon = Lexicon::builtin());

struct AnnotateOptions {
  TargetPolicy policy = TargetPolicy::best1;
  std::size_t keyword_cap = 5;
  std::uint64_t seed = 0;
};

struct Annotation {
  std::string example_id;
  TargetAnnotation target;
  std::string target_text;  // selected sentences joined in story order
  KeywordPlan plan;
  std::vector<Keyword> input_keywords;
  std::vector<Keyword> target_keywords;
};

Annotation annotate_example(const corpus::Example& example, const AnnotateOptions& options,
                            const TokenEmbedder& embedder, const Lexicon& lexicon = Lexicon::builtin());

std::string to_json_line(const Annotation& a);
Annotation annotation_from_json(std::string_view line);
void write_annotations(const std::string& path, const std::vector<Annotation>& annotations);
std::vector<Annotation> load_annotations(const std::string& path);

corpus::DatasetStats compute_stats(const std::vector<corpus::Example>& examples,
                                   const std::vector<Annotation>& annotations, const corpus::TokenCounter& count);

}  // namespace conper::annotate
