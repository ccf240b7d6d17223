#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "conper/rng.hpp"
#include "conper/text.hpp"

namespace conper::corpus {

enum class Split { train, valid, test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

/// One training/evaluation unit: leading context, persona card, protagonist and story.
struct Example {
  std::string id;
  std::string context;
  std::string persona;
  std::string protagonist;
  std::string story;
  Split split = Split::train;

  bool operator==(const Example&) const = default;
};

/// A required field is missing or has the wrong type.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Field contents violate an Example invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Rejection {
  std::size_t line = 0;  // 1-based
  std::string reason;
};

struct LoadResult {
  std::vector<Example> examples;
  std::vector<Rejection> rejected;
};

void validate(const Example& e);

/// Parses one JSON record. Throws SchemaError or ValidationError.
Example parse_record(std::string_view line, std::size_t line_number = 0);
std::string serialize(const Example& e);

/// Reads line-delimited JSON records. Records of other splits are skipped
/// when `split` is set; malformed records are collected in `rejected`.
LoadResult read_dataset(std::istream& in, std::optional<Split> split = std::nullopt);
LoadResult load_dataset(const std::string& path, std::optional<Split> split = std::nullopt);
void write_dataset(const std::string& path, const std::vector<Example>& examples);

using TokenCounter = std::function<std::size_t(std::string_view)>;

/// Whitespace-free fallback counter: word and punctuation tokens.
std::size_t count_word_tokens(std::string_view text);

/// Keeps the longest prefix of whole story sentences within `max_tokens`;
/// the first sentence is always kept.
Example truncate_example(const Example& e, std::size_t max_tokens, const TokenCounter& count,
                         const text::SentenceSplitter& splitter = text::rule_based_sentence_spans);

/// Table 1 style statistics. Lengths are in backbone tokens.
struct DatasetStats {
  std::size_t num_examples = 0;
  double avg_context_len = 0;
  double avg_persona_len = 0;
  double avg_story_len = 0;
  double avg_target_len = 0;
  double avg_keywords_input = 0;
  double avg_keywords_story = 0;
};

std::string format_stats(const DatasetStats& stats, std::string_view split_name);

// ---------------------------------------------------------------------------
// Synthetic planted-signal corpus

struct Trait {
  std::string occupation;
  std::string adjective;
  bool positive = true;
  std::string persona;
  std::string sentence;               // "{N}" marks the protagonist
  std::vector<std::string> keywords;  // lemmatized event keywords of `sentence`
};

/// 12 occupations x {positive, negative}; index 2*i is positive, 2*i+1 negative.
const std::vector<Trait>& trait_lexicon();
const std::vector<std::string>& filler_sentences();
const std::vector<std::string>& context_templates();
const std::vector<std::string>& protagonist_names();

inline constexpr std::size_t kFillerBefore = 3;
inline constexpr std::size_t kFillerAfter = 3;

/// Everything about a synthetic example except the trait.
struct Scene {
  std::size_t context = 0;
  std::size_t name = 0;
  std::vector<std::size_t> fillers;  // kFillerBefore + kFillerAfter distinct indices
};

Scene draw_scene(Rng& rng);
std::string fill_name(std::string_view templ, std::string_view name);
Example synthesize_example(const Scene& scene, const Trait& trait, std::string id, Split split);

/// Deterministic given seed. The last 10% are test, the 10% before valid.
std::vector<Example> make_synthetic_corpus(std::size_t n, std::uint64_t seed);

/// Index into trait_lexicon() of the trait whose persona equals `persona`.
std::optional<std::size_t> trait_of_persona(std::string_view persona);

}  // namespace conper::corpus
