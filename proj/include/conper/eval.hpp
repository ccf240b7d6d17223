#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "conper/annotate.hpp"
#include "conper/autograd.hpp"
#include "conper/corpus.hpp"
#include "conper/rng.hpp"
#include "conper/tokenizer.hpp"

namespace conper::eval {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corpus BLEU with uniform weights over 1..n-grams, brevity penalty and no
/// smoothing. Tokens are word_tokens of the raw text (case kept).
double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references, std::size_t n);

/// Distinct n-grams over all n-grams; n-grams never span two stories.
double distinct_n(const std::vector<std::string>& stories, std::size_t n);

double bs_target(std::string_view generated_target, std::string_view persona, const annotate::TokenEmbedder& embedder);
double bs_max(const std::vector<std::string>& story_sentences, std::string_view persona,
              const annotate::TokenEmbedder& embedder);

struct PCPair {
  std::string context;
  std::string persona;
  std::string story;
  int label = 1;
};

/// One positive per example plus one negative whose story comes from a
/// uniformly drawn example with a different persona text.
std::vector<PCPair> make_pc_pairs(const std::vector<corpus::Example>& examples, Rng& rng);

struct PCOptions {
  std::size_t dim = 32;
  std::size_t hidden = 32;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double learning_rate = 5e-3;
  std::uint64_t seed = 0;
};

struct PCReport {
  double train_accuracy = 0;
  double heldout_accuracy = 0;
  std::size_t heldout_pairs = 0;
  std::size_t epochs = 0;
};

/// Persona-consistency classifier: the persona's mean token embedding
/// attends over story tokens, a bilinear match feature and the two pooled
/// vectors feed a tanh layer and a logistic output. The context is not read,
/// so the protagonist name cannot stand in for the persona.
class PCClassifier {
 public:
  PCClassifier(backbone::Tokenizer tokenizer, const PCOptions& options);

  double score(std::string_view context, std::string_view persona, std::string_view story) const;
  bool trained() const { return trained_; }
  const PCReport& report() const { return report_; }
  const backbone::Tokenizer& tokenizer() const { return tokenizer_; }

  ad::Var logit(ad::Tape& tape, const std::vector<int>& persona, const std::vector<int>& story) const;
  std::vector<ad::Parameter*> parameters() { return {&emb_, &w_q_, &w_b_, &w_1_, &b_1_, &w_2_, &b_2_}; }

  void save(const std::string& path) const;
  static PCClassifier load(const std::string& path);

 private:
  friend PCClassifier train_pc_classifier(const std::vector<corpus::Example>&, const std::vector<corpus::Example>&,
                                          backbone::Tokenizer, const PCOptions&);
  backbone::Tokenizer tokenizer_;
  PCOptions options_;
  ad::Parameter emb_, w_q_, w_b_, w_1_, b_1_, w_2_, b_2_;
  bool trained_ = false;
  PCReport report_;
};

/// Negatives are redrawn every epoch; held-out pairs are drawn once.
PCClassifier train_pc_classifier(const std::vector<corpus::Example>& train, const std::vector<corpus::Example>& heldout,
                                 backbone::Tokenizer tokenizer, const PCOptions& options);

double accuracy(const PCClassifier& c, const std::vector<PCPair>& pairs);

struct ControlResult {
  double score = 0;
  double delta = 0;
  std::size_t stories = 0;
  std::size_t controlled = 0;
};

/// story = generate(context, persona, rng)
using StoryGenerator = std::function<std::string(std::string_view context, std::string_view persona, Rng& rng)>;
/// Scores one story under every candidate persona.
using PersonaScorer = std::function<double(std::string_view context, std::string_view persona, std::string_view story)>;

/// For each example: k-1 foreign personas (distinct texts, none equal to the
/// own persona) drawn from the test set's personas; one story per persona;
/// a story is controlled iff its own persona's score is the strict maximum.
ControlResult controllability(const StoryGenerator& generate, const std::vector<corpus::Example>& testset,
                              const PersonaScorer& scorer, std::size_t k, std::uint64_t seed);

/// The k persona texts used for example i (own persona first).
std::vector<std::string> persona_candidates(const std::vector<corpus::Example>& testset, std::size_t i, std::size_t k,
                                            Rng& rng);

}  // namespace conper::eval
