#include "conper/annotate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "conper/rng.hpp"
#include "conper/text.hpp"

namespace conper::annotate {
namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Eigen::MatrixXd normalize_rows(Eigen::MatrixXd m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n > 0) m.row(r) /= n;
  }
  return m;
}

std::string_view source_name(KeywordSource s) { return s == KeywordSource::emotion ? "emotion" : "event"; }

KeywordSource parse_source(std::string_view s) {
  if (s == "emotion") return KeywordSource::emotion;
  if (s == "event") return KeywordSource::event;
  throw std::runtime_error("unknown keyword source '" + std::string(s) + "'");
}

nlohmann::json keywords_json(const std::vector<Keyword>& kws) {
  auto arr = nlohmann::json::array();
  for (const auto& k : kws)
    arr.push_back({{"surface", k.surface}, {"source", source_name(k.source)}, {"sentence", k.sentence_index}});
  return arr;
}

std::vector<Keyword> keywords_from_json(const nlohmann::json& arr) {
  std::vector<Keyword> out;
  for (const auto& k : arr)
    out.push_back({k.at("surface").get<std::string>(), parse_source(k.at("source").get<std::string>()),
                   k.at("sentence").get<std::size_t>()});
  return out;
}

}  // namespace

Eigen::VectorXd HashedWordEmbedder::word_vector(std::string_view lower_word) const {
  Rng rng(derive_seed(seed_, fnv1a(lower_word)));
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim_));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  return v / v.norm();
}

Eigen::MatrixXd HashedWordEmbedder::embed(std::string_view text) const {
  const auto words = text::lower_words(text);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(words.size()), static_cast<Eigen::Index>(dim_));
  for (std::size_t i = 0; i < words.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = word_vector(words[i]).transpose();
  return m;
}

Eigen::MatrixXd TableEmbedder::embed(std::string_view text) const {
  const auto words = text::lower_words(text);
  if (words.empty()) return {};
  const Eigen::Index dim = table_.begin()->second.size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(words.size()), dim);
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto it = table_.find(words[i]);
    if (it == table_.end()) throw std::invalid_argument("no embedding for '" + words[i] + "'");
    m.row(static_cast<Eigen::Index>(i)) = it->second.transpose();
  }
  return m;
}

double score_similarity(std::string_view candidate, std::string_view reference, const TokenEmbedder& embedder) {
  if (text::trim(candidate).empty() || text::trim(reference).empty())
    throw std::invalid_argument("score_similarity: empty input");
  const Eigen::MatrixXd ref = normalize_rows(embedder.embed(reference));
  const Eigen::MatrixXd cand = normalize_rows(embedder.embed(candidate));
  if (ref.rows() == 0 || cand.rows() == 0) throw std::invalid_argument("score_similarity: no embeddable tokens");
  const Eigen::MatrixXd sim = ref * cand.transpose();
  return sim.rowwise().maxCoeff().mean();
}

std::string_view to_string(TargetPolicy p) {
  switch (p) {
    case TargetPolicy::best1: return "best1";
    case TargetPolicy::best2: return "best2";
    case TargetPolicy::random: return "random";
  }
  return "best1";
}

TargetPolicy parse_target_policy(std::string_view s) {
  if (s == "best1") return TargetPolicy::best1;
  if (s == "best2" || s == "multi") return TargetPolicy::best2;
  if (s == "random" || s == "rand") return TargetPolicy::random;
  throw std::invalid_argument("unknown target policy '" + std::string(s) + "'");
}

TargetAnnotation select_target(const std::vector<std::string>& sentences, std::string_view persona,
                               TargetPolicy policy, std::uint64_t seed, const TokenEmbedder& embedder) {
  if (sentences.empty()) throw std::invalid_argument("select_target: empty story");
  TargetAnnotation out;
  out.policy = policy;
  if (policy == TargetPolicy::random) {
    Rng rng(seed);
    const std::size_t idx = rng.below(sentences.size());
    out.sentence_indices = {idx};
    out.scores = {score_similarity(sentences[idx], persona, embedder)};
    return out;
  }
  const std::size_t want = policy == TargetPolicy::best1 ? 1 : 2;
  if (sentences.size() < want) throw std::invalid_argument("select_target: best2 needs at least two sentences");
  std::vector<double> scores(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) scores[i] = score_similarity(sentences[i], persona, embedder);
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  for (std::size_t i = 0; i < want; ++i) {
    out.sentence_indices.push_back(order[i]);
    out.scores.push_back(scores[order[i]]);
  }
  return out;
}

SentimentScores sentiment_distribution(std::string_view word, const Lexicon& lexicon) {
  SentimentScores s;
  const auto v = lexicon.valence(text::to_lower(word));
  if (!v) return s;
  const double intensity = std::min(std::abs(*v) / 4.0, 1.0);
  s.positive = *v > 0 ? intensity : 0.0;
  s.negative = *v < 0 ? intensity : 0.0;
  s.neutral = 1.0 - intensity;
  s.compound = *v / std::sqrt(*v * *v + 15.0);
  return s;
}

std::vector<Keyword> extract_keywords(std::string_view sentence, std::size_t cap, bool ensure_nonempty,
                                      std::uint64_t seed, std::size_t sentence_index, const Lexicon& lexicon) {
  const auto tokens = text::word_tokens(sentence);
  std::vector<Keyword> out;
  bool first_word = true;
  for (const auto& tok : tokens) {
    if (!text::is_word(tok)) continue;
    const bool initial = first_word;
    first_word = false;
    const std::string lower = text::to_lower(tok);
    const SentimentScores s = sentiment_distribution(lower, lexicon);
    if (s.negative > kEmotionThreshold || s.positive > kEmotionThreshold) {
      out.push_back({lower, KeywordSource::emotion, sentence_index});
      continue;
    }
    if (lexicon.is_stopword(lower)) continue;
    const LexEntry entry = lexicon.analyze(tok, initial);
    if (entry.pos == Pos::noun || entry.pos == Pos::verb) {
      if (lexicon.is_stopword(entry.lemma)) continue;
      out.push_back({entry.lemma, KeywordSource::event, sentence_index});
    }
  }
  if (out.size() > cap) out.resize(cap);
  if (out.empty() && ensure_nonempty && !tokens.empty()) {
    std::vector<std::string> words;
    for (const auto& tok : tokens)
      if (text::is_word(tok)) words.push_back(text::to_lower(tok));
    if (words.empty()) words = tokens;
    Rng rng(seed);
    out.push_back({words[rng.below(words.size())], KeywordSource::event, sentence_index});
  }
  return out;
}

KeywordPlan extract_plan(const std::vector<std::string>& sentences, std::size_t cap, std::uint64_t seed,
                         const Lexicon& lexicon) {
  if (sentences.empty()) throw std::invalid_argument("extract_plan: empty story");
  KeywordPlan plan;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    auto kws = extract_keywords(sentences[i], cap, true, derive_seed(seed, i), i, lexicon);
    plan.per_sentence_counts.push_back(kws.size());
    plan.keywords.insert(plan.keywords.end(), kws.begin(), kws.end());
  }
  return plan;
}

std::vector<Keyword> extract_input_keywords(std::string_view context, std::string_view persona,
                                            const Lexicon& lexicon) {
  std::vector<Keyword> out;
  std::size_t index = 0;
  for (std::string_view part : {context, persona}) {
    for (const auto& sentence : text::split_sentences(part)) {
      auto kws = extract_keywords(sentence, kNoCap, false, 0, index++, lexicon);
      out.insert(out.end(), kws.begin(), kws.end());
    }
  }
  return out;
}

std::vector<Keyword> extract_text_keywords(std::string_view text, const Lexicon& lexicon) {
  return extract_input_keywords("", text, lexicon);
}

Annotation annotate_example(const corpus::Example& example, const AnnotateOptions& options,
                            const TokenEmbedder& embedder, const Lexicon& lexicon) {
  Annotation a;
  a.example_id = example.id;
  const auto sentences = text::split_sentences(example.story);
  a.target = select_target(sentences, example.persona, options.policy, derive_seed(options.seed, 1), embedder);
  auto indices = a.target.sentence_indices;
  std::sort(indices.begin(), indices.end());
  std::vector<std::string> parts;
  for (auto i : indices) parts.push_back(sentences[i]);
  a.target_text = text::join_sentences(parts);
  a.plan = extract_plan(sentences, options.keyword_cap, derive_seed(options.seed, 2), lexicon);
  a.input_keywords = extract_input_keywords(example.context, example.persona, lexicon);
  a.target_keywords = extract_text_keywords(a.target_text, lexicon);
  return a;
}

std::string to_json_line(const Annotation& a) {
  nlohmann::json j;
  j["example_id"] = a.example_id;
  j["policy"] = std::string(to_string(a.target.policy));
  j["target_indices"] = a.target.sentence_indices;
  j["scores"] = a.target.scores;
  j["target"] = a.target_text;
  j["keywords"] = keywords_json(a.plan.keywords);
  j["per_sentence_counts"] = a.plan.per_sentence_counts;
  j["input_keywords"] = keywords_json(a.input_keywords);
  j["target_keywords"] = keywords_json(a.target_keywords);
  return j.dump();
}

Annotation annotation_from_json(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  Annotation a;
  a.example_id = j.at("example_id").get<std::string>();
  a.target.policy = parse_target_policy(j.at("policy").get<std::string>());
  a.target.sentence_indices = j.at("target_indices").get<std::vector<std::size_t>>();
  a.target.scores = j.at("scores").get<std::vector<double>>();
  a.target_text = j.at("target").get<std::string>();
  a.plan.keywords = keywords_from_json(j.at("keywords"));
  a.plan.per_sentence_counts = j.at("per_sentence_counts").get<std::vector<std::size_t>>();
  a.input_keywords = keywords_from_json(j.at("input_keywords"));
  a.target_keywords = keywords_from_json(j.at("target_keywords"));
  return a;
}

void write_annotations(const std::string& path, const std::vector<Annotation>& annotations) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write annotations '" + path + "'");
  for (const auto& a : annotations) out << to_json_line(a) << '\n';
}

std::vector<Annotation> load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open annotations '" + path + "'");
  std::vector<Annotation> out;
  std::string line;
  while (std::getline(in, line))
    if (!text::trim(line).empty()) out.push_back(annotation_from_json(line));
  return out;
}

corpus::DatasetStats compute_stats(const std::vector<corpus::Example>& examples,
                                   const std::vector<Annotation>& annotations, const corpus::TokenCounter& count) {
  if (examples.size() != annotations.size()) throw std::invalid_argument("compute_stats: size mismatch");
  corpus::DatasetStats s;
  s.num_examples = examples.size();
  if (examples.empty()) return s;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    s.avg_context_len += static_cast<double>(count(examples[i].context));
    s.avg_persona_len += static_cast<double>(count(examples[i].persona));
    s.avg_story_len += static_cast<double>(count(examples[i].story));
    s.avg_target_len += static_cast<double>(count(annotations[i].target_text));
    s.avg_keywords_input += static_cast<double>(annotations[i].input_keywords.size());
    s.avg_keywords_story += static_cast<double>(annotations[i].plan.keywords.size());
  }
  const double n = static_cast<double>(examples.size());
  s.avg_context_len /= n;
  s.avg_persona_len /= n;
  s.avg_story_len /= n;
  s.avg_target_len /= n;
  s.avg_keywords_input /= n;
  s.avg_keywords_story /= n;
  return s;
}

}  // namespace conper::annotate
