#include "conper/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "conper/text.hpp"

namespace conper::eval {
namespace {

using ad::Matrix;
using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  std::map<Ngram, std::size_t> out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[Ngram(toks.begin() + static_cast<std::ptrdiff_t>(i), toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

void init(ad::Parameter& p, std::string name, Eigen::Index r, Eigen::Index c, double sd, Rng& rng) {
  p.name = std::move(name);
  p.value = Matrix::Zero(r, c);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = sd * rng.normal();
}

std::vector<int> content_ids(const backbone::Tokenizer& tok, std::string_view text) {
  std::vector<int> ids = tok.encode(text);
  ids.erase(std::remove_if(ids.begin(), ids.end(), [&](int id) { return tok.is_special(id); }), ids.end());
  if (ids.empty()) ids.push_back(backbone::kEos);
  return ids;
}

}  // namespace

double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references, std::size_t n) {
  if (candidates.size() != references.size()) throw std::invalid_argument("bleu: candidate/reference count mismatch");
  if (n == 0) throw std::invalid_argument("bleu: n must be positive");
  std::vector<double> matched(n, 0), total(n, 0);
  double cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto c = text::word_tokens(candidates[i]);
    const auto r = text::word_tokens(references[i]);
    cand_len += static_cast<double>(c.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t k = 1; k <= n; ++k) {
      const auto cc = ngram_counts(c, k);
      const auto rc = ngram_counts(r, k);
      for (const auto& [g, cnt] : cc) {
        const auto it = rc.find(g);
        matched[k - 1] += static_cast<double>(std::min(cnt, it == rc.end() ? 0 : it->second));
        total[k - 1] += static_cast<double>(cnt);
      }
    }
  }
  double log_sum = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (total[k] == 0 || matched[k] == 0) return 0.0;
    log_sum += std::log(matched[k] / total[k]);
  }
  const double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum / static_cast<double>(n));
}

double distinct_n(const std::vector<std::string>& stories, std::size_t n) {
  if (stories.empty()) throw std::invalid_argument("distinct_n: empty corpus");
  if (n == 0) throw std::invalid_argument("distinct_n: n must be positive");
  std::set<Ngram> unique;
  std::size_t total = 0;
  for (const auto& s : stories) {
    const auto toks = text::word_tokens(s);
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
      unique.insert(Ngram(toks.begin() + static_cast<std::ptrdiff_t>(i), toks.begin() + static_cast<std::ptrdiff_t>(i + n)));
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(unique.size()) / static_cast<double>(total);
}

double bs_target(std::string_view generated_target, std::string_view persona, const annotate::TokenEmbedder& embedder) {
  return annotate::score_similarity(generated_target, persona, embedder);
}

double bs_max(const std::vector<std::string>& story_sentences, std::string_view persona,
              const annotate::TokenEmbedder& embedder) {
  if (story_sentences.empty()) throw std::invalid_argument("bs_max: empty story");
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& s : story_sentences) best = std::max(best, annotate::score_similarity(s, persona, embedder));
  return best;
}

std::vector<PCPair> make_pc_pairs(const std::vector<corpus::Example>& examples, Rng& rng) {
  if (examples.size() < 2) throw EvalError("persona-consistency pairs need at least two examples");
  std::vector<PCPair> out;
  out.reserve(2 * examples.size());
  for (const auto& e : examples) {
    std::vector<std::size_t> pool;
    for (std::size_t j = 0; j < examples.size(); ++j)
      if (examples[j].persona != e.persona) pool.push_back(j);
    if (pool.empty()) throw EvalError("every example shares one persona; no negatives can be built");
    out.push_back({e.context, e.persona, e.story, 1});
    out.push_back({e.context, e.persona, examples[pool[rng.below(pool.size())]].story, 0});
  }
  return out;
}

PCClassifier::PCClassifier(backbone::Tokenizer tokenizer, const PCOptions& options)
    : tokenizer_(std::move(tokenizer)), options_(options) {
  Rng rng(derive_seed(options.seed, 31));
  const auto V = static_cast<Eigen::Index>(tokenizer_.vocab_size());
  const auto D = static_cast<Eigen::Index>(options.dim);
  const auto H = static_cast<Eigen::Index>(options.hidden);
  const double sd = 1.0 / std::sqrt(static_cast<double>(D));
  init(emb_, "pc.emb", V, D, 0.3, rng);
  init(w_q_, "pc.w_q", D, D, sd, rng);
  init(w_b_, "pc.w_b", D, D, sd, rng);
  init(w_1_, "pc.w_1", 3 * D, H, 1.0 / std::sqrt(3.0 * static_cast<double>(D)), rng);
  init(b_1_, "pc.b_1", 1, H, 0.0, rng);
  init(w_2_, "pc.w_2", H, 1, 1.0 / std::sqrt(static_cast<double>(H)), rng);
  init(b_2_, "pc.b_2", 1, 1, 0.0, rng);
}

ad::Var PCClassifier::logit(ad::Tape& tape, const std::vector<int>& persona, const std::vector<int>& story) const {
  ad::Var E = tape.param(emb_);
  ad::Var p = ad::mean_rows(ad::gather_rows(E, persona));
  ad::Var X = ad::gather_rows(E, story);
  ad::Var q = ad::matmul(p, tape.param(w_q_));
  ad::Var att = ad::softmax_rows(ad::scale(ad::matmul_nt(q, X), 1.0 / std::sqrt(static_cast<double>(options_.dim))));
  ad::Var u = ad::matmul(att, X);
  const ad::Var feats[] = {ad::mul(ad::matmul(p, tape.param(w_b_)), u), p, u};
  ad::Var h = ad::tanh(ad::add(ad::matmul(ad::concat_cols(feats), tape.param(w_1_)), tape.param(b_1_)));
  return ad::add(ad::matmul(h, tape.param(w_2_)), tape.param(b_2_));
}

double PCClassifier::score(std::string_view, std::string_view persona, std::string_view story) const {
  ad::Tape tape;
  return ad::sigmoid(logit(tape, content_ids(tokenizer_, persona), content_ids(tokenizer_, story)).scalar());
}

double accuracy(const PCClassifier& c, const std::vector<PCPair>& pairs) {
  if (pairs.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& p : pairs) ok += (c.score(p.context, p.persona, p.story) >= 0.5 ? 1 : 0) == p.label;
  return static_cast<double>(ok) / static_cast<double>(pairs.size());
}

PCClassifier train_pc_classifier(const std::vector<corpus::Example>& train, const std::vector<corpus::Example>& heldout,
                                 backbone::Tokenizer tokenizer, const PCOptions& options) {
  PCClassifier c(std::move(tokenizer), options);
  Rng rng(options.seed);
  Rng held_rng(derive_seed(options.seed, 1));
  const auto held_pairs = heldout.size() >= 2 ? make_pc_pairs(heldout, held_rng) : std::vector<PCPair>{};
  const double lr = options.learning_rate;
  std::unordered_map<const ad::Parameter*, std::pair<Matrix, Matrix>> state;
  std::size_t t = 0;
  std::vector<PCPair> pairs;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    pairs = make_pc_pairs(train, rng);
    for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[rng.below(i)]);
    for (std::size_t b = 0; b < pairs.size(); b += options.batch_size) {
      const std::size_t end = std::min(pairs.size(), b + options.batch_size);
      ad::Gradients grads;
      for (std::size_t k = b; k < end; ++k) {
        ad::Tape tape;
        ad::Var z = c.logit(tape, content_ids(c.tokenizer_, pairs[k].persona), content_ids(c.tokenizer_, pairs[k].story));
        ad::Var loss = ad::bce_with_logits(z, pairs[k].label);
        if (!std::isfinite(loss.scalar())) throw EvalError("classifier training diverged");
        tape.backward(loss);
        tape.accumulate(grads, 1.0 / static_cast<double>(end - b));
      }
      ++t;
      const double bc1 = 1 - std::pow(0.9, static_cast<double>(t));
      const double bc2 = 1 - std::pow(0.999, static_cast<double>(t));
      for (auto* p : c.parameters()) {
        const auto it = grads.find(p);
        if (it == grads.end()) continue;
        auto [st, _] = state.try_emplace(p, Matrix::Zero(p->value.rows(), p->value.cols()),
                                         Matrix::Zero(p->value.rows(), p->value.cols()));
        auto& [m, v] = st->second;
        m = 0.9 * m + 0.1 * it->second;
        v = 0.999 * v + 0.001 * it->second.cwiseProduct(it->second);
        p->value.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + 1e-8);
      }
    }
  }
  c.trained_ = true;
  c.report_.epochs = options.epochs;
  c.report_.train_accuracy = accuracy(c, pairs);
  c.report_.heldout_accuracy = accuracy(c, held_pairs);
  c.report_.heldout_pairs = held_pairs.size();
  return c;
}

void PCClassifier::save(const std::string& path) const {
  nlohmann::json j;
  nlohmann::json merges = nlohmann::json::array();
  for (auto [a, b] : tokenizer_.merges()) merges.push_back({a, b});
  j["merges"] = merges;
  j["options"] = {{"dim", options_.dim}, {"hidden", options_.hidden}, {"epochs", options_.epochs},
                  {"batch_size", options_.batch_size}, {"learning_rate", options_.learning_rate}, {"seed", options_.seed}};
  j["report"] = {{"train_accuracy", report_.train_accuracy}, {"heldout_accuracy", report_.heldout_accuracy},
                 {"heldout_pairs", report_.heldout_pairs}, {"epochs", report_.epochs}};
  j["trained"] = trained_;
  for (const auto* p : const_cast<PCClassifier*>(this)->parameters())
    j["params"][p->name] = {{"rows", p->value.rows()}, {"cols", p->value.cols()},
                            {"data", std::vector<double>(p->value.data(), p->value.data() + p->value.size())}};
  std::ofstream out(path);
  if (!out) throw EvalError("cannot write classifier: " + path);
  out << j.dump() << '\n';
}

PCClassifier PCClassifier::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot open classifier: " + path);
  const auto j = nlohmann::json::parse(in);
  std::vector<std::pair<int, int>> merges;
  for (const auto& m : j.at("merges")) merges.emplace_back(m.at(0).get<int>(), m.at(1).get<int>());
  PCOptions o;
  const auto& jo = j.at("options");
  o.dim = jo.at("dim").get<std::size_t>();
  o.hidden = jo.at("hidden").get<std::size_t>();
  o.epochs = jo.at("epochs").get<std::size_t>();
  o.batch_size = jo.at("batch_size").get<std::size_t>();
  o.learning_rate = jo.at("learning_rate").get<double>();
  o.seed = jo.at("seed").get<std::uint64_t>();
  PCClassifier c(backbone::Tokenizer::from_merges(merges), o);
  for (auto* p : c.parameters()) {
    const auto& jp = j.at("params").at(p->name);
    if (jp.at("rows").get<Eigen::Index>() != p->value.rows() || jp.at("cols").get<Eigen::Index>() != p->value.cols())
      throw EvalError("classifier shape mismatch at " + p->name);
    const auto data = jp.at("data").get<std::vector<double>>();
    std::copy(data.begin(), data.end(), p->value.data());
  }
  c.trained_ = j.at("trained").get<bool>();
  const auto& jr = j.at("report");
  c.report_ = {jr.at("train_accuracy").get<double>(), jr.at("heldout_accuracy").get<double>(),
               jr.at("heldout_pairs").get<std::size_t>(), jr.at("epochs").get<std::size_t>()};
  return c;
}

std::vector<std::string> persona_candidates(const std::vector<corpus::Example>& testset, std::size_t i, std::size_t k,
                                            Rng& rng) {
  std::vector<std::string> pool;
  std::set<std::string> seen{testset.at(i).persona};
  for (const auto& e : testset)
    if (seen.insert(e.persona).second) pool.push_back(e.persona);
  if (pool.size() + 1 < k)
    throw EvalError("controllability needs " + std::to_string(k) + " distinct personas, test set has " +
                    std::to_string(pool.size() + 1));
  std::vector<std::string> out{testset[i].persona};
  for (std::size_t j = 0; j + 1 < k; ++j) {
    const std::size_t pick = j + rng.below(pool.size() - j);
    std::swap(pool[j], pool[pick]);
    out.push_back(pool[j]);
  }
  return out;
}

ControlResult controllability(const StoryGenerator& generate, const std::vector<corpus::Example>& testset,
                              const PersonaScorer& scorer, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("controllability: k must be at least 2");
  ControlResult r;
  double delta_sum = 0;
  for (std::size_t i = 0; i < testset.size(); ++i) {
    Rng pick_rng(derive_seed(seed, 2 * i));
    const auto cands = persona_candidates(testset, i, k, pick_rng);
    for (std::size_t j = 0; j < k; ++j) {
      Rng gen_rng(derive_seed(derive_seed(seed, 2 * i + 1), j));
      const std::string story = generate(testset[i].context, cands[j], gen_rng);
      std::vector<double> s(k);
      for (std::size_t m = 0; m < k; ++m) s[m] = scorer(testset[i].context, cands[m], story);
      bool strict = true;
      double others = 0;
      for (std::size_t m = 0; m < k; ++m) {
        if (m == j) continue;
        others += s[m];
        if (s[m] >= s[j]) strict = false;
      }
      r.controlled += strict;
      delta_sum += s[j] - others / static_cast<double>(k - 1);
      ++r.stories;
    }
  }
  if (r.stories) {
    r.score = static_cast<double>(r.controlled) / static_cast<double>(r.stories);
    r.delta = delta_sum / static_cast<double>(r.stories);
  }
  return r;
}

}  // namespace conper::eval
