#include "conper/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "conper/backbone.hpp"
#include "conper/text.hpp"

namespace conper::planner {
namespace {

using nlohmann::json;

std::vector<TopEntry> top_entries(const Vector& probs, const Vector* bias, const std::vector<std::string>& names,
                                  std::size_t k) {
  std::vector<int> order(static_cast<std::size_t>(probs.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs(a) > probs(b); });
  std::vector<TopEntry> out;
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) {
    const int j = order[i];
    out.push_back({names[static_cast<std::size_t>(j)], probs(j), bias ? (*bias)(j) : 0.0});
  }
  return out;
}

Vector row_of(const ad::Var& v) { return v.value().row(0); }

json entries_json(const std::vector<TopEntry>& es) {
  json a = json::array();
  for (const auto& e : es) a.push_back({{"word", e.word}, {"prob", e.prob}, {"bias", e.bias}});
  return a;
}

std::vector<TopEntry> entries_from(const json& a) {
  std::vector<TopEntry> out;
  for (const auto& e : a) out.push_back({e.at("word").get<std::string>(), e.at("prob").get<double>(), e.at("bias").get<double>()});
  return out;
}

ad::Var broadcast_scalar(ad::Tape& tape, ad::Var s, Eigen::Index n) {
  return ad::matmul(s, tape.constant(Matrix::Ones(1, n)));
}

}  // namespace

PlanVocab::PlanVocab(std::vector<std::string> words) {
  words_.emplace_back(kEndOfPlan);
  std::set<std::string> sorted(words.begin(), words.end());
  sorted.erase(std::string(kEndOfPlan));
  words_.insert(words_.end(), sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], static_cast<int>(i));
}

std::optional<int> PlanVocab::id(std::string_view w) const {
  const auto it = index_.find(std::string(w));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int PlanVocab::require(std::string_view w) const {
  const auto i = id(w);
  if (!i) throw std::out_of_range("word not in plan vocabulary: " + std::string(w));
  return *i;
}

std::unordered_set<std::string> PlanVocab::word_set() const {
  return {words_.begin() + 1, words_.end()};
}

PlanVocab build_plan_vocab(const std::vector<std::string>& texts,
                           const std::vector<std::vector<annotate::Keyword>>& keyword_lists) {
  std::vector<std::string> words;
  for (const auto& t : texts)
    for (auto& w : text::lower_words(t)) words.push_back(std::move(w));
  for (const auto& list : keyword_lists)
    for (const auto& k : list) words.push_back(k.surface);
  return PlanVocab(std::move(words));
}

PlanHeadParams::PlanHeadParams(std::size_t vocab, std::size_t hidden, std::uint64_t seed) {
  const auto V = static_cast<Eigen::Index>(vocab);
  const auto H = static_cast<Eigen::Index>(hidden);
  Rng rng(seed);
  auto init = [&](ad::Parameter& p, std::string name, Eigen::Index r, Eigen::Index c, double sd) {
    p.name = std::move(name);
    p.value = Matrix::Zero(r, c);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = sd * rng.normal();
  };
  const double sd = 1.0 / std::sqrt(static_cast<double>(3 * H));
  init(w_k, "plan.w_k", V, 3 * H, sd);
  init(b_k, "plan.b_k", V, 1, 0.0);
  init(w_l, "plan.w_l", V, 3 * H, sd);
  init(b_l, "plan.b_l", V, 1, 0.0);
  init(w_p, "plan.w_p", 3 * H, 1, sd);
  init(b_p, "plan.b_p", 1, 1, 0.0);
  init(w_d, "plan.w_d", 3 * H, H, sd);
  init(b_d, "plan.b_d", 1, 1, 0.0);
}

int gate_decision(double p, bool literal_rule) {
  if (literal_rule) return p < 0.5 ? 1 : 0;
  return p >= 0.5 ? 1 : 0;
}

int gate_label(std::string_view keyword, const kgraph::LocalGraph& graph) { return graph.has_entity(keyword) ? 1 : 0; }

Vector mix(int gamma, const Vector& p_k, const Vector& p_l, const std::vector<int>& entity_ids) {
  if (gamma == 0) return p_l;
  if (static_cast<std::size_t>(p_k.size()) != entity_ids.size()) throw std::invalid_argument("mix: P_k/entity size mismatch");
  Vector out = Vector::Zero(p_l.size());
  for (std::size_t i = 0; i < entity_ids.size(); ++i) out(entity_ids[i]) += p_k(static_cast<Eigen::Index>(i));
  return out;
}

std::string to_json_line(const PlanStepTrace& t, std::string_view example_id) {
  json j = {{"step", t.step},       {"p", t.p},
            {"gamma", t.gamma},     {"teacher_forced", t.teacher_forced},
            {"support", t.support}, {"top_k", entries_json(t.top_k)},
            {"top_l", entries_json(t.top_l)}, {"keyword", t.keyword}};
  if (!example_id.empty()) j["id"] = std::string(example_id);
  return j.dump();
}

PlanStepTrace trace_from_json(std::string_view line) {
  const json j = json::parse(line);
  PlanStepTrace t;
  t.step = j.at("step").get<std::size_t>();
  t.p = j.at("p").get<double>();
  t.gamma = j.at("gamma").get<int>();
  t.teacher_forced = j.at("teacher_forced").get<bool>();
  t.support = j.at("support").get<std::size_t>();
  t.top_k = entries_from(j.at("top_k"));
  t.top_l = entries_from(j.at("top_l"));
  t.keyword = j.at("keyword").get<std::string>();
  return t;
}

Planner::Planner(const PlanVocab& vocab, const kgraph::GraphParams& graph_params, const PlanHeadParams& heads,
                 const ad::Parameter& token_embedding, const backbone::Tokenizer& tokenizer, PlannerFlags flags)
    : vocab_(vocab), graph_params_(graph_params), heads_(heads), token_embedding_(token_embedding), flags_(flags) {
  groups_.reserve(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (i == 0) {
      groups_.push_back({backbone::kEos});
      continue;
    }
    groups_.push_back(tokenizer.encode(" " + vocab.word(i)));
  }
}

PlanSession::PlanSession(const Planner& planner, ad::Tape& tape)
    : planner_(planner),
      tape_(tape),
      words_(ad::sum_gather_rows(tape.param(planner.token_embedding()), planner.subword_groups())),
      table_(words_, [&] {
        std::unordered_map<std::string, int> index;
        for (std::size_t i = 0; i < planner.vocab().size(); ++i) index.emplace(planner.vocab().word(i), static_cast<int>(i));
        return index;
      }()) {}

ad::Var PlanSession::graph_rows(const kgraph::LocalGraph& graph) {
  if (graph.empty()) return {};
  std::vector<ad::Var> rows;
  rows.reserve(graph.num_subgraphs());
  for (std::size_t i = 0; i < graph.num_subgraphs(); ++i) {
    const auto& sg = graph.subgraph(i);
    auto it = g_cache_.find(sg.anchor);
    if (it == g_cache_.end())
      it = g_cache_.emplace(sg.anchor, kgraph::subgraph_representation(tape_, sg, planner_.graph_params(), table_)).first;
    rows.push_back(it->second);
  }
  return rows.size() == 1 ? rows[0] : ad::concat_rows(rows);
}

ad::Var PlanSession::context(ad::Var s_t, const kgraph::LocalGraph& graph) {
  if (planner_.flags().no_kg || graph.empty())
    return tape_.constant(Matrix::Zero(1, planner_.graph_params().w_g.value.cols()));
  return kgraph::knowledge_context(tape_, s_t, graph_rows(graph), planner_.graph_params());
}

Bias PlanSession::guidance(ad::Var s_tar, ad::Var c, const std::vector<int>& entity_ids) {
  const auto& h = planner_.heads();
  const ad::Var parts[] = {s_tar, c};
  ad::Var q = ad::matmul(ad::concat_cols(parts), tape_.param(h.w_d));
  ad::Var bd = tape_.param(h.b_d);
  Bias b;
  b.d_l = ad::add(ad::matmul_nt(q, words_), broadcast_scalar(tape_, bd, words_.rows()));
  if (!entity_ids.empty()) {
    ad::Var ek = ad::gather_rows(words_, entity_ids);
    b.d_k = ad::add(ad::matmul_nt(q, ek), broadcast_scalar(tape_, bd, static_cast<Eigen::Index>(entity_ids.size())));
  }
  return b;
}

StepOutput PlanSession::step(ad::Var s_t, const kgraph::LocalGraph& graph, ad::Var s_tar) {
  const auto& h = planner_.heads();
  const auto& flags = planner_.flags();
  StepOutput out;
  out.c = context(s_t, graph);
  const ad::Var parts[] = {s_t, out.c};
  ad::Var x = ad::concat_cols(parts);
  out.gate_logit = ad::add(ad::matmul(x, tape_.param(h.w_p)), tape_.param(h.b_p));
  out.logits_l = ad::add(ad::matmul_nt(x, tape_.param(h.w_l)), ad::transpose(tape_.param(h.b_l)));
  if (!flags.no_kg && !graph.empty()) {
    for (const auto& e : graph.entities()) out.entity_ids.push_back(planner_.vocab().require(e));
    out.logits_k = ad::add(ad::matmul_nt(x, ad::gather_rows(tape_.param(h.w_k), out.entity_ids)),
                           ad::transpose(ad::gather_rows(tape_.param(h.b_k), out.entity_ids)));
  }
  if (!flags.no_tg && s_tar.valid()) {
    out.bias = guidance(s_tar, out.c, out.entity_ids);
    out.logits_l = ad::add(out.logits_l, out.bias->d_l);
    if (out.logits_k.valid()) out.logits_k = ad::add(out.logits_k, out.bias->d_k);
  }
  return out;
}

namespace {

PlanStepTrace make_trace(const Planner& planner, const kgraph::LocalGraph& graph, const StepOutput& out,
                         std::size_t step, int gamma, bool teacher_forced, const std::string& keyword) {
  PlanStepTrace tr;
  tr.step = step;
  tr.p = ad::sigmoid(out.gate_logit.scalar());
  tr.gamma = gamma;
  tr.teacher_forced = teacher_forced;
  tr.support = out.entity_ids.size();
  tr.keyword = keyword;
  const Vector p_l = backbone::softmax(row_of(out.logits_l));
  const Vector d_l = out.bias ? row_of(out.bias->d_l) : Vector::Zero(p_l.size());
  tr.top_l = top_entries(p_l, &d_l, planner.vocab().words(), 5);
  if (out.logits_k.valid()) {
    const Vector p_k = backbone::softmax(row_of(out.logits_k));
    const Vector d_k = out.bias ? row_of(out.bias->d_k) : Vector::Zero(p_k.size());
    tr.top_k = top_entries(p_k, &d_k, graph.entities(), 5);
  }
  return tr;
}

}  // namespace

PlanLoss plan_losses(PlanSession& session, ad::Var kw_states, kgraph::LocalGraph graph,
                     const kgraph::TripleStore& store, const std::vector<std::string>& gold, ad::Var s_tar,
                     bool want_traces) {
  const Planner& planner = session.planner();
  const std::size_t n = gold.size() + 1;
  if (static_cast<std::size_t>(kw_states.rows()) != n) throw std::invalid_argument("plan_losses: state/keyword count mismatch");
  std::vector<ad::Var> nll, bce;
  PlanLoss loss;
  for (std::size_t t = 0; t < n; ++t) {
    const std::string word = t < gold.size() ? gold[t] : std::string(kEndOfPlan);
    ad::Var s = ad::slice_rows(kw_states, static_cast<Eigen::Index>(t), 1);
    StepOutput out = session.step(s, graph, s_tar);
    const int label = planner.flags().no_kg ? 0 : gate_label(word, graph);
    bce.push_back(ad::bce_with_logits(out.gate_logit, label));
    if (label == 1) {
      const auto idx = graph.entity_index(word);
      nll.push_back(ad::scale(ad::pick(ad::log_softmax_rows(out.logits_k), 0, static_cast<Eigen::Index>(*idx)), -1.0));
    } else {
      nll.push_back(ad::scale(ad::pick(ad::log_softmax_rows(out.logits_l), 0, planner.vocab().require(word)), -1.0));
    }
    if (want_traces) loss.traces.push_back(make_trace(planner, graph, out, t, label, true, word));
    if (t < gold.size() && !planner.flags().no_kg) graph.grow(word, store, t + 1);
  }
  const double inv = 1.0 / static_cast<double>(n);
  loss.l_kw = ad::scale(ad::add_n(nll), inv);
  loss.l_c = ad::scale(ad::add_n(bce), inv);
  loss.l_pp = ad::add(loss.l_kw, loss.l_c);
  loss.steps = n;
  return loss;
}

PlanDecodeResult plan_decode(const Planner& planner, const Vector& s0, kgraph::LocalGraph& graph,
                             const kgraph::TripleStore& store, const std::optional<Vector>& s_tar, Rng& rng,
                             std::size_t max_keywords, double top_p, const AdvanceFn& advance) {
  ad::Tape tape;
  PlanSession session(planner, tape);
  PlanDecodeResult result;
  ad::Var star = s_tar ? tape.constant(*s_tar) : ad::Var{};
  Vector s = s0;
  for (std::size_t step = 0; step < max_keywords; ++step) {
    StepOutput out = session.step(tape.constant(s), graph, star);
    const double p = ad::sigmoid(out.gate_logit.scalar());
    const int gamma = out.logits_k.valid() ? gate_decision(p, planner.flags().literal_gate_rule) : 0;
    const Vector p_l = backbone::softmax(row_of(out.logits_l));
    const Vector p_k = out.logits_k.valid() ? backbone::softmax(row_of(out.logits_k)) : Vector();
    const Vector dist = mix(gamma, p_k, p_l, out.entity_ids);
    const int choice = backbone::sample_top_p(std::span<const double>(dist.data(), static_cast<std::size_t>(dist.size())), top_p, rng);
    const std::string& word = planner.vocab().word(static_cast<std::size_t>(choice));
    result.traces.push_back(make_trace(planner, graph, out, step, gamma, false, word));
    if (choice == 0) break;
    const auto senti = annotate::sentiment_distribution(word);
    const bool emotion = senti.positive > annotate::kEmotionThreshold || senti.negative > annotate::kEmotionThreshold;
    result.plan.keywords.push_back(
        {word, emotion ? annotate::KeywordSource::emotion : annotate::KeywordSource::event, 0});
    if (!planner.flags().no_kg) graph.grow(word, store, step + 1);
    const auto next = advance(word);
    if (!next) break;
    s = *next;
  }
  result.plan.per_sentence_counts = {result.plan.keywords.size()};
  return result;
}

}  // namespace conper::planner
