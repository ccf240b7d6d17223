#include "conper/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "conper/text.hpp"

namespace conper::pipeline {
namespace {

using backbone::SpecialId;

void append(std::vector<int>& out, const std::vector<int>& in) { out.insert(out.end(), in.begin(), in.end()); }

std::vector<std::string> plan_words(const ConPerModel& model, const annotate::Annotation& a) {
  std::vector<std::string> out;
  for (const auto& k : a.plan.keywords)
    if (model.plan_vocab().id(k.surface) && k.surface != planner::kEndOfPlan) out.push_back(k.surface);
  return out;
}

std::string collapse_spaces(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (c == ' ' || c == '\n' || c == '\t') {
      space = true;
      continue;
    }
    if (space && !out.empty()) out += ' ';
    space = false;
    out += c;
  }
  return out;
}

int sample_masked(const backbone::Backbone& bb, const backbone::Vector& h, std::initializer_list<int> allowed_special,
                  double top_p, Rng& rng) {
  backbone::Vector logits = bb.vocab_logits(h);
  for (int id = 0; id < backbone::kNumSpecial; ++id)
    if (std::find(allowed_special.begin(), allowed_special.end(), id) == allowed_special.end())
      logits(id) = -std::numeric_limits<double>::infinity();
  const backbone::Vector dist = backbone::softmax(logits);
  return backbone::sample_top_p(std::span<const double>(dist.data(), static_cast<std::size_t>(dist.size())), top_p, rng);
}

}  // namespace

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::target: return "target";
    case Stage::plot: return "plot";
    case Stage::story: return "story";
  }
  return "?";
}

Stage parse_stage(std::string_view s) {
  if (s == "target") return Stage::target;
  if (s == "plot") return Stage::plot;
  if (s == "story") return Stage::story;
  throw std::invalid_argument("unknown stage '" + std::string(s) + "' (expected target, plot or story)");
}

std::vector<Stage> stages_for(const Ablation& ablation) {
  std::vector<Stage> out;
  if (!ablation.no_tp) out.push_back(Stage::target);
  if (!ablation.no_pp) out.push_back(Stage::plot);
  out.push_back(Stage::story);
  return out;
}

std::string story_with_slot(const corpus::Example& e, const annotate::Annotation& a) {
  const auto sentences = text::split_sentences(e.story);
  auto idx = a.target.sentence_indices;
  if (idx.empty()) throw PipelineError("example " + e.id + " has no target annotation");
  std::sort(idx.begin(), idx.end());
  std::vector<std::string> selected;
  for (std::size_t i : idx) {
    if (i >= sentences.size()) throw PipelineError("target index out of range in example " + e.id);
    selected.push_back(sentences[i]);
  }
  if (text::join_sentences(selected) != a.target_text)
    throw PipelineError("target sentence not found verbatim in story of example " + e.id);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (i == idx.front())
      out.emplace_back(backbone::special::kTargetSlot);
    else if (!std::binary_search(idx.begin(), idx.end(), i))
      out.push_back(sentences[i]);
  }
  return text::join_sentences(out);
}

std::vector<int> prompt_tokens(const ConPerModel& model, std::string_view context, std::string_view persona,
                               std::size_t reserve) {
  const auto& tok = model.tokenizer();
  std::vector<int> ctx = tok.encode(context);
  const std::vector<int> per = tok.encode(persona);
  const std::size_t window = model.config().backbone.context_window;
  const std::size_t fixed = 2 + per.size() + reserve;
  if (fixed > window) throw backbone::LengthError("persona does not fit the context window");
  if (fixed + ctx.size() > window) ctx.erase(ctx.begin(), ctx.begin() + static_cast<std::ptrdiff_t>(fixed + ctx.size() - window));
  std::vector<int> out{backbone::kBos};
  append(out, ctx);
  out.push_back(backbone::kSep);
  append(out, per);
  return out;
}

Layout build_layout(const ConPerModel& model, const Item& item, const Ablation& ablation, bool with_story) {
  const auto& tok = model.tokenizer();
  const std::size_t window = model.config().backbone.context_window;
  std::vector<int> target_seg;
  if (!ablation.no_tp) {
    target_seg.push_back(backbone::kTgtBeg);
    append(target_seg, tok.encode(item.annotation.target_text));
    target_seg.push_back(backbone::kTgtEnd);
  }
  std::vector<std::string> plan;
  std::vector<std::vector<int>> plan_ids;
  if (!ablation.no_pp) {
    plan = plan_words(model, item.annotation);
    for (const auto& w : plan) plan_ids.push_back(tok.encode(" " + w));
  }
  std::vector<int> story_seg;
  if (with_story) {
    story_seg.push_back(backbone::kStory);
    append(story_seg, tok.encode(ablation.no_tp ? item.example.story : story_with_slot(item.example, item.annotation)));
    story_seg.push_back(backbone::kEos);
  }
  auto plan_len = [&] {
    if (ablation.no_pp) return std::size_t{0};
    std::size_t n = 1;
    for (const auto& ids : plan_ids) n += 1 + ids.size();
    return n;
  };
  const std::size_t persona_len = tok.count(item.example.persona);
  // shrink the plan, then the story, when the context alone cannot make room
  while (!plan.empty() && 2 + persona_len + target_seg.size() + plan_len() + story_seg.size() > window) {
    plan.pop_back();
    plan_ids.pop_back();
  }
  const std::size_t min_ctx_total = 2 + persona_len + target_seg.size() + plan_len();
  if (min_ctx_total >= window) throw backbone::LengthError("example " + item.example.id + " does not fit the window");
  if (min_ctx_total + story_seg.size() > window) story_seg.resize(window - min_ctx_total);
  const std::size_t reserve = target_seg.size() + plan_len() + story_seg.size();

  Layout L;
  L.tokens = prompt_tokens(model, item.example.context, item.example.persona, reserve);
  L.context_tokens_dropped = tok.count(item.example.context) + 2 + persona_len - L.tokens.size();
  if (!target_seg.empty()) {
    L.target_begin = L.tokens.size();
    append(L.tokens, target_seg);
    L.target_end = L.tokens.size() - 1;
  }
  if (!ablation.no_pp) {
    for (const auto& ids : plan_ids) {
      L.kw_positions.push_back(L.tokens.size());
      L.tokens.push_back(backbone::kKwSep);
      append(L.tokens, ids);
    }
    L.kw_positions.push_back(L.tokens.size());
    L.tokens.push_back(backbone::kKwSep);
    L.plan = plan;
  }
  if (!story_seg.empty()) {
    L.story_begin = L.tokens.size();
    append(L.tokens, story_seg);
  }
  return L;
}

StageLosses item_losses(ConPerModel& model, const Item& item, const std::vector<Stage>& stages,
                        const Ablation& ablation, const planner::Planner* planner, ad::Gradients* grads,
                        double grad_scale) {
  auto has = [&](Stage s) { return std::find(stages.begin(), stages.end(), s) != stages.end(); };
  if (stages.empty()) throw PipelineError("no stage to compute a loss for");
  if (has(Stage::target) && ablation.no_tp) throw PipelineError("target stage is disabled by the no_tp ablation");
  if (has(Stage::plot) && ablation.no_pp) throw PipelineError("plot stage is disabled by the no_pp ablation");
  if (has(Stage::plot) && !planner) throw PipelineError("plot stage needs a planner");
  const Layout L = build_layout(model, item, ablation, has(Stage::story));
  const auto& bb = model.backbone();
  std::size_t last = 0;
  if (has(Stage::target)) last = L.target_end;
  if (has(Stage::plot)) last = L.kw_positions.back();
  if (has(Stage::story)) last = L.tokens.size() - 1;
  const std::span<const int> prefix(L.tokens.data(), last + 1);

  ad::Tape tape;
  ad::Var hidden = bb.forward(tape, prefix);
  StageLosses out;
  std::vector<ad::Var> terms;
  if (has(Stage::target)) {
    const auto n = static_cast<Eigen::Index>(L.target_end - L.target_begin);
    ad::Var logits = bb.logits(tape, ad::slice_rows(hidden, static_cast<Eigen::Index>(L.target_begin), n));
    terms.push_back(ad::cross_entropy_rows(logits, prefix.subspan(L.target_begin + 1, static_cast<std::size_t>(n))));
    out.l_tp = terms.back().scalar();
  }
  if (has(Stage::plot)) {
    std::vector<int> kw_rows(L.kw_positions.begin(), L.kw_positions.end());
    ad::Var states = ad::gather_rows(hidden, kw_rows);
    ad::Var s_tar;
    if (!ablation.no_tp && !ablation.no_tg && L.target_end > L.target_begin + 1)
      s_tar = ad::mean_rows(ad::slice_rows(hidden, static_cast<Eigen::Index>(L.target_begin + 1),
                                           static_cast<Eigen::Index>(L.target_end - L.target_begin - 1)));
    kgraph::LocalGraph graph;
    if (!ablation.no_kg)
      graph = kgraph::init_local_graph(model.store(), item.annotation.input_keywords,
                                       ablation.no_tp ? std::vector<annotate::Keyword>{} : item.annotation.target_keywords);
    planner::PlanSession session(*planner, tape);
    auto pl = planner::plan_losses(session, states, std::move(graph), model.store(), L.plan, s_tar);
    out.l_kw = pl.l_kw.scalar();
    out.l_c = pl.l_c.scalar();
    terms.push_back(pl.l_pp);
  }
  if (has(Stage::story)) {
    const auto n = static_cast<Eigen::Index>(L.tokens.size() - 1 - L.story_begin);
    ad::Var logits = bb.logits(tape, ad::slice_rows(hidden, static_cast<Eigen::Index>(L.story_begin), n));
    terms.push_back(ad::cross_entropy_rows(logits, std::span<const int>(L.tokens).subspan(L.story_begin + 1)));
    out.l_st = terms.back().scalar();
  }
  ad::Var loss = terms.size() == 1 ? terms[0] : ad::add_n(terms);
  out.total = loss.scalar();
  if (grads) {
    tape.backward(loss);
    tape.accumulate(*grads, grad_scale);
  }
  return out;
}

StageLosses item_loss(ConPerModel& model, const Item& item, Stage stage, const Ablation& ablation,
                      const planner::Planner* planner, ad::Gradients* grads, double grad_scale) {
  return item_losses(model, item, {stage}, ablation, planner, grads, grad_scale);
}

StageReport train_stage(ConPerModel& model, const std::vector<Item>& train, const std::vector<Item>& valid,
                        const StageConfig& config, const Ablation& ablation, const ProgressFn& progress) {
  if (train.empty()) throw PipelineError("no training items");
  const auto order = stages_for(ablation);
  const auto pos = std::find(order.begin(), order.end(), config.stage);
  if (pos == order.end()) throw PipelineError("stage " + std::string(to_string(config.stage)) + " is disabled by the ablation");
  for (auto it = order.begin(); it != pos; ++it)
    if (!model.has_stage(to_string(*it)))
      throw PipelineError("stage " + std::string(to_string(config.stage)) + " requires stage " +
                          std::string(to_string(*it)) + " first");

  const std::vector<Stage> objective =
      config.rehearse ? std::vector<Stage>(order.begin(), pos + 1) : std::vector<Stage>{config.stage};
  const bool uses_planner = std::find(objective.begin(), objective.end(), Stage::plot) != objective.end();
  const planner::Planner planner = model.make_planner(ablation.planner_flags());
  auto params = model.parameters(uses_planner);
  AdamW opt(params, {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay, 1.0});
  Rng rng(config.seed);
  const std::size_t batch = std::max<std::size_t>(config.batch_size, 1);

  auto evaluate = [&](const std::vector<Item>& items) {
    double sum = 0;
    for (const auto& it : items) sum += item_losses(model, it, objective, ablation, &planner, nullptr).total;
    return sum / static_cast<double>(items.size());
  };

  StageReport report;
  report.stage = config.stage;
  report.best_valid_loss = std::numeric_limits<double>::infinity();
  std::vector<ad::Matrix> best;
  for (auto* p : params) best.push_back(p->value);
  std::size_t bad = 0;
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    EpochMetrics m;
    m.epoch = epoch;
    for (std::size_t b = 0; b < idx.size(); b += batch) {
      const std::size_t end = std::min(idx.size(), b + batch);
      ad::Gradients grads;
      const double scale = 1.0 / static_cast<double>(end - b);
      for (std::size_t k = b; k < end; ++k) {
        const auto l = item_losses(model, train[idx[k]], objective, ablation, &planner, &grads, scale);
        if (!std::isfinite(l.total)) throw PipelineError("training diverged (non-finite loss)");
        m.train_loss += l.total;
        m.train_l_tp += l.l_tp;
        m.train_l_kw += l.l_kw;
        m.train_l_c += l.l_c;
        m.train_l_st += l.l_st;
      }
      opt.step(grads);
    }
    const double n = static_cast<double>(train.size());
    m.train_loss /= n;
    m.train_l_tp /= n;
    m.train_l_kw /= n;
    m.train_l_c /= n;
    m.train_l_st /= n;
    m.valid_loss = valid.empty() ? m.train_loss : evaluate(valid);
    report.epochs.push_back(m);
    if (progress) progress(m);
    if (m.valid_loss < report.best_valid_loss) {
      report.best_valid_loss = m.valid_loss;
      report.best_epoch = epoch;
      for (std::size_t i = 0; i < params.size(); ++i) best[i] = params[i]->value;
      bad = 0;
    } else if (++bad >= config.patience) {
      report.early_stopped = true;
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  auto& stages = model.stages();
  stages.erase(std::remove_if(stages.begin(), stages.end(),
                              [&](const StageRecord& r) { return r.stage == to_string(config.stage); }),
               stages.end());
  stages.push_back({std::string(to_string(config.stage)), report.epochs.size(), report.best_valid_loss});
  return report;
}

SpliceResult splice_target(std::string_view raw_story, std::string_view target,
                           const annotate::TokenEmbedder& embedder) {
  const std::string_view slot = backbone::special::kTargetSlot;
  SpliceResult r;
  std::string rest(raw_story);
  const std::size_t first = rest.find(slot);
  std::string before = first == std::string::npos ? rest : rest.substr(0, first);
  std::string after = first == std::string::npos ? std::string() : rest.substr(first + slot.size());
  if (first != std::string::npos) ++r.slots;
  for (std::size_t p; (p = after.find(slot)) != std::string::npos;) {
    after.erase(p, slot.size());
    ++r.slots;
  }
  const std::string tgt = text::trim(target);
  if (tgt.empty()) {
    r.story = collapse_spaces(before + " " + after);
    return r;
  }
  if (first != std::string::npos) {
    r.story = collapse_spaces(before + " " + tgt + " " + after);
    return r;
  }
  r.fallback = true;
  auto sentences = text::split_sentences(before);
  if (sentences.empty()) {
    r.story = tgt;
    return r;
  }
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const bool scorable = embedder.embed(sentences[i]).rows() > 0 && embedder.embed(tgt).rows() > 0;
    const double s = scorable ? annotate::score_similarity(sentences[i], tgt, embedder) : -1.0;
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  sentences.insert(sentences.begin() + static_cast<std::ptrdiff_t>(best) + 1, tgt);
  r.story = collapse_spaces(text::join_sentences(sentences));
  return r;
}

Generation generate(const ConPerModel& model, std::string_view context, std::string_view persona, Rng& rng,
                    const Ablation& ablation, const GenerateOptions& options) {
  const auto& bb = model.backbone();
  const auto& tok = model.tokenizer();
  const std::size_t window = model.config().backbone.context_window;
  Generation g;
  backbone::IncrementalDecoder dec(bb);
  backbone::Vector h = dec.feed(prompt_tokens(model, context, persona, window / 2));
  auto room = [&](std::size_t n) { return dec.position() + n < window; };

  std::vector<backbone::Vector> target_hidden;
  if (!ablation.no_tp) {
    std::vector<int> ids;
    h = dec.step(backbone::kTgtBeg);
    while (true) {
      const bool full = ids.size() >= options.max_target_tokens || !room(2);
      const int t = full ? backbone::kTgtEnd : sample_masked(bb, h, {backbone::kTgtEnd}, options.top_p, rng);
      h = dec.step(t);
      if (t == backbone::kTgtEnd) break;
      ids.push_back(t);
      target_hidden.push_back(h);
    }
    g.target = text::trim(text::scrub_utf8(tok.decode(ids)));
  }

  if (!ablation.no_pp && room(2)) {
    h = dec.step(backbone::kKwSep);
    kgraph::LocalGraph graph;
    if (!ablation.no_kg)
      graph = kgraph::init_local_graph(model.store(), annotate::extract_input_keywords(context, persona),
                                       ablation.no_tp ? std::vector<annotate::Keyword>{}
                                                      : annotate::extract_text_keywords(g.target));
    std::optional<backbone::Vector> s_tar;
    if (!ablation.no_tp && !ablation.no_tg && !target_hidden.empty()) {
      backbone::Vector m = backbone::Vector::Zero(target_hidden.front().size());
      for (const auto& v : target_hidden) m += v;
      s_tar = m / static_cast<double>(target_hidden.size());
    }
    const planner::Planner planner = model.make_planner(ablation.planner_flags());
    const std::size_t story_room = std::min<std::size_t>(options.max_story_tokens, window / 4);
    auto advance = [&](const std::string& word) -> std::optional<backbone::Vector> {
      const auto ids = tok.encode(" " + word);
      if (!room(ids.size() + 1 + story_room)) return std::nullopt;
      dec.feed(ids);
      return dec.step(backbone::kKwSep);
    };
    auto res = planner::plan_decode(planner, h, graph, model.store(), s_tar, rng, options.max_keywords, options.top_p, advance);
    g.plan = std::move(res.plan);
    g.traces = std::move(res.traces);
  }

  std::vector<int> story_ids;
  if (room(1)) {
    h = dec.step(backbone::kStory);
    while (story_ids.size() < options.max_story_tokens && room(1)) {
      const int t = ablation.no_tp ? sample_masked(bb, h, {backbone::kEos}, options.top_p, rng)
                                   : sample_masked(bb, h, {backbone::kEos, backbone::kTargetSlot}, options.top_p, rng);
      if (t == backbone::kEos) break;
      story_ids.push_back(t);
      h = dec.step(t);
    }
  }
  g.raw_story = text::scrub_utf8(tok.decode(story_ids));
  if (ablation.no_tp) {
    g.story = collapse_spaces(g.raw_story);
  } else {
    const annotate::HashedWordEmbedder embedder;
    auto sp = splice_target(g.raw_story, g.target, embedder);
    g.story = std::move(sp.story);
    g.fallback = sp.fallback;
  }
  return g;
}

std::vector<Item> join_items(const std::vector<corpus::Example>& examples,
                             const std::vector<annotate::Annotation>& annotations) {
  std::map<std::string, const annotate::Annotation*> by_id;
  for (const auto& a : annotations) by_id[a.example_id] = &a;
  std::vector<Item> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    const auto it = by_id.find(e.id);
    if (it == by_id.end()) throw PipelineError("missing annotation for example " + e.id);
    out.push_back({e, *it->second});
  }
  return out;
}

ConPerModel make_model(const std::vector<Item>& train, const std::vector<kgraph::Triple>& triples,
                       const ModelConfig& config, std::size_t bpe_merges) {
  std::vector<std::string> texts;
  std::vector<std::vector<annotate::Keyword>> keywords;
  for (const auto& it : train) {
    texts.push_back(it.example.context);
    texts.push_back(it.example.persona);
    texts.push_back(it.example.story);
    keywords.push_back(it.annotation.plan.keywords);
    keywords.push_back(it.annotation.input_keywords);
    keywords.push_back(it.annotation.target_keywords);
  }
  auto vocab = planner::build_plan_vocab(texts, keywords);
  for (const auto& w : vocab.words()) texts.push_back(" " + w);
  return ConPerModel(backbone::Tokenizer::train(texts, bpe_merges), std::move(vocab), triples, config);
}

}  // namespace conper::pipeline
