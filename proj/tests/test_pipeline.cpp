#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "conper/pipeline.hpp"
#include "conper/text.hpp"
#include "support.hpp"

using namespace conper;
using pipeline::Ablation;
using pipeline::ConPerModel;
using pipeline::Item;
using pipeline::Stage;
namespace oracle = testkit::oracle;
namespace fs = std::filesystem;

namespace {

pipeline::ModelConfig tiny_config(std::size_t window = 512) {
  pipeline::ModelConfig c;
  c.backbone.hidden = 8;
  c.backbone.layers = 1;
  c.backbone.heads = 2;
  c.backbone.ff = 16;
  c.backbone.context_window = window;
  c.graph_attention = 4;
  c.seed = 3;
  return c;
}

std::vector<Item> synthetic_items(std::size_t n, std::uint64_t seed) {
  const annotate::HashedWordEmbedder emb;
  std::vector<Item> items;
  for (auto& e : corpus::make_synthetic_corpus(n, seed)) {
    auto a = annotate::annotate_example(e, {}, emb);
    items.push_back({std::move(e), std::move(a)});
  }
  return items;
}

struct Tiny {
  std::vector<Item> items = synthetic_items(24, 5);
  ConPerModel model = pipeline::make_model(items, kgraph::make_synthetic_triples(3), tiny_config(), 80);
};

const Tiny& tiny() {
  static const Tiny t;
  return t;
}

std::size_t occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t p = hay.find(needle); p != std::string_view::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("conper_test_" + name); }

}  // namespace

TEST(Stages, OrderAndParsing) {
  EXPECT_EQ(pipeline::stages_for({}), (std::vector<Stage>{Stage::target, Stage::plot, Stage::story}));
  EXPECT_EQ(pipeline::stages_for({.no_tp = true}), (std::vector<Stage>{Stage::plot, Stage::story}));
  EXPECT_EQ(pipeline::stages_for({.no_pp = true, .no_tp = true}), (std::vector<Stage>{Stage::story}));
  EXPECT_EQ(pipeline::parse_stage("plot"), Stage::plot);
  EXPECT_THROW(pipeline::parse_stage("plots"), std::invalid_argument);
  EXPECT_TRUE(Ablation{.no_tp = true}.planner_flags().no_tg);
}

TEST(StoryWithSlot, ExactlyOneSlotReplacingTheTarget) {
  for (const auto& it : tiny().items) {
    const auto s = pipeline::story_with_slot(it.example, it.annotation);
    EXPECT_EQ(occurrences(s, backbone::special::kTargetSlot), 1u);
    EXPECT_EQ(occurrences(s, it.annotation.target_text), 0u);
    std::string back = s;
    back.replace(back.find(backbone::special::kTargetSlot), backbone::special::kTargetSlot.size(), it.annotation.target_text);
    EXPECT_EQ(back, text::join_sentences(text::split_sentences(it.example.story)));
  }
}

TEST(StoryWithSlot, TwoSentenceTargetCollapsesToOneSlot) {
  corpus::Example e{"x", "c.", "p.", "A", "One. Two. Three. Four.", corpus::Split::train};
  annotate::Annotation a;
  a.example_id = "x";
  a.target.sentence_indices = {3, 1};
  a.target_text = "Two. Four.";
  EXPECT_EQ(pipeline::story_with_slot(e, a), "One. <target> Three.");
  a.target_text = "Two. Three.";
  EXPECT_THROW(pipeline::story_with_slot(e, a), pipeline::PipelineError);
  a.target.sentence_indices = {};
  EXPECT_THROW(pipeline::story_with_slot(e, a), pipeline::PipelineError);
}

TEST(Layout, SegmentsAndMarkers) {
  const auto& t = tiny();
  const auto& item = t.items[0];
  const auto L = pipeline::build_layout(t.model, item, {}, true);
  EXPECT_EQ(L.tokens.front(), backbone::kBos);
  EXPECT_EQ(L.tokens[L.target_begin], backbone::kTgtBeg);
  EXPECT_EQ(L.tokens[L.target_end], backbone::kTgtEnd);
  EXPECT_EQ(L.kw_positions.size(), L.plan.size() + 1);
  EXPECT_FALSE(L.plan.empty());
  for (std::size_t p : L.kw_positions) EXPECT_EQ(L.tokens[p], backbone::kKwSep);
  EXPECT_EQ(L.kw_positions.front(), L.target_end + 1);
  EXPECT_EQ(L.story_begin, L.kw_positions.back() + 1);
  EXPECT_EQ(L.tokens[L.story_begin], backbone::kStory);
  EXPECT_EQ(L.tokens.back(), backbone::kEos);
  EXPECT_EQ(std::count(L.tokens.begin(), L.tokens.end(), backbone::kTargetSlot), 1);
  EXPECT_EQ(t.model.tokenizer().decode({L.tokens.begin() + static_cast<std::ptrdiff_t>(L.target_begin) + 1,
                                        L.tokens.begin() + static_cast<std::ptrdiff_t>(L.target_end)}),
            item.annotation.target_text);
  EXPECT_EQ(L.context_tokens_dropped, 0u);

  const auto base = pipeline::build_layout(t.model, item, {.no_pp = true, .no_tp = true}, true);
  EXPECT_EQ(base.target_begin, 0u);
  EXPECT_TRUE(base.kw_positions.empty());
  EXPECT_EQ(std::count(base.tokens.begin(), base.tokens.end(), backbone::kTargetSlot), 0);
  EXPECT_EQ(std::count(base.tokens.begin(), base.tokens.end(), backbone::kTgtBeg), 0);
}

TEST(Layout, LongContextIsLeftTruncatedToTheWindow) {
  const auto& t = tiny();
  ConPerModel small(t.model.tokenizer(), t.model.plan_vocab(), t.model.triples(), tiny_config(160));
  Item item = t.items[1];
  std::string ctx;
  for (int i = 0; i < 40; ++i) ctx += "The old harbour smelled of salt. ";
  item.example.context = ctx;
  const auto L = pipeline::build_layout(small, item, {}, true);
  EXPECT_LE(L.tokens.size(), 160u);
  EXPECT_GT(L.context_tokens_dropped, 0u);
  EXPECT_EQ(L.tokens[L.story_begin], backbone::kStory);
  item.example.persona = ctx + ctx;
  EXPECT_THROW(pipeline::build_layout(small, item, {}, true), backbone::LengthError);
}

TEST(Splice, FixturesAndFallback) {
  const annotate::HashedWordEmbedder emb;
  auto r = pipeline::splice_target("She woke. <target> She left.", "The ship sank.", emb);
  EXPECT_EQ(r.story, "She woke. The ship sank. She left.");
  EXPECT_FALSE(r.fallback);
  r = pipeline::splice_target("The ship sailed. A cat slept.", "The ship sank.", emb);
  EXPECT_EQ(r.story, "The ship sailed. The ship sank. A cat slept.");
  EXPECT_TRUE(r.fallback);
  r = pipeline::splice_target("A cat slept. The ship sailed.", "The ship sank.", emb);
  EXPECT_EQ(r.story, "A cat slept. The ship sailed. The ship sank.");
  r = pipeline::splice_target("", "The ship sank.", emb);
  EXPECT_EQ(r.story, "The ship sank.");
  r = pipeline::splice_target("A. <target> B. <target>", "T.", emb);
  EXPECT_EQ(r.story, "A. T. B.");
  EXPECT_EQ(r.slots, 2u);
}

TEST(SpliceProperty, TargetAppearsExactlyOnce) {
  const annotate::HashedWordEmbedder emb;
  const std::vector<std::string> pool{"The wind rose.", "Mara ran home.", "Nothing moved!", "Why now?",
                                      "The lamp flickered.", "He laughed."};
  Rng rng(23);
  std::size_t fallbacks = 0;
  for (int c = 0; c < 1000; ++c) {
    std::vector<std::string> parts;
    const std::size_t n = rng.below(6);
    for (std::size_t i = 0; i < n; ++i) parts.push_back(pool[rng.below(pool.size())]);
    const std::size_t slots = rng.below(4);
    for (std::size_t i = 0; i < slots; ++i)
      parts.insert(parts.begin() + static_cast<std::ptrdiff_t>(rng.below(parts.size() + 1)),
                   std::string(backbone::special::kTargetSlot));
    std::string raw;
    for (const auto& p : parts) raw += (rng.below(2) ? " " : "  ") + p;
    const std::string target = rng.below(2) ? "Zeb found the key." : "Zeb found the key. It fit.";
    const auto r = pipeline::splice_target(raw, target, emb);
    ASSERT_EQ(occurrences(r.story, target), 1u) << raw;
    ASSERT_EQ(occurrences(r.story, backbone::special::kTargetSlot), 0u) << raw;
    ASSERT_EQ(r.slots, slots);
    ASSERT_EQ(r.fallback, slots == 0);
    fallbacks += r.fallback;
    // non-slot sentences survive in order
    std::string rest = r.story;
    rest.replace(rest.find(target), target.size(), "");
    std::vector<std::string> expect;
    for (const auto& p : parts)
      if (p != backbone::special::kTargetSlot) expect.push_back(p);
    ASSERT_EQ(text::split_sentences(rest), expect) << raw;
  }
  EXPECT_GT(fallbacks, 100u);
}

TEST(Losses, MatchReferenceTransformer) {
  auto t = tiny();
  const auto& item = t.items[2];
  const auto L = pipeline::build_layout(t.model, item, {}, true);
  const Eigen::MatrixXd hidden = oracle::backbone_forward(t.model.backbone(), L.tokens);
  const double l_tp = oracle::token_nll(t.model.backbone(), hidden, L.tokens, L.target_begin, L.target_end - L.target_begin);
  const double l_st = oracle::token_nll(t.model.backbone(), hidden, L.tokens, L.story_begin, L.tokens.size() - 1 - L.story_begin);

  Eigen::MatrixXd kw_states(static_cast<Eigen::Index>(L.kw_positions.size()), hidden.cols());
  for (std::size_t i = 0; i < L.kw_positions.size(); ++i)
    kw_states.row(static_cast<Eigen::Index>(i)) = hidden.row(static_cast<Eigen::Index>(L.kw_positions[i]));
  const Eigen::RowVectorXd s_tar =
      hidden.middleRows(static_cast<Eigen::Index>(L.target_begin + 1), static_cast<Eigen::Index>(L.target_end - L.target_begin - 1))
          .colwise()
          .mean();
  oracle::Graph g;
  for (const auto* list : {&item.annotation.input_keywords, &item.annotation.target_keywords})
    for (const auto& k : *list) g.grow(k.surface, t.model.store().triples());
  const auto planner = t.model.make_planner({});
  const auto plan = oracle::plan_losses(kw_states, g, t.model.store().triples(), L.plan, s_tar, planner, false);

  const auto all = pipeline::item_losses(t.model, item, {Stage::target, Stage::plot, Stage::story}, {}, &planner, nullptr);
  EXPECT_NEAR(all.l_tp, l_tp, 1e-9);
  EXPECT_NEAR(all.l_st, l_st, 1e-9);
  EXPECT_NEAR(all.l_kw, plan.l_kw, 1e-9);
  EXPECT_NEAR(all.l_c, plan.l_c, 1e-9);
  EXPECT_NEAR(all.total, l_tp + l_st + plan.l_kw + plan.l_c, 1e-9);
  EXPECT_GT(std::accumulate(plan.labels.begin(), plan.labels.end(), 0), 0);  // some gold words come from the graph

  EXPECT_NEAR(pipeline::item_loss(t.model, item, Stage::target, {}, nullptr, nullptr).total, l_tp, 1e-9);
  EXPECT_NEAR(pipeline::item_loss(t.model, item, Stage::story, {}, nullptr, nullptr).total, l_st, 1e-9);
  EXPECT_THROW(pipeline::item_loss(t.model, item, Stage::plot, {}, nullptr, nullptr), pipeline::PipelineError);
  EXPECT_THROW(pipeline::item_loss(t.model, item, Stage::target, {.no_tp = true}, nullptr, nullptr), pipeline::PipelineError);
}

TEST(Losses, GradientsOfEveryParameterGroup) {
  auto t = tiny();
  Rng rng(12);
  // nonzero biases and heads so every path carries gradient
  for (ad::Parameter* p : t.model.parameters())
    if (p->value.rows() == 1 || p->value.cols() == 1) p->value += testkit::random_matrix(p->value.rows(), p->value.cols(), rng, 0.1);
  const auto planner = t.model.make_planner({});
  const std::vector<Stage> stages{Stage::target, Stage::plot, Stage::story};
  const auto& item = t.items[3];
  ad::Gradients grads;
  pipeline::item_losses(t.model, item, stages, {}, &planner, &grads);
  auto f = [&] { return pipeline::item_losses(t.model, item, stages, {}, &planner, nullptr).total; };

  double worst = 0;
  std::string where;
  std::size_t checked = 0;
  for (ad::Parameter* p : t.model.parameters()) {
    const auto it = grads.find(p);
    const ad::Matrix g = it == grads.end() ? ad::Matrix::Zero(p->value.rows(), p->value.cols()) : it->second;
    std::vector<Eigen::Index> entries;
    Eigen::Index r = 0, c = 0;
    g.cwiseAbs().maxCoeff(&r, &c);
    entries.push_back(c * g.rows() + r);  // column-major offset
    for (int k = 0; k < 2; ++k) entries.push_back(static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(p->value.size()))));
    bool any = false;
    for (Eigen::Index e : entries) {
      double& x = p->value.data()[e];
      const double x0 = x;
      x = x0 + 1e-5;
      const double up = f();
      x = x0 - 1e-5;
      const double down = f();
      x = x0;
      const double num = (up - down) / 2e-5;
      const double ana = g.data()[e];
      const double scale = std::max(std::abs(num), std::abs(ana));
      any = any || scale > 1e-7;
      const double rel = scale < 1e-7 ? 0.0 : std::abs(num - ana) / scale;
      ++checked;
      if (rel > worst) {
        worst = rel;
        where = p->name + "[" + std::to_string(e) + "] analytic " + std::to_string(ana) + " numeric " + std::to_string(num);
      }
    }
    // key biases and the scalar guidance bias shift every logit of a softmax equally
    const bool shift_only = p->name.ends_with(".bk") || p->name == "plan.b_d";
    EXPECT_EQ(any, !shift_only) << p->name;
  }
  EXPECT_LT(worst, 1e-4) << where;
  EXPECT_GT(checked, 100u);
}

TEST(Checkpoint, RoundTripIsExact) {
  auto t = tiny();
  t.model.stages().push_back({"target", 3, 1.25});
  const auto path = temp_path("roundtrip.ckpt");
  t.model.save(path);
  const auto back = ConPerModel::load(path);
  EXPECT_EQ(back.tokenizer().merges(), t.model.tokenizer().merges());
  EXPECT_EQ(back.plan_vocab().words(), t.model.plan_vocab().words());
  EXPECT_EQ(back.triples(), t.model.triples());
  EXPECT_EQ(back.store().size(), t.model.store().size());
  ASSERT_EQ(back.stages().size(), 1u);
  EXPECT_EQ(back.stages()[0].best_valid_loss, 1.25);
  auto a = t.model.parameters();
  auto b = const_cast<ConPerModel&>(back).parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
  }
  const auto path2 = temp_path("roundtrip2.ckpt");
  back.save(path2);
  EXPECT_EQ(pipeline::file_hash(path), pipeline::file_hash(path2));
  fs::remove(path);
  fs::remove(path2);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  const auto path = temp_path("corrupt.ckpt");
  tiny().model.save(path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << b;
  };
  write(bytes.substr(0, bytes.size() - 100));
  EXPECT_THROW(ConPerModel::load(path), pipeline::CheckpointError);
  write(bytes.substr(0, 200));
  EXPECT_THROW(ConPerModel::load(path), pipeline::CheckpointError);
  std::string bad = bytes;
  bad[0] = 'X';
  write(bad);
  EXPECT_THROW(ConPerModel::load(path), pipeline::CheckpointError);
  bad = bytes;
  bad[8] = 9;  // version
  write(bad);
  EXPECT_THROW(ConPerModel::load(path), pipeline::CheckpointError);
  fs::remove(path);
  EXPECT_THROW(ConPerModel::load(path), pipeline::CheckpointError);
}

TEST(Hash, Fnv1aKnownValues) {
  EXPECT_EQ(pipeline::fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(pipeline::fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Training, StagesMustRunInOrder) {
  auto t = tiny();
  pipeline::StageConfig cfg;
  cfg.stage = Stage::plot;
  cfg.epochs = 1;
  EXPECT_THROW(pipeline::train_stage(t.model, t.items, {}, cfg, {}), pipeline::PipelineError);
  cfg.stage = Stage::target;
  EXPECT_THROW(pipeline::train_stage(t.model, t.items, {}, cfg, {.no_tp = true}), pipeline::PipelineError);
  EXPECT_THROW(pipeline::train_stage(t.model, {}, {}, cfg, {}), pipeline::PipelineError);
}

TEST(Training, JoinRequiresEveryAnnotation) {
  const auto& items = tiny().items;
  std::vector<corpus::Example> ex{items[0].example, items[1].example};
  EXPECT_EQ(pipeline::join_items(ex, {items[1].annotation, items[0].annotation})[1].annotation.example_id, ex[1].id);
  EXPECT_THROW(pipeline::join_items(ex, {items[0].annotation}), pipeline::PipelineError);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  ad::Parameter w{"w", ad::Matrix::Constant(2, 2, 1.0)};
  ad::Parameter b{"b", ad::Matrix::Constant(1, 2, 1.0)};
  pipeline::AdamW opt({&w, &b}, {.lr = 0.1, .weight_decay = 0.5, .clip_norm = 0});
  ad::Gradients g;
  g[&w] = (ad::Matrix(2, 2) << 0.3, -2.0, 0.0, 5.0).finished();
  g[&b] = (ad::Matrix(1, 2) << -1.0, 1e-3).finished();
  opt.step(g);
  // decay 1 - 0.1 * 0.5 on matrices only, then -lr * sign(g)
  EXPECT_NEAR(w.value(0, 0), 0.95 - 0.1, 1e-6);
  EXPECT_NEAR(w.value(0, 1), 0.95 + 0.1, 1e-6);
  EXPECT_NEAR(w.value(1, 0), 0.95, 1e-12);
  EXPECT_NEAR(b.value(0, 0), 1.1, 1e-6);
  EXPECT_NEAR(b.value(0, 1), 0.9, 1e-4);
}

TEST(AdamW, ClipsGlobalNorm) {
  ad::Parameter w{"w", ad::Matrix::Zero(1, 2)};
  pipeline::AdamW opt({&w}, {.lr = 0.1, .weight_decay = 0, .clip_norm = 1.0});
  ad::Gradients g;
  g[&w] = (ad::Matrix(1, 2) << 3.0, 4.0).finished();
  EXPECT_DOUBLE_EQ(opt.step(g), 5.0);
}

TEST(Training, OverfitsTargetOnTenExamples) {
  std::vector<Item> items = synthetic_items(10, 21);
  auto model = pipeline::make_model(items, {}, tiny_config(), 80);
  pipeline::StageConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 2;
  cfg.learning_rate = 1e-2;
  cfg.weight_decay = 0;
  cfg.patience = 60;
  const auto before = pipeline::item_loss(model, items[0], Stage::target, {}, nullptr, nullptr).total;
  const auto rep = pipeline::train_stage(model, items, {}, cfg, {});
  double after = 0;
  for (const auto& it : items) after += pipeline::item_loss(model, it, Stage::target, {}, nullptr, nullptr).total;
  after /= 10;
  EXPECT_GT(before, 3.0);
  EXPECT_LT(after, 0.25) << "best epoch " << rep.best_epoch;
  EXPECT_TRUE(model.has_stage("target"));
}

TEST(Generation, SeededRunsAreIdentical) {
  const auto& t = tiny();
  const auto& e = t.items[4].example;
  auto run = [&](std::uint64_t seed) {
    Rng rng(seed);
    auto g = pipeline::generate(t.model, e.context, e.persona, rng, {}, {.max_keywords = 6, .max_story_tokens = 60});
    std::string dump = g.target + "|" + g.raw_story + "|" + g.story + "|" + std::to_string(g.fallback);
    for (const auto& k : g.plan.keywords) dump += "|" + k.surface;
    for (const auto& tr : g.traces) dump += "\n" + planner::to_json_line(tr);
    return dump;
  };
  const auto a = run(1);
  EXPECT_EQ(a, run(1));
  EXPECT_NE(a, run(2));
}

TEST(Generation, AblationsSkipTheirSegments) {
  const auto& t = tiny();
  const auto& e = t.items[5].example;
  Rng rng(3);
  const auto g = pipeline::generate(t.model, e.context, e.persona, rng, {.no_pp = true, .no_tp = true},
                                    {.max_story_tokens = 40});
  EXPECT_TRUE(g.target.empty());
  EXPECT_TRUE(g.plan.keywords.empty());
  EXPECT_TRUE(g.traces.empty());
  EXPECT_FALSE(g.fallback);
  EXPECT_EQ(g.raw_story.find(backbone::special::kTargetSlot), std::string::npos);
}
