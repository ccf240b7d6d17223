// conper: batch command surface for the persona-controllable story pipeline.
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "conper/annotate.hpp"
#include "conper/corpus.hpp"
#include "conper/eval.hpp"
#include "conper/kgraph.hpp"
#include "conper/model.hpp"
#include "conper/pipeline.hpp"
#include "conper/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace conper;

namespace {

enum Exit { kOk = 0, kUsage = 1, kDataError = 2, kTrainingFailure = 3 };

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AblationOpts {
  bool no_kg = false, no_tg = false, no_pp = false, no_tp = false, literal_gate = false;
  pipeline::Ablation get() const { return {no_kg, no_tg, no_pp, no_tp, literal_gate}; }
  void add(CLI::App* app) {
    app->add_flag("--no-kg", no_kg, "Disable knowledge graph guidance");
    app->add_flag("--no-tg", no_tg, "Disable target guidance");
    app->add_flag("--no-pp", no_pp, "Disable plot planning");
    app->add_flag("--no-tp", no_tp, "Disable target planning");
    app->add_flag("--literal-gate", literal_gate, "Select the entity head when p_t < 0.5");
  }
  json to_json() const {
    return {{"no_kg", no_kg}, {"no_tg", no_tg}, {"no_pp", no_pp}, {"no_tp", no_tp}, {"literal_gate", literal_gate}};
  }
};

struct DecodeOpts {
  pipeline::GenerateOptions o;
  void add(CLI::App* app) {
    app->add_option("--top-p", o.top_p, "Nucleus mass")->check(CLI::Range(1e-9, 1.0));
    app->add_option("--max-target-tokens", o.max_target_tokens);
    app->add_option("--max-keywords", o.max_keywords);
    app->add_option("--max-story-tokens", o.max_story_tokens);
  }
};

std::string timestamp() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ostringstream s;
  s << std::put_time(std::gmtime(&t), "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

json options_json(const CLI::App* app) {
  json j = json::object();
  for (const CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    const auto& res = opt->results();
    if (opt->get_expected_max() == 0) {
      j[name] = opt->count() > 0;
    } else if (res.empty()) {
      j[name] = opt->get_default_str();
    } else {
      j[name] = res.size() == 1 ? json(res.front()) : json(res);
    }
  }
  return j;
}

class Manifest {
 public:
  Manifest(std::string command, const CLI::App* app) {
    j_["command"] = std::move(command);
    j_["config"] = options_json(app);
    j_["inputs"] = json::object();
    j_["outputs"] = json::object();
    j_["metrics"] = json::object();
  }
  void input(const std::string& path) { j_["inputs"][path] = pipeline::file_hash(path); }
  void output(const std::string& path) { j_["outputs"][path] = pipeline::file_hash(path); }
  json& metrics() { return j_["metrics"]; }
  json& root() { return j_; }
  void write(const std::string& path) {
    j_["created_at"] = timestamp();
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << j_.dump(2) << '\n';
    std::cerr << "manifest: " << path << '\n';
  }

 private:
  json j_;
};

std::vector<corpus::Example> load_split(const std::string& path, std::optional<corpus::Split> split) {
  if (!fs::exists(path)) throw DataError("dataset not found: " + path);
  auto res = corpus::load_dataset(path, split);
  for (const auto& r : res.rejected) std::cerr << path << ":" << r.line << ": rejected: " << r.reason << '\n';
  return std::move(res.examples);
}

std::vector<annotate::Annotation> load_annotations_checked(const std::string& path) {
  if (!fs::exists(path)) throw DataError("annotations not found: " + path);
  return annotate::load_annotations(path);
}

std::vector<kgraph::Triple> read_triple_rows(const std::string& path) {
  if (path.empty()) return {};
  if (!fs::exists(path)) throw DataError("triple file not found: " + path);
  // keep every readable row; the model applies the filters against its own vocabulary
  std::ifstream in(path);
  std::vector<kgraph::Triple> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string h, r, t, c;
    if (line.empty() || line[0] == '#') continue;
    if (!std::getline(ls, h, '\t') || !std::getline(ls, r, '\t') || !std::getline(ls, t, '\t') || !std::getline(ls, c))
      continue;
    try {
      rows.push_back({h, r, t, std::stod(c)});
    } catch (const std::exception&) {
    }
  }
  return rows;
}

pipeline::ConPerModel load_model(const std::string& path) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path);
  return pipeline::ConPerModel::load(path);
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::string manifest_path(const std::string& artifact, const std::string& tag) { return artifact + "." + tag + ".manifest.json"; }

// ---------------------------------------------------------------------------

struct SynthCmd {
  std::size_t n = 500;
  std::uint64_t seed = 7;
  std::uint64_t triples_seed = 3;
  std::string out, triples_out;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("synth", "Write a planted-signal synthetic corpus");
    app->add_option("--n", n, "Number of examples")->check(CLI::PositiveNumber);
    app->add_option("--seed", seed);
    app->add_option("--out", out, "Dataset path")->required();
    app->add_option("--triples-out", triples_out, "Also write a matching triple file");
    app->add_option("--triples-seed", triples_seed);
  }
  void run() {
    ensure_parent(out);
    corpus::write_dataset(out, corpus::make_synthetic_corpus(n, seed));
    Manifest m("synth", app);
    m.output(out);
    if (!triples_out.empty()) {
      ensure_parent(triples_out);
      std::ofstream t(triples_out);
      t << kgraph::format_triples(kgraph::make_synthetic_triples(triples_seed));
      t.close();
      m.output(triples_out);
    }
    m.metrics()["examples"] = n;
    m.write(manifest_path(out, "synth"));
  }
};

struct PreprocessCmd {
  std::string data, out_dir, triples, policy = "best1";
  std::size_t keyword_cap = 5;
  std::size_t bpe_merges = 500;
  std::uint64_t seed = 0;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("preprocess", "Annotate targets and keyword plans; dump graph initialisation");
    app->add_option("--data", data)->required();
    app->add_option("--out-dir", out_dir)->required();
    app->add_option("--triples", triples, "Triple file for graph initialisation dumps");
    app->add_option("--target-policy", policy)->check(CLI::IsMember({"best1", "best2", "random"}));
    app->add_option("--keyword-cap", keyword_cap)->check(CLI::PositiveNumber);
    app->add_option("--bpe-merges", bpe_merges, "Merges of the tokenizer used for length statistics");
    app->add_option("--seed", seed);
  }
  void run() {
    const auto examples = load_split(data, std::nullopt);
    if (examples.empty()) throw DataError("no valid examples in " + data);
    fs::create_directories(out_dir);
    annotate::AnnotateOptions opts{annotate::parse_target_policy(policy), keyword_cap, seed};
    const annotate::HashedWordEmbedder embedder;
    std::vector<annotate::Annotation> anns;
    for (const auto& e : examples) anns.push_back(annotate::annotate_example(e, opts, embedder));
    const std::string ann_path = (fs::path(out_dir) / "annotations.jsonl").string();
    annotate::write_annotations(ann_path, anns);

    std::vector<std::string> texts;
    for (const auto& e : examples)
      if (e.split == corpus::Split::train)
        for (const auto* s : {&e.context, &e.persona, &e.story}) texts.push_back(*s);
    const auto tok = backbone::Tokenizer::train(texts, bpe_merges);
    const corpus::TokenCounter count = [&](std::string_view s) { return tok.count(s); };
    const std::string stats_path = (fs::path(out_dir) / "stats.txt").string();
    std::ofstream stats(stats_path);
    Manifest m("preprocess", app);
    for (auto split : {corpus::Split::train, corpus::Split::valid, corpus::Split::test}) {
      std::vector<corpus::Example> ex;
      std::vector<annotate::Annotation> an;
      for (std::size_t i = 0; i < examples.size(); ++i)
        if (examples[i].split == split) {
          ex.push_back(examples[i]);
          an.push_back(anns[i]);
        }
      const auto s = annotate::compute_stats(ex, an, count);
      stats << corpus::format_stats(s, corpus::to_string(split)) << '\n';
      m.metrics()[std::string(corpus::to_string(split))] = {{"num_examples", s.num_examples},
                                                            {"avg_story_len", s.avg_story_len},
                                                            {"avg_keywords_story", s.avg_keywords_story}};
    }
    stats.close();
    m.input(data);
    m.output(ann_path);
    m.output(stats_path);
    if (!triples.empty()) {
      std::vector<std::vector<annotate::Keyword>> kws;
      for (const auto& a : anns) kws.push_back(a.plan.keywords);
      const auto vocab = planner::build_plan_vocab(texts, kws);
      const auto store = kgraph::TripleStore(read_triple_rows(triples), vocab.word_set());
      const std::string g_path = (fs::path(out_dir) / "graph_init.jsonl").string();
      std::ofstream g(g_path);
      for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto graph = kgraph::init_local_graph(store, anns[i].input_keywords, anns[i].target_keywords);
        g << json{{"example_id", examples[i].id}, {"anchors", graph.anchors()}, {"entities", graph.entities().size()},
                  {"triples", graph.num_triples()}}.dump()
          << '\n';
      }
      g.close();
      const auto& r = store.report();
      m.metrics()["triples"] = {{"rows", r.rows}, {"kept", r.kept}, {"unreadable", r.unreadable},
                                {"low_confidence", r.low_confidence}, {"multi_word", r.multi_word},
                                {"out_of_vocab", r.out_of_vocab}, {"duplicates", r.duplicates}};
      m.input(triples);
      m.output(g_path);
    }
    m.write((fs::path(out_dir) / "preprocess.manifest.json").string());
  }
};

struct TrainCmd {
  std::string stage, data, annotations, triples, checkpoint;
  pipeline::StageConfig sc{pipeline::Stage::target, 10, 8, 3e-3, 0.01, 2, 0, true};
  bool no_rehearse = false;
  pipeline::ModelConfig mc;
  std::size_t bpe_merges = 500;
  AblationOpts ab;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    mc.backbone.hidden = 32;
    mc.backbone.ff = 128;
    app = root.add_subcommand("train", "Train one stage (target, plot, story)");
    app->add_option("--stage", stage)->required()->check(CLI::IsMember({"target", "plot", "story"}));
    app->add_option("--data", data)->required();
    app->add_option("--annotations", annotations)->required();
    app->add_option("--triples", triples);
    app->add_option("--checkpoint", checkpoint, "Read when it exists, always written")->required();
    app->add_option("--epochs", sc.epochs);
    app->add_option("--batch-size", sc.batch_size)->check(CLI::PositiveNumber);
    app->add_option("--lr", sc.learning_rate)->check(CLI::PositiveNumber);
    app->add_option("--weight-decay", sc.weight_decay);
    app->add_option("--patience", sc.patience)->check(CLI::PositiveNumber);
    app->add_option("--seed", sc.seed);
    app->add_flag("--no-rehearse", no_rehearse, "Optimize only this stage's loss");
    app->add_option("--hidden", mc.backbone.hidden);
    app->add_option("--layers", mc.backbone.layers);
    app->add_option("--heads", mc.backbone.heads);
    app->add_option("--ff", mc.backbone.ff);
    app->add_option("--window", mc.backbone.context_window);
    app->add_option("--graph-attention", mc.graph_attention);
    app->add_option("--model-seed", mc.seed);
    app->add_option("--bpe-merges", bpe_merges);
    ab.add(app);
  }
  void run() {
    sc.stage = pipeline::parse_stage(stage);
    sc.rehearse = !no_rehearse;
    mc.backbone.seed = mc.seed;
    const auto ablation = ab.get();
    const auto train = pipeline::join_items(load_split(data, corpus::Split::train), load_annotations_checked(annotations));
    const auto valid = pipeline::join_items(load_split(data, corpus::Split::valid), load_annotations_checked(annotations));
    if (train.empty()) throw DataError("no training examples in " + data);
    const auto order = pipeline::stages_for(ablation);
    std::optional<pipeline::ConPerModel> model;
    if (fs::exists(checkpoint) && sc.stage != order.front()) {
      model.emplace(pipeline::ConPerModel::load(checkpoint));
    } else {
      model.emplace(pipeline::make_model(train, read_triple_rows(triples), mc, bpe_merges));
    }
    Manifest m("train", app);
    m.input(data);
    m.input(annotations);
    if (!triples.empty()) m.input(triples);
    pipeline::StageReport rep;
    try {
      rep = pipeline::train_stage(*model, train, valid, sc, ablation, [](const pipeline::EpochMetrics& e) {
        std::cerr << "epoch " << e.epoch << " train " << e.train_loss << " valid " << e.valid_loss << '\n';
      });
    } catch (const pipeline::PipelineError& e) {
      throw TrainingFailure(e.what());
    }
    ensure_parent(checkpoint);
    model->save(checkpoint);
    m.output(checkpoint);
    json epochs = json::array();
    for (const auto& e : rep.epochs)
      epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"valid_loss", e.valid_loss},
                        {"l_tp", e.train_l_tp}, {"l_kw", e.train_l_kw}, {"l_c", e.train_l_c}, {"l_st", e.train_l_st}});
    m.metrics()["epochs"] = epochs;
    m.metrics()["best_valid_loss"] = rep.best_valid_loss;
    m.metrics()["best_epoch"] = rep.best_epoch;
    m.metrics()["early_stopped"] = rep.early_stopped;
    json stages = json::array();
    for (const auto& s : model->stages()) stages.push_back(s.stage);
    m.metrics()["stage_provenance"] = stages;
    m.write(manifest_path(checkpoint, "train-" + stage));
  }
};

struct GenerateCmd {
  std::string checkpoint, data, split = "test", out, traces;
  std::uint64_t seed = 0;
  AblationOpts ab;
  DecodeOpts dec;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("generate", "Generate stories for a dataset split");
    app->add_option("--checkpoint", checkpoint)->required();
    app->add_option("--data", data)->required();
    app->add_option("--split", split)->check(CLI::IsMember({"train", "valid", "test"}));
    app->add_option("--out", out, "Generation dump")->required();
    app->add_option("--traces", traces, "Plan step traces");
    app->add_option("--seed", seed);
    ab.add(app);
    dec.add(app);
  }
  void run() {
    const auto model = load_model(checkpoint);
    const auto examples = load_split(data, corpus::parse_split(split));
    ensure_parent(out);
    std::ofstream gen(out);
    std::ofstream tr;
    if (!traces.empty()) {
      ensure_parent(traces);
      tr.open(traces);
    }
    std::size_t fallbacks = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      Rng rng(derive_seed(seed, i));
      const auto g = pipeline::generate(model, examples[i].context, examples[i].persona, rng, ab.get(), dec.o);
      std::vector<std::string> plan;
      for (const auto& k : g.plan.keywords) plan.push_back(k.surface);
      gen << json{{"id", examples[i].id}, {"target", g.target}, {"plan", plan}, {"story", g.story},
                  {"fallback_flag", g.fallback}}.dump()
          << '\n';
      fallbacks += g.fallback;
      if (tr.is_open())
        for (const auto& t : g.traces) tr << planner::to_json_line(t, examples[i].id) << '\n';
    }
    gen.close();
    if (tr.is_open()) tr.close();
    Manifest m("generate", app);
    m.input(checkpoint);
    m.input(data);
    m.output(out);
    if (!traces.empty()) m.output(traces);
    m.metrics()["generated"] = examples.size();
    m.metrics()["fallbacks"] = fallbacks;
    m.write(manifest_path(out, "generate"));
  }
};

eval::PCClassifier obtain_classifier(const std::string& path, const std::string& data,
                                     const backbone::Tokenizer& tokenizer, const eval::PCOptions& opts) {
  if (!path.empty() && fs::exists(path)) return eval::PCClassifier::load(path);
  auto c = eval::train_pc_classifier(load_split(data, corpus::Split::train), load_split(data, corpus::Split::valid),
                                     tokenizer, opts);
  if (!path.empty()) {
    ensure_parent(path);
    c.save(path);
  }
  return c;
}

void add_pc_options(CLI::App* app, eval::PCOptions& o) {
  app->add_option("--pc-epochs", o.epochs);
  app->add_option("--pc-dim", o.dim);
  app->add_option("--pc-hidden", o.hidden);
  app->add_option("--pc-lr", o.learning_rate);
  app->add_option("--pc-seed", o.seed);
}

struct EvaluateCmd {
  std::string checkpoint, data, generations, classifier, out, split = "test";
  eval::PCOptions pc;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("evaluate", "Score a generation dump (B-n, D-n, BS-t, BS-m, PC)");
    app->add_option("--checkpoint", checkpoint)->required();
    app->add_option("--data", data)->required();
    app->add_option("--split", split)->check(CLI::IsMember({"train", "valid", "test"}));
    app->add_option("--generations", generations)->required();
    app->add_option("--classifier", classifier, "Loaded when present, otherwise trained and saved");
    app->add_option("--out", out, "Metrics file")->required();
    add_pc_options(app, pc);
  }
  void run() {
    const auto model = load_model(checkpoint);
    const auto examples = load_split(data, corpus::parse_split(split));
    if (!fs::exists(generations)) throw DataError("generation dump not found: " + generations);
    std::map<std::string, json> gens;
    std::ifstream in(generations);
    for (std::string line; std::getline(in, line);)
      if (!text::trim(line).empty()) {
        auto j = json::parse(line);
        gens[j.at("id").get<std::string>()] = j;
      }
    const auto pcc = obtain_classifier(classifier, data, model.tokenizer(), pc);
    const backbone::ModelEmbedder embedder(model.tokenizer(), model.backbone());
    std::vector<std::string> cands, refs;
    double bs_t = 0, bs_m = 0, pcs = 0;
    std::size_t n_t = 0, fallbacks = 0;
    for (const auto& e : examples) {
      const auto it = gens.find(e.id);
      if (it == gens.end()) throw DataError("generation dump lacks example " + e.id);
      const std::string story = it->second.at("story").get<std::string>();
      const std::string target = it->second.at("target").get<std::string>();
      cands.push_back(story);
      refs.push_back(e.story);
      if (!text::trim(target).empty() && embedder.embed(target).rows() > 0) {
        bs_t += eval::bs_target(target, e.persona, embedder);
        ++n_t;
      }
      auto sents = text::split_sentences(story);
      std::erase_if(sents, [&](const std::string& s) { return embedder.embed(s).rows() == 0; });
      if (!sents.empty()) bs_m += eval::bs_max(sents, e.persona, embedder);
      pcs += pcc.score(e.context, e.persona, story);
      fallbacks += it->second.value("fallback_flag", false);
    }
    const double n = static_cast<double>(std::max<std::size_t>(examples.size(), 1));
    json metrics = {{"B-1", eval::bleu(cands, refs, 1)},
                    {"B-2", eval::bleu(cands, refs, 2)},
                    {"BS-t", n_t ? bs_t / static_cast<double>(n_t) : 0.0},
                    {"BS-m", bs_m / n},
                    {"PC", pcs / n},
                    {"fallback_rate", static_cast<double>(fallbacks) / n}};
    for (std::size_t k = 1; k <= 4; ++k) metrics["D-" + std::to_string(k)] = cands.empty() ? 0.0 : eval::distinct_n(cands, k);
    json report = {{split, metrics},
                   {"classifier", {{"heldout_accuracy", pcc.report().heldout_accuracy}, {"trained", pcc.trained()}}}};
    ensure_parent(out);
    std::ofstream(out) << report.dump(2) << '\n';
    Manifest m("evaluate", app);
    m.input(checkpoint);
    m.input(data);
    m.input(generations);
    m.output(out);
    m.metrics() = report;
    m.write(manifest_path(out, "evaluate"));
  }
};

struct ControlCmd {
  std::string checkpoint, data, classifier, out, split = "test";
  std::size_t k = 10;
  std::uint64_t seed = 0;
  AblationOpts ab;
  DecodeOpts dec;
  eval::PCOptions pc;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("controllability", "Persona controllability score and margin");
    app->add_option("--checkpoint", checkpoint)->required();
    app->add_option("--data", data)->required();
    app->add_option("--split", split)->check(CLI::IsMember({"train", "valid", "test"}));
    app->add_option("--classifier", classifier);
    app->add_option("--out", out)->required();
    app->add_option("--k", k)->check(CLI::Range(2, 1000));
    app->add_option("--seed", seed);
    ab.add(app);
    dec.add(app);
    add_pc_options(app, pc);
  }
  void run() {
    const auto model = load_model(checkpoint);
    const auto examples = load_split(data, corpus::parse_split(split));
    const auto pcc = obtain_classifier(classifier, data, model.tokenizer(), pc);
    if (!pcc.trained()) throw DataError("persona-consistency classifier is untrained");
    const auto ablation = ab.get();
    auto gen = [&](std::string_view c, std::string_view p, Rng& rng) {
      return pipeline::generate(model, c, p, rng, ablation, dec.o).story;
    };
    auto scorer = [&](std::string_view c, std::string_view p, std::string_view s) { return pcc.score(c, p, s); };
    const auto r = eval::controllability(gen, examples, scorer, k, seed);
    json report = {{"controllability", r.score}, {"delta", r.delta}, {"stories", r.stories}, {"controlled", r.controlled}, {"k", k}};
    ensure_parent(out);
    std::ofstream(out) << report.dump(2) << '\n';
    Manifest m("controllability", app);
    m.input(checkpoint);
    m.input(data);
    m.output(out);
    m.metrics() = report;
    m.write(manifest_path(out, "controllability"));
  }
};

struct TraceReportCmd {
  std::string traces, out;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("trace-report", "Tabulate how target guidance shifts keyword predictions");
    app->add_option("--traces", traces)->required();
    app->add_option("--out", out, "Report file (stdout when omitted)");
  }
  void run() {
    if (!fs::exists(traces)) throw DataError("trace file not found: " + traces);
    std::ifstream in(traces);
    std::ostringstream rep;
    rep << std::fixed << std::setprecision(4);
    std::size_t steps = 0, entity_steps = 0;
    for (std::string line; std::getline(in, line);) {
      if (text::trim(line).empty()) continue;
      const auto j = json::parse(line);
      const auto t = planner::trace_from_json(line);
      ++steps;
      entity_steps += t.gamma;
      rep << "# " << j.value("id", std::string("?")) << " step " << t.step << "  keyword=" << t.keyword << "  p=" << t.p
          << "  gamma=" << t.gamma << "  support=" << t.support << '\n';
      const auto& rows = t.gamma ? t.top_k : t.top_l;
      rep << (t.gamma ? "  entity" : "  vocab") << "            prob      bias\n";
      for (const auto& e : rows) rep << "  " << std::left << std::setw(16) << e.word << std::right << std::setw(8) << e.prob << std::setw(10) << e.bias << '\n';
    }
    rep << "steps " << steps << " entity_steps " << entity_steps << '\n';
    if (out.empty()) {
      std::cout << rep.str();
    } else {
      ensure_parent(out);
      std::ofstream(out) << rep.str();
      Manifest m("trace-report", app);
      m.input(traces);
      m.output(out);
      m.metrics()["steps"] = steps;
      m.write(manifest_path(out, "trace-report"));
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Persona-controllable story generation: synth, preprocess, train, generate, evaluate"};
  app.set_config("--config", "", "Key-value configuration file; command-line flags take precedence");
  app.allow_config_extras(false);
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  SynthCmd synth;
  PreprocessCmd pre;
  TrainCmd train;
  GenerateCmd gen;
  EvaluateCmd evaluate;
  ControlCmd control;
  TraceReportCmd trace;
  synth.add(app);
  pre.add(app);
  train.add(app);
  gen.add(app);
  evaluate.add(app);
  control.add(app);
  trace.add(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  try {
    if (*synth.app) synth.run();
    else if (*pre.app) pre.run();
    else if (*train.app) train.run();
    else if (*gen.app) gen.run();
    else if (*evaluate.app) evaluate.run();
    else if (*control.app) control.run();
    else if (*trace.app) trace.run();
  } catch (const TrainingFailure& e) {
    std::cerr << "training failure: " << e.what() << '\n';
    return kTrainingFailure;
  } catch (const eval::EvalError& e) {
    std::cerr << "evaluation error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kOk;
}
