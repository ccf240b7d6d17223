#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "conper/annotate.hpp"
#include "conper/corpus.hpp"
#include "conper/model.hpp"
#include "conper/planner.hpp"

namespace conper::pipeline {

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ablations and annotation variants. All false is full ConPer.
struct Ablation {
  bool no_kg = false;
  bool no_tg = false;
  bool no_pp = false;
  bool no_tp = false;
  bool literal_gate_rule = false;

  planner::PlannerFlags planner_flags() const { return {no_kg, no_tg || no_tp, literal_gate_rule}; }
};

enum class Stage { target, plot, story };
std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);
/// Stages that run under an ablation, in training order.
std::vector<Stage> stages_for(const Ablation& ablation);

struct StageConfig {
  Stage stage = Stage::target;
  std::size_t epochs = 5;
  std::size_t batch_size = 8;
  double learning_rate = 5e-5;
  double weight_decay = 0.01;
  std::size_t patience = 2;
  std::uint64_t seed = 0;
  /// Keep optimizing the losses of the stages already trained. Without it
  /// the later stages overwrite the target planner at desk scale.
  bool rehearse = true;
};

/// An example with its annotation, ready for sequence building.
struct Item {
  corpus::Example example;
  annotate::Annotation annotation;
};

/// Token layout of one training sequence.
struct Layout {
  std::vector<int> tokens;
  std::size_t target_begin = 0;  // index of <tgt>; 0 when absent
  std::size_t target_end = 0;    // index of </tgt>
  std::vector<std::size_t> kw_positions;
  std::vector<std::string> plan;
  std::size_t story_begin = 0;  // index of <story>; 0 when absent
  std::size_t context_tokens_dropped = 0;
};

/// Story sentences with the target replaced by the slot token (first target
/// sentence in story order) and any other target sentences removed.
std::string story_with_slot(const corpus::Example& e, const annotate::Annotation& a);

/// `<bos> context <sep> persona [<tgt> target </tgt>] [<kw> w ... <kw>] [<story> story <eos>]`
Layout build_layout(const ConPerModel& model, const Item& item, const Ablation& ablation, bool with_story);
/// Prompt tokens only (through the persona), left-truncating the context so
/// that `reserve` tokens remain in the window.
std::vector<int> prompt_tokens(const ConPerModel& model, std::string_view context, std::string_view persona,
                               std::size_t reserve);

struct StageLosses {
  double total = 0;
  double l_tp = 0;
  double l_kw = 0;
  double l_c = 0;
  double l_st = 0;
};

/// Summed losses of one item for the given stages from a single forward
/// pass; backpropagates when `grads` is given.
StageLosses item_losses(ConPerModel& model, const Item& item, const std::vector<Stage>& stages,
                        const Ablation& ablation, const planner::Planner* planner, ad::Gradients* grads,
                        double grad_scale = 1.0);
StageLosses item_loss(ConPerModel& model, const Item& item, Stage stage, const Ablation& ablation,
                      const planner::Planner* planner, ad::Gradients* grads, double grad_scale = 1.0);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0;
  double valid_loss = 0;
  double train_l_tp = 0;
  double train_l_kw = 0;
  double train_l_c = 0;
  double train_l_st = 0;
};

struct StageReport {
  Stage stage = Stage::target;
  std::vector<EpochMetrics> epochs;
  double best_valid_loss = 0;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

using ProgressFn = std::function<void(const EpochMetrics&)>;

/// Trains one stage with early stopping on validation loss; the best
/// epoch's weights are kept. Stages must run in order.
StageReport train_stage(ConPerModel& model, const std::vector<Item>& train, const std::vector<Item>& valid,
                        const StageConfig& config, const Ablation& ablation, const ProgressFn& progress = {});

struct GenerateOptions {
  double top_p = 0.9;
  std::size_t max_target_tokens = 40;
  std::size_t max_keywords = 40;
  std::size_t max_story_tokens = 240;
};

struct Generation {
  std::string target;
  annotate::KeywordPlan plan;
  std::string raw_story;  // as decoded, slot tokens included
  std::string story;      // target spliced in
  bool fallback = false;
  std::vector<planner::PlanStepTrace> traces;
};

struct SpliceResult {
  std::string story;
  bool fallback = false;
  std::size_t slots = 0;
};

/// Replaces the first slot token with the target and drops the rest. Without
/// a slot the target goes after the most similar sentence.
SpliceResult splice_target(std::string_view raw_story, std::string_view target,
                           const annotate::TokenEmbedder& embedder);

Generation generate(const ConPerModel& model, std::string_view context, std::string_view persona, Rng& rng,
                    const Ablation& ablation, const GenerateOptions& options = {});

/// Builds model items: annotations are matched to examples by id.
std::vector<Item> join_items(const std::vector<corpus::Example>& examples,
                             const std::vector<annotate::Annotation>& annotations);

/// Tokenizer, plan vocabulary and an untrained model for a training set.
ConPerModel make_model(const std::vector<Item>& train, const std::vector<kgraph::Triple>& triples,
                       const ModelConfig& config, std::size_t bpe_merges);

}  // namespace conper::pipeline
