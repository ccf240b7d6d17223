#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "conper/annotate.hpp"
#include "conper/autograd.hpp"
#include "conper/kgraph.hpp"
#include "conper/rng.hpp"
#include "conper/tokenizer.hpp"

namespace conper::planner {

using ad::Matrix;
using Vector = Eigen::RowVectorXd;

inline constexpr std::string_view kEndOfPlan = "<eop>";

/// Symbols the planner can emit: the end marker (id 0) then dataset words
/// and keyword lemmas in sorted order.
class PlanVocab {
 public:
  PlanVocab() : PlanVocab(std::vector<std::string>{}) {}
  explicit PlanVocab(std::vector<std::string> words);

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::size_t id) const { return words_.at(id); }
  const std::vector<std::string>& words() const { return words_; }
  std::optional<int> id(std::string_view w) const;
  int require(std::string_view w) const;
  std::unordered_set<std::string> word_set() const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

/// Lowercased words of every text plus every keyword surface.
PlanVocab build_plan_vocab(const std::vector<std::string>& texts,
                           const std::vector<std::vector<annotate::Keyword>>& keyword_lists);

struct PlanHeadParams {
  ad::Parameter w_k, b_k;  // V x 3H, V x 1 (gathered to the current entities)
  ad::Parameter w_l, b_l;  // V x 3H, V x 1
  ad::Parameter w_p, b_p;  // 3H x 1, 1 x 1
  ad::Parameter w_d, b_d;  // 3H x H, 1 x 1

  PlanHeadParams() = default;
  PlanHeadParams(std::size_t vocab, std::size_t hidden, std::uint64_t seed);
  std::vector<ad::Parameter*> parameters() { return {&w_k, &b_k, &w_l, &b_l, &w_p, &b_p, &w_d, &b_d}; }
};

struct PlannerFlags {
  bool no_kg = false;
  bool no_tg = false;
  /// Select the entity head when p_t < 0.5 instead of p_t >= 0.5.
  bool literal_gate_rule = false;
};

/// gamma_t from p_t.
int gate_decision(double p, bool literal_rule);
/// 1 iff the keyword is an entity of the graph.
int gate_label(std::string_view keyword, const kgraph::LocalGraph& graph);

struct Bias {
  ad::Var d_k;  // 1 x |entities|, invalid when there are none
  ad::Var d_l;  // 1 x V
};

struct StepOutput {
  ad::Var c;           // 1 x 2H
  ad::Var gate_logit;  // 1 x 1
  ad::Var logits_k;    // 1 x |entities|, invalid for an empty graph
  ad::Var logits_l;    // 1 x V
  std::optional<Bias> bias;
  std::vector<int> entity_ids;  // plan-vocab ids, aligned with logits_k
};

struct TopEntry {
  std::string word;
  double prob = 0;
  double bias = 0;
};

struct PlanStepTrace {
  std::size_t step = 0;
  double p = 0;
  int gamma = 0;
  bool teacher_forced = false;
  std::size_t support = 0;
  std::vector<TopEntry> top_k;
  std::vector<TopEntry> top_l;
  std::string keyword;
};

std::string to_json_line(const PlanStepTrace& t, std::string_view example_id = {});
PlanStepTrace trace_from_json(std::string_view line);

/// Mixture over the plan vocabulary: gamma=1 scatters P_k onto the
/// entities' vocabulary ids, gamma=0 is P_l.
Vector mix(int gamma, const Vector& p_k, const Vector& p_l, const std::vector<int>& entity_ids);

/// Read-only bundle of the planning head and what it needs from the backbone.
class Planner {
 public:
  Planner(const PlanVocab& vocab, const kgraph::GraphParams& graph_params, const PlanHeadParams& heads,
          const ad::Parameter& token_embedding, const backbone::Tokenizer& tokenizer, PlannerFlags flags);

  const PlanVocab& vocab() const { return vocab_; }
  const kgraph::GraphParams& graph_params() const { return graph_params_; }
  const PlanHeadParams& heads() const { return heads_; }
  const ad::Parameter& token_embedding() const { return token_embedding_; }
  const std::vector<std::vector<int>>& subword_groups() const { return groups_; }
  const PlannerFlags& flags() const { return flags_; }

 private:
  const PlanVocab& vocab_;
  const kgraph::GraphParams& graph_params_;
  const PlanHeadParams& heads_;
  const ad::Parameter& token_embedding_;
  std::vector<std::vector<int>> groups_;
  PlannerFlags flags_;
};

/// Planner state bound to one tape: composed word embeddings and cached
/// subgraph representations.
class PlanSession {
 public:
  PlanSession(const Planner& planner, ad::Tape& tape);

  ad::Tape& tape() { return tape_; }
  const Planner& planner() const { return planner_; }
  /// E_l, one composed embedding per plan-vocab word (V x H).
  ad::Var word_embeddings() const { return words_; }
  const kgraph::EntityTable& entity_table() const { return table_; }
  /// Stacked g_i of the graph's subgraphs (M x 2H); invalid when empty.
  ad::Var graph_rows(const kgraph::LocalGraph& graph);
  ad::Var context(ad::Var s_t, const kgraph::LocalGraph& graph);
  /// s_tar may be invalid (no target guidance).
  Bias guidance(ad::Var s_tar, ad::Var c, const std::vector<int>& entity_ids);
  StepOutput step(ad::Var s_t, const kgraph::LocalGraph& graph, ad::Var s_tar);

 private:
  const Planner& planner_;
  ad::Tape& tape_;
  ad::Var words_;
  kgraph::EntityTable table_;
  std::map<std::string, ad::Var> g_cache_;
};

struct PlanLoss {
  ad::Var l_kw;
  ad::Var l_c;
  ad::Var l_pp;
  std::size_t steps = 0;
  std::vector<PlanStepTrace> traces;
};

/// Teacher-forced losses. `kw_states` row t is the hidden state that predicts
/// keyword t (the last row predicts the end marker). The graph is replayed
/// with the gold keywords.
PlanLoss plan_losses(PlanSession& session, ad::Var kw_states, kgraph::LocalGraph graph,
                     const kgraph::TripleStore& store, const std::vector<std::string>& gold, ad::Var s_tar,
                     bool want_traces = false);

struct PlanDecodeResult {
  annotate::KeywordPlan plan;
  std::vector<PlanStepTrace> traces;
};

/// Feeds a chosen keyword to the language model and returns the hidden state
/// at the next keyword slot, or nothing when the plan must stop.
using AdvanceFn = std::function<std::optional<Vector>(const std::string& keyword)>;

PlanDecodeResult plan_decode(const Planner& planner, const Vector& s0, kgraph::LocalGraph& graph,
                             const kgraph::TripleStore& store, const std::optional<Vector>& s_tar, Rng& rng,
                             std::size_t max_keywords, double top_p, const AdvanceFn& advance);

}  // namespace conper::planner
