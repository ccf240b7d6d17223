#pragma once

// Shared fixtures, a finite-difference gradient checker and dense reference
// implementations used by the unit suites and the acceptance runner.

#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "conper/annotate.hpp"
#include "conper/autograd.hpp"
#include "conper/backbone.hpp"
#include "conper/kgraph.hpp"
#include "conper/planner.hpp"
#include "conper/rng.hpp"

namespace conper::testkit {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;

MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double sd = 1.0);
void randomize(ad::Parameter& p, Rng& rng, double sd = 1.0);

struct GradCheck {
  double max_rel_error = 0;
  std::string worst;
  std::size_t checked = 0;
};

/// Central differences against tape gradients. Parameters with more than
/// `max_entries` entries are checked on their largest-gradient entries plus a
/// random sample.
GradCheck check_gradients(const std::vector<ad::Parameter*>& params, const std::function<ad::Var(ad::Tape&)>& loss,
                          std::size_t max_entries = 48, double eps = 1e-5, std::uint64_t seed = 5);

namespace oracle {

RowVectorXd softmax(const RowVectorXd& z);
double sigmoid(double x);
double log_sum_exp(const RowVectorXd& z);

struct Attention {
  std::vector<double> alpha;
  RowVectorXd g;  // 1 x 2H
};

using EntityLookup = std::function<RowVectorXd(const std::string&)>;

/// beta_n = sum_a (W_r r_n)_a tanh(W_h h_n + W_t t_n)_a, computed with loops.
Attention subgraph(const std::vector<kgraph::Triple>& triples, const EntityLookup& entity,
                   const kgraph::GraphParams& params);

/// softmax over rows of G of s W_g g_i, then the weighted row sum. Zero row for no G.
RowVectorXd knowledge_context(const RowVectorXd& s, const std::vector<RowVectorXd>& g_rows, const MatrixXd& w_g);

/// E_l: row w is the sum of the token-embedding rows of group w.
MatrixXd composed_embeddings(const MatrixXd& token_embedding, const std::vector<std::vector<int>>& groups);

struct Heads {
  double gate_logit = 0;
  RowVectorXd logits_l;
  RowVectorXd logits_k;  // empty without entities
  std::optional<RowVectorXd> d_l, d_k;
};

Heads heads(const RowVectorXd& s, const RowVectorXd& c, const std::optional<RowVectorXd>& s_tar, const MatrixXd& e_l,
            const std::vector<int>& entity_ids, const planner::PlanHeadParams& p);

/// Brute-force local graph: a subgraph per anchor holding every store triple
/// that touches it, entities in first-seen order.
struct Graph {
  std::vector<std::string> anchors;
  std::vector<std::vector<kgraph::Triple>> subgraphs;
  std::vector<std::string> entities;

  void grow(const std::string& anchor, const std::vector<kgraph::Triple>& store);
  bool has_entity(const std::string& e) const;
};

struct PlanLossValues {
  double l_kw = 0;
  double l_c = 0;
  std::vector<int> labels;
};

/// Teacher-forced keyword and gate losses, replaying graph growth with the gold words.
PlanLossValues plan_losses(const MatrixXd& kw_states, Graph graph, const std::vector<kgraph::Triple>& store,
                           const std::vector<std::string>& gold, const std::optional<RowVectorXd>& s_tar,
                           const planner::Planner& planner, bool no_kg);

/// Reference causal transformer matching the backbone's architecture,
/// written with explicit per-position loops.
MatrixXd backbone_forward(const backbone::Backbone& model, const std::vector<int>& tokens);

/// Mean of -log softmax(h W + b)[next token] over the given rows.
double token_nll(const backbone::Backbone& model, const MatrixXd& hidden, const std::vector<int>& tokens,
                 std::size_t first_row, std::size_t count);

/// Mean-of-max cosine recall with explicit loops over word vectors.
double similarity(const std::string& candidate, const std::string& reference,
                  const annotate::HashedWordEmbedder& embedder);

std::size_t select_best(const std::vector<std::string>& sentences, const std::string& persona,
                        const annotate::HashedWordEmbedder& embedder);

/// Keyword rules restated: emotion words by valence, then non-stop nouns
/// and verbs by lemma, capped, with a seeded fallback word.
std::vector<annotate::Keyword> keywords(const std::string& sentence, std::size_t cap, bool ensure_nonempty,
                                        std::uint64_t seed, std::size_t index);
annotate::KeywordPlan plan(const std::vector<std::string>& sentences, std::size_t cap, std::uint64_t seed);

}  // namespace oracle

/// A small planner fixture: byte-level tokenizer, a handful of words and a
/// triple store linking them.
struct PlannerFixture {
  std::size_t hidden;
  backbone::Tokenizer tokenizer;
  planner::PlanVocab vocab;
  std::vector<kgraph::Triple> rows;
  kgraph::TripleStore store;
  kgraph::GraphParams graph_params;
  planner::PlanHeadParams heads;
  ad::Parameter token_embedding;

  explicit PlannerFixture(std::size_t hidden = 4, std::uint64_t seed = 3);
  planner::Planner make(planner::PlannerFlags flags = {}) const;
  MatrixXd e_l(const planner::Planner& p) const;
  oracle::EntityLookup lookup(const planner::Planner& p) const;
};

}  // namespace conper::testkit
