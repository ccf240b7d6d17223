#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "conper/annotate.hpp"
#include "conper/autograd.hpp"
#include "conper/rng.hpp"

namespace conper::kgraph {

using ad::Matrix;

struct Triple {
  std::string head;
  std::string relation;
  std::string tail;
  double confidence = 0;

  bool operator==(const Triple&) const = default;
};

inline constexpr double kMinConfidence = 1.0;

/// True when the triple passes the single-word, in-vocabulary and
/// confidence > 1.0 filters.
bool passes_filters(const Triple& t, const std::unordered_set<std::string>& vocab);

struct LoadReport {
  std::size_t rows = 0;
  std::size_t kept = 0;
  std::size_t unreadable = 0;
  std::size_t low_confidence = 0;
  std::size_t multi_word = 0;
  std::size_t out_of_vocab = 0;
  std::size_t duplicates = 0;
};

/// Immutable after construction; entity lookups return incident triples.
class TripleStore {
 public:
  TripleStore() = default;
  /// Applies the filters; rejected rows are counted in report().
  TripleStore(const std::vector<Triple>& rows, const std::unordered_set<std::string>& vocab,
              std::optional<std::size_t> per_anchor_cap = std::nullopt);

  std::size_t size() const { return triples_.size(); }
  const std::vector<Triple>& triples() const { return triples_; }
  /// Indices into triples() with `entity` as head or tail, in file order.
  const std::vector<std::size_t>& incident(std::string_view entity) const;
  const std::vector<std::string>& relations() const { return relations_; }
  const LoadReport& report() const { return report_; }
  const std::unordered_set<std::string>& vocab() const { return vocab_; }
  void count_unreadable(std::size_t n) {
    report_.unreadable += n;
    report_.rows += n;
  }

 private:
  std::vector<Triple> triples_;
  std::unordered_map<std::string, std::vector<std::size_t>> index_;
  std::vector<std::string> relations_;
  std::unordered_set<std::string> vocab_;
  LoadReport report_;
};

/// Tab-separated head, relation, tail, confidence. Blank lines and lines
/// starting with '#' are ignored; other unparsable rows count as unreadable.
TripleStore load_triples(const std::string& path, const std::unordered_set<std::string>& vocab,
                         std::optional<std::size_t> per_anchor_cap = std::nullopt);
TripleStore parse_triples(std::string_view text, const std::unordered_set<std::string>& vocab,
                          std::optional<std::size_t> per_anchor_cap = std::nullopt);

struct SubGraph {
  std::string anchor;
  std::vector<Triple> triples;
};

struct GrowthEvent {
  std::size_t step = 0;
  std::string anchor;
  bool added = false;
};

/// Per-example knowledge graph that only ever grows.
class LocalGraph {
 public:
  bool empty() const { return order_.empty(); }
  std::size_t num_subgraphs() const { return order_.size(); }
  const SubGraph& subgraph(std::size_t i) const { return subgraphs_.at(order_.at(i)); }
  const std::vector<std::string>& anchors() const { return order_; }
  bool has_anchor(std::string_view anchor) const { return subgraphs_.count(std::string(anchor)) > 0; }
  /// Distinct entity surfaces in first-seen order.
  const std::vector<std::string>& entities() const { return entities_; }
  bool has_entity(std::string_view e) const { return entity_index_.count(std::string(e)) > 0; }
  std::optional<std::size_t> entity_index(std::string_view e) const;
  const std::vector<GrowthEvent>& growth_log() const { return log_; }
  std::size_t num_triples() const;

  /// Adds the anchor's subgraph if it is new and has triples. Logs either way.
  bool grow(std::string_view anchor, const TripleStore& store, std::size_t step);

 private:
  std::map<std::string, SubGraph> subgraphs_;
  std::vector<std::string> order_;
  std::vector<std::string> entities_;
  std::unordered_map<std::string, std::size_t> entity_index_;
  std::vector<GrowthEvent> log_;
};

LocalGraph init_local_graph(const TripleStore& store, const std::vector<annotate::Keyword>& input_keywords,
                            const std::vector<annotate::Keyword>& target_keywords);

/// Attention projections (A x H), relation embeddings (R x H) and the
/// context attention map W_g (H x 2H).
struct GraphParams {
  std::vector<std::string> relations;
  ad::Parameter w_h, w_t, w_r, w_g, rel_emb;

  GraphParams() = default;
  GraphParams(std::vector<std::string> relations, std::size_t hidden, std::size_t attn, std::uint64_t seed);

  std::size_t relation_index(std::string_view r) const;
  std::vector<ad::Parameter*> parameters() { return {&w_h, &w_t, &w_r, &w_g, &rel_emb}; }
};

/// Entity embeddings bound to a tape, keyed by surface form.
class EntityTable {
 public:
  EntityTable(ad::Var rows, std::unordered_map<std::string, int> index) : rows_(rows), index_(std::move(index)) {}
  ad::Var rows() const { return rows_; }
  int row(std::string_view entity) const;
  ad::Var gather(const std::vector<std::string>& entities) const;

 private:
  ad::Var rows_;
  std::unordered_map<std::string, int> index_;
};

/// g = sum_n alpha_n [h_n; t_n], alpha = softmax_n((W_r r_n) . tanh(W_h h_n + W_t t_n)). 1 x 2H.
ad::Var subgraph_representation(ad::Tape& tape, const SubGraph& sg, const GraphParams& params,
                                const EntityTable& entities);
/// Attention weights over the subgraph's triples (1 x N).
ad::Var subgraph_attention(ad::Tape& tape, const SubGraph& sg, const GraphParams& params,
                           const EntityTable& entities);

/// c_t = sum_n softmax_n(s_t W_g g_n) g_n over the stacked subgraph rows G
/// (M x 2H). An empty G gives a zero 1 x 2H vector.
ad::Var knowledge_context(ad::Tape& tape, ad::Var s_t, ad::Var subgraph_rows, const GraphParams& params);

/// Synthetic commonsense slice for the planted-signal corpus: links trait
/// adjectives and occupations to their event lemmas, chains the lemmas,
/// and mixes in rows that the filters must drop.
std::vector<Triple> make_synthetic_triples(std::uint64_t seed);
std::string format_triples(const std::vector<Triple>& rows);

}  // namespace conper::kgraph
