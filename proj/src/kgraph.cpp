#include "conper/kgraph.hpp"

#include <algorithm>
#include <cassert>
#include <fstream>
#include <sstream>

#include "conper/corpus.hpp"
#include "conper/text.hpp"

namespace conper::kgraph {
namespace {

bool single_word(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c == ' ' || c == '_' || c == '\t') return false;
  return true;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::optional<double> parse_double(std::string_view s) {
  const std::string tmp = text::trim(s);
  if (tmp.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(tmp, &used);
    if (used != tmp.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

bool passes_filters(const Triple& t, const std::unordered_set<std::string>& vocab) {
  return t.confidence > kMinConfidence && single_word(t.head) && single_word(t.tail) && vocab.count(t.head) &&
         vocab.count(t.tail);
}

TripleStore::TripleStore(const std::vector<Triple>& rows, const std::unordered_set<std::string>& vocab,
                         std::optional<std::size_t> per_anchor_cap)
    : vocab_(vocab) {
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  std::unordered_map<std::string, std::size_t> per_anchor;
  for (const Triple& t : rows) {
    ++report_.rows;
    if (!(t.confidence > kMinConfidence)) {
      ++report_.low_confidence;
      continue;
    }
    if (!single_word(t.head) || !single_word(t.tail)) {
      ++report_.multi_word;
      continue;
    }
    if (!vocab.count(t.head) || !vocab.count(t.tail)) {
      ++report_.out_of_vocab;
      continue;
    }
    if (!seen.insert({t.head, t.relation, t.tail}).second) {
      ++report_.duplicates;
      continue;
    }
    if (per_anchor_cap && (per_anchor[t.head] >= *per_anchor_cap || per_anchor[t.tail] >= *per_anchor_cap))
      continue;
    ++per_anchor[t.head];
    if (t.tail != t.head) ++per_anchor[t.tail];
    const std::size_t id = triples_.size();
    triples_.push_back(t);
    index_[t.head].push_back(id);
    if (t.tail != t.head) index_[t.tail].push_back(id);
    if (std::find(relations_.begin(), relations_.end(), t.relation) == relations_.end())
      relations_.push_back(t.relation);
  }
  report_.kept = triples_.size();
  for ([[maybe_unused]] const Triple& t : triples_) assert(passes_filters(t, vocab_));
}

const std::vector<std::size_t>& TripleStore::incident(std::string_view entity) const {
  static const std::vector<std::size_t> none;
  const auto it = index_.find(std::string(entity));
  return it == index_.end() ? none : it->second;
}

TripleStore parse_triples(std::string_view text_in, const std::unordered_set<std::string>& vocab,
                          std::optional<std::size_t> per_anchor_cap) {
  std::vector<Triple> rows;
  std::size_t unreadable = 0;
  std::size_t pos = 0;
  while (pos <= text_in.size()) {
    std::size_t nl = text_in.find('\n', pos);
    if (nl == std::string_view::npos) nl = text_in.size();
    std::string_view line = text_in.substr(pos, nl - pos);
    pos = nl + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (text::trim(line).empty() || line.front() == '#') continue;
    const auto fields = split_tabs(line);
    const auto conf = fields.size() == 4 ? parse_double(fields[3]) : std::nullopt;
    if (!conf || fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      ++unreadable;
      continue;
    }
    rows.push_back(Triple{std::string(fields[0]), std::string(fields[1]), std::string(fields[2]), *conf});
  }
  TripleStore store(rows, vocab, per_anchor_cap);
  store.count_unreadable(unreadable);
  return store;
}

TripleStore load_triples(const std::string& path, const std::unordered_set<std::string>& vocab,
                         std::optional<std::size_t> per_anchor_cap) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open triple file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_triples(ss.str(), vocab, per_anchor_cap);
}

std::optional<std::size_t> LocalGraph::entity_index(std::string_view e) const {
  const auto it = entity_index_.find(std::string(e));
  if (it == entity_index_.end()) return std::nullopt;
  return it->second;
}

std::size_t LocalGraph::num_triples() const {
  std::size_t n = 0;
  for (const auto& [_, sg] : subgraphs_) n += sg.triples.size();
  return n;
}

bool LocalGraph::grow(std::string_view anchor, const TripleStore& store, std::size_t step) {
  GrowthEvent ev{step, std::string(anchor), false};
  if (!subgraphs_.count(ev.anchor)) {
    const auto& ids = store.incident(anchor);
    if (!ids.empty()) {
      SubGraph sg{ev.anchor, {}};
      for (std::size_t id : ids) sg.triples.push_back(store.triples()[id]);
      for (const Triple& t : sg.triples) {
        assert(passes_filters(t, store.vocab()));
        for (const std::string* e : {&t.head, &t.tail})
          if (entity_index_.emplace(*e, entities_.size()).second) entities_.push_back(*e);
      }
      subgraphs_.emplace(ev.anchor, std::move(sg));
      order_.push_back(ev.anchor);
      ev.added = true;
    }
  }
  log_.push_back(std::move(ev));
  return log_.back().added;
}

LocalGraph init_local_graph(const TripleStore& store, const std::vector<annotate::Keyword>& input_keywords,
                            const std::vector<annotate::Keyword>& target_keywords) {
  LocalGraph g;
  for (const auto* list : {&input_keywords, &target_keywords})
    for (const auto& kw : *list)
      if (!g.has_anchor(kw.surface)) g.grow(kw.surface, store, 0);
  return g;
}

GraphParams::GraphParams(std::vector<std::string> rels, std::size_t hidden, std::size_t attn, std::uint64_t seed)
    : relations(std::move(rels)) {
  const auto H = static_cast<Eigen::Index>(hidden);
  const auto A = static_cast<Eigen::Index>(attn);
  const auto R = static_cast<Eigen::Index>(std::max<std::size_t>(relations.size(), 1));
  Rng rng(seed);
  auto init = [&](ad::Parameter& p, std::string name, Eigen::Index r, Eigen::Index c, double sd) {
    p.name = std::move(name);
    p.value = Matrix::Zero(r, c);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = sd * rng.normal();
  };
  const double sd = 1.0 / std::sqrt(static_cast<double>(H));
  init(w_h, "graph.w_h", A, H, sd);
  init(w_t, "graph.w_t", A, H, sd);
  init(w_r, "graph.w_r", A, H, sd);
  init(w_g, "graph.w_g", H, 2 * H, sd);
  init(rel_emb, "graph.rel_emb", R, H, 1.0);
}

std::size_t GraphParams::relation_index(std::string_view r) const {
  for (std::size_t i = 0; i < relations.size(); ++i)
    if (relations[i] == r) return i;
  throw std::out_of_range("unknown relation: " + std::string(r));
}

int EntityTable::row(std::string_view entity) const {
  const auto it = index_.find(std::string(entity));
  if (it == index_.end()) throw std::out_of_range("entity without embedding: " + std::string(entity));
  return it->second;
}

ad::Var EntityTable::gather(const std::vector<std::string>& entities) const {
  std::vector<int> ids;
  ids.reserve(entities.size());
  for (const auto& e : entities) ids.push_back(row(e));
  return ad::gather_rows(rows_, ids);
}

ad::Var subgraph_attention(ad::Tape& tape, const SubGraph& sg, const GraphParams& params,
                           const EntityTable& entities) {
  if (sg.triples.empty()) throw std::logic_error("subgraph_representation: empty subgraph");
  std::vector<int> heads, tails, rels;
  for (const Triple& t : sg.triples) {
    heads.push_back(entities.row(t.head));
    tails.push_back(entities.row(t.tail));
    rels.push_back(static_cast<int>(params.relation_index(t.relation)));
  }
  ad::Var h = ad::gather_rows(entities.rows(), heads);
  ad::Var t = ad::gather_rows(entities.rows(), tails);
  ad::Var r = ad::gather_rows(tape.param(params.rel_emb), rels);
  ad::Var key = ad::tanh(ad::add(ad::matmul_nt(h, tape.param(params.w_h)), ad::matmul_nt(t, tape.param(params.w_t))));
  ad::Var query = ad::matmul_nt(r, tape.param(params.w_r));
  ad::Var ones = tape.constant(Matrix::Ones(params.w_h.value.rows(), 1));
  ad::Var beta = ad::transpose(ad::matmul(ad::mul(query, key), ones));
  return ad::softmax_rows(beta);
}

ad::Var subgraph_representation(ad::Tape& tape, const SubGraph& sg, const GraphParams& params,
                                const EntityTable& entities) {
  ad::Var alpha = subgraph_attention(tape, sg, params, entities);
  std::vector<std::string> heads, tails;
  for (const Triple& t : sg.triples) {
    heads.push_back(t.head);
    tails.push_back(t.tail);
  }
  const ad::Var parts[] = {entities.gather(heads), entities.gather(tails)};
  return ad::matmul(alpha, ad::concat_cols(parts));
}

ad::Var knowledge_context(ad::Tape& tape, ad::Var s_t, ad::Var subgraph_rows, const GraphParams& params) {
  if (!subgraph_rows.valid() || subgraph_rows.rows() == 0) return tape.constant(Matrix::Zero(1, params.w_g.value.cols()));
  ad::Var logits = ad::matmul_nt(ad::matmul(s_t, tape.param(params.w_g)), subgraph_rows);
  return ad::matmul(ad::softmax_rows(logits), subgraph_rows);
}

std::vector<Triple> make_synthetic_triples(std::uint64_t seed) {
  Rng rng(seed);
  auto conf = [&] { return 1.2 + 2.8 * rng.uniform(); };
  std::vector<Triple> rows;
  const auto& traits = corpus::trait_lexicon();
  for (std::size_t i = 0; i < traits.size(); ++i) {
    const auto& tr = traits[i];
    for (const auto& kw : tr.keywords) {
      rows.push_back({tr.adjective, "RelatedTo", kw, conf()});
      rows.push_back({tr.occupation, tr.positive ? "CapableOf" : "NotCapableOf", kw, conf()});
    }
    for (std::size_t k = 0; k + 1 < tr.keywords.size(); ++k)
      rows.push_back({tr.keywords[k], "HasSubevent", tr.keywords[k + 1], conf()});
    if (tr.positive) rows.push_back({tr.adjective, "Antonym", traits[i + 1].adjective, conf()});
    rows.push_back({tr.adjective, "RelatedTo", tr.occupation, 0.4 + 0.6 * rng.uniform()});
  }
  const std::string& name = corpus::protagonist_names().front();
  for (const auto& filler : corpus::filler_sentences()) {
    const auto kws = annotate::extract_text_keywords(corpus::fill_name(filler, name));
    for (std::size_t k = 0; k + 1 < kws.size(); ++k)
      rows.push_back({kws[k].surface, "RelatedTo", kws[k + 1].surface, conf()});
  }
  rows.push_back({"air lock", "IsA", "door", 2.0});
  rows.push_back({"pilot", "RelatedTo", "flight deck", 2.5});
  rows.push_back({"plane", "RelatedTo", "zeppelin", 2.2});
  rows.push_back({"storm", "Causes", "thunderclap", 1.9});
  rows.push_back({"ship", "AtLocation", "harbor", 1.0});
  // Shuffle so file order carries no structure.
  for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[rng.below(i)]);
  return rows;
}

std::string format_triples(const std::vector<Triple>& rows) {
  std::ostringstream out;
  for (const Triple& t : rows) out << t.head << '\t' << t.relation << '\t' << t.tail << '\t' << t.confidence << '\n';
  return out.str();
}

}  // namespace conper::kgraph
