#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "conper/text.hpp"

namespace conper::testkit {

MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double sd) {
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
  return m;
}

void randomize(ad::Parameter& p, Rng& rng, double sd) { p.value = random_matrix(p.value.rows(), p.value.cols(), rng, sd); }

GradCheck check_gradients(const std::vector<ad::Parameter*>& params, const std::function<ad::Var(ad::Tape&)>& loss,
                          std::size_t max_entries, double eps, std::uint64_t seed) {
  ad::Tape tape;
  ad::Var l = loss(tape);
  tape.backward(l);
  const ad::Gradients grads = tape.gradients();
  auto eval = [&] {
    ad::Tape t;
    return loss(t).scalar();
  };
  Rng rng(seed);
  GradCheck out;
  for (ad::Parameter* p : params) {
    const auto it = grads.find(p);
    const MatrixXd analytic = it == grads.end() ? MatrixXd::Zero(p->value.rows(), p->value.cols()) : it->second;
    std::vector<Eigen::Index> entries(static_cast<std::size_t>(p->value.size()));
    std::iota(entries.begin(), entries.end(), 0);
    if (entries.size() > max_entries) {
      std::stable_sort(entries.begin(), entries.end(), [&](Eigen::Index a, Eigen::Index b) {
        return std::abs(analytic.data()[a]) > std::abs(analytic.data()[b]);
      });
      std::vector<Eigen::Index> pick(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(max_entries / 2));
      while (pick.size() < max_entries) pick.push_back(entries[max_entries / 2 + rng.below(entries.size() - max_entries / 2)]);
      entries = pick;
    }
    for (Eigen::Index i : entries) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + eps;
      const double up = eval();
      x = saved - eps;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic.data()[i];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      // gradients this small are below finite-difference resolution
      const double rel = scale < 1e-7 ? 0.0 : std::abs(a - numeric) / scale;
      ++out.checked;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = p->name + "[" + std::to_string(i) + "] analytic " + std::to_string(a) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  return out;
}

namespace oracle {

RowVectorXd softmax(const RowVectorXd& z) {
  const double m = z.maxCoeff();
  RowVectorXd e(z.size());
  double sum = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) sum += e[i] = std::exp(z[i] - m);
  for (Eigen::Index i = 0; i < z.size(); ++i) e[i] /= sum;
  return e;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double log_sum_exp(const RowVectorXd& z) {
  const double m = z.maxCoeff();
  double s = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) s += std::exp(z[i] - m);
  return m + std::log(s);
}

Attention subgraph(const std::vector<kgraph::Triple>& triples, const EntityLookup& entity,
                   const kgraph::GraphParams& params) {
  const MatrixXd& wh = params.w_h.value;
  const MatrixXd& wt = params.w_t.value;
  const MatrixXd& wr = params.w_r.value;
  const Eigen::Index A = wh.rows(), H = wh.cols();
  RowVectorXd beta(static_cast<Eigen::Index>(triples.size()));
  std::vector<RowVectorXd> ht;
  for (std::size_t n = 0; n < triples.size(); ++n) {
    const RowVectorXd h = entity(triples[n].head);
    const RowVectorXd t = entity(triples[n].tail);
    std::size_t ri = 0;
    while (params.relations[ri] != triples[n].relation) ++ri;
    const RowVectorXd r = params.rel_emb.value.row(static_cast<Eigen::Index>(ri));
    double b = 0;
    for (Eigen::Index a = 0; a < A; ++a) {
      double key = 0, query = 0;
      for (Eigen::Index j = 0; j < H; ++j) {
        key += wh(a, j) * h[j] + wt(a, j) * t[j];
        query += wr(a, j) * r[j];
      }
      b += query * std::tanh(key);
    }
    beta[static_cast<Eigen::Index>(n)] = b;
    RowVectorXd cat(2 * H);
    cat << h, t;
    ht.push_back(cat);
  }
  Attention out;
  const RowVectorXd alpha = softmax(beta);
  out.g = RowVectorXd::Zero(2 * H);
  for (std::size_t n = 0; n < triples.size(); ++n) {
    out.alpha.push_back(alpha[static_cast<Eigen::Index>(n)]);
    out.g += alpha[static_cast<Eigen::Index>(n)] * ht[n];
  }
  return out;
}

RowVectorXd knowledge_context(const RowVectorXd& s, const std::vector<RowVectorXd>& g_rows, const MatrixXd& w_g) {
  if (g_rows.empty()) return RowVectorXd::Zero(w_g.cols());
  RowVectorXd logits(static_cast<Eigen::Index>(g_rows.size()));
  for (std::size_t i = 0; i < g_rows.size(); ++i) {
    double v = 0;
    for (Eigen::Index a = 0; a < w_g.rows(); ++a)
      for (Eigen::Index b = 0; b < w_g.cols(); ++b) v += s[a] * w_g(a, b) * g_rows[i][b];
    logits[static_cast<Eigen::Index>(i)] = v;
  }
  const RowVectorXd w = softmax(logits);
  RowVectorXd c = RowVectorXd::Zero(w_g.cols());
  for (std::size_t i = 0; i < g_rows.size(); ++i) c += w[static_cast<Eigen::Index>(i)] * g_rows[i];
  return c;
}

MatrixXd composed_embeddings(const MatrixXd& token_embedding, const std::vector<std::vector<int>>& groups) {
  MatrixXd e = MatrixXd::Zero(static_cast<Eigen::Index>(groups.size()), token_embedding.cols());
  for (std::size_t w = 0; w < groups.size(); ++w)
    for (int id : groups[w]) e.row(static_cast<Eigen::Index>(w)) += token_embedding.row(id);
  return e;
}

namespace {

double dot(const RowVectorXd& a, const RowVectorXd& b) {
  double s = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

Heads heads(const RowVectorXd& s, const RowVectorXd& c, const std::optional<RowVectorXd>& s_tar, const MatrixXd& e_l,
            const std::vector<int>& entity_ids, const planner::PlanHeadParams& p) {
  RowVectorXd x(s.size() + c.size());
  x << s, c;
  Heads out;
  out.gate_logit = dot(x, p.w_p.value.col(0).transpose()) + p.b_p.value(0, 0);
  const Eigen::Index V = p.w_l.value.rows();
  out.logits_l.resize(V);
  for (Eigen::Index v = 0; v < V; ++v) out.logits_l[v] = dot(x, p.w_l.value.row(v)) + p.b_l.value(v, 0);
  out.logits_k.resize(static_cast<Eigen::Index>(entity_ids.size()));
  for (std::size_t i = 0; i < entity_ids.size(); ++i)
    out.logits_k[static_cast<Eigen::Index>(i)] = dot(x, p.w_k.value.row(entity_ids[i])) + p.b_k.value(entity_ids[i], 0);
  if (s_tar) {
    RowVectorXd u(s_tar->size() + c.size());
    u << *s_tar, c;
    RowVectorXd q = RowVectorXd::Zero(p.w_d.value.cols());
    for (Eigen::Index j = 0; j < q.size(); ++j)
      for (Eigen::Index i = 0; i < u.size(); ++i) q[j] += u[i] * p.w_d.value(i, j);
    const double bd = p.b_d.value(0, 0);
    RowVectorXd dl(V), dk(static_cast<Eigen::Index>(entity_ids.size()));
    for (Eigen::Index v = 0; v < V; ++v) dl[v] = dot(q, e_l.row(v)) + bd;
    for (std::size_t i = 0; i < entity_ids.size(); ++i)
      dk[static_cast<Eigen::Index>(i)] = dot(q, e_l.row(entity_ids[i])) + bd;
    out.logits_l += dl;
    out.logits_k += dk;
    out.d_l = dl;
    out.d_k = dk;
  }
  return out;
}

void Graph::grow(const std::string& anchor, const std::vector<kgraph::Triple>& store) {
  if (std::find(anchors.begin(), anchors.end(), anchor) != anchors.end()) return;
  std::vector<kgraph::Triple> sg;
  for (const auto& t : store)
    if (t.head == anchor || t.tail == anchor) sg.push_back(t);
  if (sg.empty()) return;
  anchors.push_back(anchor);
  for (const auto& t : sg)
    for (const std::string* e : {&t.head, &t.tail})
      if (!has_entity(*e)) entities.push_back(*e);
  subgraphs.push_back(std::move(sg));
}

bool Graph::has_entity(const std::string& e) const {
  return std::find(entities.begin(), entities.end(), e) != entities.end();
}

PlanLossValues plan_losses(const MatrixXd& kw_states, Graph graph, const std::vector<kgraph::Triple>& store,
                           const std::vector<std::string>& gold, const std::optional<RowVectorXd>& s_tar,
                           const planner::Planner& planner, bool no_kg) {
  const MatrixXd e_l = composed_embeddings(planner.token_embedding().value, planner.subword_groups());
  const auto& vocab = planner.vocab();
  auto entity = [&](const std::string& w) -> RowVectorXd { return e_l.row(*vocab.id(w)); };
  PlanLossValues out;
  const std::size_t n = gold.size() + 1;
  for (std::size_t t = 0; t < n; ++t) {
    const std::string word = t < gold.size() ? gold[t] : std::string(planner::kEndOfPlan);
    const RowVectorXd s = kw_states.row(static_cast<Eigen::Index>(t));
    std::vector<RowVectorXd> g_rows;
    if (!no_kg)
      for (const auto& sg : graph.subgraphs) g_rows.push_back(subgraph(sg, entity, planner.graph_params()).g);
    const RowVectorXd c = knowledge_context(s, g_rows, planner.graph_params().w_g.value);
    std::vector<int> ids;
    if (!no_kg)
      for (const auto& e : graph.entities) ids.push_back(*vocab.id(e));
    const Heads h = heads(s, c, s_tar, e_l, ids, planner.heads());
    const int label = !no_kg && graph.has_entity(word) ? 1 : 0;
    out.labels.push_back(label);
    const double p = sigmoid(h.gate_logit);
    out.l_c += -(label * std::log(p) + (1 - label) * std::log(1 - p));
    if (label == 1) {
      const auto pos = std::find(graph.entities.begin(), graph.entities.end(), word) - graph.entities.begin();
      out.l_kw += log_sum_exp(h.logits_k) - h.logits_k[pos];
    } else {
      out.l_kw += log_sum_exp(h.logits_l) - h.logits_l[*vocab.id(word)];
    }
    if (t < gold.size() && !no_kg) graph.grow(word, store);
  }
  out.l_kw /= static_cast<double>(n);
  out.l_c /= static_cast<double>(n);
  return out;
}

namespace {

RowVectorXd layer_norm(const RowVectorXd& x, const ad::Parameter& gain, const ad::Parameter& bias) {
  double mu = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) mu += x[i];
  mu /= static_cast<double>(x.size());
  double var = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) var += (x[i] - mu) * (x[i] - mu);
  var /= static_cast<double>(x.size());
  RowVectorXd y(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) y[i] = (x[i] - mu) / std::sqrt(var + 1e-5) * gain.value(0, i) + bias.value(0, i);
  return y;
}

double gelu(double x) { return 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x))); }

RowVectorXd affine(const RowVectorXd& x, const ad::Parameter& w, const ad::Parameter& b) {
  RowVectorXd y(w.value.cols());
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    double v = b.value(0, j);
    for (Eigen::Index i = 0; i < x.size(); ++i) v += x[i] * w.value(i, j);
    y[j] = v;
  }
  return y;
}

}  // namespace

MatrixXd backbone_forward(const backbone::Backbone& model, const std::vector<int>& tokens) {
  const auto ps = model.parameters();
  const auto& cfg = model.config();
  const auto H = static_cast<Eigen::Index>(cfg.hidden);
  const auto nh = static_cast<Eigen::Index>(cfg.heads);
  const Eigen::Index dh = H / nh;
  const auto n = static_cast<Eigen::Index>(tokens.size());
  MatrixXd x(n, H);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = ps[0]->value.row(tokens[static_cast<std::size_t>(i)]) + ps[1]->value.row(i);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const ad::Parameter* const* p = &ps[2 + 16 * l];
    const auto& [ln1g, ln1b, wq, bq, wk, bk, wv, bv, wo, bo, ln2g, ln2b, w1, b1, w2, b2] =
        std::tie(*p[0], *p[1], *p[2], *p[3], *p[4], *p[5], *p[6], *p[7], *p[8], *p[9], *p[10], *p[11], *p[12], *p[13],
                 *p[14], *p[15]);
    MatrixXd q(n, H), k(n, H), v(n, H);
    for (Eigen::Index i = 0; i < n; ++i) {
      const RowVectorXd h = layer_norm(x.row(i), ln1g, ln1b);
      q.row(i) = affine(h, wq, bq);
      k.row(i) = affine(h, wk, bk);
      v.row(i) = affine(h, wv, bv);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      RowVectorXd o(H);
      for (Eigen::Index hd = 0; hd < nh; ++hd) {
        RowVectorXd score(i + 1);
        for (Eigen::Index j = 0; j <= i; ++j) {
          double sc = 0;
          for (Eigen::Index d = 0; d < dh; ++d) sc += q(i, hd * dh + d) * k(j, hd * dh + d);
          score[j] = sc / std::sqrt(static_cast<double>(dh));
        }
        const RowVectorXd a = softmax(score);
        for (Eigen::Index d = 0; d < dh; ++d) {
          double acc = 0;
          for (Eigen::Index j = 0; j <= i; ++j) acc += a[j] * v(j, hd * dh + d);
          o[hd * dh + d] = acc;
        }
      }
      x.row(i) += affine(o, wo, bo);
      RowVectorXd f = affine(layer_norm(x.row(i), ln2g, ln2b), w1, b1);
      for (Eigen::Index j = 0; j < f.size(); ++j) f[j] = gelu(f[j]);
      x.row(i) += affine(f, w2, b2);
    }
  }
  const std::size_t tail = 2 + 16 * cfg.layers;
  MatrixXd out(n, H);
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = layer_norm(x.row(i), *ps[tail], *ps[tail + 1]);
  return out;
}

double token_nll(const backbone::Backbone& model, const MatrixXd& hidden, const std::vector<int>& tokens,
                 std::size_t first_row, std::size_t count) {
  const auto ps = model.parameters();
  const ad::Parameter& w = *ps[ps.size() - 2];
  const ad::Parameter& b = *ps[ps.size() - 1];
  double total = 0;
  for (std::size_t r = first_row; r < first_row + count; ++r) {
    const RowVectorXd z = affine(hidden.row(static_cast<Eigen::Index>(r)), w, b);
    total += log_sum_exp(z) - z[tokens[r + 1]];
  }
  return total / static_cast<double>(count);
}

double similarity(const std::string& candidate, const std::string& reference,
                  const annotate::HashedWordEmbedder& embedder) {
  const auto cand = text::lower_words(candidate);
  const auto ref = text::lower_words(reference);
  double total = 0;
  for (const auto& r : ref) {
    const Eigen::VectorXd rv = embedder.word_vector(r);
    double best = -2;
    for (const auto& c : cand) {
      const Eigen::VectorXd cv = embedder.word_vector(c);
      double d = 0, nr = 0, nc = 0;
      for (Eigen::Index i = 0; i < rv.size(); ++i) {
        d += rv[i] * cv[i];
        nr += rv[i] * rv[i];
        nc += cv[i] * cv[i];
      }
      best = std::max(best, d / std::sqrt(nr * nc));
    }
    total += best;
  }
  return total / static_cast<double>(ref.size());
}

std::size_t select_best(const std::vector<std::string>& sentences, const std::string& persona,
                        const annotate::HashedWordEmbedder& embedder) {
  std::size_t best = 0;
  double best_score = -1e300;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const double s = similarity(sentences[i], persona, embedder);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

std::vector<annotate::Keyword> keywords(const std::string& sentence, std::size_t cap, bool ensure_nonempty,
                                        std::uint64_t seed, std::size_t index) {
  const auto& lex = annotate::Lexicon::builtin();
  std::vector<std::string> words;
  for (const auto& tok : text::word_tokens(sentence))
    if (text::is_word(tok)) words.push_back(tok);
  std::vector<annotate::Keyword> out;
  for (std::size_t i = 0; i < words.size() && out.size() < cap; ++i) {
    const std::string lower = text::to_lower(words[i]);
    const auto v = lex.valence(lower);
    if (v && std::abs(*v) / 4.0 > annotate::kEmotionThreshold) {
      out.push_back({lower, annotate::KeywordSource::emotion, index});
      continue;
    }
    if (lex.is_stopword(lower)) continue;
    const auto entry = lex.analyze(words[i], i == 0);
    if ((entry.pos == annotate::Pos::noun || entry.pos == annotate::Pos::verb) && !lex.is_stopword(entry.lemma))
      out.push_back({entry.lemma, annotate::KeywordSource::event, index});
  }
  if (out.empty() && ensure_nonempty && !words.empty()) {
    Rng rng(seed);
    out.push_back({text::to_lower(words[rng.below(words.size())]), annotate::KeywordSource::event, index});
  }
  return out;
}

annotate::KeywordPlan plan(const std::vector<std::string>& sentences, std::size_t cap, std::uint64_t seed) {
  annotate::KeywordPlan p;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto k = keywords(sentences[i], cap, true, derive_seed(seed, i), i);
    p.per_sentence_counts.push_back(k.size());
    p.keywords.insert(p.keywords.end(), k.begin(), k.end());
  }
  return p;
}

}  // namespace oracle

namespace {

std::vector<kgraph::Triple> fixture_rows() {
  return {
      {"pilot", "CapableOf", "fly", 2.0},     {"pilot", "AtLocation", "plane", 1.5},
      {"plane", "UsedFor", "fly", 3.0},       {"plane", "AtLocation", "hangar", 1.2},
      {"crash", "RelatedTo", "plane", 2.2},   {"thief", "CapableOf", "pick", 2.5},
      {"pick", "HasSubevent", "lock", 1.8},   {"lock", "RelatedTo", "door", 1.4},
      {"sneaky", "RelatedTo", "thief", 1.9},  {"door", "RelatedTo", "hangar", 1.1},
  };
}

}  // namespace

PlannerFixture::PlannerFixture(std::size_t h, std::uint64_t seed)
    : hidden(h),
      vocab({"crash", "door", "fly", "hangar", "lock", "pick", "pilot", "plane", "sneaky", "thief", "wind", "river"}),
      rows(fixture_rows()),
      store(rows, vocab.word_set()) {
  std::vector<std::string> rels;
  for (const auto& r : store.relations()) rels.push_back(r);
  graph_params = kgraph::GraphParams(rels, hidden, 3, derive_seed(seed, 1));
  heads = planner::PlanHeadParams(vocab.size(), hidden, derive_seed(seed, 2));
  Rng rng(derive_seed(seed, 3));
  // nonzero everywhere so no path is trivially inactive
  for (ad::Parameter* p : heads.parameters()) randomize(*p, rng, 0.5);
  randomize(graph_params.rel_emb, rng, 0.7);
  token_embedding = {"tok_emb", random_matrix(static_cast<Eigen::Index>(tokenizer.vocab_size()),
                                              static_cast<Eigen::Index>(hidden), rng, 0.3)};
}

planner::Planner PlannerFixture::make(planner::PlannerFlags flags) const {
  return planner::Planner(vocab, graph_params, heads, token_embedding, tokenizer, flags);
}

MatrixXd PlannerFixture::e_l(const planner::Planner& p) const {
  return oracle::composed_embeddings(token_embedding.value, p.subword_groups());
}

oracle::EntityLookup PlannerFixture::lookup(const planner::Planner& p) const {
  const MatrixXd e = e_l(p);
  return [e, &v = vocab](const std::string& w) -> RowVectorXd { return e.row(v.require(w)); };
}

}  // namespace conper::testkit
