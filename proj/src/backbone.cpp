#include "conper/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "conper/text.hpp"

namespace conper::backbone {
namespace {

ad::Parameter make(std::string name, Eigen::Index rows, Eigen::Index cols) {
  return ad::Parameter{std::move(name), Matrix::Zero(rows, cols)};
}

Vector layer_norm(const Vector& x, const ad::Parameter& gain, const ad::Parameter& bias) {
  const double mu = x.mean();
  const double var = (x.array() - mu).square().mean();
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  Vector y = ((x.array() - mu) * inv).matrix();
  return (y.array() * gain.value.row(0).array()).matrix() + bias.value.row(0);
}

}  // namespace

void init_normal(ad::Parameter& p, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = stddev * rng.normal();
}

Backbone::Backbone(const BackboneConfig& config) : config_(config) {
  if (config.hidden % config.heads != 0) throw std::invalid_argument("hidden size must be divisible by heads");
  const auto V = static_cast<Eigen::Index>(config.vocab_size);
  const auto H = static_cast<Eigen::Index>(config.hidden);
  const auto F = static_cast<Eigen::Index>(config.ff);
  const auto W = static_cast<Eigen::Index>(config.context_window);
  Rng rng(config.seed);

  tok_emb_ = make("tok_emb", V, H);
  pos_emb_ = make("pos_emb", W, H);
  init_normal(tok_emb_, rng, 0.1);
  init_normal(pos_emb_, rng, 0.1);
  const double wstd = 1.0 / std::sqrt(static_cast<double>(H));
  const double resid = wstd / std::sqrt(2.0 * static_cast<double>(config.layers));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    LayerParams p{make(pre + "ln1_gain", 1, H), make(pre + "ln1_bias", 1, H), make(pre + "wq", H, H),
                  make(pre + "bq", 1, H),       make(pre + "wk", H, H),       make(pre + "bk", 1, H),
                  make(pre + "wv", H, H),       make(pre + "bv", 1, H),       make(pre + "wo", H, H),
                  make(pre + "bo", 1, H),       make(pre + "ln2_gain", 1, H), make(pre + "ln2_bias", 1, H),
                  make(pre + "w1", H, F),       make(pre + "b1", 1, F),       make(pre + "w2", F, H),
                  make(pre + "b2", 1, H)};
    p.ln1_gain.value.setOnes();
    p.ln2_gain.value.setOnes();
    init_normal(p.wq, rng, wstd);
    init_normal(p.wk, rng, wstd);
    init_normal(p.wv, rng, wstd);
    init_normal(p.wo, rng, resid);
    init_normal(p.w1, rng, wstd);
    init_normal(p.w2, rng, resid / 2.0);
    layers_.push_back(std::move(p));
  }
  lnf_gain_ = make("lnf_gain", 1, H);
  lnf_gain_.value.setOnes();
  lnf_bias_ = make("lnf_bias", 1, H);
  w_out_ = make("w_out", H, V);
  b_out_ = make("b_out", 1, V);
  init_normal(w_out_, rng, wstd);
}

std::vector<ad::Parameter*> Backbone::parameters() {
  std::vector<ad::Parameter*> out{&tok_emb_, &pos_emb_};
  for (auto& l : layers_)
    for (ad::Parameter* p : {&l.ln1_gain, &l.ln1_bias, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo,
                             &l.ln2_gain, &l.ln2_bias, &l.w1, &l.b1, &l.w2, &l.b2})
      out.push_back(p);
  for (ad::Parameter* p : {&lnf_gain_, &lnf_bias_, &w_out_, &b_out_}) out.push_back(p);
  return out;
}

std::vector<const ad::Parameter*> Backbone::parameters() const {
  auto ps = const_cast<Backbone*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

ad::Var Backbone::forward(ad::Tape& tape, std::span<const int> tokens) const {
  const auto n = static_cast<Eigen::Index>(tokens.size());
  if (tokens.empty()) throw std::invalid_argument("forward: empty input");
  if (tokens.size() > config_.context_window)
    throw LengthError("sequence of " + std::to_string(tokens.size()) + " tokens exceeds context window " +
                      std::to_string(config_.context_window));
  const auto H = static_cast<Eigen::Index>(config_.hidden);
  const auto heads = static_cast<Eigen::Index>(config_.heads);
  const Eigen::Index dh = H / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  ad::Var x = ad::add(ad::gather_rows(tape.param(tok_emb_), tokens), ad::slice_rows(tape.param(pos_emb_), 0, n));
  for (const auto& l : layers_) {
    ad::Var h = ad::layer_norm_rows(x, tape.param(l.ln1_gain), tape.param(l.ln1_bias));
    ad::Var q = ad::add_rowwise(ad::matmul(h, tape.param(l.wq)), tape.param(l.bq));
    ad::Var k = ad::add_rowwise(ad::matmul(h, tape.param(l.wk)), tape.param(l.bk));
    ad::Var v = ad::add_rowwise(ad::matmul(h, tape.param(l.wv)), tape.param(l.bv));
    std::vector<ad::Var> outs;
    for (Eigen::Index hd = 0; hd < heads; ++hd) {
      ad::Var qh = heads == 1 ? q : ad::slice_cols(q, hd * dh, dh);
      ad::Var kh = heads == 1 ? k : ad::slice_cols(k, hd * dh, dh);
      ad::Var vh = heads == 1 ? v : ad::slice_cols(v, hd * dh, dh);
      ad::Var att = ad::causal_softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
      outs.push_back(ad::matmul(att, vh));
    }
    ad::Var o = heads == 1 ? outs[0] : ad::concat_cols(outs);
    x = ad::add(x, ad::add_rowwise(ad::matmul(o, tape.param(l.wo)), tape.param(l.bo)));
    ad::Var h2 = ad::layer_norm_rows(x, tape.param(l.ln2_gain), tape.param(l.ln2_bias));
    ad::Var f = ad::gelu(ad::add_rowwise(ad::matmul(h2, tape.param(l.w1)), tape.param(l.b1)));
    x = ad::add(x, ad::add_rowwise(ad::matmul(f, tape.param(l.w2)), tape.param(l.b2)));
  }
  return ad::layer_norm_rows(x, tape.param(lnf_gain_), tape.param(lnf_bias_));
}

ad::Var Backbone::logits(ad::Tape& tape, ad::Var hidden) const {
  return ad::add_rowwise(ad::matmul(hidden, tape.param(w_out_)), tape.param(b_out_));
}

Matrix Backbone::hidden_states(std::span<const int> tokens) const {
  if (tokens.size() > config_.context_window)
    throw LengthError("sequence exceeds context window");
  IncrementalDecoder dec(*this);
  Matrix out(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(config_.hidden));
  for (std::size_t i = 0; i < tokens.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = dec.step(tokens[i]);
  return out;
}

Vector Backbone::vocab_logits(const Vector& hidden) const { return hidden * w_out_.value + b_out_.value.row(0); }

IncrementalDecoder::IncrementalDecoder(const Backbone& model)
    : model_(model), keys_(model.layers_.size()), values_(model.layers_.size()) {
  const auto H = static_cast<Eigen::Index>(model.config_.hidden);
  for (std::size_t l = 0; l < keys_.size(); ++l) {
    keys_[l].resize(0, H);
    values_[l].resize(0, H);
  }
}

Vector IncrementalDecoder::step(int token) {
  const auto& cfg = model_.config_;
  if (position_ >= cfg.context_window) throw LengthError("decoder exceeded context window");
  if (token < 0 || static_cast<std::size_t>(token) >= cfg.vocab_size) throw std::out_of_range("token id");
  const auto H = static_cast<Eigen::Index>(cfg.hidden);
  const auto heads = static_cast<Eigen::Index>(cfg.heads);
  const Eigen::Index dh = H / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto pos = static_cast<Eigen::Index>(position_);

  Vector x = model_.tok_emb_.value.row(token) + model_.pos_emb_.value.row(pos);
  for (std::size_t li = 0; li < model_.layers_.size(); ++li) {
    const auto& l = model_.layers_[li];
    const Vector h = layer_norm(x, l.ln1_gain, l.ln1_bias);
    const Vector q = h * l.wq.value + l.bq.value.row(0);
    const Vector k = h * l.wk.value + l.bk.value.row(0);
    const Vector v = h * l.wv.value + l.bv.value.row(0);
    Matrix& K = keys_[li];
    Matrix& V = values_[li];
    K.conservativeResize(pos + 1, H);
    V.conservativeResize(pos + 1, H);
    K.row(pos) = k;
    V.row(pos) = v;
    Vector o(H);
    for (Eigen::Index hd = 0; hd < heads; ++hd) {
      Eigen::VectorXd scores = K.middleCols(hd * dh, dh) * q.segment(hd * dh, dh).transpose() * inv_sqrt;
      const double m = scores.maxCoeff();
      scores = (scores.array() - m).exp();
      scores /= scores.sum();
      o.segment(hd * dh, dh) = scores.transpose() * V.middleCols(hd * dh, dh);
    }
    x += o * l.wo.value + l.bo.value.row(0);
    const Vector h2 = layer_norm(x, l.ln2_gain, l.ln2_bias);
    Vector f = h2 * l.w1.value + l.b1.value.row(0);
    f = f.unaryExpr([](double z) { return ad::gelu(z); });
    x += f * l.w2.value + l.b2.value.row(0);
  }
  ++position_;
  return layer_norm(x, model_.lnf_gain_, model_.lnf_bias_);
}

Vector IncrementalDecoder::feed(std::span<const int> tokens) {
  Vector last;
  for (int t : tokens) last = step(t);
  return last;
}

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

std::vector<int> nucleus(std::span<const double> dist, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("top-p must lie in (0, 1]");
  if (dist.empty()) throw std::invalid_argument("top-p: empty distribution");
  const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("top-p: distribution does not sum to 1");
  std::vector<int> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dist[a] > dist[b]; });
  double cum = 0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    cum += dist[static_cast<std::size_t>(order[keep])];
    ++keep;
    if (cum >= p - 1e-12) break;
  }
  while (keep > 1 && dist[static_cast<std::size_t>(order[keep - 1])] <= 0.0) --keep;
  order.resize(keep);
  return order;
}

int sample_top_p(std::span<const double> dist, double p, Rng& rng) {
  const auto keep = nucleus(dist, p);
  double mass = 0;
  for (int i : keep) mass += dist[static_cast<std::size_t>(i)];
  const double u = rng.uniform() * mass;
  double cum = 0;
  for (int i : keep) {
    cum += dist[static_cast<std::size_t>(i)];
    if (u < cum) return i;
  }
  return keep.back();
}

Eigen::MatrixXd ModelEmbedder::embed(std::string_view text) const {
  const auto ids = tokenizer_.encode(text);
  std::vector<int> kept;
  for (int id : ids) {
    if (tokenizer_.is_special(id)) continue;
    if (!text::is_word(text::trim(tokenizer_.piece(id)))) continue;
    kept.push_back(id);
  }
  const auto& table = model_.token_embedding().value;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(kept.size()), table.cols());
  for (std::size_t i = 0; i < kept.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = table.row(kept[i]);
  return out;
}

}  // namespace conper::backbone
