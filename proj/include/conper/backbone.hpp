#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "conper/annotate.hpp"
#include "conper/autograd.hpp"
#include "conper/rng.hpp"
#include "conper/tokenizer.hpp"

namespace conper::backbone {

using ad::Matrix;
using Vector = Eigen::RowVectorXd;

class LengthError : public std::length_error {
 public:
  using std::length_error::length_error;
};

struct BackboneConfig {
  std::size_t vocab_size = 64;
  std::size_t hidden = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ff = 128;
  std::size_t context_window = 256;
  std::uint64_t seed = 1;
};

struct LayerParams {
  ad::Parameter ln1_gain, ln1_bias;
  ad::Parameter wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Parameter ln2_gain, ln2_bias;
  ad::Parameter w1, b1, w2, b2;
};

/// Pre-norm causal transformer language model.
class Backbone {
 public:
  explicit Backbone(const BackboneConfig& config);

  const BackboneConfig& config() const { return config_; }

  /// Final-layer hidden states s_t for every position (rows), recorded on `tape`.
  ad::Var forward(ad::Tape& tape, std::span<const int> tokens) const;
  /// softmax(s W + b) logits for each row of `hidden`.
  ad::Var logits(ad::Tape& tape, ad::Var hidden) const;

  /// Inference-only hidden states (no tape).
  Matrix hidden_states(std::span<const int> tokens) const;
  Vector vocab_logits(const Vector& hidden) const;

  const ad::Parameter& token_embedding() const { return tok_emb_; }
  ad::Parameter& token_embedding() { return tok_emb_; }

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;

 private:
  friend class IncrementalDecoder;
  BackboneConfig config_;
  ad::Parameter tok_emb_, pos_emb_;
  std::vector<LayerParams> layers_;
  ad::Parameter lnf_gain_, lnf_bias_;
  ad::Parameter w_out_, b_out_;
};

/// Key/value-cached single-token stepping; matches Backbone::forward row for row.
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const Backbone& model);

  /// Feeds one token and returns its final hidden state.
  Vector step(int token);
  /// Feeds several tokens; returns the hidden state of the last one.
  Vector feed(std::span<const int> tokens);
  std::size_t position() const { return position_; }

 private:
  const Backbone& model_;
  std::vector<Matrix> keys_, values_;
  std::size_t position_ = 0;
};

Vector softmax(const Vector& logits);

/// Nucleus sampling: draws from the renormalized smallest probability-sorted
/// prefix whose mass reaches p. Ties in probability keep the lower index first.
int sample_top_p(std::span<const double> dist, double p, Rng& rng);
/// Indices of the nucleus, most probable first.
std::vector<int> nucleus(std::span<const double> dist, double p);

/// BERTScore-style token embedder backed by the model's input embeddings.
class ModelEmbedder final : public annotate::TokenEmbedder {
 public:
  ModelEmbedder(const Tokenizer& tokenizer, const Backbone& model) : tokenizer_(tokenizer), model_(model) {}
  Eigen::MatrixXd embed(std::string_view text) const override;

 private:
  const Tokenizer& tokenizer_;
  const Backbone& model_;
};

void init_normal(ad::Parameter& p, Rng& rng, double stddev);

}  // namespace conper::backbone
