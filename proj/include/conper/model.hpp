#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "conper/autograd.hpp"
#include "conper/backbone.hpp"
#include "conper/kgraph.hpp"
#include "conper/planner.hpp"
#include "conper/tokenizer.hpp"

namespace conper::pipeline {

struct ModelConfig {
  backbone::BackboneConfig backbone;
  std::size_t graph_attention = 16;
  std::uint64_t seed = 1;
};

struct StageRecord {
  std::string stage;
  std::size_t epochs_run = 0;
  double best_valid_loss = 0;
};

/// Everything a trained system needs: tokenizer, plan vocabulary, retained
/// triples and the weights of the backbone, graph encoder and planning head.
class ConPerModel {
 public:
  ConPerModel(backbone::Tokenizer tokenizer, planner::PlanVocab plan_vocab, std::vector<kgraph::Triple> triples,
              ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const backbone::Tokenizer& tokenizer() const { return tokenizer_; }
  const planner::PlanVocab& plan_vocab() const { return plan_vocab_; }
  const kgraph::TripleStore& store() const { return store_; }
  const std::vector<kgraph::Triple>& triples() const { return triples_; }
  const backbone::Backbone& backbone() const { return backbone_; }
  backbone::Backbone& backbone() { return backbone_; }
  const kgraph::GraphParams& graph_params() const { return graph_params_; }
  const planner::PlanHeadParams& plan_heads() const { return plan_heads_; }

  std::vector<ad::Parameter*> parameters();
  std::vector<ad::Parameter*> parameters(bool include_planner);

  std::vector<StageRecord>& stages() { return stages_; }
  const std::vector<StageRecord>& stages() const { return stages_; }
  bool has_stage(std::string_view stage) const;

  planner::Planner make_planner(planner::PlannerFlags flags) const;

  void save(const std::string& path) const;
  static ConPerModel load(const std::string& path);

 private:
  ModelConfig config_;
  backbone::Tokenizer tokenizer_;
  planner::PlanVocab plan_vocab_;
  std::vector<kgraph::Triple> triples_;
  kgraph::TripleStore store_;
  backbone::Backbone backbone_;
  kgraph::GraphParams graph_params_;
  planner::PlanHeadParams plan_heads_;
  std::vector<StageRecord> stages_;
};

/// 64-bit FNV-1a over a file's bytes, as 16 hex digits.
std::string file_hash(const std::string& path);
std::string fnv1a_hex(std::string_view bytes);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam with decoupled weight decay and global-norm gradient clipping.
class AdamW {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
  };

  AdamW(std::vector<ad::Parameter*> params, Options options);
  /// Returns the gradient norm before clipping.
  double step(const ad::Gradients& grads);

 private:
  std::vector<ad::Parameter*> params_;
  Options opt_;
  std::unordered_map<const ad::Parameter*, std::pair<ad::Matrix, ad::Matrix>> state_;
  std::size_t t_ = 0;
};

}  // namespace conper::pipeline
