#include "conper/model.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace conper::pipeline {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'C', 'O', 'N', 'P', 'E', 'R', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

std::unordered_set<std::string> plan_words(const planner::PlanVocab& v) { return v.word_set(); }

backbone::BackboneConfig with_vocab(backbone::BackboneConfig c, std::size_t vocab) {
  c.vocab_size = vocab;
  return c;
}

json config_json(const ModelConfig& c) {
  const auto& b = c.backbone;
  return {{"vocab_size", b.vocab_size}, {"hidden", b.hidden}, {"layers", b.layers},
          {"heads", b.heads},           {"ff", b.ff},         {"context_window", b.context_window},
          {"backbone_seed", b.seed},    {"graph_attention", c.graph_attention}, {"seed", c.seed}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.backbone.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.backbone.hidden = j.at("hidden").get<std::size_t>();
  c.backbone.layers = j.at("layers").get<std::size_t>();
  c.backbone.heads = j.at("heads").get<std::size_t>();
  c.backbone.ff = j.at("ff").get<std::size_t>();
  c.backbone.context_window = j.at("context_window").get<std::size_t>();
  c.backbone.seed = j.at("backbone_seed").get<std::uint64_t>();
  c.graph_attention = j.at("graph_attention").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

ConPerModel::ConPerModel(backbone::Tokenizer tokenizer, planner::PlanVocab plan_vocab,
                         std::vector<kgraph::Triple> triples, ModelConfig config)
    : config_(config),
      tokenizer_(std::move(tokenizer)),
      plan_vocab_(std::move(plan_vocab)),
      triples_(std::move(triples)),
      store_(triples_, plan_words(plan_vocab_)),
      backbone_(with_vocab(config.backbone, tokenizer_.vocab_size())),
      graph_params_(store_.relations(), config.backbone.hidden, config.graph_attention, derive_seed(config.seed, 11)),
      plan_heads_(plan_vocab_.size(), config.backbone.hidden, derive_seed(config.seed, 12)) {
  config_.backbone.vocab_size = tokenizer_.vocab_size();
  // keep only what survived filtering so the checkpoint stays small
  triples_ = store_.triples();
}

std::vector<ad::Parameter*> ConPerModel::parameters() { return parameters(true); }

std::vector<ad::Parameter*> ConPerModel::parameters(bool include_planner) {
  auto out = backbone_.parameters();
  if (include_planner) {
    for (auto* p : graph_params_.parameters()) out.push_back(p);
    for (auto* p : plan_heads_.parameters()) out.push_back(p);
  }
  return out;
}

bool ConPerModel::has_stage(std::string_view stage) const {
  for (const auto& s : stages_)
    if (s.stage == stage) return true;
  return false;
}

planner::Planner ConPerModel::make_planner(planner::PlannerFlags flags) const {
  return planner::Planner(plan_vocab_, graph_params_, plan_heads_, backbone_.token_embedding(), tokenizer_, flags);
}

void ConPerModel::save(const std::string& path) const {
  json header;
  header["config"] = config_json(config_);
  json merges = json::array();
  for (auto [a, b] : tokenizer_.merges()) merges.push_back({a, b});
  header["merges"] = merges;
  header["plan_vocab"] = std::vector<std::string>(plan_vocab_.words().begin() + 1, plan_vocab_.words().end());
  json triples = json::array();
  for (const auto& t : triples_) triples.push_back({t.head, t.relation, t.tail, t.confidence});
  header["triples"] = triples;
  json stages = json::array();
  for (const auto& s : stages_)
    stages.push_back({{"stage", s.stage}, {"epochs_run", s.epochs_run}, {"best_valid_loss", s.best_valid_loss}});
  header["stages"] = stages;
  json shapes = json::array();
  auto params = const_cast<ConPerModel*>(this)->parameters();
  for (const auto* p : params) shapes.push_back({p->name, p->value.rows(), p->value.cols()});
  header["parameters"] = shapes;

  const std::string h = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  const std::uint64_t len = h.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto* p : params)
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p->value.size())));
  if (!out) throw CheckpointError("failed writing checkpoint: " + path);
}

ConPerModel ConPerModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw CheckpointError("not a checkpoint: " + path);
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  if (len > (std::uint64_t{1} << 32)) throw CheckpointError("corrupt checkpoint header length in " + path);
  std::string h(len, '\0');
  in.read(h.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("truncated checkpoint header: " + path);
  json header;
  try {
    header = json::parse(h);
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint header in " + path + ": " + e.what());
  }

  std::vector<std::pair<int, int>> merges;
  for (const auto& m : header.at("merges")) merges.emplace_back(m.at(0).get<int>(), m.at(1).get<int>());
  std::vector<kgraph::Triple> triples;
  for (const auto& t : header.at("triples"))
    triples.push_back({t.at(0).get<std::string>(), t.at(1).get<std::string>(), t.at(2).get<std::string>(), t.at(3).get<double>()});
  ConPerModel model(backbone::Tokenizer::from_merges(merges),
                    planner::PlanVocab(header.at("plan_vocab").get<std::vector<std::string>>()), std::move(triples),
                    config_from(header.at("config")));
  for (const auto& s : header.at("stages"))
    model.stages_.push_back(
        {s.at("stage").get<std::string>(), s.at("epochs_run").get<std::size_t>(), s.at("best_valid_loss").get<double>()});
  auto params = model.parameters();
  const auto& shapes = header.at("parameters");
  if (shapes.size() != params.size()) throw CheckpointError("parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (shapes[i].at(0).get<std::string>() != p->name || shapes[i].at(1).get<Eigen::Index>() != p->value.rows() ||
        shapes[i].at(2).get<Eigen::Index>() != p->value.cols())
      throw CheckpointError("parameter shape mismatch at " + p->name);
    in.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p->value.size())));
  }
  if (!in) throw CheckpointError("truncated checkpoint: " + path);
  return model;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot hash missing file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a_hex(ss.str());
}

AdamW::AdamW(std::vector<ad::Parameter*> params, Options options) : params_(std::move(params)), opt_(options) {
  for (auto* p : params_)
    state_.emplace(p, std::make_pair(ad::Matrix::Zero(p->value.rows(), p->value.cols()),
                                     ad::Matrix::Zero(p->value.rows(), p->value.cols())));
}

double AdamW::step(const ad::Gradients& grads) {
  double sq = 0;
  for (auto* p : params_) {
    const auto it = grads.find(p);
    if (it != grads.end()) sq += it->second.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  const double clip = opt_.clip_norm > 0 && norm > opt_.clip_norm ? opt_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (auto* p : params_) {
    const auto it = grads.find(p);
    if (it == grads.end()) continue;
    auto& [m, v] = state_.at(p);
    const ad::Matrix g = it->second * clip;
    m = opt_.beta1 * m + (1 - opt_.beta1) * g;
    v = opt_.beta2 * v + (1 - opt_.beta2) * g.cwiseProduct(g);
    if (p->value.rows() > 1 && p->value.cols() > 1) p->value *= 1.0 - opt_.lr * opt_.weight_decay;
    p->value.array() -= opt_.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + opt_.eps);
  }
  return norm;
}

}  // namespace conper::pipeline
