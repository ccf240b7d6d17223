#include "conper/corpus.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace conper::corpus {

using nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "valid" || s == "validation" || s == "dev") return Split::valid;
  if (s == "test") return Split::test;
  throw SchemaError("unknown split '" + std::string(s) + "'");
}

void validate(const Example& e) {
  const auto require = [](const std::string& value, const char* field) {
    if (text::trim(value).empty()) throw ValidationError(std::string("empty field '") + field + "'");
  };
  require(e.context, "context");
  require(e.persona, "persona");
  require(e.protagonist, "protagonist");
  require(e.story, "story");
  if (text::rule_based_sentence_spans(e.story).empty()) throw ValidationError("story has no sentence");
}

Example parse_record(std::string_view line, std::size_t line_number) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& err) {
    throw SchemaError(std::string("invalid JSON: ") + err.what());
  }
  if (!j.is_object()) throw SchemaError("record is not an object");

  const auto field = [&](const char* name) -> std::string {
    auto it = j.find(name);
    if (it == j.end()) throw SchemaError(std::string("missing field '") + name + "'");
    if (!it->is_string()) throw SchemaError(std::string("field '") + name + "' is not a string");
    return it->get<std::string>();
  };

  Example e;
  e.context = field("context");
  e.persona = field("persona");
  e.protagonist = field("protagonist");
  e.story = field("story");
  if (auto it = j.find("id"); it != j.end() && it->is_string())
    e.id = it->get<std::string>();
  else
    e.id = "line-" + std::to_string(line_number);
  if (auto it = j.find("split"); it != j.end()) {
    if (!it->is_string()) throw SchemaError("field 'split' is not a string");
    e.split = parse_split(it->get<std::string>());
  }
  validate(e);
  return e;
}

std::string serialize(const Example& e) {
  json j;
  j["id"] = e.id;
  j["context"] = e.context;
  j["persona"] = e.persona;
  j["protagonist"] = e.protagonist;
  j["story"] = e.story;
  j["split"] = std::string(to_string(e.split));
  return j.dump();
}

LoadResult read_dataset(std::istream& in, std::optional<Split> split) {
  LoadResult result;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (text::trim(line).empty()) continue;
    try {
      Example e = parse_record(line, number);
      if (!split || e.split == *split) result.examples.push_back(std::move(e));
    } catch (const SchemaError& err) {
      result.rejected.push_back({number, std::string("schema error: ") + err.what()});
    } catch (const ValidationError& err) {
      result.rejected.push_back({number, std::string("validation error: ") + err.what()});
    }
  }
  return result;
}

LoadResult load_dataset(const std::string& path, std::optional<Split> split) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  return read_dataset(in, split);
}

void write_dataset(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset '" + path + "'");
  for (const auto& e : examples) out << serialize(e) << '\n';
}

std::size_t count_word_tokens(std::string_view text) { return text::word_tokens(text).size(); }

Example truncate_example(const Example& e, std::size_t max_tokens, const TokenCounter& count,
                         const text::SentenceSplitter& splitter) {
  const auto spans = splitter(e.story);
  if (spans.empty()) return e;
  std::size_t kept = 1;
  // Count the prefix as a whole: sub-word merges can straddle a sentence join.
  while (kept < spans.size()) {
    std::string_view prefix(e.story.data() + spans.front().begin, spans[kept].end - spans.front().begin);
    if (count(prefix) > max_tokens) break;
    ++kept;
  }
  if (kept == spans.size() && count(e.story) <= max_tokens) return e;
  Example out = e;
  out.story = e.story.substr(spans.front().begin, spans[kept - 1].end - spans.front().begin);
  return out;
}

std::string format_stats(const DatasetStats& s, std::string_view split_name) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "split = " << split_name << '\n'
     << "num_examples = " << s.num_examples << '\n'
     << "avg_context_len = " << s.avg_context_len << '\n'
     << "avg_persona_len = " << s.avg_persona_len << '\n'
     << "avg_story_len = " << s.avg_story_len << '\n'
     << "avg_target_len = " << s.avg_target_len << '\n'
     << "avg_keywords_input = " << s.avg_keywords_input << '\n'
     << "avg_keywords_story = " << s.avg_keywords_story << '\n';
  return os.str();
}

}  // namespace conper::corpus
