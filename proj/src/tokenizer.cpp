#include "conper/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <limits>
#include <map>
#include <stdexcept>

namespace conper::backbone {
namespace {

constexpr std::array<std::string_view, kNumSpecial> kSpecialPieces = {
    special::kBos,    special::kEos,        special::kSep,   special::kTgtBeg,
    special::kTgtEnd, special::kTargetSlot, special::kKwSep, special::kStory};

constexpr int kByteBase = kNumSpecial;

std::uint64_t pair_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

enum class CharClass { space, alpha, digit, other };

CharClass classify(unsigned char c) {
  if (std::isspace(c)) return CharClass::space;
  if (std::isalpha(c) || c >= 0x80) return CharClass::alpha;
  if (std::isdigit(c)) return CharClass::digit;
  return CharClass::other;
}

void split_plain(std::string_view text, std::vector<std::string>& out) {
  std::size_t i = 0;
  while (i < text.size()) {
    const auto cls = classify(static_cast<unsigned char>(text[i]));
    if (cls == CharClass::space) {
      std::size_t j = i;
      while (j < text.size() && classify(static_cast<unsigned char>(text[j])) == CharClass::space) ++j;
      // a single trailing space before a word travels with that word
      if (j < text.size() && text[j - 1] == ' ' && j - i >= 1) {
        if (j - 1 > i) out.emplace_back(text.substr(i, j - 1 - i));
        i = j - 1;
        const auto next = classify(static_cast<unsigned char>(text[j]));
        std::size_t k = j;
        while (k < text.size() && classify(static_cast<unsigned char>(text[k])) == next) ++k;
        out.emplace_back(text.substr(i, k - i));
        i = k;
      } else {
        out.emplace_back(text.substr(i, j - i));
        i = j;
      }
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && classify(static_cast<unsigned char>(text[j])) == cls) ++j;
    out.emplace_back(text.substr(i, j - i));
    i = j;
  }
}

}  // namespace

std::string_view special_piece(int id) { return kSpecialPieces.at(static_cast<std::size_t>(id)); }

int special_id(std::string_view piece) {
  for (int i = 0; i < kNumSpecial; ++i)
    if (kSpecialPieces[static_cast<std::size_t>(i)] == piece) return i;
  return -1;
}

Tokenizer::Tokenizer() {
  for (auto p : kSpecialPieces) pieces_.emplace_back(p);
  for (int b = 0; b < 256; ++b) pieces_.emplace_back(1, static_cast<char>(b));
}

std::vector<std::string> Tokenizer::pretokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '<') {
      bool matched = false;
      for (auto p : kSpecialPieces) {
        if (text.compare(i, p.size(), p) == 0) {
          split_plain(text.substr(start, i - start), out);
          out.emplace_back(p);
          i += p.size();
          start = i;
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    ++i;
  }
  split_plain(text.substr(start), out);
  return out;
}

void Tokenizer::add_merge(int left, int right) {
  merge_rank_.emplace(pair_key(left, right), static_cast<int>(merges_.size()));
  merges_.emplace_back(left, right);
  pieces_.push_back(pieces_.at(static_cast<std::size_t>(left)) + pieces_.at(static_cast<std::size_t>(right)));
}

Tokenizer Tokenizer::from_merges(const std::vector<std::pair<int, int>>& merges) {
  Tokenizer tok;
  for (auto [a, b] : merges) {
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= tok.pieces_.size() ||
        static_cast<std::size_t>(b) >= tok.pieces_.size())
      throw std::invalid_argument("tokenizer merge refers to unknown id");
    tok.add_merge(a, b);
  }
  return tok;
}

Tokenizer Tokenizer::train(const std::vector<std::string>& corpus, std::size_t num_merges) {
  Tokenizer tok;
  // std::map keeps the word order, and therefore tie-breaking, deterministic
  std::map<std::string, std::size_t> freq;
  for (const auto& doc : corpus)
    for (auto& chunk : pretokenize(doc))
      if (special_id(chunk) < 0) ++freq[chunk];

  std::vector<std::pair<std::vector<int>, std::size_t>> words;
  words.reserve(freq.size());
  for (const auto& [chunk, n] : freq) {
    std::vector<int> ids;
    for (unsigned char c : chunk) ids.push_back(kByteBase + c);
    words.emplace_back(std::move(ids), n);
  }

  for (std::size_t m = 0; m < num_merges; ++m) {
    std::unordered_map<std::uint64_t, std::size_t> counts;
    for (const auto& [ids, n] : words)
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) counts[pair_key(ids[i], ids[i + 1])] += n;
    if (counts.empty()) break;
    std::uint64_t best = 0;
    std::size_t best_count = 0;
    for (const auto& [key, n] : counts)
      if (n > best_count || (n == best_count && key < best)) {
        best = key;
        best_count = n;
      }
    if (best_count < 2) break;
    const int left = static_cast<int>(best >> 32);
    const int right = static_cast<int>(best & 0xffffffffu);
    const int merged = static_cast<int>(tok.pieces_.size());
    tok.add_merge(left, right);
    for (auto& [ids, n] : words) {
      std::vector<int> next;
      next.reserve(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i + 1 < ids.size() && ids[i] == left && ids[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(ids[i]);
        }
      }
      ids = std::move(next);
    }
  }
  return tok;
}

std::vector<int> Tokenizer::encode_chunk(std::string_view chunk) const {
  std::vector<int> ids;
  ids.reserve(chunk.size());
  for (unsigned char c : chunk) ids.push_back(kByteBase + c);
  while (ids.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      auto it = merge_rank_.find(pair_key(ids[i], ids[i + 1]));
      if (it != merge_rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best_pos = i;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    const auto [left, right] = merges_[static_cast<std::size_t>(best_rank)];
    const int merged = kByteBase + 256 + best_rank;
    std::vector<int> next;
    next.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i >= best_pos && i + 1 < ids.size() && ids[i] == left && ids[i + 1] == right) {
        next.push_back(merged);
        ++i;
      } else {
        next.push_back(ids[i]);
      }
    }
    ids = std::move(next);
  }
  return ids;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  for (const auto& chunk : pretokenize(text)) {
    if (const int sid = special_id(chunk); sid >= 0) {
      out.push_back(sid);
      continue;
    }
    auto ids = encode_chunk(chunk);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) out += piece(id);
  return out;
}

}  // namespace conper::backbone
