#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace conper::backbone {

/// Reserved token strings. Ids 0..kNumSpecial-1 in every vocabulary.
namespace special {
inline constexpr std::string_view kBos = "<bos>";
inline constexpr std::string_view kEos = "<eos>";
inline constexpr std::string_view kSep = "<sep>";           // context | persona
inline constexpr std::string_view kTgtBeg = "<tgt>";        // target sentence start
inline constexpr std::string_view kTgtEnd = "</tgt>";       // target sentence end
inline constexpr std::string_view kTargetSlot = "<target>";  // target position inside a story
inline constexpr std::string_view kKwSep = "<kw>";          // precedes each planned keyword
inline constexpr std::string_view kStory = "<story>";       // story start
}  // namespace special

enum SpecialId : int { kBos = 0, kEos, kSep, kTgtBeg, kTgtEnd, kTargetSlot, kKwSep, kStory, kNumSpecial };

/// Byte-level byte-pair tokenizer. Base symbols are the 256 byte values, so
/// decode(encode(x)) == x for any input; special token strings are atomic.
class Tokenizer {
 public:
  /// Special tokens and bytes only.
  Tokenizer();

  static Tokenizer train(const std::vector<std::string>& corpus, std::size_t num_merges);

  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;
  std::size_t count(std::string_view text) const { return encode(text).size(); }

  std::size_t vocab_size() const { return pieces_.size(); }
  const std::string& piece(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }
  bool is_special(int id) const { return id >= 0 && id < kNumSpecial; }

  const std::vector<std::pair<int, int>>& merges() const { return merges_; }
  static Tokenizer from_merges(const std::vector<std::pair<int, int>>& merges);

  /// Splits text into pre-tokens (special tokens kept whole, spaces attached
  /// to the following word).
  static std::vector<std::string> pretokenize(std::string_view text);

 private:
  void add_merge(int left, int right);
  std::vector<int> encode_chunk(std::string_view chunk) const;

  std::vector<std::string> pieces_;
  std::vector<std::pair<int, int>> merges_;
  std::unordered_map<std::uint64_t, int> merge_rank_;
};

std::string_view special_piece(int id);
int special_id(std::string_view piece);  // -1 when not special

}  // namespace conper::backbone
