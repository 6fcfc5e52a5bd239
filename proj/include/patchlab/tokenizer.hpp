#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace patchlab {

// One encoded token plus the byte range of the input it covers.
struct TokenSpan {
  int id;
  size_t begin;
  size_t end;
};

// Byte-level BPE in the GPT-2 style: text is split into chunks, each chunk's
// bytes are mapped to printable stand-in code points, and merges are applied
// greedily by ascending rank. Every byte has a base token, so encoding never
// fails on valid input.
class Tokenizer {
 public:
  static Tokenizer load(const std::filesystem::path& vocab_json,
                        const std::filesystem::path& merges_txt);
  static Tokenizer from_text(const std::string& vocab_json_text, const std::string& merges_text);

  std::vector<int> encode(const std::string& text) const;
  std::vector<TokenSpan> encode_spans(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  // Highest id + 1; the model loader cross-checks this against the config.
  int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
  const std::string& token_unicode(int id) const;

  // Chunk boundaries as (begin, length) byte ranges. Follows the GPT-2
  // splitter with ASCII character classes; bytes >= 0x80 count as letters.
  static std::vector<std::pair<size_t, size_t>> pre_split(const std::string& text);

  // Byte value -> stand-in code point (printable bytes map to themselves).
  static const std::array<uint32_t, 256>& byte_to_unicode();

 private:
  Tokenizer() = default;

  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;  // empty string marks an unused id
  std::unordered_map<std::string, int> merge_rank_;  // key: "left right"
};

// Trains a small merge table from a corpus; deterministic (frequency ties
// break toward the lexicographically smaller pair). Produces file contents in
// the same formats `Tokenizer::load` reads.
struct LearnedBpe {
  std::string vocab_json;
  std::string merges;
};
LearnedBpe learn_bpe(const std::vector<std::string>& corpus, size_t max_merges);

}  // namespace patchlab
