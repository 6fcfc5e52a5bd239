#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "patchlab/common.hpp"
#include "patchlab/intervene.hpp"
#include "patchlab/tokenizer.hpp"

// Minimal pairs: a base sentence, a minimally different source sentence, and
// their grammatical one-token continuations. Slot spans are stored as byte
// ranges into each sentence so the pairs stay tokenizer-independent on disk;
// token-level alignment is derived at use time.

namespace patchlab {

// Data problems discovered at use time (a slot that cannot be mapped onto
// whole tokens, a continuation that needs several tokens). Distinct from
// InputError so callers can skip the affected pair and keep going.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

struct CharSpan {
  int begin = 0;
  int end = 0;  // byte offsets, [begin, end); begin == end marks an empty slot

  bool operator==(const CharSpan&) const = default;
};

struct MinimalPair {
  std::string base, source;
  std::string y_base, y_source;
  std::string construction;
  std::string split;
  std::map<std::string, CharSpan> base_slots, source_slots;
};

std::string pair_to_json_line(const MinimalPair& p);
MinimalPair pair_from_json_line(const std::string& line);
std::vector<MinimalPair> read_pairs(const std::filesystem::path& path);
void write_pairs(const std::filesystem::path& path, const std::vector<MinimalPair>& pairs);

enum class PairSide { Base, Source };

struct TokenRange {
  Index begin = 0;
  Index end = 0;  // token indices, [begin, end)

  Index size() const { return end - begin; }
  bool operator==(const TokenRange&) const = default;
};

struct TokenizedPair {
  MinimalPair pair;
  std::vector<int> base_tokens, source_tokens;
  std::map<std::string, TokenRange> base_slots, source_slots;
  int y_base_id = -1;
  int y_source_id = -1;

  const std::vector<int>& tokens(PairSide s) const {
    return s == PairSide::Base ? base_tokens : source_tokens;
  }
  const std::map<std::string, TokenRange>& slots(PairSide s) const {
    return s == PairSide::Base ? base_slots : source_slots;
  }
};

// Encodes both sides, maps slot byte ranges onto token ranges (a token
// belongs to the slot that contains its last byte), and resolves the
// continuations to single token ids. Throws AlignmentError when a
// continuation needs more than one token.
TokenizedPair tokenize_pair(const Tokenizer& tok, const MinimalPair& pair);

// Turns a position spec into an absolute token index on one side of a pair.
// Slot positions resolve to the slot's last token and require the slot to
// span the same number of tokens on both sides; a mismatch (including an
// empty side) raises AlignmentError instead of guessing.
Index resolve_position(const PositionSpec& spec, const TokenizedPair& tp, PairSide side);

}  // namespace patchlab
