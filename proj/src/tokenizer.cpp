#include "patchlab/tokenizer.hpp"

#include <json.hpp>

#include <algorithm>
#include <limits>
#include <map>
#include <sstream>

#include "patchlab/common.hpp"
#include "patchlab/fsio.hpp"

namespace patchlab {

namespace {

using nlohmann::json;

bool is_ws(uint8_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
bool is_letter(uint8_t c) {
  return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c >= 0x80;
}
bool is_digit(uint8_t c) { return c >= '0' && c <= '9'; }

enum class Cls { Letter, Digit, Punct };

Cls classify(uint8_t c) {
  if (is_letter(c)) return Cls::Letter;
  if (is_digit(c)) return Cls::Digit;
  return Cls::Punct;
}

std::string cp_to_utf8(uint32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

// Decodes one code point starting at s[i]; advances i. Throws on malformed
// sequences.
uint32_t next_cp(const std::string& s, size_t& i) {
  const auto byte = [&](size_t k) -> uint32_t { return static_cast<uint8_t>(s[k]); };
  const uint32_t b0 = byte(i);
  auto cont = [&](size_t k) { return k < s.size() && (byte(k) & 0xC0) == 0x80; };
  if (b0 < 0x80) {
    i += 1;
    return b0;
  }
  if ((b0 & 0xE0) == 0xC0 && cont(i + 1)) {
    const uint32_t cp = ((b0 & 0x1F) << 6) | (byte(i + 1) & 0x3F);
    i += 2;
    return cp;
  }
  if ((b0 & 0xF0) == 0xE0 && cont(i + 1) && cont(i + 2)) {
    const uint32_t cp = ((b0 & 0x0F) << 12) | ((byte(i + 1) & 0x3F) << 6) | (byte(i + 2) & 0x3F);
    i += 3;
    return cp;
  }
  if ((b0 & 0xF8) == 0xF0 && cont(i + 1) && cont(i + 2) && cont(i + 3)) {
    const uint32_t cp = ((b0 & 0x07) << 18) | ((byte(i + 1) & 0x3F) << 12) |
                        ((byte(i + 2) & 0x3F) << 6) | (byte(i + 3) & 0x3F);
    i += 4;
    return cp;
  }
  throw InputError("tokenizer: malformed UTF-8 in token string");
}

const std::unordered_map<uint32_t, uint8_t>& unicode_to_byte() {
  static const std::unordered_map<uint32_t, uint8_t> table = [] {
    std::unordered_map<uint32_t, uint8_t> t;
    const auto& fwd = Tokenizer::byte_to_unicode();
    for (int b = 0; b < 256; ++b) t.emplace(fwd[static_cast<size_t>(b)], static_cast<uint8_t>(b));
    return t;
  }();
  return table;
}

std::string byte_symbol(uint8_t b) {
  return cp_to_utf8(Tokenizer::byte_to_unicode()[b]);
}

std::string merge_key(const std::string& a, const std::string& b) { return a + " " + b; }

// One pass of the classic merge loop: find the lowest-rank adjacent pair,
// then fuse every occurrence left to right. `lens` (if non-null) carries the
// byte length each symbol covers and is fused alongside.
void apply_merges(std::vector<std::string>& syms, std::vector<size_t>* lens,
                  const std::unordered_map<std::string, int>& ranks) {
  while (syms.size() >= 2) {
    int best_rank = std::numeric_limits<int>::max();
    size_t best_i = 0;
    for (size_t i = 0; i + 1 < syms.size(); ++i) {
      const auto it = ranks.find(merge_key(syms[i], syms[i + 1]));
      if (it != ranks.end() && it->second < best_rank) {
        best_rank = it->second;
        best_i = i;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    const std::string left = syms[best_i];
    const std::string right = syms[best_i + 1];
    std::vector<std::string> merged;
    std::vector<size_t> merged_lens;
    merged.reserve(syms.size());
    for (size_t i = 0; i < syms.size();) {
      if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
        merged.push_back(left + right);
        if (lens) merged_lens.push_back((*lens)[i] + (*lens)[i + 1]);
        i += 2;
      } else {
        merged.push_back(syms[i]);
        if (lens) merged_lens.push_back((*lens)[i]);
        i += 1;
      }
    }
    syms = std::move(merged);
    if (lens) *lens = std::move(merged_lens);
  }
}

}  // namespace

const std::array<uint32_t, 256>& Tokenizer::byte_to_unicode() {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    std::array<bool, 256> direct{};
    auto mark = [&](int lo, int hi) {
      for (int b = lo; b <= hi; ++b) direct[static_cast<size_t>(b)] = true;
    };
    mark('!', '~');
    mark(0xA1, 0xAC);
    mark(0xAE, 0xFF);
    uint32_t next = 256;
    for (int b = 0; b < 256; ++b) {
      if (direct[static_cast<size_t>(b)])
        t[static_cast<size_t>(b)] = static_cast<uint32_t>(b);
      else
        t[static_cast<size_t>(b)] = next++;
    }
    return t;
  }();
  return table;
}

std::vector<std::pair<size_t, size_t>> Tokenizer::pre_split(const std::string& s) {
  std::vector<std::pair<size_t, size_t>> out;
  const size_t n = s.size();
  size_t i = 0;
  // Scans a run of one character class starting at `from`, with the token
  // itself starting at `start` (which may include one leading space).
  auto emit_class_run = [&](size_t start, size_t from) {
    const Cls cls = classify(static_cast<uint8_t>(s[from]));
    size_t j = from;
    while (j < n && !is_ws(static_cast<uint8_t>(s[j])) &&
           classify(static_cast<uint8_t>(s[j])) == cls)
      ++j;
    out.emplace_back(start, j - start);
    i = j;
  };
  while (i < n) {
    const uint8_t c = static_cast<uint8_t>(s[i]);
    if (c == '\'' && i + 1 < n) {
      const char nx = s[i + 1];
      size_t len = 0;
      if (nx == 's' || nx == 't' || nx == 'm' || nx == 'd')
        len = 2;
      else if ((nx == 'r' || nx == 'v') && i + 2 < n && s[i + 2] == 'e')
        len = 3;
      else if (nx == 'l' && i + 2 < n && s[i + 2] == 'l')
        len = 3;
      if (len > 0) {
        out.emplace_back(i, len);
        i += len;
        continue;
      }
    }
    if (is_ws(c)) {
      size_t j = i;
      while (j < n && is_ws(static_cast<uint8_t>(s[j]))) ++j;
      if (j == n) {
        // Trailing whitespace is one token.
        out.emplace_back(i, j - i);
        i = j;
      } else if (j - i >= 2) {
        // All but the last whitespace char; the last one gets a chance to
        // attach to the following chunk.
        out.emplace_back(i, j - i - 1);
        i = j - 1;
      } else if (c == ' ') {
        // A single space glues onto the following run.
        emit_class_run(i, i + 1);
      } else {
        // Other single whitespace stands alone.
        out.emplace_back(i, 1);
        i = j;
      }
      continue;
    }
    emit_class_run(i, i);
  }
  return out;
}

Tokenizer Tokenizer::load(const std::filesystem::path& vocab_json,
                          const std::filesystem::path& merges_txt) {
  return from_text(read_text_file(vocab_json), read_text_file(merges_txt));
}

Tokenizer Tokenizer::from_text(const std::string& vocab_json_text, const std::string& merges_text) {
  Tokenizer tok;

  json v;
  try {
    v = json::parse(vocab_json_text);
  } catch (const json::exception& e) {
    throw InputError(std::string("vocabulary is not valid JSON: ") + e.what());
  }
  if (!v.is_object()) throw InputError("vocabulary must be a JSON object of token -> id");
  for (const auto& [token, idj] : v.items()) {
    if (!idj.is_number_integer()) throw InputError("vocabulary id for '" + token + "' is not an integer");
    const int id = idj.get<int>();
    if (id < 0) throw InputError("vocabulary id for '" + token + "' is negative");
    if (!tok.token_to_id_.emplace(token, id).second)
      throw InputError("duplicate vocabulary token '" + token + "'");
    if (static_cast<size_t>(id) >= tok.id_to_token_.size())
      tok.id_to_token_.resize(static_cast<size_t>(id) + 1);
    if (!tok.id_to_token_[static_cast<size_t>(id)].empty())
      throw InputError("duplicate vocabulary id " + std::to_string(id));
    tok.id_to_token_[static_cast<size_t>(id)] = token;
    // Every token must be decodable back to bytes.
    size_t i = 0;
    while (i < token.size()) {
      const uint32_t cp = next_cp(token, i);
      if (unicode_to_byte().find(cp) == unicode_to_byte().end())
        throw InputError("vocabulary token '" + token + "' is not byte-level");
    }
  }

  // Byte-level coverage: all 256 base symbols must be present, otherwise
  // encoding would be partial.
  for (int b = 0; b < 256; ++b) {
    if (tok.token_to_id_.find(byte_symbol(static_cast<uint8_t>(b))) == tok.token_to_id_.end())
      throw InputError("vocabulary is missing the base token for byte " + std::to_string(b));
  }

  std::istringstream lines(merges_text);
  std::string line;
  int rank = 0;
  bool first = true;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first && line.rfind("#version", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    if (line.empty()) continue;
    const size_t sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size() ||
        line.find(' ', sp + 1) != std::string::npos)
      throw InputError("merge line " + std::to_string(rank + 1) + " is not 'left right': " + line);
    const std::string left = line.substr(0, sp);
    const std::string right = line.substr(sp + 1);
    for (const std::string* side : {&left, &right}) {
      if (tok.token_to_id_.find(*side) == tok.token_to_id_.end())
        throw InputError("merge references unknown symbol '" + *side + "'");
    }
    if (tok.token_to_id_.find(left + right) == tok.token_to_id_.end())
      throw InputError("merge result '" + left + right + "' is not in the vocabulary");
    tok.merge_rank_.emplace(merge_key(left, right), rank);
    ++rank;
  }

  return tok;
}

std::vector<TokenSpan> Tokenizer::encode_spans(const std::string& text) const {
  std::vector<TokenSpan> out;
  for (const auto& [begin, len] : pre_split(text)) {
    std::vector<std::string> syms;
    std::vector<size_t> lens;
    syms.reserve(len);
    lens.assign(len, 1);
    for (size_t k = 0; k < len; ++k)
      syms.push_back(byte_symbol(static_cast<uint8_t>(text[begin + k])));
    apply_merges(syms, &lens, merge_rank_);
    size_t off = begin;
    for (size_t k = 0; k < syms.size(); ++k) {
      const auto it = token_to_id_.find(syms[k]);
      if (it == token_to_id_.end())
        throw InvariantError("tokenizer produced a symbol without an id: '" + syms[k] + "'");
      out.push_back(TokenSpan{it->second, off, off + lens[k]});
      off += lens[k];
    }
  }
  return out;
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& span : encode_spans(text)) ids.push_back(span.id);
  return ids;
}

const std::string& Tokenizer::token_unicode(int id) const {
  if (id < 0 || static_cast<size_t>(id) >= id_to_token_.size() ||
      id_to_token_[static_cast<size_t>(id)].empty())
    throw InputError("unknown token id " + std::to_string(id));
  return id_to_token_[static_cast<size_t>(id)];
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (const int id : ids) {
    const std::string& token = token_unicode(id);
    size_t i = 0;
    while (i < token.size()) {
      const uint32_t cp = next_cp(token, i);
      out.push_back(static_cast<char>(unicode_to_byte().at(cp)));
    }
  }
  return out;
}

LearnedBpe learn_bpe(const std::vector<std::string>& corpus, size_t max_merges) {
  // Unique chunk -> frequency, keyed by raw bytes for determinism.
  std::map<std::string, long> chunk_count;
  for (const auto& line : corpus) {
    for (const auto& [begin, len] : Tokenizer::pre_split(line))
      chunk_count[line.substr(begin, len)] += 1;
  }

  struct Word {
    std::vector<std::string> syms;
    long count;
  };
  std::vector<Word> words;
  words.reserve(chunk_count.size());
  for (const auto& [chunk, count] : chunk_count) {
    Word w;
    w.count = count;
    for (const char ch : chunk) w.syms.push_back(byte_symbol(static_cast<uint8_t>(ch)));
    words.push_back(std::move(w));
  }

  std::vector<std::pair<std::string, std::string>> merges;
  for (size_t step = 0; step < max_merges; ++step) {
    std::map<std::pair<std::string, std::string>, long> pair_count;
    for (const auto& w : words)
      for (size_t i = 0; i + 1 < w.syms.size(); ++i)
        pair_count[{w.syms[i], w.syms[i + 1]}] += w.count;
    long best = 1;  // require at least two occurrences
    const std::pair<std::string, std::string>* best_pair = nullptr;
    for (const auto& [pair, count] : pair_count) {
      if (count > best) {
        best = count;
        best_pair = &pair;
      }
    }
    if (!best_pair) break;
    const auto [left, right] = *best_pair;
    merges.emplace_back(left, right);
    for (auto& w : words) {
      std::vector<std::string> next;
      next.reserve(w.syms.size());
      for (size_t i = 0; i < w.syms.size();) {
        if (i + 1 < w.syms.size() && w.syms[i] == left && w.syms[i + 1] == right) {
          next.push_back(left + right);
          i += 2;
        } else {
          next.push_back(w.syms[i]);
          i += 1;
        }
      }
      w.syms = std::move(next);
    }
  }

  nlohmann::json vocab = nlohmann::json::object();
  int next_id = 0;
  for (int b = 0; b < 256; ++b) vocab[byte_symbol(static_cast<uint8_t>(b))] = next_id++;
  for (const auto& [left, right] : merges) {
    const std::string token = left + right;
    if (!vocab.contains(token)) vocab[token] = next_id++;
  }

  std::string merges_text = "#version: 0.2\n";
  for (const auto& [left, right] : merges) merges_text += left + " " + right + "\n";

  return LearnedBpe{vocab.dump(), merges_text};
}

}  // namespace patchlab
