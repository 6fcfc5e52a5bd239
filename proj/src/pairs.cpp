#include "patchlab/pairs.hpp"

#include <json.hpp>

#include <cctype>
#include <sstream>

#include "patchlab/fsio.hpp"

namespace patchlab {

namespace {

using nlohmann::json;

json span_to_json(const CharSpan& s) { return json::array({s.begin, s.end}); }

CharSpan span_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
    throw InputError("pair: " + where + " must be a two-integer array");
  CharSpan s{j[0].get<int>(), j[1].get<int>()};
  if (s.begin < 0 || s.end < s.begin) throw InputError("pair: " + where + " is not a valid span");
  return s;
}

const std::string& required_string(const json& j, const char* field) {
  const auto it = j.find(field);
  if (it == j.end() || !it->is_string())
    throw InputError(std::string("pair: missing or non-string field '") + field + "'");
  return it->get_ref<const std::string&>();
}

}  // namespace

std::string pair_to_json_line(const MinimalPair& p) {
  json alignment = json::object();
  for (const auto& [name, span] : p.base_slots) {
    const auto src = p.source_slots.find(name);
    if (src == p.source_slots.end())
      throw InvariantError("pair: slot '" + name + "' has no source span");
    alignment[name] = {{"base", span_to_json(span)}, {"source", span_to_json(src->second)}};
  }
  if (p.source_slots.size() != p.base_slots.size())
    throw InvariantError("pair: slot maps disagree between sides");
  const json j{{"base", p.base},
               {"source", p.source},
               {"y_base", p.y_base},
               {"y_source", p.y_source},
               {"construction", p.construction},
               {"split", p.split},
               {"alignment", alignment}};
  return j.dump();
}

MinimalPair pair_from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw InputError(std::string("pair line is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InputError("pair line must be a JSON object");

  MinimalPair p;
  p.base = required_string(j, "base");
  p.source = required_string(j, "source");
  p.y_base = required_string(j, "y_base");
  p.y_source = required_string(j, "y_source");
  p.construction = required_string(j, "construction");
  p.split = required_string(j, "split");

  const auto al = j.find("alignment");
  if (al == j.end() || !al->is_object()) throw InputError("pair: missing alignment object");
  for (const auto& [name, spans] : al->items()) {
    if (!spans.is_object() || !spans.contains("base") || !spans.contains("source"))
      throw InputError("pair: slot '" + name + "' needs base and source spans");
    p.base_slots[name] = span_from_json(spans["base"], "slot '" + name + "' base span");
    p.source_slots[name] = span_from_json(spans["source"], "slot '" + name + "' source span");
  }

  for (const auto& [name, span] : p.base_slots)
    if (span.end > static_cast<int>(p.base.size()))
      throw InputError("pair: slot '" + name + "' runs past the base text");
  for (const auto& [name, span] : p.source_slots)
    if (span.end > static_cast<int>(p.source.size()))
      throw InputError("pair: slot '" + name + "' runs past the source text");
  return p;
}

std::vector<MinimalPair> read_pairs(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<MinimalPair> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(pair_from_json_line(line));
    } catch (const InputError& e) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_pairs(const std::filesystem::path& path, const std::vector<MinimalPair>& pairs) {
  std::string text;
  for (const auto& p : pairs) {
    text += pair_to_json_line(p);
    text += '\n';
  }
  write_text_file_atomic(path, text);
}

namespace {

// Maps a byte range onto the tokens whose last byte falls inside it. Spans
// tile the sentence in order, so the matching tokens are contiguous.
TokenRange tokens_for_span(const std::vector<TokenSpan>& spans, const CharSpan& chars) {
  TokenRange out;
  Index i = 0;
  const Index n = static_cast<Index>(spans.size());
  while (i < n && static_cast<int>(spans[static_cast<size_t>(i)].end) <= chars.begin) ++i;
  out.begin = i;
  while (i < n && static_cast<int>(spans[static_cast<size_t>(i)].end) <= chars.end) ++i;
  out.end = i;
  return out;
}

int single_continuation_token(const Tokenizer& tok, const std::string& y,
                              const MinimalPair& pair) {
  if (y.empty())
    throw AlignmentError("pair (" + pair.construction + "): empty continuation");
  const bool punct = std::ispunct(static_cast<unsigned char>(y[0])) != 0;
  const std::string joined = punct ? y : " " + y;
  const std::vector<int> ids = tok.encode(joined);
  if (ids.size() != 1)
    throw AlignmentError("pair (" + pair.construction + "): continuation '" + y + "' needs " +
                         std::to_string(ids.size()) + " tokens; single-token outputs required");
  return ids[0];
}

}  // namespace

TokenizedPair tokenize_pair(const Tokenizer& tok, const MinimalPair& pair) {
  TokenizedPair tp;
  tp.pair = pair;

  const std::vector<TokenSpan> base_spans = tok.encode_spans(pair.base);
  const std::vector<TokenSpan> source_spans = tok.encode_spans(pair.source);
  for (const auto& s : base_spans) tp.base_tokens.push_back(s.id);
  for (const auto& s : source_spans) tp.source_tokens.push_back(s.id);

  for (const auto& [name, span] : pair.base_slots)
    tp.base_slots[name] = tokens_for_span(base_spans, span);
  for (const auto& [name, span] : pair.source_slots)
    tp.source_slots[name] = tokens_for_span(source_spans, span);

  tp.y_base_id = single_continuation_token(tok, pair.y_base, pair);
  tp.y_source_id = single_continuation_token(tok, pair.y_source, pair);
  return tp;
}

Index resolve_position(const PositionSpec& spec, const TokenizedPair& tp, PairSide side) {
  const Index n = static_cast<Index>(tp.tokens(side).size());
  switch (spec.kind) {
    case PositionSpec::Kind::Default:
      return n - 1;
    case PositionSpec::Kind::Absolute:
    case PositionSpec::Kind::FromRight: {
      const Index idx = spec.index < 0 ? n + spec.index : spec.index;
      if (idx < 0 || idx >= n)
        throw InputError("position " + std::to_string(spec.index) + " out of range for " +
                         std::to_string(n) + " tokens");
      return idx;
    }
    case PositionSpec::Kind::Slot: {
      const auto b = tp.base_slots.find(spec.slot);
      const auto s = tp.source_slots.find(spec.slot);
      if (b == tp.base_slots.end() || s == tp.source_slots.end())
        throw AlignmentError("pair (" + tp.pair.construction + ") has no slot '" + spec.slot +
                             "'");
      if (b->second.size() != s->second.size() || b->second.size() == 0)
        throw AlignmentError("slot '" + spec.slot + "' spans " +
                             std::to_string(b->second.size()) + " base tokens vs " +
                             std::to_string(s->second.size()) +
                             " source tokens; a single aligned index needs equal, non-empty "
                             "spans");
      const TokenRange& span = side == PairSide::Base ? b->second : s->second;
      return span.end - 1;
    }
  }
  throw InvariantError("unreachable");
}

}  // namespace patchlab
