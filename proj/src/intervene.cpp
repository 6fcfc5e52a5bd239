#include "patchlab/intervene.hpp"

#include <cctype>

namespace patchlab {

namespace {

[[noreturn]] void bad(const std::string& text, const std::string& why) {
  throw InputError("bad hook point '" + text + "': " + why);
}

int parse_nonneg(const std::string& text, const std::string& field, const std::string& whole) {
  if (text.empty()) bad(whole, field + " is empty");
  for (const char c : text)
    if (!std::isdigit(static_cast<unsigned char>(c))) bad(whole, field + " must be a number");
  try {
    return std::stoi(text);
  } catch (const std::exception&) {
    bad(whole, field + " is out of range");
  }
}

bool is_integer(const std::string& s) {
  if (s.empty()) return false;
  size_t i = s[0] == '-' ? 1 : 0;
  if (i == s.size()) return false;
  for (; i < s.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
  return true;
}

bool is_slot_name(const std::string& s) {
  if (s.empty()) return false;
  if (!std::isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_') return false;
  for (const char c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
  return true;
}

}  // namespace

HookPoint parse_hookpoint(const std::string& text) {
  const size_t at = text.find('@');
  if (at != std::string::npos && text.find('@', at + 1) != std::string::npos)
    bad(text, "more than one '@'");
  const std::string site = text.substr(0, at);

  std::vector<std::string> parts;
  size_t start = 0;
  while (true) {
    const size_t dot = site.find('.', start);
    parts.push_back(site.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }

  HookPoint hp;
  if (parts[0] == "resid")
    hp.kind = SiteKind::ResidOut;
  else if (parts[0] == "attn")
    hp.kind = SiteKind::AttnOut;
  else if (parts[0] == "mlp")
    hp.kind = SiteKind::MlpOut;
  else if (parts[0] == "head")
    hp.kind = SiteKind::HeadOut;
  else
    bad(text, "unknown site kind '" + parts[0] + "'");

  const size_t want = hp.kind == SiteKind::HeadOut ? 3 : 2;
  if (parts.size() != want)
    bad(text, "expected '" + parts[0] + (want == 3 ? ".LAYER.HEAD'" : ".LAYER'"));
  hp.layer = parse_nonneg(parts[1], "layer", text);
  if (hp.kind == SiteKind::HeadOut) hp.head = parse_nonneg(parts[2], "head", text);

  if (at != std::string::npos) {
    const std::string pos = text.substr(at + 1);
    if (is_integer(pos)) {
      const int v = std::stoi(pos);
      hp.position = v < 0 ? PositionSpec::from_right(v) : PositionSpec::absolute(v);
    } else if (is_slot_name(pos)) {
      hp.position = PositionSpec::at_slot(pos);
    } else {
      bad(text, "position must be an integer or a slot name");
    }
  }
  return hp;
}

std::string format_hookpoint(const HookPoint& hp) {
  std::string out = site_kind_name(hp.kind);
  out += "." + std::to_string(hp.layer);
  if (hp.kind == SiteKind::HeadOut) out += "." + std::to_string(hp.head);
  switch (hp.position.kind) {
    case PositionSpec::Kind::Default:
      break;
    case PositionSpec::Kind::Absolute:
    case PositionSpec::Kind::FromRight:
      out += "@" + std::to_string(hp.position.index);
      break;
    case PositionSpec::Kind::Slot:
      out += "@" + hp.position.slot;
      break;
  }
  return out;
}

}  // namespace patchlab
