#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "patchlab/forward.hpp"

// Addressable interventions on top of the forward engine. A hook point names
// a site ("resid.L", "attn.L", "mlp.L", "head.L.H") plus an optional position
// suffix ("@3", "@-1", "@slotname"). Activations are captured into caches and
// written back into later runs by patching, projection swaps or scaling.

namespace patchlab {

struct PositionSpec {
  enum class Kind { Default, Absolute, FromRight, Slot };

  Kind kind = Kind::Default;
  int index = 0;     // Absolute (>= 0) or FromRight (< 0)
  std::string slot;  // Slot

  static PositionSpec absolute(int i) { return {Kind::Absolute, i, {}}; }
  static PositionSpec from_right(int i) { return {Kind::FromRight, i, {}}; }
  static PositionSpec at_slot(std::string name) { return {Kind::Slot, 0, std::move(name)}; }

  bool operator==(const PositionSpec&) const = default;
};

struct HookPoint {
  SiteKind kind = SiteKind::ResidOut;
  int layer = 0;
  int head = -1;  // required for head sites, absent otherwise
  PositionSpec position;

  bool operator==(const HookPoint&) const = default;
};

HookPoint parse_hookpoint(const std::string& text);
std::string format_hookpoint(const HookPoint& hp);

template <typename Scalar>
struct CachedSite {
  HookPoint point;
  std::vector<Index> positions;  // resolved against the captured sequence
  Mat<Scalar> rows;              // one row per resolved position
};

template <typename Scalar>
struct ActivationCache {
  std::map<std::string, CachedSite<Scalar>> sites;

  const CachedSite<Scalar>& at(const std::string& key) const {
    const auto it = sites.find(key);
    if (it == sites.end()) throw InputError("activation cache has no entry for '" + key + "'");
    return it->second;
  }
};

template <typename Scalar>
struct Intervention {
  enum class Action { Patch, ProjectSwap, Scale };

  HookPoint at;
  Action action = Action::Patch;
  const ActivationCache<Scalar>* source = nullptr;  // Patch, ProjectSwap
  Vec<Scalar> direction;                            // ProjectSwap, unit norm
  Scalar alpha = Scalar(1);                         // Scale
};

namespace detail {

inline Index checked_position(int index, Index n, const std::string& what) {
  const Index resolved = index < 0 ? n + index : index;
  if (resolved < 0 || resolved >= n)
    throw InputError(what + ": position " + std::to_string(index) + " out of range for " +
                     std::to_string(n) + " tokens");
  return resolved;
}

// Positions a capture records. No position means the whole sequence.
inline std::vector<Index> capture_positions(const PositionSpec& p, Index n,
                                            const std::string& what) {
  switch (p.kind) {
    case PositionSpec::Kind::Default: {
      std::vector<Index> all(static_cast<size_t>(n));
      for (Index i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
      return all;
    }
    case PositionSpec::Kind::Absolute:
    case PositionSpec::Kind::FromRight:
      return {checked_position(p.index, n, what)};
    case PositionSpec::Kind::Slot:
      throw InputError(what + ": slot position '" + p.slot +
                       "' must be resolved against a pair first");
  }
  throw InvariantError("unreachable");
}

// The single position an edit lands on. No position means the final token.
inline Index edit_position(const PositionSpec& p, Index n, const std::string& what) {
  switch (p.kind) {
    case PositionSpec::Kind::Default:
      return n - 1;
    case PositionSpec::Kind::Absolute:
    case PositionSpec::Kind::FromRight:
      return checked_position(p.index, n, what);
    case PositionSpec::Kind::Slot:
      throw InputError(what + ": slot position '" + p.slot +
                       "' must be resolved against a pair first");
  }
  throw InvariantError("unreachable");
}

}  // namespace detail

// Runs the model once and records the requested activations. Cache keys are
// exactly the formatted hook points as requested.
template <typename Scalar>
ActivationCache<Scalar> capture(const Model<Scalar>& model, const std::vector<int>& tokens,
                                const std::vector<HookPoint>& points) {
  std::vector<TapKey> taps;
  taps.reserve(points.size());
  for (const auto& p : points) taps.push_back({p.kind, p.layer, p.head});
  std::sort(taps.begin(), taps.end());
  taps.erase(std::unique(taps.begin(), taps.end()), taps.end());

  RunOptions opts;
  opts.logits_all_positions = false;  // only the taps matter
  const RunResult<Scalar> run = run_model(model, tokens, taps, {}, opts);

  const Index n = static_cast<Index>(tokens.size());
  ActivationCache<Scalar> cache;
  for (const auto& p : points) {
    const std::string key = format_hookpoint(p);
    CachedSite<Scalar> site;
    site.point = p;
    site.positions = detail::capture_positions(p.position, n, "capture '" + key + "'");
    const Mat<Scalar>& full = run.taps.at({p.kind, p.layer, p.head});
    site.rows.resize(static_cast<Index>(site.positions.size()), full.cols());
    for (size_t i = 0; i < site.positions.size(); ++i)
      site.rows.row(static_cast<Index>(i)) = full.row(site.positions[i]);
    if (!cache.sites.emplace(key, std::move(site)).second)
      throw InputError("capture: hook point '" + key + "' requested twice");
  }
  return cache;
}

// Forward pass with each intervention applied at its site before downstream
// computation consumes the activation. Interventions must address distinct
// sites; composition at one site is rejected rather than silently ordered.
template <typename Scalar>
Mat<Scalar> run_with(const Model<Scalar>& model, const std::vector<int>& tokens,
                     const std::vector<Intervention<Scalar>>& interventions,
                     const RunOptions& opts = {}) {
  using Action = typename Intervention<Scalar>::Action;
  const Index n = static_cast<Index>(tokens.size());

  std::set<std::tuple<SiteKind, int, int>> sites;
  std::vector<SiteEdit<Scalar>> edits;
  for (const auto& iv : interventions) {
    const std::string key = format_hookpoint(iv.at);
    if (!sites.insert({iv.at.kind, iv.at.layer, iv.at.head}).second)
      throw InputError("two interventions address the site of '" + key +
                       "'; sites must be distinct");

    SiteEdit<Scalar> e;
    e.kind = iv.at.kind;
    e.layer = iv.at.layer;
    e.head = iv.at.head;

    const auto cached_rows = [&]() -> const CachedSite<Scalar>& {
      if (!iv.source) throw InputError("intervention at '" + key + "' has no source cache");
      const CachedSite<Scalar>& src = iv.source->at(key);
      if (src.rows.rows() != 1)
        throw InvariantError("cache entry '" + key + "' holds " + std::to_string(src.rows.rows()) +
                             " rows; an edit consumes exactly one");
      return src;
    };

    switch (iv.action) {
      case Action::Patch:
        e.action = SiteEdit<Scalar>::Action::Patch;
        e.positions = {detail::edit_position(iv.at.position, n, "patch '" + key + "'")};
        e.rows = cached_rows().rows;
        break;
      case Action::ProjectSwap: {
        e.action = SiteEdit<Scalar>::Action::ProjectSwap;
        e.positions = {detail::edit_position(iv.at.position, n, "projection swap '" + key + "'")};
        e.source_rows = cached_rows().rows;
        const double norm = static_cast<double>(iv.direction.norm());
        if (std::abs(norm - 1.0) > 1e-6)
          throw InvariantError("projection swap at '" + key +
                               "': direction must have unit norm (got " + std::to_string(norm) +
                               ")");
        e.direction = iv.direction;
        break;
      }
      case Action::Scale:
        e.action = SiteEdit<Scalar>::Action::Scale;
        e.alpha = iv.alpha;
        if (iv.at.position.kind != PositionSpec::Kind::Default)
          e.positions = {detail::edit_position(iv.at.position, n, "scale '" + key + "'")};
        break;
    }
    edits.push_back(std::move(e));
  }

  return run_model(model, tokens, {}, edits, opts).logits;
}

}  // namespace patchlab
