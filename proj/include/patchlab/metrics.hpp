#pragma once

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "patchlab/forward.hpp"
#include "patchlab/intervene.hpp"
#include "patchlab/pairs.hpp"
#include "patchlab/tokenizer.hpp"

namespace patchlab {

// Everything below works in natural-log space. Probabilities never appear as
// raw values; a "log prob" is logit(y) - logsumexp(row) accumulated in double,
// so products/ratios of probabilities become sums/differences and tiny
// next-token probabilities stay representable.

// The six quantities one base/source pair can contribute. Clean fields come
// from unedited runs; "patched" fields come from a run whose activation at the
// evaluated site was taken from the other prompt. The y_s fields are only
// needed for odds_star and may be left unset when a sweep computes plain odds.
struct PairLogProbs {
  static constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

  double yb_base = kUnset;    // log p(y_b | base)
  double yb_source = kUnset;  // log p(y_b | source)

  double yb_source_patched = kUnset;  // log p(y_b | source run, base activation)
  double yb_base_patched = kUnset;    // log p(y_b | base run, source activation)

  std::optional<double> ys_base;          // log p(y_s | base)
  std::optional<double> ys_base_patched;  // log p(y_s | base run, source activation)
};

// One pair's log-odds term: how much the interchange moved the model's
// preference for y_b back toward the base prompt's behaviour. Zero when the
// edit did nothing, 2 * (yb_base - yb_source) when it swapped behaviour
// completely.
double odds_term(const PairLogProbs& p);

// The y_s-indexed variant: measures the preference shift from y_b to y_s on
// the base prompt alone. Requires the optional fields.
double odds_star_term(const PairLogProbs& p);

// Means over a test set; throws InputError on an empty set.
double odds(const std::vector<PairLogProbs>& set);
double odds_star(const std::vector<PairLogProbs>& set);

enum class SwapKind { Patch, ProjectSwap };

// Runs the four forward passes for one pair at one site and fills every field
// of PairLogProbs (the y_s entries come for free from the same logits rows).
// `direction` must be a unit vector of the site's width for ProjectSwap and is
// ignored for Patch. Position resolution follows the hook's position spec on
// each side independently; an unresolvable slot raises AlignmentError.
template <typename Scalar>
PairLogProbs evaluate_pair(const Model<Scalar>& model, const TokenizedPair& tp,
                           const HookPoint& at, SwapKind swap = SwapKind::Patch,
                           const Vec<Scalar>* direction = nullptr) {
  if (swap == SwapKind::ProjectSwap && direction == nullptr)
    throw InputError("evaluate_pair: ProjectSwap needs a direction vector");
  const Index pos_base = resolve_position(at.position, tp, PairSide::Base);
  const Index pos_source = resolve_position(at.position, tp, PairSide::Source);
  const TapKey key{at.kind, at.layer, at.head};
  const RunOptions last_only{/*logits_all_positions=*/false};

  const RunResult<Scalar> clean_base = run_model(model, tp.base_tokens, {key}, {}, last_only);
  const RunResult<Scalar> clean_source = run_model(model, tp.source_tokens, {key}, {}, last_only);

  auto swap_edit = [&](const RunResult<Scalar>& donor, Index donor_pos, Index target_pos) {
    SiteEdit<Scalar> e;
    e.kind = at.kind;
    e.layer = at.layer;
    e.head = at.head;
    e.positions = {target_pos};
    if (swap == SwapKind::Patch) {
      e.action = SiteEdit<Scalar>::Action::Patch;
      e.rows = donor.taps.at(key).row(donor_pos);
    } else {
      e.action = SiteEdit<Scalar>::Action::ProjectSwap;
      e.direction = *direction;
      e.source_rows = donor.taps.at(key).row(donor_pos);
    }
    return e;
  };

  const RunResult<Scalar> patched_source = run_model(
      model, tp.source_tokens, {}, {swap_edit(clean_base, pos_base, pos_source)}, last_only);
  const RunResult<Scalar> patched_base = run_model(
      model, tp.base_tokens, {}, {swap_edit(clean_source, pos_source, pos_base)}, last_only);

  auto lp = [](const RunResult<Scalar>& r, int token) {
    const auto row = r.logits.row(0);
    return static_cast<double>(row(token)) - log_sum_exp_row(row);
  };

  PairLogProbs out;
  out.yb_base = lp(clean_base, tp.y_base_id);
  out.yb_source = lp(clean_source, tp.y_base_id);
  out.yb_source_patched = lp(patched_source, tp.y_base_id);
  out.yb_base_patched = lp(patched_base, tp.y_base_id);
  out.ys_base = lp(clean_base, tp.y_source_id);
  out.ys_base_patched = lp(patched_base, tp.y_source_id);
  return out;
}

// ---------------------------------------------------------------------------
// Heatmaps

// Per-pair odds terms collected at one grid cell. `skipped` counts pairs that
// could not be evaluated there (slot missing or misaligned); they are recorded
// instead of contributing a fake zero.
struct CellSamples {
  int layer = 0;
  int col = 0;  // index into Heatmap::cols
  std::vector<double> odds_terms;
  int skipped = 0;
};

struct Heatmap {
  std::string col_axis;           // "slot" or "head"
  std::vector<std::string> cols;  // column labels, left to right
  Index n_layers = 0;
  Mat<double> values;  // n_layers x cols.size(); mean odds term, 0 when count is 0
  Mat<int> counts;     // pairs behind each mean
  Mat<int> skipped;    // pairs that produced no value at that cell
};

// Builds the grid from per-cell samples. Exactly one CellSamples per
// (layer, col) must be present, and every cell must account for the same
// number of pairs (evaluated + skipped); anything else is an error rather
// than a silently lopsided map.
Heatmap assemble_heatmap(Index n_layers, std::vector<std::string> cols,
                         const std::vector<CellSamples>& cells, std::string col_axis = "slot");

// layer,<col>,... header, one row per layer, full-precision values.
std::string heatmap_to_csv(const Heatmap& h);

// Counts, skips, axis labels and caller-supplied run metadata; everything the
// CSV leaves out.
std::string heatmap_sidecar_json(const Heatmap& h,
                                 const std::map<std::string, std::string>& metadata = {});

// ---------------------------------------------------------------------------
// Minimal-pair benchmark

struct BenchmarkPair {
  std::string sentence_good;
  std::string sentence_bad;
  std::optional<TokenRange> region_good;  // token index span into each sentence's
  std::optional<TokenRange> region_bad;   // own tokenization; used by Region mode
  std::string category;
};

std::string benchmark_pair_to_json_line(const BenchmarkPair& p);
BenchmarkPair benchmark_pair_from_json_line(const std::string& line);
std::vector<BenchmarkPair> read_benchmark_pairs(const std::string& path);
void write_benchmark_pairs(const std::string& path, const std::vector<BenchmarkPair>& pairs);

enum class BenchmarkMode { Whole, Region };

struct CategoryScore {
  int correct = 0;
  int scored = 0;
  int filtered = 0;
};

struct BenchmarkResult {
  double accuracy = 0.0;  // correct / scored
  int correct = 0;
  int scored = 0;
  int filtered = 0;  // whole mode: pairs dropped for unequal token counts
  std::map<std::string, CategoryScore> by_category;
};

namespace detail {

// Sum of next-token log probs for tokens[from, to); logits row t predicts
// token t+1, so `from` must be at least 1.
template <typename Scalar>
double span_logprob(const Mat<Scalar>& logits, const std::vector<int>& tokens, Index from,
                    Index to) {
  double acc = 0.0;
  for (Index t = from; t < to; ++t) {
    const auto row = logits.row(t - 1);
    acc += static_cast<double>(row(tokens[static_cast<size_t>(t)])) - log_sum_exp_row(row);
  }
  return acc;
}

}  // namespace detail

// Scores each pair by summed log probability (whole sentence, or just the
// region span) and counts a pair correct when the grammatical side wins
// strictly; ties count as failures. Whole mode drops pairs whose sides
// tokenize to different lengths and reports how many. Any edits are applied
// to both sides of every pair, unchanged.
template <typename Scalar>
BenchmarkResult benchmark_accuracy(const Model<Scalar>& model, const Tokenizer& tok,
                                   const std::vector<BenchmarkPair>& pairs, BenchmarkMode mode,
                                   const std::vector<SiteEdit<Scalar>>& edits = {}) {
  if (pairs.empty()) throw InputError("benchmark_accuracy: empty pair list");

  auto score = [&](const std::vector<int>& tokens, const std::optional<TokenRange>& region) {
    const Index n = static_cast<Index>(tokens.size());
    if (n < 2) throw InputError("benchmark_accuracy: sentence too short to score");
    Index from = 1, to = n;
    if (mode == BenchmarkMode::Region) {
      if (!region)
        throw InputError("benchmark_accuracy: region mode but pair has no region span");
      from = region->begin;
      to = region->end;
      if (from < 1 || to > n || from >= to)
        throw InputError("benchmark_accuracy: region span [" + std::to_string(from) + ", " +
                         std::to_string(to) + ") out of bounds for " + std::to_string(n) +
                         " tokens");
    }
    const RunResult<Scalar> run = run_model(model, tokens, {}, edits);
    return detail::span_logprob(run.logits, tokens, from, to);
  };

  BenchmarkResult result;
  for (const BenchmarkPair& p : pairs) {
    CategoryScore& cat = result.by_category[p.category];
    const std::vector<int> good_tokens = tok.encode(p.sentence_good);
    const std::vector<int> bad_tokens = tok.encode(p.sentence_bad);
    if (mode == BenchmarkMode::Whole && good_tokens.size() != bad_tokens.size()) {
      ++cat.filtered;
      ++result.filtered;
      continue;
    }
    const double good = score(good_tokens, p.region_good);
    const double bad = score(bad_tokens, p.region_bad);
    ++cat.scored;
    ++result.scored;
    if (good > bad) {
      ++cat.correct;
      ++result.correct;
    }
  }
  if (result.scored == 0)
    throw InputError("benchmark_accuracy: no scorable pairs (all filtered)");
  result.accuracy = static_cast<double>(result.correct) / static_cast<double>(result.scored);
  return result;
}

}  // namespace patchlab
