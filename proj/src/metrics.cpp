#include "patchlab/metrics.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "patchlab/fsio.hpp"

namespace patchlab {

namespace {

using nlohmann::json;

double checked_lp(double v, const char* name) {
  if (std::isnan(v)) throw InputError(std::string("odds: field ") + name + " is unset");
  if (std::isinf(v))
    throw NumericsError(std::string("odds: zero probability in ") + name +
                        " (degenerate model output)");
  if (v > 0.0)
    throw InputError(std::string("odds: ") + name +
                     " is positive; expected a log probability");
  return v;
}

// Shortest decimal form that round-trips the double.
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

double odds_term(const PairLogProbs& p) {
  const double clean = checked_lp(p.yb_base, "yb_base") - checked_lp(p.yb_source, "yb_source");
  const double patched = checked_lp(p.yb_source_patched, "yb_source_patched") -
                         checked_lp(p.yb_base_patched, "yb_base_patched");
  return clean + patched;
}

double odds_star_term(const PairLogProbs& p) {
  if (!p.ys_base || !p.ys_base_patched)
    throw InputError("odds_star: the y_s log probabilities were not recorded");
  const double clean = checked_lp(p.yb_base, "yb_base") - checked_lp(*p.ys_base, "ys_base");
  const double patched = checked_lp(*p.ys_base_patched, "ys_base_patched") -
                         checked_lp(p.yb_base_patched, "yb_base_patched");
  return clean + patched;
}

namespace {

template <typename Term>
double mean_over(const std::vector<PairLogProbs>& set, Term term, const char* what) {
  if (set.empty()) throw InputError(std::string(what) + ": empty test set");
  double acc = 0.0;
  for (const PairLogProbs& p : set) acc += term(p);
  return acc / static_cast<double>(set.size());
}

}  // namespace

double odds(const std::vector<PairLogProbs>& set) { return mean_over(set, odds_term, "odds"); }

double odds_star(const std::vector<PairLogProbs>& set) {
  return mean_over(set, odds_star_term, "odds_star");
}

// ---------------------------------------------------------------------------
// Heatmaps

Heatmap assemble_heatmap(Index n_layers, std::vector<std::string> cols,
                         const std::vector<CellSamples>& cells, std::string col_axis) {
  if (n_layers < 1) throw InputError("heatmap: need at least one layer");
  if (cols.empty()) throw InputError("heatmap: need at least one column");
  if (cells.empty()) throw InputError("heatmap: empty sweep, nothing to assemble");

  const Index n_cols = static_cast<Index>(cols.size());
  Heatmap h;
  h.col_axis = std::move(col_axis);
  h.cols = std::move(cols);
  h.n_layers = n_layers;
  h.values = Mat<double>::Zero(n_layers, n_cols);
  h.counts = Mat<int>::Zero(n_layers, n_cols);
  h.skipped = Mat<int>::Constant(n_layers, n_cols, -1);  // -1 marks "not seen yet"

  int pairs_per_cell = -1;
  for (const CellSamples& cell : cells) {
    if (cell.layer < 0 || cell.layer >= n_layers || cell.col < 0 || cell.col >= n_cols)
      throw InputError("heatmap: cell (" + std::to_string(cell.layer) + ", " +
                       std::to_string(cell.col) + ") is outside the grid");
    if (cell.skipped < 0) throw InputError("heatmap: negative skip count");
    if (h.skipped(cell.layer, cell.col) >= 0)
      throw InputError("heatmap: duplicate samples for cell (" + std::to_string(cell.layer) +
                       ", " + std::to_string(cell.col) + ")");

    const int total = static_cast<int>(cell.odds_terms.size()) + cell.skipped;
    if (pairs_per_cell < 0) pairs_per_cell = total;
    if (total != pairs_per_cell)
      throw InputError("heatmap: ragged sweep; cell (" + std::to_string(cell.layer) + ", " +
                       std::to_string(cell.col) + ") accounts for " + std::to_string(total) +
                       " pairs, others for " + std::to_string(pairs_per_cell));

    double acc = 0.0;
    for (double term : cell.odds_terms) {
      if (!std::isfinite(term))
        throw NumericsError("heatmap: non-finite odds term at cell (" +
                            std::to_string(cell.layer) + ", " + std::to_string(cell.col) + ")");
      acc += term;
    }
    const int n = static_cast<int>(cell.odds_terms.size());
    h.values(cell.layer, cell.col) = n > 0 ? acc / n : 0.0;
    h.counts(cell.layer, cell.col) = n;
    h.skipped(cell.layer, cell.col) = cell.skipped;
  }

  for (Index l = 0; l < n_layers; ++l)
    for (Index c = 0; c < n_cols; ++c)
      if (h.skipped(l, c) < 0)
        throw InputError("heatmap: no samples for cell (" + std::to_string(l) + ", " +
                         std::to_string(c) + ")");
  return h;
}

std::string heatmap_to_csv(const Heatmap& h) {
  std::string out = "layer";
  for (const std::string& col : h.cols) {
    if (col.find_first_of(",\"\n") != std::string::npos)
      throw InputError("heatmap: column label '" + col + "' cannot appear in CSV");
    out += ',';
    out += col;
  }
  out += '\n';
  for (Index l = 0; l < h.n_layers; ++l) {
    out += std::to_string(l);
    for (Index c = 0; c < static_cast<Index>(h.cols.size()); ++c) {
      out += ',';
      out += fmt(h.values(l, c));
    }
    out += '\n';
  }
  return out;
}

std::string heatmap_sidecar_json(const Heatmap& h,
                                 const std::map<std::string, std::string>& metadata) {
  json counts = json::array();
  json skipped = json::array();
  for (Index l = 0; l < h.n_layers; ++l) {
    json crow = json::array();
    json srow = json::array();
    for (Index c = 0; c < static_cast<Index>(h.cols.size()); ++c) {
      crow.push_back(h.counts(l, c));
      srow.push_back(h.skipped(l, c));
    }
    counts.push_back(std::move(crow));
    skipped.push_back(std::move(srow));
  }
  const json j{{"row_axis", "layer"},     {"col_axis", h.col_axis},
               {"cols", h.cols},          {"n_layers", h.n_layers},
               {"counts", counts},        {"skipped", skipped},
               {"metadata", metadata}};
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Benchmark pairs

namespace {

json range_to_json(const TokenRange& r) {
  return json::array({static_cast<int>(r.begin), static_cast<int>(r.end)});
}

TokenRange range_from_json(const json& j, const char* field) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
    throw InputError(std::string("benchmark pair: ") + field + " must be a two-integer array");
  TokenRange r{j[0].get<Index>(), j[1].get<Index>()};
  if (r.begin < 0 || r.end < r.begin)
    throw InputError(std::string("benchmark pair: ") + field + " is not a valid span");
  return r;
}

const std::string& required_string(const json& j, const char* field) {
  const auto it = j.find(field);
  if (it == j.end() || !it->is_string())
    throw InputError(std::string("benchmark pair: missing or non-string field '") + field + "'");
  return it->get_ref<const std::string&>();
}

}  // namespace

std::string benchmark_pair_to_json_line(const BenchmarkPair& p) {
  json j{{"sentence_good", p.sentence_good},
         {"sentence_bad", p.sentence_bad},
         {"category", p.category}};
  if (p.region_good) j["region_good"] = range_to_json(*p.region_good);
  if (p.region_bad) j["region_bad"] = range_to_json(*p.region_bad);
  if (p.region_good.has_value() != p.region_bad.has_value())
    throw InvariantError("benchmark pair: region span present on only one side");
  return j.dump();
}

BenchmarkPair benchmark_pair_from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw InputError(std::string("benchmark pair line is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InputError("benchmark pair line must be a JSON object");

  BenchmarkPair p;
  p.sentence_good = required_string(j, "sentence_good");
  p.sentence_bad = required_string(j, "sentence_bad");
  p.category = required_string(j, "category");
  if (const auto it = j.find("region_good"); it != j.end())
    p.region_good = range_from_json(*it, "region_good");
  if (const auto it = j.find("region_bad"); it != j.end())
    p.region_bad = range_from_json(*it, "region_bad");
  if (p.region_good.has_value() != p.region_bad.has_value())
    throw InputError("benchmark pair: region span present on only one side");
  return p;
}

std::vector<BenchmarkPair> read_benchmark_pairs(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<BenchmarkPair> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(benchmark_pair_from_json_line(line));
    } catch (const InputError& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_benchmark_pairs(const std::string& path, const std::vector<BenchmarkPair>& pairs) {
  std::string text;
  for (const auto& p : pairs) {
    text += benchmark_pair_to_json_line(p);
    text += '\n';
  }
  write_text_file_atomic(path, text);
}

}  // namespace patchlab
