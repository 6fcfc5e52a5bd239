#pragma once

#include <string>
#include <vector>

#include "patchlab/metrics.hpp"

namespace patchlab {

// A rectangular layer x column grid of hook points, the unit a heatmap is
// computed over. Columns are either position specs at one site kind (for
// resid/attn/mlp sweeps over template slots) or attention heads sharing a
// single position (for per-head sweeps).
struct SweepGrid {
  SiteKind kind = SiteKind::ResidOut;
  int n_layers = 0;
  std::vector<std::string> labels;       // one per column
  std::vector<PositionSpec> positions;   // parallel to labels; unused for HeadOut
  PositionSpec head_position;            // shared by every head column

  int n_cols() const { return static_cast<int>(labels.size()); }
  int n_cells() const { return n_layers * n_cols(); }
  std::string col_axis() const { return kind == SiteKind::HeadOut ? "head" : "slot"; }
  HookPoint cell(int layer, int col) const;
};

// One column per alignment slot (each at that slot's last token), plus an
// optional trailing "last" column for the final position.
SweepGrid slot_grid(SiteKind kind, int n_layers, const std::vector<std::string>& slots,
                    bool with_last = true);

// One column per attention head, all evaluated at `position`.
SweepGrid head_grid(int n_layers, int n_heads, PositionSpec position = {});

// Work accounting for one sweep. A pair costs two clean forward passes when
// at least one cell resolves for it, plus two patched passes per evaluated
// (pair, cell) unit; skipped units cost nothing.
struct SweepStats {
  std::int64_t pairs = 0;             // pairs offered to the sweep
  std::int64_t pairs_run = 0;         // pairs with at least one evaluated cell
  std::int64_t cell_evaluations = 0;  // evaluated (pair, cell) units
  std::int64_t skipped = 0;           // units skipped for alignment reasons

  std::int64_t forward_passes() const { return 2 * pairs_run + 2 * cell_evaluations; }
};

// Evaluates every pair at every cell and assembles the mean-odds heatmap.
// Pairs whose positions cannot be resolved at a cell (missing slot, sides of
// different widths) are skipped there and show up in the skip counts. For
// ProjectSwap sweeps `directions` supplies one unit vector per cell, row-major
// over (layer, col). Results are independent of the thread count. When given,
// `stats` accumulates the work done (it is added to, so one instance can
// total several sweeps).
Heatmap run_sweep(const Model<double>& model, const std::vector<TokenizedPair>& pairs,
                  const SweepGrid& grid, SwapKind swap = SwapKind::Patch,
                  const std::vector<Vec<double>>* directions = nullptr, int threads = 1,
                  SweepStats* stats = nullptr);

}  // namespace patchlab
