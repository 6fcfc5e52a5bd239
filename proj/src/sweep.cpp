#include "patchlab/sweep.hpp"

#include <algorithm>
#include <optional>

#include "patchlab/workpool.hpp"

namespace patchlab {

HookPoint SweepGrid::cell(int layer, int col) const {
  if (layer < 0 || layer >= n_layers || col < 0 || col >= n_cols())
    throw InputError("sweep grid: cell (" + std::to_string(layer) + ", " + std::to_string(col) +
                     ") is outside the grid");
  HookPoint hp;
  hp.kind = kind;
  hp.layer = layer;
  if (kind == SiteKind::HeadOut) {
    hp.head = col;
    hp.position = head_position;
  } else {
    hp.position = positions[static_cast<size_t>(col)];
  }
  return hp;
}

SweepGrid slot_grid(SiteKind kind, int n_layers, const std::vector<std::string>& slots,
                    bool with_last) {
  if (kind == SiteKind::HeadOut)
    throw InputError("sweep grid: head sweeps use head_grid, not slot columns");
  if (n_layers < 1) throw InputError("sweep grid: need at least one layer");
  if (slots.empty() && !with_last) throw InputError("sweep grid: no columns");
  SweepGrid g;
  g.kind = kind;
  g.n_layers = n_layers;
  for (const std::string& slot : slots) {
    g.labels.push_back(slot);
    g.positions.push_back(PositionSpec::at_slot(slot));
  }
  if (with_last) {
    g.labels.push_back("last");
    g.positions.push_back(PositionSpec{});
  }
  for (size_t i = 0; i + 1 < g.labels.size(); ++i)
    for (size_t k = i + 1; k < g.labels.size(); ++k)
      if (g.labels[i] == g.labels[k])
        throw InputError("sweep grid: duplicate column label '" + g.labels[i] + "'");
  return g;
}

SweepGrid head_grid(int n_layers, int n_heads, PositionSpec position) {
  if (n_layers < 1 || n_heads < 1) throw InputError("sweep grid: empty head grid");
  SweepGrid g;
  g.kind = SiteKind::HeadOut;
  g.n_layers = n_layers;
  g.head_position = position;
  for (int h = 0; h < n_heads; ++h) g.labels.push_back(std::to_string(h));
  return g;
}

Heatmap run_sweep(const Model<double>& model, const std::vector<TokenizedPair>& pairs,
                  const SweepGrid& grid, SwapKind swap,
                  const std::vector<Vec<double>>* directions, int threads, SweepStats* stats) {
  if (grid.n_layers < 1 || grid.n_cols() < 1) throw InputError("sweep: empty grid");
  if (pairs.empty()) throw InputError("sweep: no pairs to evaluate");
  const int n_cells = grid.n_cells();
  if (swap == SwapKind::ProjectSwap) {
    if (!directions || static_cast<int>(directions->size()) != n_cells)
      throw InputError("sweep: ProjectSwap needs one direction per grid cell");
  }

  // One result slot per (pair, cell); workers never share slots, so the
  // aggregation below is deterministic for any thread count.
  std::vector<std::vector<std::optional<double>>> terms(pairs.size());

  parallel_for(pairs.size(), threads, [&](size_t pi) {
    const TokenizedPair& tp = pairs[pi];
    auto& row = terms[pi];
    row.assign(static_cast<size_t>(n_cells), std::nullopt);

    struct Live {
      int cell;
      HookPoint at;
      Index pos_base, pos_source;
    };
    std::vector<Live> live;
    std::vector<TapKey> taps;
    for (int l = 0; l < grid.n_layers; ++l) {
      for (int c = 0; c < grid.n_cols(); ++c) {
        const HookPoint hp = grid.cell(l, c);
        try {
          const Index pb = resolve_position(hp.position, tp, PairSide::Base);
          const Index ps = resolve_position(hp.position, tp, PairSide::Source);
          live.push_back({l * grid.n_cols() + c, hp, pb, ps});
          taps.push_back({hp.kind, hp.layer, hp.head});
        } catch (const AlignmentError&) {
          // unresolvable here; stays a skip
        }
      }
    }
    if (live.empty()) return;
    std::sort(taps.begin(), taps.end());
    taps.erase(std::unique(taps.begin(), taps.end()), taps.end());

    const RunOptions last_only{/*logits_all_positions=*/false};
    const RunResult<double> clean_base = run_model(model, tp.base_tokens, taps, {}, last_only);
    const RunResult<double> clean_source =
        run_model(model, tp.source_tokens, taps, {}, last_only);
    auto lp = [](const RunResult<double>& r, int token) {
      return r.logits(0, token) - log_sum_exp_row(r.logits.row(0));
    };

    PairLogProbs shared;
    shared.yb_base = lp(clean_base, tp.y_base_id);
    shared.yb_source = lp(clean_source, tp.y_base_id);

    for (const Live& cell : live) {
      const TapKey key{cell.at.kind, cell.at.layer, cell.at.head};
      auto swap_edit = [&](const RunResult<double>& donor, Index donor_pos, Index target_pos) {
        SiteEdit<double> e;
        e.kind = cell.at.kind;
        e.layer = cell.at.layer;
        e.head = cell.at.head;
        e.positions = {target_pos};
        if (swap == SwapKind::Patch) {
          e.action = SiteEdit<double>::Action::Patch;
          e.rows = donor.taps.at(key).row(donor_pos);
        } else {
          e.action = SiteEdit<double>::Action::ProjectSwap;
          e.direction = (*directions)[static_cast<size_t>(cell.cell)];
          e.source_rows = donor.taps.at(key).row(donor_pos);
        }
        return e;
      };

      const RunResult<double> patched_source = run_model(
          model, tp.source_tokens, {},
          {swap_edit(clean_base, cell.pos_base, cell.pos_source)}, last_only);
      const RunResult<double> patched_base = run_model(
          model, tp.base_tokens, {},
          {swap_edit(clean_source, cell.pos_source, cell.pos_base)}, last_only);

      PairLogProbs p = shared;
      p.yb_source_patched = lp(patched_source, tp.y_base_id);
      p.yb_base_patched = lp(patched_base, tp.y_base_id);
      row[static_cast<size_t>(cell.cell)] = odds_term(p);
    }
  });

  std::vector<CellSamples> cells(static_cast<size_t>(n_cells));
  for (int l = 0; l < grid.n_layers; ++l)
    for (int c = 0; c < grid.n_cols(); ++c) {
      CellSamples& cell = cells[static_cast<size_t>(l * grid.n_cols() + c)];
      cell.layer = l;
      cell.col = c;
    }
  for (const auto& row : terms) {
    int evaluated = 0;
    for (int i = 0; i < n_cells; ++i) {
      if (row[static_cast<size_t>(i)]) {
        cells[static_cast<size_t>(i)].odds_terms.push_back(*row[static_cast<size_t>(i)]);
        ++evaluated;
      } else {
        ++cells[static_cast<size_t>(i)].skipped;
      }
    }
    if (stats) {
      ++stats->pairs;
      if (evaluated > 0) ++stats->pairs_run;
      stats->cell_evaluations += evaluated;
      stats->skipped += n_cells - evaluated;
    }
  }
  return assemble_heatmap(grid.n_layers, grid.labels, cells, grid.col_axis());
}

}  // namespace patchlab
