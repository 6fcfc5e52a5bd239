#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "patchlab/datagen.hpp"
#include "patchlab/sweep.hpp"

namespace patchlab {

struct DasTrainConfig {
  double lr = 5e-3;
  double warmup = 0.1;  // fraction of the steps spent ramping the lr linearly from zero
  int batch_size = 4;
  int steps = 100;
  std::uint64_t seed = 2024;
};

// A trained one-dimensional intervention direction, tied to the hook point it
// was learned at.
struct DasDirection {
  HookPoint at;
  Vec<double> a;  // unit norm within 1e-6

  std::vector<std::string> constructions;  // training material, sorted unique
  int steps = 0;                           // optimizer steps actually taken
  std::uint64_t seed = 0;
  std::vector<double> loss_trace;  // mean batch loss before each step
  bool diverged = false;           // loss went non-finite; trace stops there
};

// -log p(y_s | base run with the a-projection swapped to the source's value
// at the hook point). The donor activation comes from a clean source run.
double das_loss(const Model<double>& model, const TokenizedPair& tp, const HookPoint& at,
                const Vec<double>& a);

// Mean over the batch of dL/da. Only the base run is differentiated: the
// donor value f(s) is captured once and treated as a constant, the edited
// activation is injected as a tape seed, and the suffix gradient g = dL/df
// at the hook point turns into
//   dL/da = <g, a> (f(s) - f(b)) + <f(s) - f(b), a> g.
// When `losses` is given it receives one loss value per batch item.
Vec<double> das_grad(const Model<double>& model, const std::vector<TokenizedPair>& batch,
                     const HookPoint& at, const Vec<double>& a,
                     std::vector<double>* losses = nullptr);

// Adam with the usual defaults under a linear-warmup-then-constant schedule;
// the direction is renormalized to unit length after every step. Batches are
// drawn from `train_pairs` with replacement under cfg.seed, so reruns are
// bit-identical. A non-finite loss stops training early with `diverged` set
// and the trace truncated at the last finite step.
DasDirection train_direction(const Model<double>& model,
                             const std::vector<TokenizedPair>& train_pairs, const HookPoint& at,
                             const DasTrainConfig& cfg = {});

std::string direction_to_json_text(const DasDirection& d, const DasTrainConfig& cfg);
DasDirection direction_from_json_text(const std::string& text, DasTrainConfig* cfg = nullptr);
void save_direction(const std::filesystem::path& path, const DasDirection& d,
                    const DasTrainConfig& cfg);
DasDirection load_direction(const std::filesystem::path& path, DasTrainConfig* cfg = nullptr);

// One held-out fold of the cross-construction evaluation: directions trained
// per grid cell on every other construction, then scored on the held-out
// construction's test sets.
struct LooFold {
  std::string held_out;
  std::vector<std::string> trained_on;     // the other constructions, sorted
  std::vector<DasDirection> directions;    // row-major over (layer, col)
  Heatmap id;                              // held-out in-distribution test set
  Heatmap ood;                             // held-out out-of-distribution test set
};

// Trains and evaluates every fold. Pairs whose outputs do not tokenize to a
// single continuation token are dropped up front; a construction whose train
// or test material vanishes entirely is an error. Each cell's training seed
// is derived from cfg.seed, the fold and the hook point, so folds do not
// share initializations.
std::vector<LooFold> leave_one_out(const Model<double>& model, const Tokenizer& tok,
                                   const DatasetSplit& split,
                                   const std::vector<std::string>& constructions,
                                   const SweepGrid& grid, const DasTrainConfig& cfg = {},
                                   int threads = 1);

}  // namespace patchlab
