#include "patchlab/das.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "patchlab/fsio.hpp"
#include "patchlab/workpool.hpp"

namespace patchlab {

namespace {

using nlohmann::json;

void check_unit(const Vec<double>& a, const char* what) {
  if (a.size() == 0) throw InputError(std::string(what) + ": empty direction");
  if (std::abs(a.norm() - 1.0) > 1e-6)
    throw InputError(std::string(what) + ": direction must have unit norm, got " +
                     std::to_string(a.norm()));
}

struct PairSites {
  Index pos_base;
  Index pos_source;
  TapKey key;
};

PairSites resolve_sites(const TokenizedPair& tp, const HookPoint& at) {
  return {resolve_position(at.position, tp, PairSide::Base),
          resolve_position(at.position, tp, PairSide::Source),
          TapKey{at.kind, at.layer, at.head}};
}

double lp_at(const Mat<double>& logits, int token) {
  return logits(0, token) - log_sum_exp_row(logits.row(0));
}

const RunOptions kLastOnly{/*logits_all_positions=*/false};

}  // namespace

double das_loss(const Model<double>& model, const TokenizedPair& tp, const HookPoint& at,
                const Vec<double>& a) {
  check_unit(a, "das_loss");
  const PairSites s = resolve_sites(tp, at);

  const RunResult<double> clean_source =
      run_model(model, tp.source_tokens, {s.key}, {}, kLastOnly);

  SiteEdit<double> e;
  e.kind = at.kind;
  e.layer = at.layer;
  e.head = at.head;
  e.action = SiteEdit<double>::Action::ProjectSwap;
  e.positions = {s.pos_base};
  e.direction = a;
  e.source_rows = clean_source.taps.at(s.key).row(s.pos_source);

  const RunResult<double> swapped = run_model(model, tp.base_tokens, {}, {e}, kLastOnly);
  return -lp_at(swapped.logits, tp.y_source_id);
}

Vec<double> das_grad(const Model<double>& model, const std::vector<TokenizedPair>& batch,
                     const HookPoint& at, const Vec<double>& a, std::vector<double>* losses) {
  check_unit(a, "das_grad");
  if (batch.empty()) throw InputError("das_grad: empty batch");
  if (losses) losses->clear();

  Vec<double> acc = Vec<double>::Zero(a.size());
  for (const TokenizedPair& tp : batch) {
    const PairSites s = resolve_sites(tp, at);

    const RunResult<double> clean_source =
        run_model(model, tp.source_tokens, {s.key}, {}, kLastOnly);
    const RunResult<double> clean_base = run_model(model, tp.base_tokens, {s.key}, {}, kLastOnly);
    const Vec<double> f_s = clean_source.taps.at(s.key).row(s.pos_source).transpose();
    const Vec<double> f_b = clean_base.taps.at(s.key).row(s.pos_base).transpose();
    if (f_s.size() != a.size())
      throw InputError("das_grad: direction width " + std::to_string(a.size()) +
                       " does not match the site width " + std::to_string(f_s.size()));

    // The swapped activation, injected as the differentiable seed. Everything
    // upstream of the hook point is a constant as far as a is concerned.
    const Vec<double> f_swapped = das_apply(f_b, f_s, a);
    SiteEdit<double> seed;
    seed.kind = at.kind;
    seed.layer = at.layer;
    seed.head = at.head;
    seed.action = SiteEdit<double>::Action::Seed;
    seed.positions = {s.pos_base};
    seed.rows = f_swapped.transpose();

    SuffixTape<double> tape;
    const RunResult<double> run = run_model(model, tp.base_tokens, {}, {seed}, kLastOnly, &tape);
    set_loss(tape, t_neg_log_prob(&tape, run.logits_node, tp.y_source_id));
    if (losses) losses->push_back(tape.loss_value());

    const Vec<double> g = tape.seed_gradient().row(0).transpose();
    const Vec<double> delta = f_s - f_b;
    acc += g.dot(a) * delta + delta.dot(a) * g;
  }
  return acc / static_cast<double>(batch.size());
}

DasDirection train_direction(const Model<double>& model,
                             const std::vector<TokenizedPair>& train_pairs, const HookPoint& at,
                             const DasTrainConfig& cfg) {
  if (train_pairs.empty()) throw InputError("train_direction: no training pairs");
  if (cfg.steps < 0) throw InputError("train_direction: negative step count");
  if (cfg.batch_size < 1) throw InputError("train_direction: batch size must be positive");
  if (!(cfg.lr > 0.0)) throw InputError("train_direction: learning rate must be positive");
  if (cfg.warmup < 0.0 || cfg.warmup > 1.0)
    throw InputError("train_direction: warmup fraction must be in [0, 1]");

  const Index width = detail::site_width<double>(model.config, at.kind);
  Rng rng(cfg.seed);
  Vec<double> a = random_vector<double>(width, rng);
  a /= a.norm();

  DasDirection out;
  out.at = at;
  out.seed = cfg.seed;
  {
    std::set<std::string> names;
    for (const TokenizedPair& tp : train_pairs) names.insert(tp.pair.construction);
    out.constructions.assign(names.begin(), names.end());
  }

  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  Vec<double> m = Vec<double>::Zero(width);
  Vec<double> v = Vec<double>::Zero(width);
  const int warmup_steps = static_cast<int>(std::llround(cfg.warmup * cfg.steps));

  for (int t = 1; t <= cfg.steps; ++t) {
    std::vector<TokenizedPair> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i)
      batch.push_back(train_pairs[static_cast<size_t>(rng.below(train_pairs.size()))]);

    std::vector<double> losses;
    Vec<double> g;
    try {
      g = das_grad(model, batch, at, a, &losses);
    } catch (const NumericsError&) {
      // The engine flags non-finite activations before the loss comes back;
      // either way the step blew up.
      out.diverged = true;
      break;
    }
    double mean_loss = 0.0;
    for (double l : losses) mean_loss += l;
    mean_loss /= static_cast<double>(losses.size());
    if (!std::isfinite(mean_loss) || !g.allFinite()) {
      out.diverged = true;
      break;
    }
    out.loss_trace.push_back(mean_loss);

    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
    const Vec<double> m_hat = m / (1.0 - std::pow(kBeta1, t));
    const Vec<double> v_hat = v / (1.0 - std::pow(kBeta2, t));
    const double lr = t <= warmup_steps ? cfg.lr * t / warmup_steps : cfg.lr;
    const Vec<double> step =
        lr * (m_hat.array() / (v_hat.array().sqrt() + kEps)).matrix();

    const Vec<double> proposed = a - step;
    const double norm = proposed.norm();
    if (!std::isfinite(norm) || norm == 0.0) {
      out.diverged = true;
      break;
    }
    a = proposed / norm;
    out.steps = t;
  }

  out.a = a;
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

std::string direction_to_json_text(const DasDirection& d, const DasTrainConfig& cfg) {
  check_unit(d.a, "direction_to_json_text");
  std::vector<double> vec(d.a.data(), d.a.data() + d.a.size());
  const json j{{"hookpoint", format_hookpoint(d.at)},
               {"vector", vec},
               {"norm", d.a.norm()},
               {"config",
                {{"lr", cfg.lr},
                 {"warmup", cfg.warmup},
                 {"batch_size", cfg.batch_size},
                 {"steps", cfg.steps}}},
               {"seed", d.seed},
               {"loss_trace", d.loss_trace},
               {"constructions", d.constructions},
               {"steps_taken", d.steps},
               {"diverged", d.diverged}};
  return j.dump(2) + "\n";
}

DasDirection direction_from_json_text(const std::string& text, DasTrainConfig* cfg) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("direction file is not valid JSON: ") + e.what());
  }
  for (const char* field : {"hookpoint", "vector", "norm", "config", "seed", "loss_trace"})
    if (!j.contains(field))
      throw InputError(std::string("direction file: missing field '") + field + "'");

  DasDirection d;
  d.at = parse_hookpoint(j["hookpoint"].get<std::string>());
  const auto vec = j["vector"].get<std::vector<double>>();
  if (vec.empty()) throw InputError("direction file: empty vector");
  d.a = Eigen::Map<const Vec<double>>(vec.data(), static_cast<Index>(vec.size()));
  const double norm = j["norm"].get<double>();
  if (std::abs(norm - 1.0) > 1e-6 || std::abs(d.a.norm() - 1.0) > 1e-6)
    throw InputError("direction file: stored direction is not unit norm");
  d.seed = j["seed"].get<std::uint64_t>();
  d.loss_trace = j["loss_trace"].get<std::vector<double>>();
  if (j.contains("constructions"))
    d.constructions = j["constructions"].get<std::vector<std::string>>();
  if (j.contains("steps_taken")) d.steps = j["steps_taken"].get<int>();
  if (j.contains("diverged")) d.diverged = j["diverged"].get<bool>();
  if (cfg) {
    const json& c = j["config"];
    cfg->lr = c.at("lr").get<double>();
    cfg->warmup = c.at("warmup").get<double>();
    cfg->batch_size = c.at("batch_size").get<int>();
    cfg->steps = c.at("steps").get<int>();
    cfg->seed = d.seed;
  }
  return d;
}

void save_direction(const std::filesystem::path& path, const DasDirection& d,
                    const DasTrainConfig& cfg) {
  write_text_file_atomic(path, direction_to_json_text(d, cfg));
}

DasDirection load_direction(const std::filesystem::path& path, DasTrainConfig* cfg) {
  try {
    return direction_from_json_text(read_text_file(path), cfg);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Leave-one-out

namespace {

bool resolvable_at(const TokenizedPair& tp, const HookPoint& at) {
  try {
    resolve_position(at.position, tp, PairSide::Base);
    resolve_position(at.position, tp, PairSide::Source);
    return true;
  } catch (const AlignmentError&) {
    return false;
  }
}

std::vector<TokenizedPair> tokenize_all(const Tokenizer& tok,
                                        const std::vector<MinimalPair>& pairs,
                                        const std::string& construction) {
  std::vector<TokenizedPair> out;
  for (const MinimalPair& p : pairs) {
    if (p.construction != construction) continue;
    try {
      out.push_back(tokenize_pair(tok, p));
    } catch (const AlignmentError&) {
      // continuation not a single token under this tokenizer; dropped
    }
  }
  return out;
}

}  // namespace

std::vector<LooFold> leave_one_out(const Model<double>& model, const Tokenizer& tok,
                                   const DatasetSplit& split,
                                   const std::vector<std::string>& constructions,
                                   const SweepGrid& grid, const DasTrainConfig& cfg,
                                   int threads) {
  if (constructions.size() < 2)
    throw InputError("leave_one_out: need at least two constructions");
  {
    std::set<std::string> unique(constructions.begin(), constructions.end());
    if (unique.size() != constructions.size())
      throw InputError("leave_one_out: duplicate construction in the fold list");
  }

  struct Material {
    std::vector<TokenizedPair> train, test_id, test_ood;
  };
  std::map<std::string, Material> material;
  for (const std::string& c : constructions) {
    Material m;
    m.train = tokenize_all(tok, split.train, c);
    m.test_id = tokenize_all(tok, split.test_id, c);
    m.test_ood = tokenize_all(tok, split.test_ood, c);
    if (m.train.empty() || m.test_id.empty() || m.test_ood.empty())
      throw InputError("leave_one_out: construction '" + c +
                       "' has no usable pairs in one of the splits");
    material.emplace(c, std::move(m));
  }

  std::vector<LooFold> folds;
  for (const std::string& held_out : constructions) {
    LooFold fold;
    fold.held_out = held_out;
    std::vector<TokenizedPair> train;
    for (const std::string& c : constructions) {
      if (c == held_out) continue;
      fold.trained_on.push_back(c);
      const auto& t = material.at(c).train;
      train.insert(train.end(), t.begin(), t.end());
    }
    std::sort(fold.trained_on.begin(), fold.trained_on.end());

    fold.directions.resize(static_cast<size_t>(grid.n_cells()));
    parallel_for(static_cast<size_t>(grid.n_cells()), threads, [&](size_t cell) {
      const int layer = static_cast<int>(cell) / grid.n_cols();
      const int col = static_cast<int>(cell) % grid.n_cols();
      const HookPoint at = grid.cell(layer, col);

      std::vector<TokenizedPair> usable;
      for (const TokenizedPair& tp : train)
        if (resolvable_at(tp, at)) usable.push_back(tp);
      if (usable.empty())
        throw InputError("leave_one_out: no training pair resolves at " + format_hookpoint(at));

      DasTrainConfig cell_cfg = cfg;
      cell_cfg.seed = cfg.seed ^ fnv1a64(held_out + "|" + format_hookpoint(at));
      fold.directions[cell] = train_direction(model, usable, at, cell_cfg);
    });

    std::vector<Vec<double>> directions;
    directions.reserve(fold.directions.size());
    for (const DasDirection& d : fold.directions) directions.push_back(d.a);

    fold.id = run_sweep(model, material.at(held_out).test_id, grid, SwapKind::ProjectSwap,
                        &directions, threads);
    fold.ood = run_sweep(model, material.at(held_out).test_ood, grid, SwapKind::ProjectSwap,
                         &directions, threads);
    folds.push_back(std::move(fold));
  }
  return folds;
}

}  // namespace patchlab
