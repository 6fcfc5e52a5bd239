#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchlab/datagen.hpp"
#include "patchlab/fixture.hpp"
#include "patchlab/fsio.hpp"
#include "patchlab/metrics.hpp"
#include "patchlab/model.hpp"

using namespace patchlab;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  Model<double> model;
  Tokenizer tok;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    const fs::path dir = fs::temp_directory_path() / "patchlab_metrics_tests";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const ModelConfig cfg = write_tiny_model(dir);
    return Fixture{load_model<double>(dir / "model.safetensors", cfg),
                   Tokenizer::load(dir / "vocab.json", dir / "merges.txt")};
  }();
  return f;
}

PairLogProbs from_probs(double yb_b, double yb_s, double yb_s_patched, double yb_b_patched) {
  PairLogProbs p;
  p.yb_base = std::log(yb_b);
  p.yb_source = std::log(yb_s);
  p.yb_source_patched = std::log(yb_s_patched);
  p.yb_base_patched = std::log(yb_b_patched);
  return p;
}

PairLogProbs random_lp(Rng& rng, bool with_star = true) {
  auto draw = [&] { return -(4.0 * rng.uniform() + 0.01); };
  PairLogProbs p;
  p.yb_base = draw();
  p.yb_source = draw();
  p.yb_source_patched = draw();
  p.yb_base_patched = draw();
  if (with_star) {
    p.ys_base = draw();
    p.ys_base_patched = draw();
  }
  return p;
}

MinimalPair swapped(const MinimalPair& p) {
  MinimalPair s = p;
  std::swap(s.base, s.source);
  std::swap(s.y_base, s.y_source);
  std::swap(s.base_slots, s.source_slots);
  return s;
}

}  // namespace

TEST_CASE("odds matches the worked example") {
  // Clean 0.8 vs 0.2; the interchange moves the intervened runs to 0.6 vs
  // 0.4. (0.8/0.2) * (0.6/0.4) = 6.
  const PairLogProbs p = from_probs(0.8, 0.2, 0.6, 0.4);
  CHECK(odds_term(p) == doctest::Approx(std::log(6.0)).epsilon(1e-12));
  CHECK(odds({p}) == doctest::Approx(std::log(6.0)).epsilon(1e-12));
  CHECK(odds({p, p, p}) == doctest::Approx(std::log(6.0)).epsilon(1e-12));
}

TEST_CASE("odds star matches the worked example") {
  // On the base prompt: clean 0.8 vs 0.1, intervened 0.3 vs 0.6.
  // (0.8/0.1) * (0.6/0.3) = 16.
  PairLogProbs p;
  p.yb_base = std::log(0.8);
  p.ys_base = std::log(0.1);
  p.yb_base_patched = std::log(0.3);
  p.ys_base_patched = std::log(0.6);
  // Fields odds_star does not read; filled so validation passes elsewhere.
  p.yb_source = std::log(0.5);
  p.yb_source_patched = std::log(0.5);
  CHECK(odds_star_term(p) == doctest::Approx(std::log(16.0)).epsilon(1e-12));
  CHECK(odds_star({p}) == doctest::Approx(std::log(16.0)).epsilon(1e-12));
}

TEST_CASE("a null intervention scores exactly zero") {
  Rng rng(41);
  for (int i = 0; i < 200; ++i) {
    PairLogProbs p = random_lp(rng);
    // The edit changed nothing: intervened runs equal the clean runs.
    p.yb_source_patched = p.yb_source;
    p.yb_base_patched = p.yb_base;
    p.ys_base_patched = p.ys_base;
    CHECK(odds_term(p) == 0.0);
    CHECK(odds_star_term(p) == 0.0);
  }
}

TEST_CASE("a total swap doubles the clean log ratio") {
  Rng rng(42);
  std::vector<PairLogProbs> set;
  double clean_sum = 0.0;
  for (int i = 0; i < 100; ++i) {
    PairLogProbs p = random_lp(rng, false);
    // The intervened run behaves exactly like the donor prompt.
    p.yb_source_patched = p.yb_base;
    p.yb_base_patched = p.yb_source;
    CHECK(odds_term(p) == 2.0 * (p.yb_base - p.yb_source));
    clean_sum += p.yb_base - p.yb_source;
    set.push_back(p);
  }
  CHECK(odds(set) == doctest::Approx(2.0 * clean_sum / 100.0).epsilon(1e-12));
}

TEST_CASE("degenerate probabilities are rejected") {
  const PairLogProbs good = from_probs(0.8, 0.2, 0.6, 0.4);

  PairLogProbs unset = good;
  unset.yb_source_patched = PairLogProbs::kUnset;
  CHECK_THROWS_AS(odds_term(unset), InputError);

  PairLogProbs zero_prob = good;
  zero_prob.yb_base_patched = -std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(odds_term(zero_prob), NumericsError);

  PairLogProbs raw_prob = good;
  raw_prob.yb_base = 0.8;  // forgot the log
  CHECK_THROWS_AS(odds_term(raw_prob), InputError);

  CHECK_THROWS_AS(odds({}), InputError);
  CHECK_THROWS_AS(odds_star({}), InputError);

  PairLogProbs no_star = good;
  CHECK_THROWS_AS(odds_star_term(no_star), InputError);
}

TEST_CASE("odds over a symmetric pair equals odds star over the same pair") {
  // Evaluating a pair together with its base/source-swapped twin makes the
  // two metrics read the same eight probabilities, just grouped differently,
  // so their means must agree.
  Rng rng(43);
  for (int i = 0; i < 1500; ++i) {
    auto draw = [&] { return -(5.0 * rng.uniform() + 0.001); };
    const double yb_b = draw(), ys_b = draw(), yb_s = draw(), ys_s = draw();
    const double yb_bs = draw(), ys_bs = draw();  // base run, source activation
    const double yb_sb = draw(), ys_sb = draw();  // source run, base activation

    PairLogProbs fwd;
    fwd.yb_base = yb_b;
    fwd.yb_source = yb_s;
    fwd.yb_source_patched = yb_sb;
    fwd.yb_base_patched = yb_bs;
    fwd.ys_base = ys_b;
    fwd.ys_base_patched = ys_bs;

    PairLogProbs rev;  // the same runs with the roles of the prompts swapped
    rev.yb_base = ys_s;
    rev.yb_source = ys_b;
    rev.yb_source_patched = ys_bs;
    rev.yb_base_patched = ys_sb;
    rev.ys_base = yb_s;
    rev.ys_base_patched = yb_sb;

    const std::vector<PairLogProbs> both{fwd, rev};
    CHECK(odds(both) == doctest::Approx(odds_star(both)).epsilon(1e-9));
    CHECK(std::abs(odds(both) - odds_star(both)) < 1e-9);
  }
}

TEST_CASE("odds does not depend on test set order") {
  Rng rng(44);
  std::vector<PairLogProbs> set;
  for (int i = 0; i < 64; ++i) set.push_back(random_lp(rng));
  const double before = odds(set);
  const double before_star = odds_star(set);
  for (size_t i = set.size(); i > 1; --i) std::swap(set[i - 1], set[rng.below(i)]);
  CHECK(odds(set) == doctest::Approx(before).epsilon(1e-12));
  CHECK(odds_star(set) == doctest::Approx(before_star).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// Model-driven checks

TEST_CASE("patching a prompt with its own activation is a null intervention") {
  const Fixture& f = fixture();
  MinimalPair row = table_row_example("DNeg");
  row.source = row.base;  // identical prompts: the swap writes back the same value
  row.source_slots = row.base_slots;
  const TokenizedPair tp = tokenize_pair(f.tok, row);

  for (const char* site : {"resid.0", "attn.1", "mlp.0", "head.1.0"}) {
    HookPoint hp = parse_hookpoint(site);
    const PairLogProbs p = evaluate_pair(f.model, tp, hp);
    CAPTURE(site);
    CHECK(odds_term(p) == 0.0);
    CHECK(odds_star_term(p) == 0.0);
  }

  // Same story for a projection swap: the donor component equals the one
  // already there.
  Rng rng(7);
  Vec<double> dir = random_vector<double>(f.model.config.d_model, rng);
  dir /= dir.norm();
  const HookPoint hp = parse_hookpoint("resid.1");
  const PairLogProbs p = evaluate_pair(f.model, tp, hp, SwapKind::ProjectSwap, &dir);
  CHECK(std::abs(odds_term(p)) < 1e-12);
  CHECK(std::abs(odds_star_term(p)) < 1e-12);
}

TEST_CASE("patching the final residual position swaps behaviour completely") {
  const Fixture& f = fixture();
  const TokenizedPair tp = tokenize_pair(f.tok, table_row_example("DNeg"));
  const int last = f.model.config.n_layers - 1;
  const HookPoint hp = parse_hookpoint("resid." + std::to_string(last));

  const PairLogProbs p = evaluate_pair(f.model, tp, hp);
  // Nothing downstream of the final residual row distinguishes the prompts,
  // so the intervened probabilities are the donor prompt's own.
  CHECK(odds_term(p) == doctest::Approx(2.0 * (p.yb_base - p.yb_source)).epsilon(1e-12));
}

TEST_CASE("symmetric pairs agree across the two metrics on real runs") {
  const Fixture& f = fixture();
  const MinimalPair row = table_row_example("DNeg");
  const TokenizedPair fwd = tokenize_pair(f.tok, row);
  const TokenizedPair rev = tokenize_pair(f.tok, swapped(row));

  for (const char* site : {"attn.0", "resid.0", "head.1.1", "mlp.1"}) {
    const HookPoint hp = parse_hookpoint(site);
    const std::vector<PairLogProbs> both{evaluate_pair(f.model, fwd, hp),
                                         evaluate_pair(f.model, rev, hp)};
    CAPTURE(site);
    CHECK(std::abs(odds(both) - odds_star(both)) < 1e-9);
    // With a single unswapped pair the two metrics measure different things.
    CHECK(odds({both[0]}) != odds_star({both[0]}));
  }
}

TEST_CASE("evaluate_pair resolves slot positions per side") {
  const Fixture& f = fixture();
  const TokenizedPair tp = tokenize_pair(f.tok, table_row_example("DNeg"));

  // The licensor slot ("No" vs "The") sits at the front on both sides.
  HookPoint hp = parse_hookpoint("attn.0@licensor");
  const PairLogProbs at_slot = evaluate_pair(f.model, tp, hp);
  CHECK(std::isfinite(odds_term(at_slot)));

  HookPoint missing = parse_hookpoint("attn.0@no_such_slot");
  CHECK_THROWS_AS(evaluate_pair(f.model, tp, missing), AlignmentError);

  CHECK_THROWS_AS(evaluate_pair<double>(f.model, tp, hp, SwapKind::ProjectSwap, nullptr),
                  InputError);
}

// ---------------------------------------------------------------------------
// Heatmap assembly

TEST_CASE("heatmap assembly averages per cell and keeps the grid dense") {
  std::vector<CellSamples> cells;
  cells.push_back({1, 1, {-1.0, -2.0}, 0});  // scrambled order on purpose
  cells.push_back({0, 0, {1.0, 3.0}, 0});
  cells.push_back({0, 1, {0.5}, 1});
  cells.push_back({1, 0, {}, 2});

  const Heatmap h = assemble_heatmap(2, {"subj", "verb"}, cells);
  CHECK(h.n_layers == 2);
  CHECK(h.cols == std::vector<std::string>{"subj", "verb"});
  CHECK(h.values(0, 0) == 2.0);
  CHECK(h.counts(0, 0) == 2);
  CHECK(h.skipped(0, 0) == 0);
  CHECK(h.values(0, 1) == 0.5);
  CHECK(h.counts(0, 1) == 1);
  CHECK(h.skipped(0, 1) == 1);
  CHECK(h.values(1, 0) == 0.0);  // no contributing pairs; count says so
  CHECK(h.counts(1, 0) == 0);
  CHECK(h.skipped(1, 0) == 2);
  CHECK(h.values(1, 1) == -1.5);

  const std::string csv = heatmap_to_csv(h);
  CHECK(csv == "layer,subj,verb\n0,2,0.5\n1,0,-1.5\n");

  const auto sidecar = nlohmann::json::parse(heatmap_sidecar_json(h, {{"model", "tiny"}}));
  CHECK(sidecar["row_axis"] == "layer");
  CHECK(sidecar["col_axis"] == "slot");
  CHECK(sidecar["cols"] == nlohmann::json::array({"subj", "verb"}));
  CHECK(sidecar["counts"] == nlohmann::json::parse("[[2,1],[0,2]]"));
  CHECK(sidecar["skipped"] == nlohmann::json::parse("[[0,1],[2,0]]"));
  CHECK(sidecar["metadata"]["model"] == "tiny");
}

TEST_CASE("heatmap assembly rejects malformed sweeps") {
  const std::vector<std::string> cols{"a", "b"};
  CHECK_THROWS_AS(assemble_heatmap(2, cols, {}), InputError);  // empty sweep

  std::vector<CellSamples> grid;
  for (int l = 0; l < 2; ++l)
    for (int c = 0; c < 2; ++c) grid.push_back({l, c, {0.1}, 0});

  {
    auto dup = grid;
    dup.push_back({0, 0, {0.2}, 0});
    CHECK_THROWS_AS(assemble_heatmap(2, cols, dup), InputError);
  }
  {
    auto missing = grid;
    missing.pop_back();
    CHECK_THROWS_AS(assemble_heatmap(2, cols, missing), InputError);
  }
  {
    auto ragged = grid;
    ragged[2].odds_terms.push_back(0.3);  // accounts for one pair too many
    CHECK_THROWS_AS(assemble_heatmap(2, cols, ragged), InputError);
  }
  {
    auto outside = grid;
    outside[0].layer = 5;
    CHECK_THROWS_AS(assemble_heatmap(2, cols, outside), InputError);
  }
  {
    auto infinite = grid;
    infinite[1].odds_terms[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(assemble_heatmap(2, cols, infinite), NumericsError);
  }
  CHECK_THROWS_AS(heatmap_to_csv(assemble_heatmap(
                      1, {"with,comma"}, {{0, 0, {1.0}, 0}})),
                  InputError);
}

// ---------------------------------------------------------------------------
// Benchmark

namespace {

std::vector<BenchmarkPair> benchmark_set() {
  std::vector<BenchmarkPair> pairs;
  pairs.push_back({"he met her .", "he met him .", {}, {}, "agr"});
  pairs.push_back({"she told me .", "she told you .", {}, {}, "agr"});
  pairs.push_back({"has any of them ever helped ?", "has some of them ever helped ?",
                   {}, {}, "npi"});
  pairs.push_back({"it is any good .", "it is any good .", {}, {}, "tie"});
  // " some" is one token, so the sides tokenize to different lengths.
  pairs.push_back({"they gave him some bread .", "they gave him bread .", {}, {}, "len"});
  return pairs;
}

}  // namespace

TEST_CASE("whole-sentence benchmark agrees with direct sequence scoring") {
  const Fixture& f = fixture();
  const auto pairs = benchmark_set();

  const BenchmarkResult r = benchmark_accuracy(f.model, f.tok, pairs, BenchmarkMode::Whole);
  CHECK(r.scored == 4);
  CHECK(r.filtered == 1);
  CHECK(r.by_category.at("agr").scored == 2);
  CHECK(r.by_category.at("npi").scored == 1);
  CHECK(r.by_category.at("tie").scored == 1);
  CHECK(r.by_category.at("tie").correct == 0);  // equal scores are a failure
  CHECK(r.by_category.at("len").filtered == 1);
  CHECK(r.by_category.at("len").scored == 0);

  int expect = 0;
  for (const auto& p : pairs) {
    const auto good = f.tok.encode(p.sentence_good);
    const auto bad = f.tok.encode(p.sentence_bad);
    if (good.size() != bad.size()) continue;
    if (sequence_logprob(f.model, good) > sequence_logprob(f.model, bad)) ++expect;
  }
  CHECK(r.correct == expect);
  CHECK(r.accuracy == doctest::Approx(expect / 4.0));

  int cat_scored = 0, cat_correct = 0;
  for (const auto& [name, cat] : r.by_category) {
    cat_scored += cat.scored;
    cat_correct += cat.correct;
  }
  CHECK(cat_scored == r.scored);
  CHECK(cat_correct == r.correct);
}

TEST_CASE("identity steering leaves benchmark results untouched") {
  const Fixture& f = fixture();
  const auto pairs = benchmark_set();
  const BenchmarkResult plain = benchmark_accuracy(f.model, f.tok, pairs, BenchmarkMode::Whole);

  SiteEdit<double> unit_attn;
  unit_attn.kind = SiteKind::AttnOut;
  unit_attn.layer = 0;
  unit_attn.action = SiteEdit<double>::Action::Scale;
  unit_attn.alpha = 1.0;  // positions empty: every token
  SiteEdit<double> unit_head;
  unit_head.kind = SiteKind::HeadOut;
  unit_head.layer = 1;
  unit_head.head = 0;
  unit_head.action = SiteEdit<double>::Action::Scale;
  unit_head.alpha = 1.0;

  const BenchmarkResult steered =
      benchmark_accuracy(f.model, f.tok, pairs, BenchmarkMode::Whole, {unit_attn, unit_head});
  CHECK(steered.accuracy == plain.accuracy);
  CHECK(steered.correct == plain.correct);
  CHECK(steered.scored == plain.scored);
  CHECK(steered.filtered == plain.filtered);
  for (const auto& [name, cat] : plain.by_category) {
    CHECK(steered.by_category.at(name).correct == cat.correct);
    CHECK(steered.by_category.at(name).scored == cat.scored);
  }

  // A real dampening run still works end to end.
  SiteEdit<double> damp = unit_attn;
  damp.alpha = 0.25;
  const BenchmarkResult damped =
      benchmark_accuracy(f.model, f.tok, pairs, BenchmarkMode::Whole, {damp});
  CHECK(damped.scored == plain.scored);
}

TEST_CASE("region scoring reads exactly the span and ignores length mismatches") {
  const Fixture& f = fixture();

  std::vector<BenchmarkPair> pairs;
  pairs.push_back({"has any of them ever helped ?", "has some of them ever helped ?",
                   TokenRange{1, 3}, TokenRange{1, 3}, "npi"});
  // Unequal sentence lengths are fine here; only the spans are compared.
  pairs.push_back({"they gave him some bread .", "they met him .",
                   TokenRange{2, 4}, TokenRange{1, 3}, "mixed"});

  const BenchmarkResult r = benchmark_accuracy(f.model, f.tok, pairs, BenchmarkMode::Region);
  CHECK(r.scored == 2);
  CHECK(r.filtered == 0);

  // Oracle: sum the next-token log probs over the span by hand.
  auto span_score = [&](const std::string& sentence, Index from, Index to) {
    const auto tokens = f.tok.encode(sentence);
    const auto run = run_model(f.model, tokens);
    double acc = 0.0;
    for (Index t = from; t < to; ++t)
      acc += run.logits(t - 1, tokens[static_cast<size_t>(t)]) -
             log_sum_exp_row(run.logits.row(t - 1));
    return acc;
  };
  int expect = 0;
  if (span_score(pairs[0].sentence_good, 1, 3) > span_score(pairs[0].sentence_bad, 1, 3))
    ++expect;
  if (span_score(pairs[1].sentence_good, 2, 4) > span_score(pairs[1].sentence_bad, 1, 3))
    ++expect;
  CHECK(r.correct == expect);
}

TEST_CASE("benchmark rejects bad inputs") {
  const Fixture& f = fixture();
  CHECK_THROWS_AS(
      benchmark_accuracy(f.model, f.tok, {}, BenchmarkMode::Whole), InputError);

  // Region mode without spans.
  std::vector<BenchmarkPair> no_region{{"he met her .", "he met him .", {}, {}, "x"}};
  CHECK_THROWS_AS(benchmark_accuracy(f.model, f.tok, no_region, BenchmarkMode::Region),
                  InputError);

  // Span starting at token 0 (nothing predicts the first token) and spans
  // running past the sentence.
  std::vector<BenchmarkPair> at_zero{
      {"he met her .", "he met him .", TokenRange{0, 2}, TokenRange{0, 2}, "x"}};
  CHECK_THROWS_AS(benchmark_accuracy(f.model, f.tok, at_zero, BenchmarkMode::Region),
                  InputError);
  std::vector<BenchmarkPair> too_far{
      {"he met her .", "he met him .", TokenRange{1, 99}, TokenRange{1, 2}, "x"}};
  CHECK_THROWS_AS(benchmark_accuracy(f.model, f.tok, too_far, BenchmarkMode::Region),
                  InputError);

  // All pairs filtered leaves nothing to average.
  std::vector<BenchmarkPair> all_filtered{
      {"they gave him some bread .", "they gave him bread .", {}, {}, "len"}};
  CHECK_THROWS_AS(benchmark_accuracy(f.model, f.tok, all_filtered, BenchmarkMode::Whole),
                  InputError);
}

TEST_CASE("benchmark pairs round trip through JSONL") {
  const fs::path dir = fs::temp_directory_path() / "patchlab_metrics_jsonl";
  fs::create_directories(dir);
  const fs::path path = dir / "bench.jsonl";

  std::vector<BenchmarkPair> pairs;
  pairs.push_back({"he met her .", "he met him .", {}, {}, "agr"});
  pairs.push_back({"has any ?", "has some ?", TokenRange{1, 2}, TokenRange{1, 2}, "npi"});
  write_benchmark_pairs(path.string(), pairs);

  const auto back = read_benchmark_pairs(path.string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].sentence_good == "he met her .");
  CHECK(back[0].category == "agr");
  CHECK_FALSE(back[0].region_good.has_value());
  CHECK(back[1].region_good == TokenRange{1, 2});
  CHECK(back[1].region_bad == TokenRange{1, 2});

  // Re-serialization is stable.
  CHECK(benchmark_pair_to_json_line(back[1]) == benchmark_pair_to_json_line(pairs[1]));
}

TEST_CASE("malformed benchmark lines are rejected with positions") {
  CHECK_THROWS_AS(benchmark_pair_from_json_line("not json"), InputError);
  CHECK_THROWS_AS(benchmark_pair_from_json_line("[1,2]"), InputError);
  CHECK_THROWS_AS(
      benchmark_pair_from_json_line(R"({"sentence_good":"a","sentence_bad":"b"})"),
      InputError);  // category missing
  CHECK_THROWS_AS(benchmark_pair_from_json_line(
                      R"({"sentence_good":"a","sentence_bad":"b","category":"c","region_good":[1]})"),
                  InputError);
  CHECK_THROWS_AS(benchmark_pair_from_json_line(
                      R"({"sentence_good":"a","sentence_bad":"b","category":"c","region_good":[2,1],"region_bad":[2,1]})"),
                  InputError);
  // One-sided region.
  CHECK_THROWS_AS(benchmark_pair_from_json_line(
                      R"({"sentence_good":"a","sentence_bad":"b","category":"c","region_good":[1,2]})"),
                  InputError);

  const fs::path dir = fs::temp_directory_path() / "patchlab_metrics_jsonl";
  fs::create_directories(dir);
  const fs::path path = dir / "broken.jsonl";
  write_text_file_atomic(path, R"({"sentence_good":"a","sentence_bad":"b","category":"c"})"
                               "\nnot json\n");
  try {
    read_benchmark_pairs(path.string());
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
}
