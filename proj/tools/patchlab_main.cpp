#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <string>

#include "patchlab/cli.hpp"

// Exit codes: 0 on success, 1 when a run surfaces violations or numeric
// failures, 2 for unusable inputs (bad flags, missing files, malformed
// configs).

namespace {

struct Flags {
  std::string config, model, tokenizer, data, out, dtype;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

void add_common_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "experiment config JSON");
  sub->add_option("--model", f.model, "weight archive (.safetensors)");
  sub->add_option("--tokenizer", f.tokenizer,
                  "vocab.json, or a directory holding vocab.json and merges.txt");
  sub->add_option("--data", f.data, "dataset directory (default: <out>/data)");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--seed", f.seed, "global random seed");
  sub->add_option("--dtype", f.dtype, "steering/benchmark precision (f32 or f64)")
      ->check(CLI::IsMember({"f32", "f64"}));
  sub->add_option("--workers", f.workers, "worker threads for sweeps and training");
}

// The config file is the canonical snapshot; flags override single fields on
// top of it.
patchlab::ExperimentConfig make_config(const Flags& f) {
  patchlab::ExperimentConfig cfg =
      f.config.empty() ? patchlab::ExperimentConfig{} : patchlab::ExperimentConfig::load(f.config);
  if (!f.model.empty()) cfg.weights = f.model;
  if (!f.tokenizer.empty()) cfg.tokenizer = f.tokenizer;
  if (!f.data.empty()) cfg.data_dir = f.data;
  if (!f.out.empty()) cfg.out = f.out;
  if (f.seed) cfg.seed = *f.seed;
  if (!f.dtype.empty()) cfg.dtype = f.dtype;
  if (f.workers) cfg.workers = *f.workers;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"activation patching, direction training and head steering on minimal pairs"};
  app.require_subcommand(1);

  Flags flags;
  CLI::App* datagen =
      app.add_subcommand("datagen", "generate the minimal-pair dataset and validate it");
  CLI::App* validate =
      app.add_subcommand("validate", "re-check an existing dataset directory");
  CLI::App* sweep =
      app.add_subcommand("sweep", "patching heatmaps over a layer x position grid");
  CLI::App* das = app.add_subcommand(
      "das", "train interchange directions with leave-one-out evaluation");
  CLI::App* steer = app.add_subcommand("steer", "scale attention heads and score a benchmark");
  for (CLI::App* sub : {datagen, validate, sweep, das, steer}) add_common_flags(sub, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help and version are not errors
  }

  try {
    const patchlab::ExperimentConfig cfg = make_config(flags);
    if (datagen->parsed()) return patchlab::cmd_datagen(cfg);
    if (validate->parsed()) return patchlab::cmd_validate(cfg);
    if (sweep->parsed()) return patchlab::cmd_sweep(cfg);
    if (das->parsed()) return patchlab::cmd_das(cfg);
    if (steer->parsed()) return patchlab::cmd_steer(cfg);
    return 2;  // unreachable with require_subcommand(1)
  } catch (const patchlab::InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
