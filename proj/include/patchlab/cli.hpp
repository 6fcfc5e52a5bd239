#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "patchlab/das.hpp"

// The experiment front end behind the `patchlab` binary: one declarative
// config drives dataset generation, patching sweeps, direction training and
// steering runs, and every run leaves a manifest describing exactly what it
// read, wrote and did.

namespace patchlab {

// Parsed from a JSON file with sections "model", "data", "sweep", "das" and
// "steer" plus top-level "out"/"seed"/"dtype"/"workers"; every field has a
// default, so {} is a valid config. Unknown keys are rejected rather than
// ignored: a typo silently falling back to a default would poison the
// manifest's reproducibility story. Command line flags override single
// fields after the file is read.
struct ExperimentConfig {
  // model: weight archive plus its companions. Empty companion paths resolve
  // next to the weights (config.json, vocab.json, merges.txt).
  std::string weights;
  std::string model_config;
  std::string tokenizer;  // vocab.json, or a directory holding vocab + merges
  std::string name_map;   // optional tensor-name translation for the archive

  // data: where the dataset lives and how datagen builds it. The directory
  // defaults to <out>/data, which is also where datagen writes.
  std::string data_dir;
  std::string id_vocab, ood_vocab;  // vocabulary files; empty means built-in
  GenOptions gen;                   // split sizes and NPI word choices

  // sweep
  std::vector<std::string> sweep_kinds{"resid"};
  std::vector<std::string> sweep_slots;  // empty: the construction's own slots
  bool sweep_with_last = true;
  std::vector<std::string> sweep_constructions;  // empty: every dataset file
  std::string intervention = "patch";  // patch | das:<path> | scale:<alpha>

  // das
  std::string das_kind = "attn";
  std::vector<std::string> das_slots;  // empty: slots shared by every construction
  bool das_with_last = false;
  std::vector<std::string> das_constructions;  // empty: every dataset file
  DasTrainConfig train;                        // seed comes from the global seed

  // steer
  std::vector<std::string> steer_heads{"head.7.5", "head.7.6", "head.9.2"};
  std::vector<double> alphas{0.8, 1.0, 1.2, 1.5};
  std::string benchmark;  // benchmark pair JSONL
  std::string benchmark_mode = "whole";

  // common
  std::string out = "out";
  std::uint64_t seed = 2024;
  std::string dtype = "f32";  // steering/benchmark precision; swaps and
                              // gradients always run in f64
  int workers = 1;

  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  std::string to_json_text() const;
};

// What one run read, wrote and did. Commands feed it as they go; write()
// lands it as <out>/manifest.json at the end of the run. Two manifests that
// agree outside the "wall_clock" object imply byte-identical result files.
class RunManifest {
 public:
  RunManifest(std::string command, ExperimentConfig cfg);

  void note_input(const std::filesystem::path& path);
  void note_output(const std::filesystem::path& out_dir, const std::filesystem::path& rel);
  void count(const std::string& key, std::int64_t n = 1);

  std::string to_json_text() const;
  void write(const std::filesystem::path& out_dir) const;

 private:
  std::string command_;
  ExperimentConfig cfg_;
  std::map<std::string, std::string> inputs_, outputs_;  // path -> content hash
  std::map<std::string, std::int64_t> counts_;
  std::string started_at_;
  std::chrono::steady_clock::time_point start_;
};

// Subcommand bodies. Each returns the process exit code for a completed run
// (0, or 1 when the run itself surfaced violations) and throws InputError for
// unusable inputs, which the binary maps to exit code 2.
int cmd_datagen(const ExperimentConfig& cfg);
int cmd_validate(const ExperimentConfig& cfg);
int cmd_sweep(const ExperimentConfig& cfg);
int cmd_das(const ExperimentConfig& cfg);
int cmd_steer(const ExperimentConfig& cfg);

}  // namespace patchlab
