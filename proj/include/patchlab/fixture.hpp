#pragma once

#include <cstdint>
#include <filesystem>

#include "patchlab/model.hpp"

namespace patchlab {

// Knobs for the generated miniature checkpoint. Defaults give a model small
// enough for exhaustive testing yet wide enough to exercise every code path
// (several heads, partial rotary coverage, both residual layouts).
struct FixtureSpec {
  int n_layers = 2;
  int n_heads = 2;
  int d_head = 8;
  int max_positions = 64;
  double rotary_fraction = 0.5;
  bool parallel_residual = true;
  bool tied_embeddings = false;
  int merges = 120;  // tokenizer merge count; vocab size becomes 256 + merges
  std::uint64_t seed = 1234;
};

// Writes config.json, model.safetensors, vocab.json and merges.txt under dir
// and returns the config. The tokenizer is learned from a built-in corpus so
// token ids and the embedding rows always agree.
ModelConfig write_tiny_model(const std::filesystem::path& dir, const FixtureSpec& spec = {});

}  // namespace patchlab
