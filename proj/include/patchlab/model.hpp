#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "patchlab/matrix.hpp"

namespace patchlab {

struct ModelConfig {
  int n_layers = 0;
  int n_heads = 0;
  int d_model = 0;
  int d_head = 0;
  int vocab_size = 0;
  int max_positions = 0;
  double rotary_fraction = 1.0;   // fraction of each head's width that rotates
  bool parallel_residual = true;  // x + Attn(LN1(x)) + MLP(LN2(x)) when set
  double layer_norm_eps = 1e-5;
  bool tied_embeddings = false;

  void validate() const;
  static ModelConfig from_json_text(const std::string& text);
  static ModelConfig load(const std::filesystem::path& path);
  std::string to_json_text() const;
};

// Linear weights are stored [in, out] so activations multiply from the left;
// the archive keeps the transposed convention and the loader flips them.
template <typename Scalar>
struct LayerWeights {
  Vec<Scalar> ln1_gain, ln1_bias;  // pre-attention norm
  Vec<Scalar> ln2_gain, ln2_bias;  // pre-MLP norm
  Mat<Scalar> w_qkv;               // [d_model, 3*d_model], per-head interleaved q,k,v
  Vec<Scalar> b_qkv;
  Mat<Scalar> w_out;  // [d_model, d_model] attention output projection
  Vec<Scalar> b_out;
  Mat<Scalar> w_up;  // [d_model, 4*d_model]
  Vec<Scalar> b_up;
  Mat<Scalar> w_down;  // [4*d_model, d_model]
  Vec<Scalar> b_down;
};

template <typename Scalar>
struct Model {
  ModelConfig config;
  Mat<Scalar> embed;  // [vocab, d_model]
  std::vector<LayerWeights<Scalar>> layers;
  Vec<Scalar> final_gain, final_bias;
  Mat<Scalar> unembed;  // [d_model, vocab]

  // Column offsets of head h's query/key/value blocks inside w_qkv's output.
  Index q_col(int h) const { return static_cast<Index>(h) * 3 * config.d_head; }
  Index k_col(int h) const { return q_col(h) + config.d_head; }
  Index v_col(int h) const { return q_col(h) + 2 * config.d_head; }
};

// Reads a weight archive laid out under the NeoX checkpoint names. The
// optional name map translates canonical tensor names to whatever the archive
// actually uses.
template <typename Scalar>
Model<Scalar> load_model(const std::filesystem::path& archive, const ModelConfig& config,
                         const std::map<std::string, std::string>& name_map = {});

std::map<std::string, std::string> load_name_map(const std::filesystem::path& path);

}  // namespace patchlab
