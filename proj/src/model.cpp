#include "patchlab/model.hpp"

#include <json.hpp>

#include "patchlab/common.hpp"
#include "patchlab/fsio.hpp"
#include "patchlab/safetensors.hpp"

namespace patchlab {

namespace {

using nlohmann::json;

std::string shape_text(Index r, Index c) {
  return "[" + std::to_string(r) + ", " + std::to_string(c) + "]";
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 1) throw InputError("config: n_layers must be at least 1");
  if (vocab_size < 2) throw InputError("config: vocab_size must be at least 2");
  if (n_heads < 1 || d_head < 1) throw InputError("config: n_heads and d_head must be positive");
  if (d_model != n_heads * d_head)
    throw InputError("config: d_model (" + std::to_string(d_model) + ") must equal n_heads*d_head (" +
                     std::to_string(n_heads * d_head) + ")");
  if (max_positions < 1) throw InputError("config: max_positions must be positive");
  if (!(rotary_fraction > 0.0) || rotary_fraction > 1.0)
    throw InputError("config: rotary_fraction must lie in (0, 1]");
  if (!(layer_norm_eps > 0.0)) throw InputError("config: layer_norm_eps must be positive");
}

ModelConfig ModelConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("config is not valid JSON: ") + e.what());
  }
  ModelConfig c;
  try {
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d_head = j.at("d_head").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    c.rotary_fraction = j.at("rotary_fraction").get<double>();
    c.parallel_residual = j.at("parallel_residual").get<bool>();
    c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
    c.tied_embeddings = j.at("tied_embeddings").get<bool>();
  } catch (const json::exception& e) {
    throw InputError(std::string("config field missing or mistyped: ") + e.what());
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
  return from_json_text(read_text_file(path));
}

std::string ModelConfig::to_json_text() const {
  json j{{"n_layers", n_layers},
         {"n_heads", n_heads},
         {"d_model", d_model},
         {"d_head", d_head},
         {"vocab_size", vocab_size},
         {"max_positions", max_positions},
         {"rotary_fraction", rotary_fraction},
         {"parallel_residual", parallel_residual},
         {"layer_norm_eps", layer_norm_eps},
         {"tied_embeddings", tied_embeddings}};
  return j.dump(2) + "\n";
}

std::map<std::string, std::string> load_name_map(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw InputError("name map is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw InputError("name map must be a JSON object");
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw InputError("name map entry '" + k + "' must be a string");
    out[k] = v.get<std::string>();
  }
  return out;
}

namespace {

template <typename Scalar>
class ArchiveReader {
 public:
  ArchiveReader(const SafeTensors& st, const std::map<std::string, std::string>& name_map)
      : st_(st), map_(name_map) {}

  Mat<Scalar> matrix(const std::string& canonical, Index rows, Index cols) const {
    Mat<Scalar> m = st_.matrix<Scalar>(actual(canonical));
    if (m.rows() != rows || m.cols() != cols)
      throw InputError("tensor '" + canonical + "' has shape " + shape_text(m.rows(), m.cols()) +
                       ", expected " + shape_text(rows, cols));
    return m;
  }

  // Archive keeps [out, in]; we store [in, out].
  Mat<Scalar> linear(const std::string& canonical, Index in, Index out) const {
    return matrix(canonical, out, in).transpose();
  }

  Vec<Scalar> vector(const std::string& canonical, Index n) const {
    Vec<Scalar> v = st_.vector<Scalar>(actual(canonical));
    if (v.size() != n)
      throw InputError("tensor '" + canonical + "' has length " + std::to_string(v.size()) +
                       ", expected " + std::to_string(n));
    return v;
  }

 private:
  const std::string& actual(const std::string& canonical) const {
    const auto it = map_.find(canonical);
    return it == map_.end() ? canonical : it->second;
  }

  const SafeTensors& st_;
  const std::map<std::string, std::string>& map_;
};

}  // namespace

template <typename Scalar>
Model<Scalar> load_model(const std::filesystem::path& archive, const ModelConfig& config,
                         const std::map<std::string, std::string>& name_map) {
  config.validate();
  const SafeTensors st = SafeTensors::open(archive);
  const ArchiveReader<Scalar> read(st, name_map);

  const Index d = config.d_model;
  const Index v = config.vocab_size;

  Model<Scalar> m;
  m.config = config;
  m.embed = read.matrix("gpt_neox.embed_in.weight", v, d);

  m.layers.reserve(static_cast<size_t>(config.n_layers));
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string p = "gpt_neox.layers." + std::to_string(l) + ".";
    LayerWeights<Scalar> w;
    w.ln1_gain = read.vector(p + "input_layernorm.weight", d);
    w.ln1_bias = read.vector(p + "input_layernorm.bias", d);
    w.ln2_gain = read.vector(p + "post_attention_layernorm.weight", d);
    w.ln2_bias = read.vector(p + "post_attention_layernorm.bias", d);
    w.w_qkv = read.linear(p + "attention.query_key_value.weight", d, 3 * d);
    w.b_qkv = read.vector(p + "attention.query_key_value.bias", 3 * d);
    w.w_out = read.linear(p + "attention.dense.weight", d, d);
    w.b_out = read.vector(p + "attention.dense.bias", d);
    w.w_up = read.linear(p + "mlp.dense_h_to_4h.weight", d, 4 * d);
    w.b_up = read.vector(p + "mlp.dense_h_to_4h.bias", 4 * d);
    w.w_down = read.linear(p + "mlp.dense_4h_to_h.weight", 4 * d, d);
    w.b_down = read.vector(p + "mlp.dense_4h_to_h.bias", d);
    m.layers.push_back(std::move(w));
  }

  m.final_gain = read.vector("gpt_neox.final_layer_norm.weight", d);
  m.final_bias = read.vector("gpt_neox.final_layer_norm.bias", d);
  m.unembed = config.tied_embeddings ? Mat<Scalar>(m.embed.transpose())
                                     : read.linear("embed_out.weight", d, v);
  return m;
}

template Model<float> load_model<float>(const std::filesystem::path&, const ModelConfig&,
                                        const std::map<std::string, std::string>&);
template Model<double> load_model<double>(const std::filesystem::path&, const ModelConfig&,
                                          const std::map<std::string, std::string>&);

}  // namespace patchlab
