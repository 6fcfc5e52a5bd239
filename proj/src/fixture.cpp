#include "patchlab/fixture.hpp"

#include <string>

#include "patchlab/fsio.hpp"
#include "patchlab/safetensors.hpp"
#include "patchlab/tokenizer.hpp"

namespace patchlab {

namespace {

// Small corpus in the flavour of the evaluation sentences; enough repeated
// words that a hundred-odd merges produce multi-character tokens.
std::vector<std::string> fixture_corpus() {
  return {
      "the teacher praised the student because she answered the question .",
      "the teacher praised the student because he asked a question .",
      "no student has ever praised any teacher in the hall .",
      "every doctor that the lawyer admired treated the patient .",
      "the doctor treated the patient and the nurse helped the doctor .",
      "which book did the author say the critic reviewed ?",
      "the author wrote the book that the critic reviewed yesterday .",
      "if the driver had seen the sign , he would have stopped the car .",
      "the driver who stopped the car had seen the sign before .",
      "few senators that any journalist trusted have ever lied .",
      "the journalist trusted the senator because she never lied .",
      "the pilot landed the plane although the storm surprised everyone .",
      "did the manager believe that the clerk filed the report ?",
      "the clerk filed the report before the manager asked for it .",
      "some waiter served the guests while the cook prepared the meal .",
      "the cook prepared the meal that the guests enjoyed most .",
      "the girl gave her brother the letter from their grandmother .",
      "her brother read the letter and the girl smiled at him .",
      "it was the gardener who watered the plants every morning .",
      "the plants grew because the gardener watered them every morning .",
      "she told them that he would meet her at any station they liked .",
      "you can ask me if any of them is ready for you .",
      "nobody has ever asked me or you about any of them .",
      "it is hard for me to tell you if this is any good .",
      "they gave him some bread and some milk before any guest arrived .",
      "he met her and them near some old bridge that is closed .",
      "i told you that some of them would ever doubt him .",
      "has any of you ever helped them find some peace ?",
  };
}

}  // namespace

ModelConfig write_tiny_model(const std::filesystem::path& dir, const FixtureSpec& spec) {
  const LearnedBpe bpe = learn_bpe(fixture_corpus(), static_cast<size_t>(spec.merges));
  write_text_file_atomic(dir / "vocab.json", bpe.vocab_json);
  write_text_file_atomic(dir / "merges.txt", bpe.merges);
  const Tokenizer tok = Tokenizer::from_text(bpe.vocab_json, bpe.merges);

  ModelConfig cfg;
  cfg.n_layers = spec.n_layers;
  cfg.n_heads = spec.n_heads;
  cfg.d_head = spec.d_head;
  cfg.d_model = spec.n_heads * spec.d_head;
  cfg.vocab_size = tok.vocab_size();
  cfg.max_positions = spec.max_positions;
  cfg.rotary_fraction = spec.rotary_fraction;
  cfg.parallel_residual = spec.parallel_residual;
  cfg.tied_embeddings = spec.tied_embeddings;
  cfg.validate();
  write_text_file_atomic(dir / "config.json", cfg.to_json_text());

  Rng rng(spec.seed);
  const Index d = cfg.d_model;
  const Index v = cfg.vocab_size;
  SafeTensorsWriter w;

  auto gains = [&](Index n) {
    Vec<float> g = random_vector<float>(n, rng, 0.1);
    g.array() += 1.0f;
    return g;
  };

  // Archive layout matches released checkpoints: weight matrices stored
  // [out, in], qkv rows interleaved per head.
  w.add_matrix("gpt_neox.embed_in.weight", random_matrix<float>(v, d, rng, 0.5));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "gpt_neox.layers." + std::to_string(l) + ".";
    w.add_vector(p + "input_layernorm.weight", gains(d));
    w.add_vector(p + "input_layernorm.bias", random_vector<float>(d, rng, 0.05));
    w.add_vector(p + "post_attention_layernorm.weight", gains(d));
    w.add_vector(p + "post_attention_layernorm.bias", random_vector<float>(d, rng, 0.05));
    w.add_matrix(p + "attention.query_key_value.weight", random_matrix<float>(3 * d, d, rng, 0.25));
    w.add_vector(p + "attention.query_key_value.bias", random_vector<float>(3 * d, rng, 0.05));
    w.add_matrix(p + "attention.dense.weight", random_matrix<float>(d, d, rng, 0.25));
    w.add_vector(p + "attention.dense.bias", random_vector<float>(d, rng, 0.05));
    w.add_matrix(p + "mlp.dense_h_to_4h.weight", random_matrix<float>(4 * d, d, rng, 0.25));
    w.add_vector(p + "mlp.dense_h_to_4h.bias", random_vector<float>(4 * d, rng, 0.05));
    w.add_matrix(p + "mlp.dense_4h_to_h.weight", random_matrix<float>(d, 4 * d, rng, 0.25));
    w.add_vector(p + "mlp.dense_4h_to_h.bias", random_vector<float>(d, rng, 0.05));
  }
  w.add_vector("gpt_neox.final_layer_norm.weight", gains(d));
  w.add_vector("gpt_neox.final_layer_norm.bias", random_vector<float>(d, rng, 0.05));
  if (!cfg.tied_embeddings)
    w.add_matrix("embed_out.weight", random_matrix<float>(v, d, rng, 0.5));

  w.save(dir / "model.safetensors");
  return cfg;
}

}  // namespace patchlab
