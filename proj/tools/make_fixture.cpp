#include <CLI11.hpp>

#include <cstdio>
#include <string>

#include "patchlab/fixture.hpp"

// Writes a seeded miniature checkpoint (config.json, model.safetensors,
// vocab.json, merges.txt) so the patchlab tool can be exercised without a
// real pretrained model.

int main(int argc, char** argv) {
  CLI::App app{"write a seeded miniature checkpoint"};

  std::string dir;
  patchlab::FixtureSpec spec;
  bool sequential = false;
  app.add_option("dir", dir, "target directory")->required();
  app.add_option("--layers", spec.n_layers, "transformer layers");
  app.add_option("--heads", spec.n_heads, "attention heads per layer");
  app.add_option("--d-head", spec.d_head, "width of one head");
  app.add_option("--merges", spec.merges, "tokenizer merges (vocab is 256 + merges)");
  app.add_option("--rotary", spec.rotary_fraction, "fraction of each head that rotates");
  app.add_option("--seed", spec.seed, "weight and tokenizer seed");
  app.add_flag("--sequential", sequential, "use the sequential residual layout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    spec.parallel_residual = !sequential;
    const patchlab::ModelConfig cfg = patchlab::write_tiny_model(dir, spec);
    std::printf("%s: %d layers, %d heads, d_model %d, vocab %d\n", dir.c_str(), cfg.n_layers,
                cfg.n_heads, cfg.d_model, cfg.vocab_size);
    return 0;
  } catch (const patchlab::InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
