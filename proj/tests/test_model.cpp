#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <string>

#include "patchlab/common.hpp"
#include "patchlab/fixture.hpp"
#include "patchlab/fsio.hpp"
#include "patchlab/model.hpp"
#include "patchlab/safetensors.hpp"

using namespace patchlab;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "patchlab_model_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Writes the fixture once and hands out the directory.
const fs::path& fixture_dir() {
  static const fs::path dir = [] {
    const fs::path d = fresh_dir("fixture");
    write_tiny_model(d);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("config json survives a round trip") {
  ModelConfig a;
  a.n_layers = 3;
  a.n_heads = 4;
  a.d_head = 8;
  a.d_model = 32;
  a.vocab_size = 300;
  a.max_positions = 128;
  a.rotary_fraction = 0.25;
  a.parallel_residual = false;
  a.layer_norm_eps = 1e-6;
  a.tied_embeddings = true;

  const ModelConfig b = ModelConfig::from_json_text(a.to_json_text());
  CHECK(b.n_layers == a.n_layers);
  CHECK(b.n_heads == a.n_heads);
  CHECK(b.d_model == a.d_model);
  CHECK(b.d_head == a.d_head);
  CHECK(b.vocab_size == a.vocab_size);
  CHECK(b.max_positions == a.max_positions);
  CHECK(b.rotary_fraction == a.rotary_fraction);
  CHECK(b.parallel_residual == a.parallel_residual);
  CHECK(b.layer_norm_eps == a.layer_norm_eps);
  CHECK(b.tied_embeddings == a.tied_embeddings);
}

TEST_CASE("config validation rejects inconsistent dimensions") {
  ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_head = 4;
  c.d_model = 8;
  c.vocab_size = 10;
  c.max_positions = 16;
  CHECK_NOTHROW(c.validate());

  auto broken = c;
  broken.d_model = 9;
  CHECK_THROWS_AS(broken.validate(), InputError);

  broken = c;
  broken.rotary_fraction = 0.0;
  CHECK_THROWS_AS(broken.validate(), InputError);
  broken.rotary_fraction = 1.5;
  CHECK_THROWS_AS(broken.validate(), InputError);

  broken = c;
  broken.n_layers = 0;
  CHECK_THROWS_AS(broken.validate(), InputError);

  broken = c;
  broken.layer_norm_eps = 0.0;
  CHECK_THROWS_AS(broken.validate(), InputError);
}

TEST_CASE("config parsing reports missing and mistyped fields") {
  CHECK_THROWS_AS(ModelConfig::from_json_text("not json"), InputError);
  CHECK_THROWS_AS(ModelConfig::from_json_text("{}"), InputError);

  ModelConfig good;
  good.n_layers = 1;
  good.n_heads = 2;
  good.d_head = 4;
  good.d_model = 8;
  good.vocab_size = 10;
  good.max_positions = 16;
  std::string text = good.to_json_text();
  const auto pos = text.find("\"n_heads\": 2");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 12, "\"n_heads\": \"2\"");
  CHECK_THROWS_AS(ModelConfig::from_json_text(text), InputError);
}

TEST_CASE("fixture checkpoint loads with the expected shapes") {
  const fs::path dir = fixture_dir();
  const ModelConfig cfg = ModelConfig::load(dir / "config.json");
  CHECK(cfg.d_model == cfg.n_heads * cfg.d_head);
  CHECK(cfg.vocab_size > 256);

  const Model<double> m = load_model<double>(dir / "model.safetensors", cfg);
  CHECK(m.embed.rows() == cfg.vocab_size);
  CHECK(m.embed.cols() == cfg.d_model);
  CHECK(m.unembed.rows() == cfg.d_model);
  CHECK(m.unembed.cols() == cfg.vocab_size);
  REQUIRE(static_cast<int>(m.layers.size()) == cfg.n_layers);
  for (const auto& w : m.layers) {
    CHECK(w.w_qkv.rows() == cfg.d_model);
    CHECK(w.w_qkv.cols() == 3 * cfg.d_model);
    CHECK(w.b_qkv.size() == 3 * cfg.d_model);
    CHECK(w.w_out.rows() == cfg.d_model);
    CHECK(w.w_up.cols() == 4 * cfg.d_model);
    CHECK(w.w_down.rows() == 4 * cfg.d_model);
    CHECK(all_finite(w.w_qkv));
  }

  // Loading as float works off the same archive.
  const Model<float> mf = load_model<float>(dir / "model.safetensors", cfg);
  CHECK(mf.embed.rows() == cfg.vocab_size);
}

TEST_CASE("loader transposes the stored weight layout") {
  const fs::path dir = fixture_dir();
  const ModelConfig cfg = ModelConfig::load(dir / "config.json");
  const Model<double> m = load_model<double>(dir / "model.safetensors", cfg);

  const SafeTensors st = SafeTensors::open(dir / "model.safetensors");
  const Mat<double> stored = st.matrix<double>("gpt_neox.layers.0.attention.query_key_value.weight");
  REQUIRE(stored.rows() == 3 * cfg.d_model);
  REQUIRE(stored.cols() == cfg.d_model);
  CHECK(m.layers[0].w_qkv == stored.transpose());

  const Mat<double> out = st.matrix<double>("embed_out.weight");
  CHECK(m.unembed == out.transpose());
}

TEST_CASE("per-head column offsets interleave query, key and value") {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.n_heads = 3;
  cfg.d_head = 4;
  cfg.d_model = 12;
  cfg.vocab_size = 10;
  cfg.max_positions = 8;
  Model<double> m;
  m.config = cfg;
  CHECK(m.q_col(0) == 0);
  CHECK(m.k_col(0) == 4);
  CHECK(m.v_col(0) == 8);
  CHECK(m.q_col(1) == 12);
  CHECK(m.v_col(2) == 32);
}

TEST_CASE("missing tensors are reported by name") {
  const fs::path dir = fresh_dir("missing");
  const ModelConfig cfg = write_tiny_model(dir);

  // Rebuild the archive without one bias.
  const SafeTensors st = SafeTensors::open(dir / "model.safetensors");
  SafeTensorsWriter w;
  const std::string dropped = "gpt_neox.layers.1.attention.dense.bias";
  for (const std::string& name : st.names()) {
    if (name == dropped) continue;
    const TensorInfo& info = st.info(name);
    if (info.shape.size() == 2)
      w.add_matrix<float>(name, st.matrix<float>(name));
    else
      w.add_vector<float>(name, st.vector<float>(name));
  }
  w.save(dir / "model.safetensors");

  try {
    load_model<double>(dir / "model.safetensors", cfg);
    FAIL("expected a missing-tensor error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find(dropped) != std::string::npos);
  }
}

TEST_CASE("shape mismatches are reported with both shapes") {
  const fs::path dir = fresh_dir("badshape");
  const ModelConfig cfg = write_tiny_model(dir);

  const SafeTensors st = SafeTensors::open(dir / "model.safetensors");
  SafeTensorsWriter w;
  Rng rng(7);
  for (const std::string& name : st.names()) {
    if (name == "gpt_neox.embed_in.weight") {
      w.add_matrix<float>(name, random_matrix<float>(cfg.vocab_size, cfg.d_model + 1, rng));
      continue;
    }
    const TensorInfo& info = st.info(name);
    if (info.shape.size() == 2)
      w.add_matrix<float>(name, st.matrix<float>(name));
    else
      w.add_vector<float>(name, st.vector<float>(name));
  }
  w.save(dir / "model.safetensors");

  try {
    load_model<double>(dir / "model.safetensors", cfg);
    FAIL("expected a shape error");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("gpt_neox.embed_in.weight") != std::string::npos);
    CHECK(msg.find(std::to_string(cfg.d_model + 1)) != std::string::npos);
  }
}

TEST_CASE("name maps redirect canonical tensor names") {
  const fs::path dir = fresh_dir("renamed");
  const ModelConfig cfg = write_tiny_model(dir);

  const SafeTensors st = SafeTensors::open(dir / "model.safetensors");
  SafeTensorsWriter w;
  std::map<std::string, std::string> name_map;
  for (const std::string& name : st.names()) {
    std::string actual = name;
    if (name.rfind("gpt_neox.", 0) == 0) {
      actual = "transformer." + name.substr(9);
      name_map[name] = actual;
    }
    const TensorInfo& info = st.info(name);
    if (info.shape.size() == 2)
      w.add_matrix<float>(actual, st.matrix<float>(name));
    else
      w.add_vector<float>(actual, st.vector<float>(name));
  }
  w.save(dir / "model.safetensors");

  CHECK_THROWS_AS(load_model<double>(dir / "model.safetensors", cfg), InputError);
  const Model<double> m = load_model<double>(dir / "model.safetensors", cfg, name_map);
  CHECK(m.embed.rows() == cfg.vocab_size);

  const fs::path map_path = dir / "names.json";
  {
    std::string json = "{";
    bool first = true;
    for (const auto& [k, v] : name_map) {
      if (!first) json += ",";
      first = false;
      json += "\"" + k + "\":\"" + v + "\"";
    }
    json += "}";
    write_text_file_atomic(map_path, json);
  }
  const auto loaded = load_name_map(map_path);
  CHECK(loaded == name_map);

  write_text_file_atomic(map_path, "[1,2]");
  CHECK_THROWS_AS(load_name_map(map_path), InputError);
  write_text_file_atomic(map_path, "{\"a\": 3}");
  CHECK_THROWS_AS(load_name_map(map_path), InputError);
}

TEST_CASE("tied embeddings reuse the input embedding transposed") {
  const fs::path dir = fresh_dir("tied");
  FixtureSpec spec;
  spec.tied_embeddings = true;
  spec.n_layers = 1;
  const ModelConfig cfg = write_tiny_model(dir, spec);

  const SafeTensors st = SafeTensors::open(dir / "model.safetensors");
  CHECK(!st.contains("embed_out.weight"));

  const Model<double> m = load_model<double>(dir / "model.safetensors", cfg);
  CHECK(m.unembed == m.embed.transpose());
}
