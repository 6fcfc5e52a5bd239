#include "patchlab/cli.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <initializer_list>
#include <optional>
#include <set>

#include "patchlab/fsio.hpp"

namespace patchlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Strict key checking: a misspelled config key must fail loudly, not fall
// back to a default that the manifest then presents as intentional.
void check_keys(const json& o, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!o.is_object()) throw InputError("config: '" + where + "' must be an object");
  for (const auto& item : o.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        known = true;
        break;
      }
    if (!known)
      throw InputError("config: unknown key '" +
                       (where.empty() ? item.key() : where + "." + item.key()) + "'");
  }
}

template <typename T>
void take(const json& o, const char* key, T& into) {
  if (o.contains(key)) into = o.at(key).get<T>();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }

  ExperimentConfig c;
  try {
    check_keys(j, "", {"model", "data", "sweep", "das", "steer", "out", "seed", "dtype",
                       "workers"});
    if (j.contains("model")) {
      const json& m = j.at("model");
      check_keys(m, "model", {"weights", "config", "tokenizer", "name_map"});
      take(m, "weights", c.weights);
      take(m, "config", c.model_config);
      take(m, "tokenizer", c.tokenizer);
      take(m, "name_map", c.name_map);
    }
    if (j.contains("data")) {
      const json& d = j.at("data");
      check_keys(d, "data", {"dir", "id_vocab", "ood_vocab", "n_train", "n_test_id",
                             "n_test_ood", "npi_base", "npi_source"});
      take(d, "dir", c.data_dir);
      take(d, "id_vocab", c.id_vocab);
      take(d, "ood_vocab", c.ood_vocab);
      take(d, "n_train", c.gen.n_train);
      take(d, "n_test_id", c.gen.n_test_id);
      take(d, "n_test_ood", c.gen.n_test_ood);
      take(d, "npi_base", c.gen.npi_base);
      take(d, "npi_source", c.gen.npi_source);
    }
    if (j.contains("sweep")) {
      const json& s = j.at("sweep");
      check_keys(s, "sweep", {"kinds", "slots", "with_last", "constructions", "intervention"});
      take(s, "kinds", c.sweep_kinds);
      take(s, "slots", c.sweep_slots);
      take(s, "with_last", c.sweep_with_last);
      take(s, "constructions", c.sweep_constructions);
      take(s, "intervention", c.intervention);
    }
    if (j.contains("das")) {
      const json& d = j.at("das");
      check_keys(d, "das", {"kind", "slots", "with_last", "constructions", "lr", "warmup",
                            "batch_size", "steps"});
      take(d, "kind", c.das_kind);
      take(d, "slots", c.das_slots);
      take(d, "with_last", c.das_with_last);
      take(d, "constructions", c.das_constructions);
      take(d, "lr", c.train.lr);
      take(d, "warmup", c.train.warmup);
      take(d, "batch_size", c.train.batch_size);
      take(d, "steps", c.train.steps);
    }
    if (j.contains("steer")) {
      const json& s = j.at("steer");
      check_keys(s, "steer", {"heads", "alphas", "benchmark", "mode"});
      take(s, "heads", c.steer_heads);
      take(s, "alphas", c.alphas);
      take(s, "benchmark", c.benchmark);
      take(s, "mode", c.benchmark_mode);
    }
    take(j, "out", c.out);
    take(j, "seed", c.seed);
    take(j, "dtype", c.dtype);
    take(j, "workers", c.workers);
  } catch (const json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  parse_dtype(c.dtype);  // reject bad values at load time
  if (c.workers < 1) throw InputError("config: workers must be at least 1");
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  try {
    return from_json_text(read_text_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::string ExperimentConfig::to_json_text() const {
  json j;
  j["model"] = {{"weights", weights},
                {"config", model_config},
                {"tokenizer", tokenizer},
                {"name_map", name_map}};
  j["data"] = {{"dir", data_dir},
               {"id_vocab", id_vocab},
               {"ood_vocab", ood_vocab},
               {"n_train", gen.n_train},
               {"n_test_id", gen.n_test_id},
               {"n_test_ood", gen.n_test_ood},
               {"npi_base", gen.npi_base},
               {"npi_source", gen.npi_source}};
  j["sweep"] = {{"kinds", sweep_kinds},
                {"slots", sweep_slots},
                {"with_last", sweep_with_last},
                {"constructions", sweep_constructions},
                {"intervention", intervention}};
  j["das"] = {{"kind", das_kind},
              {"slots", das_slots},
              {"with_last", das_with_last},
              {"constructions", das_constructions},
              {"lr", train.lr},
              {"warmup", train.warmup},
              {"batch_size", train.batch_size},
              {"steps", train.steps}};
  j["steer"] = {{"heads", steer_heads},
                {"alphas", alphas},
                {"benchmark", benchmark},
                {"mode", benchmark_mode}};
  j["out"] = out;
  j["seed"] = seed;
  j["dtype"] = dtype;
  j["workers"] = workers;
  return j.dump(2) + "\n";
}

RunManifest::RunManifest(std::string command, ExperimentConfig cfg)
    : command_(std::move(command)),
      cfg_(std::move(cfg)),
      start_(std::chrono::steady_clock::now()) {
  const std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &utc);
  started_at_ = buf;
}

void RunManifest::note_input(const fs::path& path) {
  inputs_[path.generic_string()] = hex64(hash_file(path));
}

void RunManifest::note_output(const fs::path& out_dir, const fs::path& rel) {
  outputs_[rel.generic_string()] = hex64(hash_file(out_dir / rel));
}

void RunManifest::count(const std::string& key, std::int64_t n) { counts_[key] += n; }

std::string RunManifest::to_json_text() const {
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  json j;
  j["tool"] = std::string("patchlab ") + kVersion;
  j["command"] = command_;
  j["config"] = json::parse(cfg_.to_json_text());
  j["inputs"] = inputs_;
  j["outputs"] = outputs_;
  j["counts"] = counts_;
  j["wall_clock"] = {{"started_at", started_at_}, {"seconds", seconds}};
  return j.dump(2) + "\n";
}

void RunManifest::write(const fs::path& out_dir) const {
  fs::create_directories(out_dir);
  write_text_file_atomic(out_dir / "manifest.json", to_json_text());
}

namespace {

fs::path dataset_dir(const ExperimentConfig& cfg) {
  return cfg.data_dir.empty() ? fs::path(cfg.out) / "data" : fs::path(cfg.data_dir);
}

struct ModelFiles {
  fs::path weights, config, vocab, merges;
};

ModelFiles resolve_model_files(const ExperimentConfig& cfg) {
  if (cfg.weights.empty())
    throw InputError("no model: set model.weights in the config or pass --model");
  ModelFiles f;
  f.weights = cfg.weights;
  const fs::path home = f.weights.parent_path();
  f.config = cfg.model_config.empty() ? home / "config.json" : fs::path(cfg.model_config);
  const fs::path tok = cfg.tokenizer.empty() ? home : fs::path(cfg.tokenizer);
  if (fs::is_directory(tok)) {
    f.vocab = tok / "vocab.json";
    f.merges = tok / "merges.txt";
  } else {
    f.vocab = tok;
    f.merges = tok.parent_path() / "merges.txt";
  }
  return f;
}

template <typename Scalar>
Model<Scalar> load_model_files(const ModelFiles& f, const ExperimentConfig& cfg,
                               RunManifest& man) {
  man.note_input(f.config);
  man.note_input(f.weights);
  const ModelConfig mc = ModelConfig::load(f.config);
  std::map<std::string, std::string> names;
  if (!cfg.name_map.empty()) {
    man.note_input(cfg.name_map);
    names = load_name_map(cfg.name_map);
  }
  return load_model<Scalar>(f.weights, mc, names);
}

Tokenizer load_tokenizer_files(const ModelFiles& f, RunManifest& man) {
  man.note_input(f.vocab);
  man.note_input(f.merges);
  return Tokenizer::load(f.vocab, f.merges);
}

VocabularySet load_vocab_or_builtin(const std::string& path, bool ood, RunManifest& man) {
  if (path.empty()) return ood ? builtin_ood_vocab() : builtin_id_vocab();
  man.note_input(path);
  return load_vocab(path);
}

std::vector<std::string> list_constructions(const fs::path& dir,
                                            const std::vector<std::string>& requested) {
  if (!requested.empty()) return requested;
  if (!fs::is_directory(dir))
    throw InputError("dataset directory '" + dir.string() +
                     "' does not exist (run datagen first, or set data.dir)");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl")
      out.push_back(e.path().stem().string());
  std::sort(out.begin(), out.end());
  if (out.empty())
    throw InputError("no .jsonl dataset files under '" + dir.string() + "'");
  return out;
}

DatasetSplit load_construction(const fs::path& dir, const std::string& construction,
                               RunManifest& man) {
  const fs::path file = dir / (construction + ".jsonl");
  man.note_input(file);
  DatasetSplit s;
  for (MinimalPair& p : read_pairs(file)) {
    if (p.split == "train")
      s.train.push_back(std::move(p));
    else if (p.split == "id")
      s.test_id.push_back(std::move(p));
    else if (p.split == "ood")
      s.test_ood.push_back(std::move(p));
    else
      throw InputError(file.string() + ": unknown split tag '" + p.split + "'");
  }
  return s;
}

std::vector<TokenizedPair> tokenize_dropping(const Tokenizer& tok,
                                             const std::vector<MinimalPair>& pairs,
                                             std::int64_t& dropped) {
  std::vector<TokenizedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    try {
      out.push_back(tokenize_pair(tok, p));
    } catch (const AlignmentError&) {
      ++dropped;
    }
  }
  return out;
}

SiteKind parse_site_kind_name(const std::string& s) {
  if (s == "resid") return SiteKind::ResidOut;
  if (s == "attn") return SiteKind::AttnOut;
  if (s == "mlp") return SiteKind::MlpOut;
  if (s == "head") return SiteKind::HeadOut;
  throw InputError("unknown component kind '" + s + "' (expected resid, attn, mlp or head)");
}

// Slot labels shared by every pair of a construction; the templates pin them,
// so the first pair is representative. The templates' own "last" slot marks
// the final word, which the grid's trailing default column already covers, so
// it is dropped when that column is requested.
std::vector<std::string> construction_slots(const std::vector<MinimalPair>& pairs,
                                            bool with_last) {
  std::vector<std::string> out;
  if (pairs.empty()) return out;
  for (const auto& [name, span] : pairs.front().base_slots)
    if (!(with_last && name == "last")) out.push_back(name);
  return out;
}

struct InterventionSpec {
  SwapKind swap = SwapKind::Patch;
  fs::path das_path;            // set for das:<path>
  std::optional<double> alpha;  // set for scale:<alpha>
};

InterventionSpec parse_intervention(const std::string& text) {
  InterventionSpec s;
  if (text == "patch") return s;
  if (text.rfind("das:", 0) == 0) {
    s.swap = SwapKind::ProjectSwap;
    s.das_path = text.substr(4);
    if (s.das_path.empty())
      throw InputError("intervention 'das:' needs a direction file or directory");
    return s;
  }
  if (text.rfind("scale:", 0) == 0) {
    const std::string num = text.substr(6);
    char* end = nullptr;
    const double v = std::strtod(num.c_str(), &end);
    if (num.empty() || end != num.c_str() + num.size() || !std::isfinite(v))
      throw InputError("intervention 'scale:' needs a finite number, got '" + num + "'");
    s.alpha = v;
    return s;
  }
  throw InputError("unknown intervention '" + text +
                   "' (expected patch, das:<path> or scale:<alpha>)");
}

std::map<std::string, DasDirection> load_direction_set(const fs::path& path, RunManifest& man) {
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw InputError("no .json direction files under '" + path.string() + "'");
  } else {
    files.push_back(path);
  }
  std::map<std::string, DasDirection> out;
  for (const auto& f : files) {
    man.note_input(f);
    DasDirection d = load_direction(f);
    const std::string key = format_hookpoint(d.at);
    if (!out.emplace(key, std::move(d)).second)
      throw InputError("two direction files claim '" + key + "' under '" + path.string() + "'");
  }
  return out;
}

std::vector<Vec<double>> directions_for_grid(const SweepGrid& grid,
                                             const std::map<std::string, DasDirection>& set,
                                             const ModelConfig& mc, const fs::path& src) {
  const Index want = detail::site_width<double>(mc, grid.kind);
  std::vector<Vec<double>> out;
  out.reserve(static_cast<size_t>(grid.n_cells()));
  for (int l = 0; l < grid.n_layers; ++l)
    for (int c = 0; c < grid.n_cols(); ++c) {
      const std::string key = format_hookpoint(grid.cell(l, c));
      const auto it = set.find(key);
      if (it == set.end())
        throw InputError("no direction for '" + key + "' under '" + src.string() + "'");
      if (it->second.a.size() != want)
        throw InputError("direction for '" + key + "' has width " +
                         std::to_string(it->second.a.size()) + ", this site needs " +
                         std::to_string(want));
      out.push_back(it->second.a);
    }
  return out;
}

Heatmap average_heatmaps(const Heatmap& a, const Heatmap& b) {
  if (a.cols != b.cols || a.n_layers != b.n_layers || a.col_axis != b.col_axis)
    throw InvariantError("cannot average heatmaps computed over different grids");
  Heatmap avg = a;
  avg.values = (a.values + b.values) / 2.0;
  avg.counts = a.counts + b.counts;
  avg.skipped = a.skipped + b.skipped;
  return avg;
}

void write_heatmap_files(const fs::path& out_root, fs::path rel_base, const Heatmap& h,
                         const std::map<std::string, std::string>& meta, RunManifest& man) {
  fs::path csv = rel_base;
  csv += ".csv";
  fs::path side = rel_base;
  side += ".json";
  fs::create_directories((out_root / csv).parent_path());
  write_text_file_atomic(out_root / csv, heatmap_to_csv(h));
  write_text_file_atomic(out_root / side, heatmap_sidecar_json(h, meta));
  man.note_output(out_root, csv);
  man.note_output(out_root, side);
  man.count("heatmaps_written");
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

int cmd_datagen(const ExperimentConfig& cfg) {
  RunManifest man("datagen", cfg);
  const VocabularySet idv = load_vocab_or_builtin(cfg.id_vocab, false, man);
  const VocabularySet oodv = load_vocab_or_builtin(cfg.ood_vocab, true, man);
  GenOptions opts = cfg.gen;
  opts.seed = cfg.seed;

  // Generate and check everything before the first write, so input errors
  // cannot leave a half-written dataset behind.
  const DatasetSplit split = build_splits(idv, oodv, opts);
  const ValidationReport report = validate_split(split, idv, oodv, opts);

  const fs::path out = cfg.out;
  fs::create_directories(out / "data");
  for (const ConstructionInfo& ci : constructions()) {
    std::vector<MinimalPair> rows;
    for (const auto* list : {&split.train, &split.test_id, &split.test_ood})
      for (const auto& p : *list)
        if (p.construction == ci.id) rows.push_back(p);
    const fs::path rel = fs::path("data") / (ci.id + ".jsonl");
    write_pairs(out / rel, rows);
    man.note_output(out, rel);
    man.count("files_written");
  }
  write_text_file_atomic(out / "report.json", report.to_json_text());
  man.note_output(out, "report.json");
  man.count("files_written");

  man.count("pairs_train", static_cast<std::int64_t>(split.train.size()));
  man.count("pairs_test_id", static_cast<std::int64_t>(split.test_id.size()));
  man.count("pairs_test_ood", static_cast<std::int64_t>(split.test_ood.size()));
  man.count("violations", static_cast<std::int64_t>(report.issues.size()));
  man.write(out);

  if (!report.ok()) {
    std::fprintf(stderr, "datagen: %zu validation issue(s); see report.json\n",
                 report.issues.size());
    return 1;
  }
  std::printf("datagen: %zu constructions, %zu pairs -> %s\n", constructions().size(),
              split.train.size() + split.test_id.size() + split.test_ood.size(),
              (out / "data").string().c_str());
  return 0;
}

int cmd_validate(const ExperimentConfig& cfg) {
  RunManifest man("validate", cfg);
  const VocabularySet idv = load_vocab_or_builtin(cfg.id_vocab, false, man);
  const VocabularySet oodv = load_vocab_or_builtin(cfg.ood_vocab, true, man);
  GenOptions opts = cfg.gen;
  opts.seed = cfg.seed;

  const fs::path data = dataset_dir(cfg);
  DatasetSplit merged;
  for (const std::string& c : list_constructions(data, {})) {
    DatasetSplit s = load_construction(data, c, man);
    for (auto& p : s.train) merged.train.push_back(std::move(p));
    for (auto& p : s.test_id) merged.test_id.push_back(std::move(p));
    for (auto& p : s.test_ood) merged.test_ood.push_back(std::move(p));
  }
  man.count("pairs", static_cast<std::int64_t>(merged.train.size() + merged.test_id.size() +
                                               merged.test_ood.size()));

  const ValidationReport report = validate_split(merged, idv, oodv, opts);
  const fs::path out = cfg.out;
  fs::create_directories(out);
  write_text_file_atomic(out / "report.json", report.to_json_text());
  man.note_output(out, "report.json");
  man.count("violations", static_cast<std::int64_t>(report.issues.size()));
  man.write(out);

  if (!report.ok()) {
    std::fprintf(stderr, "validate: %zu issue(s); see report.json\n", report.issues.size());
    return 1;
  }
  std::printf("validate: dataset at %s is clean\n", data.string().c_str());
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg) {
  RunManifest man("sweep", cfg);
  parse_dtype(cfg.dtype);  // validated for the manifest; swaps always run in f64
  const InterventionSpec iv = parse_intervention(cfg.intervention);
  if (iv.alpha)
    throw InputError(
        "a sweep swaps activations between a pair's sides; 'scale:' steering belongs to the "
        "steer subcommand");

  const ModelFiles files = resolve_model_files(cfg);
  const Model<double> model = load_model_files<double>(files, cfg, man);
  const Tokenizer tok = load_tokenizer_files(files, man);

  std::map<std::string, DasDirection> direction_set;
  if (iv.swap == SwapKind::ProjectSwap) direction_set = load_direction_set(iv.das_path, man);

  const fs::path data = dataset_dir(cfg);
  const fs::path out = cfg.out;
  const std::vector<std::string> names = list_constructions(data, cfg.sweep_constructions);
  if (cfg.sweep_kinds.empty()) throw InputError("sweep: no component kinds configured");

  SweepStats stats;
  std::int64_t dropped = 0;
  for (const std::string& name : names) {
    const DatasetSplit split = load_construction(data, name, man);
    const std::vector<TokenizedPair> id_pairs =
        tokenize_dropping(tok, symmetrize(split.test_id), dropped);
    const std::vector<TokenizedPair> ood_pairs =
        tokenize_dropping(tok, symmetrize(split.test_ood), dropped);
    if (id_pairs.empty() || ood_pairs.empty()) {
      std::fprintf(stderr, "sweep: skipping %s: no usable %s test pairs\n", name.c_str(),
                   id_pairs.empty() ? "ID" : "OOD");
      man.count("constructions_skipped");
      continue;
    }

    const std::vector<std::string> slots =
        cfg.sweep_slots.empty() ? construction_slots(split.test_id, cfg.sweep_with_last)
                                : cfg.sweep_slots;
    for (const std::string& kind_name : cfg.sweep_kinds) {
      const SiteKind kind = parse_site_kind_name(kind_name);
      const SweepGrid grid =
          kind == SiteKind::HeadOut
              ? head_grid(model.config.n_layers, model.config.n_heads)
              : slot_grid(kind, model.config.n_layers, slots, cfg.sweep_with_last);

      std::vector<Vec<double>> dirs;
      const std::vector<Vec<double>>* dirs_ptr = nullptr;
      if (iv.swap == SwapKind::ProjectSwap) {
        dirs = directions_for_grid(grid, direction_set, model.config, iv.das_path);
        dirs_ptr = &dirs;
      }

      const Heatmap id =
          run_sweep(model, id_pairs, grid, iv.swap, dirs_ptr, cfg.workers, &stats);
      const Heatmap ood =
          run_sweep(model, ood_pairs, grid, iv.swap, dirs_ptr, cfg.workers, &stats);
      const Heatmap avg = average_heatmaps(id, ood);

      const auto meta = [&](const char* split_name, size_t n_pairs) {
        return std::map<std::string, std::string>{{"construction", name},
                                                  {"kind", kind_name},
                                                  {"split", split_name},
                                                  {"intervention", cfg.intervention},
                                                  {"pairs", std::to_string(n_pairs)}};
      };
      const fs::path base = fs::path("sweep") / name;
      write_heatmap_files(out, base / (kind_name + ".id"), id, meta("id", id_pairs.size()),
                          man);
      write_heatmap_files(out, base / (kind_name + ".ood"), ood,
                          meta("ood", ood_pairs.size()), man);
      write_heatmap_files(out, base / (kind_name + ".avg"), avg,
                          meta("avg", id_pairs.size() + ood_pairs.size()), man);
      std::printf("sweep %s %s: %zu ID + %zu OOD pairs over %d cells\n", name.c_str(),
                  kind_name.c_str(), id_pairs.size(), ood_pairs.size(), grid.n_cells());
    }
  }

  man.count("constructions", static_cast<std::int64_t>(names.size()));
  man.count("pairs_dropped", dropped);
  man.count("pairs_swept", stats.pairs);
  man.count("cell_evaluations", stats.cell_evaluations);
  man.count("cells_skipped", stats.skipped);
  man.count("forward_passes", stats.forward_passes());
  man.write(out);
  return 0;
}

int cmd_das(const ExperimentConfig& cfg) {
  RunManifest man("das", cfg);
  parse_dtype(cfg.dtype);  // gradients always run in f64
  const ModelFiles files = resolve_model_files(cfg);
  const Model<double> model = load_model_files<double>(files, cfg, man);
  const Tokenizer tok = load_tokenizer_files(files, man);

  const fs::path data = dataset_dir(cfg);
  const fs::path out = cfg.out;
  const std::vector<std::string> names = list_constructions(data, cfg.das_constructions);

  DatasetSplit merged;
  std::vector<std::vector<std::string>> slot_sets;
  for (const std::string& name : names) {
    DatasetSplit s = load_construction(data, name, man);
    slot_sets.push_back(
        construction_slots(s.train.empty() ? s.test_id : s.train, cfg.das_with_last));
    for (auto& p : s.train) merged.train.push_back(std::move(p));
    for (auto& p : s.test_id) merged.test_id.push_back(std::move(p));
    for (auto& p : s.test_ood) merged.test_ood.push_back(std::move(p));
  }

  const SiteKind kind = parse_site_kind_name(cfg.das_kind);
  SweepGrid grid;
  if (kind == SiteKind::HeadOut) {
    grid = head_grid(model.config.n_layers, model.config.n_heads);
  } else {
    std::vector<std::string> slots = cfg.das_slots;
    if (slots.empty()) {
      // default to the slots every selected construction shares, so one grid
      // is meaningful across all folds
      std::set<std::string> shared(slot_sets.front().begin(), slot_sets.front().end());
      for (size_t i = 1; i < slot_sets.size(); ++i) {
        std::set<std::string> keep;
        for (const auto& s : slot_sets[i])
          if (shared.count(s)) keep.insert(s);
        shared = std::move(keep);
      }
      slots.assign(shared.begin(), shared.end());
      if (slots.empty() && !cfg.das_with_last)
        throw InputError(
            "the selected constructions share no slot labels; set das.slots or "
            "das.with_last");
    }
    grid = slot_grid(kind, model.config.n_layers, slots, cfg.das_with_last);
  }

  DasTrainConfig tcfg = cfg.train;
  tcfg.seed = cfg.seed;
  const std::vector<LooFold> folds =
      leave_one_out(model, tok, merged, names, grid, tcfg, cfg.workers);

  std::int64_t diverged = 0;
  for (const LooFold& fold : folds) {
    const fs::path base = fs::path("das") / fold.held_out;
    fs::create_directories(out / base / "directions");
    for (const DasDirection& d : fold.directions) {
      std::string stem = format_hookpoint(d.at);
      const size_t at = stem.find('@');
      if (at != std::string::npos) stem.replace(at, 1, "_at_");
      const fs::path rel = base / "directions" / (stem + ".json");
      save_direction(out / rel, d, tcfg);
      man.note_output(out, rel);
      man.count("directions");
      if (d.diverged) ++diverged;
    }
    const std::map<std::string, std::string> meta{
        {"held_out", fold.held_out},
        {"trained_on", join(fold.trained_on, ",")},
        {"steps", std::to_string(tcfg.steps)},
        {"seed", std::to_string(cfg.seed)}};
    auto id_meta = meta;
    id_meta["split"] = "id";
    auto ood_meta = meta;
    ood_meta["split"] = "ood";
    write_heatmap_files(out, base / "id", fold.id, id_meta, man);
    write_heatmap_files(out, base / "ood", fold.ood, ood_meta, man);
    std::printf("das fold %s: %zu directions, trained on %s\n", fold.held_out.c_str(),
                fold.directions.size(), join(fold.trained_on, ", ").c_str());
  }

  man.count("folds", static_cast<std::int64_t>(folds.size()));
  man.count("diverged", diverged);
  man.write(out);

  if (diverged > 0) {
    std::fprintf(stderr, "das: %lld direction(s) diverged during training\n",
                 static_cast<long long>(diverged));
    return 1;
  }
  return 0;
}

namespace {

template <typename Scalar>
int steer_impl(const ExperimentConfig& cfg, RunManifest& man) {
  const ModelFiles files = resolve_model_files(cfg);
  const Model<Scalar> model = load_model_files<Scalar>(files, cfg, man);
  const Tokenizer tok = load_tokenizer_files(files, man);

  if (cfg.benchmark.empty())
    throw InputError("steer needs a benchmark file: set steer.benchmark");
  man.note_input(cfg.benchmark);
  const std::vector<BenchmarkPair> pairs = read_benchmark_pairs(cfg.benchmark);

  BenchmarkMode mode;
  if (cfg.benchmark_mode == "whole")
    mode = BenchmarkMode::Whole;
  else if (cfg.benchmark_mode == "region")
    mode = BenchmarkMode::Region;
  else
    throw InputError("unknown benchmark mode '" + cfg.benchmark_mode +
                     "' (expected whole or region)");

  if (cfg.steer_heads.empty()) throw InputError("steer: no heads configured");
  std::vector<HookPoint> heads;
  std::set<std::pair<int, int>> seen;
  for (const std::string& text : cfg.steer_heads) {
    const HookPoint hp = parse_hookpoint(text);
    if (hp.kind != SiteKind::HeadOut)
      throw InputError("steering target '" + text + "' is not a head site");
    if (hp.position.kind != PositionSpec::Kind::Default)
      throw InputError("steering target '" + text +
                       "' carries a position; scaling applies at every position");
    if (hp.layer >= model.config.n_layers || hp.head >= model.config.n_heads)
      throw InputError("steering target '" + format_hookpoint(hp) +
                       "' does not exist in this model (" +
                       std::to_string(model.config.n_layers) + " layers, " +
                       std::to_string(model.config.n_heads) + " heads)");
    if (!seen.insert({hp.layer, hp.head}).second)
      throw InputError("steering target '" + text + "' is listed twice");
    heads.push_back(hp);
  }

  const InterventionSpec iv = parse_intervention(cfg.intervention);
  const std::vector<double> alphas = iv.alpha ? std::vector<double>{*iv.alpha} : cfg.alphas;
  if (alphas.empty()) throw InputError("steer: no alpha values configured");

  std::string csv = "alpha,category,correct,scored,accuracy\n";
  json rows = json::array();
  std::int64_t filtered = 0;  // tokenization-driven, so identical for every alpha
  for (const double alpha : alphas) {
    std::vector<SiteEdit<Scalar>> edits;
    for (const HookPoint& hp : heads) {
      SiteEdit<Scalar> e;
      e.kind = SiteKind::HeadOut;
      e.layer = hp.layer;
      e.head = hp.head;
      e.action = SiteEdit<Scalar>::Action::Scale;
      e.alpha = static_cast<Scalar>(alpha);
      edits.push_back(std::move(e));
    }
    const BenchmarkResult r = benchmark_accuracy(model, tok, pairs, mode, edits);

    csv += fmt(alpha) + ",overall," + std::to_string(r.correct) + "," +
           std::to_string(r.scored) + "," + fmt(r.accuracy) + "\n";
    json by_cat = json::object();
    for (const auto& [cat, score] : r.by_category) {
      const double acc =
          score.scored > 0 ? static_cast<double>(score.correct) / score.scored : 0.0;
      csv += fmt(alpha) + "," + cat + "," + std::to_string(score.correct) + "," +
             std::to_string(score.scored) + "," + fmt(acc) + "\n";
      by_cat[cat] = {{"correct", score.correct}, {"scored", score.scored}};
    }
    rows.push_back({{"alpha", alpha},
                    {"accuracy", r.accuracy},
                    {"correct", r.correct},
                    {"scored", r.scored},
                    {"filtered", r.filtered},
                    {"by_category", by_cat}});
    filtered = r.filtered;
    std::printf("steer alpha %s: %lld/%lld correct (%s), %lld filtered\n", fmt(alpha).c_str(),
                static_cast<long long>(r.correct), static_cast<long long>(r.scored),
                fmt(r.accuracy).c_str(), static_cast<long long>(r.filtered));
  }

  json report;
  report["mode"] = cfg.benchmark_mode;
  report["dtype"] = cfg.dtype;
  report["benchmark"] = cfg.benchmark;
  report["pairs"] = pairs.size();
  report["heads"] = cfg.steer_heads;
  report["rows"] = rows;

  const fs::path out = cfg.out;
  fs::create_directories(out / "steer");
  write_text_file_atomic(out / "steer" / "report.csv", csv);
  write_text_file_atomic(out / "steer" / "report.json", report.dump(2) + "\n");
  man.note_output(out, fs::path("steer") / "report.csv");
  man.note_output(out, fs::path("steer") / "report.json");
  man.count("alphas", static_cast<std::int64_t>(alphas.size()));
  man.count("heads", static_cast<std::int64_t>(heads.size()));
  man.count("pairs", static_cast<std::int64_t>(pairs.size()));
  man.count("filtered", filtered);
  man.write(out);
  return 0;
}

}  // namespace

int cmd_steer(const ExperimentConfig& cfg) {
  RunManifest man("steer", cfg);
  return parse_dtype(cfg.dtype) == Dtype::F32 ? steer_impl<float>(cfg, man)
                                              : steer_impl<double>(cfg, man);
}

}  // namespace patchlab
