#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "patchlab/datagen.hpp"
#include "patchlab/fixture.hpp"
#include "patchlab/fsio.hpp"
#include "patchlab/tokenizer.hpp"

using namespace patchlab;
namespace fs = std::filesystem;

namespace {

std::string slot_text(const MinimalPair& p, PairSide side, const std::string& slot) {
  const auto& slots = side == PairSide::Base ? p.base_slots : p.source_slots;
  const auto& text = side == PairSide::Base ? p.base : p.source;
  const CharSpan s = slots.at(slot);
  return text.substr(static_cast<size_t>(s.begin), static_cast<size_t>(s.end - s.begin));
}

bool contains(const std::vector<std::string>& words, const std::string& w) {
  return std::find(words.begin(), words.end(), w) != words.end();
}

std::string dump_pairs(const std::vector<MinimalPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) out += pair_to_json_line(p) + "\n";
  return out;
}

const Tokenizer& fixture_tokenizer() {
  static const Tokenizer tok = [] {
    const fs::path dir = fs::temp_directory_path() / "patchlab_datagen_tests";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_tiny_model(dir);
    return Tokenizer::load(dir / "vocab.json", dir / "merges.txt");
  }();
  return tok;
}

// Token index range covering the slot plus the space that joins it to the
// previous word, by the token-owns-its-last-byte rule. The space is part of
// the region whose tokens may differ between the two sides: a tokenizer may
// fuse it into the slot's first word on one side and keep it separate on the
// other.
std::pair<size_t, size_t> token_range(const Tokenizer& tok, const std::string& text,
                                      CharSpan span) {
  if (span.begin > 0 && span.begin < span.end && text[static_cast<size_t>(span.begin) - 1] == ' ')
    --span.begin;
  const auto spans = tok.encode_spans(text);
  size_t i = 0;
  while (i < spans.size() && static_cast<int>(spans[i].end) <= span.begin) ++i;
  const size_t begin = i;
  while (i < spans.size() && static_cast<int>(spans[i].end) <= span.end) ++i;
  return {begin, i};
}

}  // namespace

TEST_CASE("the sixteen canonical pairs come out word for word") {
  const struct {
    const char* id;
    const char* base;
    const char* source;
    const char* y_base;
    const char* y_source;
  } rows[] = {
      {"EWhK", "The man knows who the teacher liked", "The man knows that the teacher liked",
       ".", "her"},
      {"EWhW", "The boy wondered who the doctor admired",
       "The boy wondered if the doctor admired", ".", "him"},
      {"MWh", "Then, who did the girl choose", "Then, did the girl choose", "?", "them"},
      {"RelCl", "The customer who the lady sounded like",
       "The customer and the lady sounded like", ".", "me"},
      {"Cleft", "It was the man that the boss scared", "It was clear that the boss scared", ".",
       "him"},
      {"PCleft", "Who the dancer is listening to", "That the dancer is listening to", "is",
       "you"},
      {"Topic", "Actually, the kid the guest hated", "Actually, the guest hated", ".", "them"},
      {"Cond", "The host will sleep if the guest eats", "The host will sleep while the guest eats",
       "any", "some"},
      {"DNeg", "No patient have liked", "The patient have liked", "any", "some"},
      {"SOnly", "Only the boys have", "Even the boys have", "any", "some"},
      {"Qnt", "These are all of the students who showed",
       "These are some of the students who showed", "any", "some"},
      {"EmbQ", "The senators wonder whether the man has found",
       "The senators know that the man has found", "any", "some"},
      {"SmpQ", "Has the actor sold", "The actor sold", "any", "some"},
      {"Sup", "This is the fastest kid that had liked", "This is the fast kid that had liked",
       "any", "some"},
      {"Only", "They are the only teachers that makes", "They are the upset teachers that makes",
       "any", "some"},
      {"Ctrl", "Paris is the capital of", "Rome is the capital of", "France", "Italy"},
  };
  for (const auto& row : rows) {
    CAPTURE(row.id);
    const MinimalPair p = table_row_example(row.id);
    CHECK(p.base == row.base);
    CHECK(p.source == row.source);
    CHECK(p.y_base == row.y_base);
    CHECK(p.y_source == row.y_source);
    CHECK(p.construction == row.id);

    // the alternating slot really covers the words that alternate
    const std::string alt = construction_info(row.id).alt_slot;
    REQUIRE(p.base_slots.count(alt) == 1);
    REQUIRE(p.source_slots.count(alt) == 1);
  }

  // spot-check a few alternating spans
  const MinimalPair ewhk = table_row_example("EWhK");
  CHECK(slot_text(ewhk, PairSide::Base, "filler") == "who");
  CHECK(slot_text(ewhk, PairSide::Source, "filler") == "that");
  const MinimalPair smpq = table_row_example("SmpQ");
  CHECK(slot_text(smpq, PairSide::Base, "licensor") == "Has the");
  CHECK(slot_text(smpq, PairSide::Source, "licensor") == "The");
  const MinimalPair topic = table_row_example("Topic");
  CHECK(slot_text(topic, PairSide::Base, "filler") == "the kid");
  CHECK(slot_text(topic, PairSide::Source, "filler").empty());
  const MinimalPair ctrl = table_row_example("Ctrl");
  CHECK(slot_text(ctrl, PairSide::Base, "filler") == "Paris");
  CHECK(slot_text(ctrl, PairSide::Source, "filler") == "Rome");

  CHECK_THROWS_AS(table_row_example("Island"), InputError);
}

TEST_CASE("canonical lexical items live in the in-distribution vocabulary") {
  const VocabularySet v = builtin_id_vocab();
  for (const char* w : {"man", "teacher", "boy", "doctor", "girl", "customer", "lady", "boss",
                        "dancer", "kid", "guest", "host", "patient", "actor"})
    CHECK(contains(v.at("noun_person"), w));
  for (const char* w : {"boys", "students", "senators", "teachers"})
    CHECK(contains(v.at("noun_plural"), w));
  for (const char* w : {"liked", "admired", "scared", "hated", "showed"})
    CHECK(contains(v.at("verb_past"), w));
  CHECK(contains(v.at("verb_base"), "choose"));
  CHECK(contains(v.at("verb_3sg"), "eats"));
  CHECK(contains(v.at("verb_3sg"), "makes"));
  CHECK(contains(v.at("verb_intr"), "sleep"));
  CHECK(contains(v.at("verb_past_prep"), "sounded like"));
  CHECK(contains(v.at("verb_prog_prep"), "listening to"));
  CHECK(contains(v.at("verb_ppast"), "found"));
  CHECK(contains(v.at("verb_ppast"), "sold"));
  CHECK(v.at("adj_sup")[0] == "fastest");
  CHECK(v.at("adj_plain")[0] == "fast");
  CHECK(v.at("capital_city")[0] == "Paris");
  CHECK(v.at("capital_country")[0] == "France");
  CHECK(v.at("capital_city")[1] == "Rome");
  CHECK(v.at("capital_country")[1] == "Italy");
}

TEST_CASE("both vocabularies are sizeable and disjoint category by category") {
  const VocabularySet id = builtin_id_vocab();
  const VocabularySet ood = builtin_ood_vocab();
  CHECK(id.tag == "id");
  CHECK(ood.tag == "ood");
  REQUIRE(id.categories.size() == ood.categories.size());
  for (const auto& [cat, words] : id.categories) {
    CAPTURE(cat);
    CHECK(words.size() >= 40);
    REQUIRE(ood.categories.count(cat) == 1);
    const auto& other = ood.categories.at(cat);
    CHECK(other.size() >= 40);
    const std::set<std::string> id_set(words.begin(), words.end());
    CHECK(id_set.size() == words.size());  // no duplicates within a list
    for (const auto& w : other) CHECK(id_set.count(w) == 0);
  }
  CHECK(id.at("adj_sup").size() == id.at("adj_plain").size());
  CHECK(id.at("capital_city").size() == id.at("capital_country").size());
  CHECK(ood.at("adj_sup").size() == ood.at("adj_plain").size());
  CHECK(ood.at("capital_city").size() == ood.at("capital_country").size());

  CHECK_THROWS_AS(id.at("interjection"), InputError);
}

TEST_CASE("vocabulary files round trip") {
  const VocabularySet v = builtin_ood_vocab();
  const VocabularySet back = vocab_from_json_text(vocab_to_json_text(v));
  CHECK(back.tag == v.tag);
  CHECK(back.categories == v.categories);

  const fs::path path = fs::temp_directory_path() / "patchlab_datagen_tests" / "vocab.json";
  fs::create_directories(path.parent_path());
  save_vocab(path, v);
  CHECK(load_vocab(path).categories == v.categories);

  CHECK_THROWS_AS(vocab_from_json_text("nope"), InputError);
  CHECK_THROWS_AS(vocab_from_json_text(R"({"tag":"id"})"), InputError);
  CHECK_THROWS_AS(vocab_from_json_text(R"({"tag":"id","categories":{"x":"y"}})"), InputError);
  CHECK_THROWS_AS(vocab_from_json_text(R"({"tag":"id","categories":{"x":[3]}})"), InputError);
}

TEST_CASE("generation is deterministic, distinct, and sized as asked") {
  const VocabularySet id = builtin_id_vocab();

  CHECK(generate("EWhK", id, 0, 7).empty());

  const std::vector<MinimalPair> a = generate("Cleft", id, 40, 99);
  const std::vector<MinimalPair> b = generate("Cleft", id, 40, 99);
  REQUIRE(a.size() == 40);
  CHECK(dump_pairs(a) == dump_pairs(b));  // byte-identical rerun

  const std::vector<MinimalPair> c = generate("Cleft", id, 40, 100);
  CHECK(dump_pairs(a) != dump_pairs(c));  // the seed matters

  std::set<std::string> bases, sources;
  for (const auto& p : a) {
    CHECK(p.construction == "Cleft");
    CHECK(p.split == "id");
    bases.insert(p.base);
    sources.insert(p.source);
  }
  CHECK(bases.size() == 40);
  CHECK(sources.size() == 40);

  // a vocabulary this small cannot fill the request
  VocabularySet tiny = id;
  tiny.categories["noun_person"] = {"man", "teacher", "boy"};
  tiny.categories["verb_past"] = {"liked"};
  CHECK_THROWS_AS(generate("EWhK", tiny, 50, 1), InputError);

  VocabularySet missing = id;
  missing.categories.erase("verb_past_prep");
  CHECK_THROWS_AS(generate("RelCl", missing, 5, 1), InputError);

  GenOptions npi;
  npi.npi_base = "ever";
  for (const auto& p : generate("DNeg", id, 10, 3, npi)) CHECK(p.y_base == "ever");
  npi.npi_base = "never";
  CHECK_THROWS_AS(generate("DNeg", id, 10, 3, npi), InputError);

  CHECK_THROWS_AS(generate("Gap", id, 5, 1), InputError);
}

TEST_CASE("symmetrize doubles everything except NPI pairs") {
  const VocabularySet id = builtin_id_vocab();
  std::vector<MinimalPair> pairs = generate("Topic", id, 5, 11);
  const std::vector<MinimalPair> npi = generate("Qnt", id, 5, 11);
  const std::vector<MinimalPair> ctrl = generate("Ctrl", id, 5, 11);
  pairs.insert(pairs.end(), npi.begin(), npi.end());
  pairs.insert(pairs.end(), ctrl.begin(), ctrl.end());

  const std::vector<MinimalPair> doubled = symmetrize(pairs);
  CHECK(doubled.size() == 25);  // 10 + 5 + 10

  // the swapped copy follows its original with every side exchanged
  CHECK(doubled[1].base == doubled[0].source);
  CHECK(doubled[1].source == doubled[0].base);
  CHECK(doubled[1].y_base == doubled[0].y_source);
  CHECK(doubled[1].y_source == doubled[0].y_base);
  CHECK(doubled[1].base_slots == doubled[0].source_slots);

  int qnt = 0;
  for (const auto& p : doubled)
    if (p.construction == "Qnt") {
      ++qnt;
      CHECK(p.y_base == "any");  // orientation preserved
    }
  CHECK(qnt == 5);

  // applying it twice only repeats the same set of sentences
  const std::vector<MinimalPair> twice = symmetrize(doubled);
  const auto key_set = [](const std::vector<MinimalPair>& v) {
    std::set<std::string> keys;
    for (const auto& p : v) keys.insert(p.base + "\x1f" + p.source);
    return keys;
  };
  CHECK(twice.size() == 45);  // FGD and control copies double again, NPI stays
  CHECK(key_set(twice) == key_set(doubled));
}

TEST_CASE("token-level differences stay inside the alternating slot") {
  const Tokenizer& tok = fixture_tokenizer();
  const VocabularySet id = builtin_id_vocab();
  const VocabularySet ood = builtin_ood_vocab();
  for (const auto& c : constructions()) {
    CAPTURE(c.id);
    for (const VocabularySet* v : {&id, &ood}) {
      for (const auto& p : generate(c.id, *v, 8, 5)) {
        const std::string alt = construction_info(c.id).alt_slot;
        const auto [bb, be] = token_range(tok, p.base, p.base_slots.at(alt));
        const auto [sb, se] = token_range(tok, p.source, p.source_slots.at(alt));
        const std::vector<int> bt = tok.encode(p.base);
        const std::vector<int> st = tok.encode(p.source);

        REQUIRE(bb == sb);  // shared prefix has the same length
        for (size_t i = 0; i < bb; ++i) CHECK(bt[i] == st[i]);
        REQUIRE(bt.size() - be == st.size() - se);
        for (size_t i = 0; i < bt.size() - be; ++i) CHECK(bt[be + i] == st[se + i]);
      }
    }
  }
}

TEST_CASE("canonical pairs tokenize with one-token continuations on the tiny model") {
  const Tokenizer& tok = fixture_tokenizer();
  for (const char* id : {"EWhK", "EWhW", "MWh", "RelCl", "Cleft", "PCleft", "Topic", "Cond",
                         "DNeg", "SOnly", "Qnt", "EmbQ", "SmpQ", "Sup", "Only"}) {
    CAPTURE(id);
    const TokenizedPair tp = tokenize_pair(tok, table_row_example(id));
    CHECK(tp.y_base_id >= 0);
    CHECK(tp.y_source_id >= 0);
  }
  // proper-noun continuations stay multi-token here, which is the exclusion path
  CHECK_THROWS_AS(tokenize_pair(tok, table_row_example("Ctrl")), AlignmentError);
}

TEST_CASE("a full split passes validation and its own contracts") {
  const VocabularySet id = builtin_id_vocab();
  const VocabularySet ood = builtin_ood_vocab();
  GenOptions opts;
  opts.seed = 77;
  opts.n_train = 24;
  opts.n_test_id = 6;
  opts.n_test_ood = 6;

  const DatasetSplit split = build_splits(id, ood, opts);
  CHECK(split.train.size() == 16 * 24);
  CHECK(split.test_id.size() == 16 * 6);
  CHECK(split.test_ood.size() == 16 * 6);

  const DatasetSplit again = build_splits(id, ood, opts);
  CHECK(dump_pairs(split.train) == dump_pairs(again.train));
  CHECK(dump_pairs(split.test_id) == dump_pairs(again.test_id));
  CHECK(dump_pairs(split.test_ood) == dump_pairs(again.test_ood));

  const ValidationReport report = validate_split(split, id, ood, opts);
  for (const auto& i : report.issues) CAPTURE(i.construction + ": " + i.detail);
  CHECK(report.ok());
  CHECK(report.to_json_text().find("\"ok\": true") != std::string::npos);

  // overlapping vocabularies are refused outright
  VocabularySet bad = ood;
  bad.categories["verb_past"].push_back("liked");
  CHECK_THROWS_AS(build_splits(id, bad, opts), InputError);
}

TEST_CASE("validation pinpoints injected contract violations") {
  const VocabularySet id = builtin_id_vocab();
  const VocabularySet ood = builtin_ood_vocab();
  GenOptions opts;
  opts.seed = 13;
  opts.n_train = 10;
  opts.n_test_id = 4;
  opts.n_test_ood = 4;
  const DatasetSplit clean = build_splits(id, ood, opts);
  REQUIRE(validate_split(clean, id, ood, opts).ok());

  const auto issues_mentioning = [&](const DatasetSplit& s, const std::string& needle) {
    int hits = 0;
    for (const auto& i : validate_split(s, id, ood, opts).issues)
      if (i.detail.find(needle) != std::string::npos) ++hits;
    return hits;
  };

  // a train sentence smuggled into the ID test set
  DatasetSplit tampered = clean;
  tampered.test_id[0] = tampered.train[0];
  tampered.test_id[0].split = "id";
  CHECK(issues_mentioning(tampered, "both train and ID test") >= 1);

  // an NPI pair flipped to the wrong orientation
  tampered = clean;
  for (auto& p : tampered.train)
    if (p.construction == "DNeg") {
      p.y_base = "some";
      break;
    }
  CHECK(issues_mentioning(tampered, "y_base 'some'") == 1);

  // an edit outside the alternating slot
  tampered = clean;
  tampered.train[0].base += " suddenly";
  CHECK(issues_mentioning(tampered, "outside the alternating slot") == 1);

  // a missing pair
  tampered = clean;
  tampered.train.pop_back();
  CHECK(issues_mentioning(tampered, "expected 10") >= 1);

  // an in-distribution word inside an OOD sentence
  tampered = clean;
  for (auto& p : tampered.test_ood)
    if (p.construction == "EWhK") {
      const size_t at = p.base.find(' ');
      p.base = "The teacher" + p.base.substr(p.base.find(' ', at + 1));
      p.source = "The teacher" + p.source.substr(p.source.find(' ', at + 1));
      break;
    }
  CHECK(issues_mentioning(tampered, "in-distribution word 'teacher'") >= 1);

  // a wrong split tag
  tampered = clean;
  tampered.train[3].split = "id";
  CHECK(issues_mentioning(tampered, "tagged 'id'") == 1);

  // a control pair drifting away from the filler-gap distances
  tampered = clean;
  for (auto& p : tampered.test_ood)
    if (p.construction == "Ctrl") {
      p = MinimalPair{};
      p.construction = "Ctrl";
      p.split = "ood";
      p.base = "Tokyo is quite simply the capital of";
      p.source = "Hanoi is quite simply the capital of";
      p.y_base = "Japan";
      p.y_source = "Vietnam";
      p.base_slots["filler"] = {0, 5};
      p.source_slots["filler"] = {0, 5};
      break;
    }
  CHECK(issues_mentioning(tampered, "more than one word from the filler-gap mean") == 1);
}

TEST_CASE("the construction catalogue covers three phenomena") {
  const auto& all = constructions();
  REQUIRE(all.size() == 16);
  int fgd = 0, npi = 0, control = 0;
  for (const auto& c : all) {
    if (c.phenomenon == "fgd") ++fgd;
    if (c.phenomenon == "npi") ++npi;
    if (c.phenomenon == "control") ++control;
    CHECK((c.alt_slot == "filler" || c.alt_slot == "licensor"));
  }
  CHECK(fgd == 7);
  CHECK(npi == 8);
  CHECK(control == 1);
  CHECK(construction_info("Sup").phenomenon == "npi");
  CHECK_THROWS_AS(construction_info("Wh"), InputError);
}
