#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "patchlab/pairs.hpp"

// Template-driven construction of minimal pairs: seven filler-gap
// constructions, eight NPI-licensing constructions, and a lexical control,
// each with an in-distribution template plus a structurally parallel variant
// and a second, disjoint vocabulary for out-of-distribution testing.

namespace patchlab {

// Category name -> word list. Items may be multi-word phrases; templates
// treat them as opaque fillers. The tag ("id" or "ood") selects which
// template variant the generator instantiates.
struct VocabularySet {
  std::string tag = "id";
  std::map<std::string, std::vector<std::string>> categories;

  const std::vector<std::string>& at(const std::string& category) const;
};

VocabularySet builtin_id_vocab();
VocabularySet builtin_ood_vocab();

std::string vocab_to_json_text(const VocabularySet& v);
VocabularySet vocab_from_json_text(const std::string& text);
VocabularySet load_vocab(const std::filesystem::path& path);
void save_vocab(const std::filesystem::path& path, const VocabularySet& v);

struct ConstructionInfo {
  std::string id;          // EWhK, EWhW, ..., Ctrl
  std::string phenomenon;  // "fgd", "npi", or "control"
  std::string alt_slot;    // slot that alternates between base and source
};

const std::vector<ConstructionInfo>& constructions();
const ConstructionInfo& construction_info(const std::string& id);

struct GenOptions {
  std::uint64_t seed = 2024;
  int n_train = 200;
  int n_test_id = 50;
  int n_test_ood = 50;
  std::string npi_base = "any";     // grammatical continuation of NPI bases
  std::string npi_source = "some";  // its replacement on the source side
};

// The canonical example sentence pair for one construction, produced by the
// same assembly path as generated data (lexical choices pinned instead of
// sampled).
MinimalPair table_row_example(const std::string& construction);

// n distinct pairs for one construction. Deterministic in (vocab, seed,
// opts); sentences never repeat within the returned list. Throws InputError
// when the vocabulary cannot produce n distinct sentences or lacks a
// category the template needs.
std::vector<MinimalPair> generate(const std::string& construction, const VocabularySet& vocab,
                                  int n, std::uint64_t seed, const GenOptions& opts = {});

// Appends the base/source-swapped copy of each pair, except NPI pairs, which
// keep their NPI-continuation-as-base orientation.
std::vector<MinimalPair> symmetrize(const std::vector<MinimalPair>& pairs);

struct DatasetSplit {
  std::vector<MinimalPair> train, test_id, test_ood;
};

// Per construction: n_train + n_test_id pairs from the in-distribution
// template and vocabulary (disjoint sentence sets), n_test_ood pairs from
// the variant template and vocabulary. Not symmetrized.
DatasetSplit build_splits(const VocabularySet& id_vocab, const VocabularySet& ood_vocab,
                          const GenOptions& opts = {});

struct ValidationIssue {
  std::string construction;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;

  bool ok() const { return issues.empty(); }
  std::string to_json_text() const;
};

// Checks the dataset contracts: split sizes, train/test sentence
// disjointness, vocabulary disjointness (per category and against the words
// appearing in OOD sentences), base/source minimality, NPI orientation, and
// the control's filler-to-continuation distance staying within one word of
// the filler-gap average.
ValidationReport validate_split(const DatasetSplit& split, const VocabularySet& id_vocab,
                                const VocabularySet& ood_vocab, const GenOptions& opts = {});

}  // namespace patchlab
