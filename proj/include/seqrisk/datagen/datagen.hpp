#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqrisk/datagen/corpus.hpp"
#include "seqrisk/seqmodel/vocabulary.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace datagen {

/// A function symbol opens a phrase and takes `arity` content symbols (0..2).
/// A domain without function symbols uses bare one-symbol content phrases.
struct FunctionSymbol {
  std::string source;
  std::string target;
  int arity = 0;

  bool operator==(const FunctionSymbol&) const = default;
};

struct LexiconEntry {
  std::string source;
  std::string target;

  bool operator==(const LexiconEntry&) const = default;
};

/// One synthetic domain.
///
/// A source sentence is a sequence of phrases; a phrase is a function symbol
/// followed by `arity` content symbols. Phrase symbols follow a Markov chain
/// whose strong transitions point into `frequent_functions`; each function
/// symbol also prefers a small frame of content symbols. Both structures are
/// drawn from `structure_seed`, so the JSON document fully determines the
/// domain. The target applies the lexical mapping phrase by phrase and, under
/// the "substitute_swap" rule, swaps the two content symbols of arity-2
/// phrases.
struct DomainSpec {
  std::string name;
  std::vector<FunctionSymbol> functions;
  std::vector<LexiconEntry> lexicon;
  int min_phrases = 2;
  int max_phrases = 5;
  std::string rule = "substitute_swap";
  // Indices into `functions` that the chain favours.
  std::vector<int> frequent_functions;
  // Probability mass of the favoured successors / favoured content frame.
  double transition_concentration = 0.8;
  double frame_concentration = 0.8;
  int successors_per_function = 2;
  int frame_size = 4;
  std::uint64_t structure_seed = 1;

  void validate() const;
  bool operator==(const DomainSpec&) const = default;
};

void to_json(nlohmann::json& j, const DomainSpec& s);
void from_json(const nlohmann::json& j, DomainSpec& s);

DomainSpec load_domain_spec(const std::filesystem::path& path);

/// Checks the cross-domain invariants: identical function symbols, disjoint
/// content lexicons.
void check_domain_set(std::span<const DomainSpec> specs);

/// Vocabulary over the union of all domains (specials, function symbols, then
/// each domain's lexicon; source side before target side).
seqmodel::Vocabulary build_vocabulary(std::span<const DomainSpec> specs);

/// Source-side phrase structure of one sentence, as indices into the spec.
struct PhrasePlan {
  int function = -1;  // -1 for a bare content phrase
  std::vector<int> content;
};

/// Deterministic sampler for a domain (chain and frames derived once).
class DomainSampler {
 public:
  DomainSampler(DomainSpec spec, const seqmodel::Vocabulary& vocab);

  // Redraws phrase sequences until one contains a content symbol.
  std::vector<PhrasePlan> sample_plan(std::mt19937_64& rng) const;
  SentencePair realize(std::span<const PhrasePlan> plan) const;
  /// Target of a source id sequence under this domain's transform.
  TokenSeq transform(std::span<const int> source) const;

  const DomainSpec& spec() const { return spec_; }
  // Successor weights after function `from`; from == -1 gives the start distribution.
  const std::vector<double>& transition_row(int from) const;

 private:
  std::vector<PhrasePlan> sample_phrases(std::mt19937_64& rng) const;

  DomainSpec spec_;
  std::vector<int> fn_src_, fn_tgt_, lex_src_, lex_tgt_;
  std::unordered_map<int, int> fn_of_src_, lex_of_src_;
  std::vector<std::vector<double>> transitions_;  // [1 + F][F], row 0 is the start
  std::vector<std::vector<double>> frames_;       // [F][|lexicon|]
};

/// n pairs drawn from the domain; deterministic under seed.
Corpus generate_corpus(const DomainSpec& spec, const seqmodel::Vocabulary& vocab, int n, std::uint64_t seed);

struct SplitSizes {
  int train = 0;
  int dev = 0;
  int test = 0;
};

struct Splits {
  Corpus train, dev, test;
};

/// Disjoint splits: each split has its own derived seed, and sources already
/// used by an earlier split are redrawn.
Splits generate_splits(const DomainSpec& spec, const seqmodel::Vocabulary& vocab, const SplitSizes& sizes,
                       std::uint64_t seed, const Corpus& exclude = {});

enum class Fluency { fluent, partially_fluent, disfluent };
const char* to_string(Fluency f);

/// Target-side phrase grammar over one or more domains.
class TargetGrammar {
 public:
  TargetGrammar(std::span<const DomainSpec> specs, const seqmodel::Vocabulary& vocab);

  Fluency check(std::span<const int> tokens) const;
  bool parses(std::span<const int> tokens) const;
  // Share of length-3 windows (over the boundary-padded sequence) that occur
  // in some grammatical sentence.
  double window_score(std::span<const int> tokens) const;

  static constexpr double kPartialThreshold = 0.8;

 private:
  enum Kind : std::uint8_t { kInvalid, kFunction0, kFunction1, kFunction2, kContent, kBoundary };
  Kind kind(int id) const;

  std::vector<Kind> kinds_;
  bool bare_content_ = false;
};

/// Classifies content ids (specials stripped) against the grammar of `spec`.
Fluency target_grammar_check(std::span<const int> tokens, const DomainSpec& spec, const seqmodel::Vocabulary& vocab);

}  // namespace datagen
SEQRISK_END_NAMESPACE
