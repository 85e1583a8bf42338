#include "seqrisk/datagen/datagen.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "seqrisk/json_fields.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace datagen {

using seqmodel::Vocabulary;

namespace {

int draw(const std::vector<double>& weights, std::mt19937_64& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return static_cast<int>(i);
  }
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return static_cast<int>(i);
  }
  throw ContractError("draw: all weights are zero");
}

// `count` distinct picks from `pool`, in draw order.
std::vector<int> pick_distinct(std::vector<int> pool, int count, std::mt19937_64& rng) {
  std::vector<int> out;
  while (static_cast<int>(out.size()) < count && !pool.empty()) {
    const auto i = static_cast<std::size_t>(rng() % pool.size());
    out.push_back(pool[i]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(i));
  }
  return out;
}

std::vector<double> concentrated(std::size_t size, const std::vector<int>& favoured, double concentration) {
  std::vector<double> w(size, (1.0 - concentration) / static_cast<double>(size));
  for (int f : favoured) w[static_cast<std::size_t>(f)] += concentration / static_cast<double>(favoured.size());
  return w;
}

int require_id(const Vocabulary& vocab, const std::string& token, const std::string& domain) {
  const auto id = vocab.find(token);
  if (!id) throw ContractError("domain " + domain + ": symbol '" + token + "' missing from the vocabulary");
  return *id;
}

}  // namespace

void DomainSpec::validate() const {
  const std::string where = "domain " + (name.empty() ? std::string("<unnamed>") : name);
  auto fail = [&](const std::string& field, const std::string& why) {
    throw ConfigError(where + ": " + field + ": " + why);
  };
  if (name.empty()) fail("name", "must be non-empty");
  if (lexicon.empty()) fail("lexicon", "must contain at least one entry");
  if (min_phrases < 1) fail("min_phrases", "must be at least 1");
  if (max_phrases < min_phrases) fail("max_phrases", "must be at least min_phrases");
  if (rule != "substitute" && rule != "substitute_swap") fail("rule", "expected \"substitute\" or \"substitute_swap\"");
  if (!(transition_concentration >= 0.0 && transition_concentration <= 1.0)) {
    fail("transition_concentration", "must be in [0, 1]");
  }
  if (!(frame_concentration >= 0.0 && frame_concentration <= 1.0)) fail("frame_concentration", "must be in [0, 1]");
  if (successors_per_function < 1) fail("successors_per_function", "must be positive");
  if (frame_size < 1) fail("frame_size", "must be positive");
  std::set<std::string> symbols;
  auto claim = [&](const std::string& s, const char* field) {
    if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos) fail(field, "symbols must be non-empty words");
    if (!symbols.insert(s).second) fail(field, "symbol '" + s + "' used twice");
  };
  for (const auto& f : functions) {
    claim(f.source, "functions");
    claim(f.target, "functions");
    if (f.arity < 0 || f.arity > 2) fail("functions", "arity of '" + f.source + "' must be 0, 1 or 2");
  }
  if (!functions.empty() && std::none_of(functions.begin(), functions.end(), [](const auto& f) { return f.arity > 0; })) {
    fail("functions", "at least one function symbol must take content");
  }
  for (const auto& e : lexicon) {
    claim(e.source, "lexicon");
    claim(e.target, "lexicon");
  }
  for (int i : frequent_functions) {
    if (i < 0 || i >= static_cast<int>(functions.size())) fail("frequent_functions", "index out of range");
  }
}

void to_json(nlohmann::json& j, const DomainSpec& s) {
  nlohmann::json fns = nlohmann::json::array();
  for (const auto& f : s.functions) fns.push_back({{"source", f.source}, {"target", f.target}, {"arity", f.arity}});
  nlohmann::json lex = nlohmann::json::array();
  for (const auto& e : s.lexicon) lex.push_back({{"source", e.source}, {"target", e.target}});
  j = nlohmann::json{{"name", s.name},
                     {"functions", fns},
                     {"lexicon", lex},
                     {"min_phrases", s.min_phrases},
                     {"max_phrases", s.max_phrases},
                     {"rule", s.rule},
                     {"frequent_functions", s.frequent_functions},
                     {"transition_concentration", s.transition_concentration},
                     {"frame_concentration", s.frame_concentration},
                     {"successors_per_function", s.successors_per_function},
                     {"frame_size", s.frame_size},
                     {"structure_seed", s.structure_seed}};
}

void from_json(const nlohmann::json& j, DomainSpec& s) {
  JsonFields f(j, "domain");
  f.get("name", s.name);
  if (f.take("functions")) {
    const auto& arr = j.at("functions");
    if (!arr.is_array()) throw ConfigError("domain.functions: expected an array");
    s.functions.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      JsonFields e(arr[i], "domain.functions[" + std::to_string(i) + "]");
      FunctionSymbol fn;
      e.get("source", fn.source);
      e.get("target", fn.target);
      e.get("arity", fn.arity);
      e.reject_unknown();
      s.functions.push_back(fn);
    }
  }
  if (f.take("lexicon")) {
    const auto& arr = j.at("lexicon");
    if (!arr.is_array()) throw ConfigError("domain.lexicon: expected an array");
    s.lexicon.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      JsonFields e(arr[i], "domain.lexicon[" + std::to_string(i) + "]");
      LexiconEntry entry;
      e.get("source", entry.source);
      e.get("target", entry.target);
      e.reject_unknown();
      s.lexicon.push_back(entry);
    }
  }
  f.get("min_phrases", s.min_phrases);
  f.get("max_phrases", s.max_phrases);
  f.get("rule", s.rule);
  f.get("frequent_functions", s.frequent_functions);
  f.get("transition_concentration", s.transition_concentration);
  f.get("frame_concentration", s.frame_concentration);
  f.get("successors_per_function", s.successors_per_function);
  f.get("frame_size", s.frame_size);
  f.get("structure_seed", s.structure_seed);
  f.reject_unknown();
}

DomainSpec load_domain_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open domain spec " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("domain spec " + path.string() + ": " + e.what());
  }
  DomainSpec spec = j.get<DomainSpec>();
  spec.validate();
  return spec;
}

void check_domain_set(std::span<const DomainSpec> specs) {
  if (specs.empty()) throw ConfigError("no domains given");
  std::set<std::string> names, content;
  for (const auto& s : specs) {
    s.validate();
    if (!names.insert(s.name).second) throw ConfigError("domain name '" + s.name + "' used twice");
    if (s.functions != specs.front().functions) {
      throw ConfigError("domain " + s.name + ": function symbols differ from domain " + specs.front().name);
    }
    for (const auto& e : s.lexicon) {
      for (const auto* sym : {&e.source, &e.target}) {
        if (!content.insert(*sym).second) {
          throw ConfigError("domain " + s.name + ": content symbol '" + *sym + "' also belongs to another domain");
        }
      }
    }
  }
  for (const auto& f : specs.front().functions) {
    if (content.count(f.source) || content.count(f.target)) {
      throw ConfigError("function symbol '" + f.source + "' collides with a content symbol");
    }
  }
}

Vocabulary build_vocabulary(std::span<const DomainSpec> specs) {
  check_domain_set(specs);
  Vocabulary vocab;
  for (const auto& f : specs.front().functions) vocab.add(f.source);
  for (const auto& f : specs.front().functions) vocab.add(f.target);
  for (const auto& s : specs) {
    for (const auto& e : s.lexicon) vocab.add(e.source);
    for (const auto& e : s.lexicon) vocab.add(e.target);
  }
  return vocab;
}

DomainSampler::DomainSampler(DomainSpec spec, const Vocabulary& vocab) : spec_(std::move(spec)) {
  spec_.validate();
  for (std::size_t i = 0; i < spec_.functions.size(); ++i) {
    const auto& f = spec_.functions[i];
    fn_src_.push_back(require_id(vocab, f.source, spec_.name));
    fn_tgt_.push_back(require_id(vocab, f.target, spec_.name));
    fn_of_src_.emplace(fn_src_.back(), static_cast<int>(i));
  }
  for (std::size_t i = 0; i < spec_.lexicon.size(); ++i) {
    lex_src_.push_back(require_id(vocab, spec_.lexicon[i].source, spec_.name));
    lex_tgt_.push_back(require_id(vocab, spec_.lexicon[i].target, spec_.name));
    lex_of_src_.emplace(lex_src_.back(), static_cast<int>(i));
  }

  std::mt19937_64 rng(spec_.structure_seed);
  const std::size_t nf = spec_.functions.size();
  std::vector<int> favoured_pool = spec_.frequent_functions;
  if (favoured_pool.empty()) {
    for (std::size_t i = 0; i < nf; ++i) favoured_pool.push_back(static_cast<int>(i));
  }
  if (nf > 0) {
    for (std::size_t row = 0; row <= nf; ++row) {
      const auto favoured = pick_distinct(favoured_pool, spec_.successors_per_function, rng);
      transitions_.push_back(concentrated(nf, favoured, spec_.transition_concentration));
    }
  }
  std::vector<int> all_content(spec_.lexicon.size());
  for (std::size_t i = 0; i < all_content.size(); ++i) all_content[i] = static_cast<int>(i);
  for (std::size_t f = 0; f < std::max<std::size_t>(nf, 1); ++f) {
    const auto frame = pick_distinct(all_content, spec_.frame_size, rng);
    frames_.push_back(concentrated(all_content.size(), frame, spec_.frame_concentration));
  }
}

const std::vector<double>& DomainSampler::transition_row(int from) const {
  if (transitions_.empty()) throw ContractError("domain " + spec_.name + " has no function symbols");
  return transitions_.at(static_cast<std::size_t>(from + 1));
}

std::vector<PhrasePlan> DomainSampler::sample_plan(std::mt19937_64& rng) const {
  // Every sentence carries at least one content symbol, so an out-of-domain
  // source always contains something unseen in training.
  for (int attempt = 0; attempt < 10000; ++attempt) {
    auto plan = sample_phrases(rng);
    for (const auto& phrase : plan) {
      if (!phrase.content.empty()) return plan;
    }
  }
  throw ContractError("domain " + spec_.name + ": sentences without content symbols only");
}

std::vector<PhrasePlan> DomainSampler::sample_phrases(std::mt19937_64& rng) const {
  const int span = spec_.max_phrases - spec_.min_phrases + 1;
  const int phrases = spec_.min_phrases + static_cast<int>(rng() % static_cast<std::uint64_t>(span));
  std::vector<PhrasePlan> plan;
  int previous = -1;
  for (int p = 0; p < phrases; ++p) {
    PhrasePlan phrase;
    if (spec_.functions.empty()) {
      phrase.content.push_back(draw(frames_.front(), rng));
    } else {
      phrase.function = draw(transition_row(previous), rng);
      const auto& frame = frames_[static_cast<std::size_t>(phrase.function)];
      for (int a = 0; a < spec_.functions[static_cast<std::size_t>(phrase.function)].arity; ++a) {
        phrase.content.push_back(draw(frame, rng));
      }
      previous = phrase.function;
    }
    plan.push_back(std::move(phrase));
  }
  return plan;
}

SentencePair DomainSampler::realize(std::span<const PhrasePlan> plan) const {
  SentencePair pair;
  pair.domain = spec_.name;
  const bool swap = spec_.rule == "substitute_swap";
  for (const auto& phrase : plan) {
    if (phrase.function >= 0) {
      pair.source.push_back(fn_src_.at(static_cast<std::size_t>(phrase.function)));
      pair.target.push_back(fn_tgt_.at(static_cast<std::size_t>(phrase.function)));
    }
    for (int c : phrase.content) pair.source.push_back(lex_src_.at(static_cast<std::size_t>(c)));
    const std::size_t first = pair.target.size();
    for (int c : phrase.content) pair.target.push_back(lex_tgt_.at(static_cast<std::size_t>(c)));
    if (swap && phrase.content.size() == 2) std::swap(pair.target[first], pair.target[first + 1]);
  }
  return pair;
}

TokenSeq DomainSampler::transform(std::span<const int> source) const {
  std::vector<PhrasePlan> plan;
  std::size_t i = 0;
  auto content_at = [&](std::size_t pos) {
    if (pos >= source.size()) throw ContractError("transform: source ends inside a phrase");
    auto it = lex_of_src_.find(source[pos]);
    if (it == lex_of_src_.end()) {
      throw ContractError("transform: id " + std::to_string(source[pos]) + " is not a content symbol of " + spec_.name);
    }
    return it->second;
  };
  while (i < source.size()) {
    PhrasePlan phrase;
    if (spec_.functions.empty()) {
      phrase.content.push_back(content_at(i++));
    } else {
      auto it = fn_of_src_.find(source[i]);
      if (it == fn_of_src_.end()) {
        throw ContractError("transform: expected a function symbol at position " + std::to_string(i));
      }
      phrase.function = it->second;
      ++i;
      for (int a = 0; a < spec_.functions[static_cast<std::size_t>(phrase.function)].arity; ++a) {
        phrase.content.push_back(content_at(i++));
      }
    }
    plan.push_back(std::move(phrase));
  }
  return realize(plan).target;
}

Corpus generate_corpus(const DomainSpec& spec, const Vocabulary& vocab, int n, std::uint64_t seed) {
  if (n < 1) throw ContractError("generate_corpus: n must be at least 1");
  const DomainSampler sampler(spec, vocab);
  std::mt19937_64 rng(seed);
  Corpus out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(sampler.realize(sampler.sample_plan(rng)));
  return out;
}

Splits generate_splits(const DomainSpec& spec, const Vocabulary& vocab, const SplitSizes& sizes, std::uint64_t seed,
                       const Corpus& exclude) {
  if (sizes.train < 0 || sizes.dev < 0 || sizes.test < 0) throw ContractError("generate_splits: negative split size");
  const DomainSampler sampler(spec, vocab);
  std::set<TokenSeq> used;
  for (const auto& p : exclude) used.insert(p.source);
  auto fill = [&](int n, const char* label) {
    Corpus out;
    std::mt19937_64 rng(derive_seed(seed, spec.name + "." + label));
    long attempts = 0;
    const long limit = 1000L * std::max(n, 1);
    while (static_cast<int>(out.size()) < n) {
      if (++attempts > limit) {
        throw ContractError("generate_splits: domain " + spec.name + " is too small for " + std::to_string(n) +
                            " distinct " + label + " sentences");
      }
      SentencePair pair = sampler.realize(sampler.sample_plan(rng));
      if (!used.insert(pair.source).second) continue;
      out.push_back(std::move(pair));
    }
    return out;
  };
  Splits s;
  s.train = fill(sizes.train, "train");
  s.dev = fill(sizes.dev, "dev");
  s.test = fill(sizes.test, "test");
  return s;
}

const char* to_string(Fluency f) {
  switch (f) {
    case Fluency::fluent: return "fluent";
    case Fluency::partially_fluent: return "partially_fluent";
    case Fluency::disfluent: return "disfluent";
  }
  return "disfluent";
}

TargetGrammar::TargetGrammar(std::span<const DomainSpec> specs, const Vocabulary& vocab)
    : kinds_(static_cast<std::size_t>(vocab.size()), kInvalid) {
  for (const auto& s : specs) {
    if (s.functions.empty()) bare_content_ = true;
    for (const auto& f : s.functions) {
      const int id = require_id(vocab, f.target, s.name);
      kinds_[static_cast<std::size_t>(id)] = f.arity == 0 ? kFunction0 : f.arity == 1 ? kFunction1 : kFunction2;
    }
    for (const auto& e : s.lexicon) kinds_[static_cast<std::size_t>(require_id(vocab, e.target, s.name))] = kContent;
  }
}

TargetGrammar::Kind TargetGrammar::kind(int id) const {
  if (id < 0 || id >= static_cast<int>(kinds_.size())) return kInvalid;
  return kinds_[static_cast<std::size_t>(id)];
}

namespace {

// Parser state: contents still owed by the open phrase (0 = between phrases).
int advance(int state, std::uint8_t k, bool bare) {
  enum : std::uint8_t { kInvalid, kFunction0, kFunction1, kFunction2, kContent };
  switch (k) {
    case kFunction0: return state == 0 ? 0 : -1;
    case kFunction1: return state == 0 ? 1 : -1;
    case kFunction2: return state == 0 ? 2 : -1;
    case kContent:
      if (state > 0) return state - 1;
      return bare ? 0 : -1;
    default: return -1;
  }
}

}  // namespace

bool TargetGrammar::parses(std::span<const int> tokens) const {
  if (tokens.empty()) return false;
  int state = 0;
  for (int id : tokens) {
    state = advance(state, kind(id), bare_content_);
    if (state < 0) return false;
  }
  return state == 0;
}

double TargetGrammar::window_score(std::span<const int> tokens) const {
  if (tokens.empty()) return 0.0;
  std::vector<Kind> seq{kBoundary};
  for (int id : tokens) seq.push_back(kind(id));
  seq.push_back(kBoundary);

  // Runs seq[begin, end) from `state`; a boundary may only close the window.
  auto feasible_from = [&](int state, bool empty, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Kind k = seq[i];
      if (k == kBoundary) return i + 1 == end && state == 0 && !empty;
      state = advance(state, k, bare_content_);
      if (state < 0) return false;
      empty = false;
    }
    return true;
  };

  std::size_t good = 0;
  const std::size_t windows = seq.size() - 2;
  for (std::size_t w = 0; w < windows; ++w) {
    bool ok;
    if (seq[w] == kBoundary) {
      ok = feasible_from(0, true, w + 1, w + 3);
    } else {
      ok = feasible_from(0, false, w, w + 3) || feasible_from(1, false, w, w + 3) || feasible_from(2, false, w, w + 3);
    }
    if (ok) ++good;
  }
  return static_cast<double>(good) / static_cast<double>(windows);
}

Fluency TargetGrammar::check(std::span<const int> tokens) const {
  if (parses(tokens)) return Fluency::fluent;
  return window_score(tokens) >= kPartialThreshold ? Fluency::partially_fluent : Fluency::disfluent;
}

Fluency target_grammar_check(std::span<const int> tokens, const DomainSpec& spec, const Vocabulary& vocab) {
  const TargetGrammar grammar(std::span<const DomainSpec>(&spec, 1), vocab);
  return grammar.check(tokens);
}

}  // namespace datagen
SEQRISK_END_NAMESPACE
