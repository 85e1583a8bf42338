#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "seqrisk/datagen/datagen.hpp"
#include "seqrisk/decoding/decoding.hpp"
#include "seqrisk/seqmodel/parameters.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace analysis {

using datagen::Corpus;
using datagen::SentencePair;
using seqmodel::ParameterStore;
using seqmodel::TokenSeq;

struct CurvePoint {
  int t = 0;
  double mean_prob = 0.0;
  double mean_logprob = 0.0;
  long count = 0;
};

/// Mean teacher-forced probability of the scored token at each target step
/// (content tokens, then EOS).
struct UncertaintyCurve {
  std::string label;  // "references" or "distractors"
  std::string model_tag;
  int max_t = 0;
  std::vector<CurvePoint> points;
};

/// Reference index -> pool indices (one per distractor), with a flag when no
/// pool target had exactly the reference length.
struct DistractorAssignment {
  std::vector<std::vector<int>> pool_index;
  std::vector<bool> length_fallback;

  bool any_fallback() const;
};

/// Draws `per_reference` distractors per pair uniformly among pool targets of
/// the same length; without one, the nearest length is used (ties go to the
/// shorter length).
DistractorAssignment assign_distractors(std::span<const SentencePair> pairs, std::span<const SentencePair> pool,
                                        std::uint64_t seed, int per_reference = 1);

struct UncertaintyResult {
  UncertaintyCurve references;
  UncertaintyCurve distractors;
  DistractorAssignment assignment;
};

UncertaintyResult uncertainty_curves(const ParameterStore& params, std::span<const SentencePair> pairs,
                                     std::span<const SentencePair> pool, int max_t, std::uint64_t seed,
                                     const std::string& model_tag, int per_reference = 1);

/// Per-position gold-token probabilities of targets (content ids) under
/// teacher forcing against the matching sources, batched.
std::vector<std::vector<double>> token_probabilities(const ParameterStore& params, std::span<const TokenSeq> sources,
                                                     std::span<const TokenSeq> targets);

/// Mean of (references - distractors) over steps t >= from_t with data in both.
double curve_gap(const UncertaintyResult& result, int from_t);

struct HallucinationJudgment {
  TokenSeq source;
  TokenSeq hypothesis;  // content ids
  TokenSeq reference;   // content ids
  datagen::Fluency fluency = datagen::Fluency::disfluent;
  double overlap = 0.0;
  bool is_hallucination = false;
};

/// Share of reference tokens (as a multiset) found in the hypothesis.
double adequacy_overlap(std::span<const int> hypothesis, std::span<const int> reference);

HallucinationJudgment judge(const TokenSeq& source, const TokenSeq& hypothesis, const TokenSeq& reference,
                            const datagen::TargetGrammar& grammar, double tau);

struct HallucinationReport {
  double rate = 0.0;
  std::vector<HallucinationJudgment> judgments;
};

/// Judges given translations (content ids) of a test set.
HallucinationReport judge_translations(std::span<const TokenSeq> hypotheses, std::span<const SentencePair> testset,
                                       const datagen::TargetGrammar& grammar, double tau);

std::vector<TokenSeq> translate_all(const ParameterStore& params, std::span<const SentencePair> testset,
                                    const decoding::DecodeConfig& cfg);

HallucinationReport hallucination_rate(const ParameterStore& params, std::span<const SentencePair> testset,
                                       const decoding::DecodeConfig& cfg, const datagen::TargetGrammar& grammar,
                                       double tau);

struct SweepRow {
  int k = 0;
  double bleu = 0.0;
  double hallucination_rate = 0.0;
};

std::vector<SweepRow> beam_sweep(const ParameterStore& params, std::span<const SentencePair> testset,
                                 std::span<const int> ks, const decoding::DecodeConfig& cfg,
                                 const datagen::TargetGrammar& grammar, double tau);

/// Two-tailed Fisher exact test on hallucinated / not counts of two systems.
double compare_hallucination_significance(std::span<const HallucinationJudgment> a,
                                          std::span<const HallucinationJudgment> b);

// Output formats.
enum class CurveValue { probability, log_probability };
// Columns t, mean_prob (or mean_logprob), count, label, model_tag.
void write_curves_csv(const std::filesystem::path& path, std::span<const UncertaintyCurve> curves,
                      CurveValue value = CurveValue::probability);
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);
void write_judgments_jsonl(const std::filesystem::path& path, std::span<const HallucinationJudgment> judgments,
                           const seqmodel::Vocabulary& vocab);
void write_assignment_csv(const std::filesystem::path& path, const DistractorAssignment& assignment);

std::string format_number(double x);

}  // namespace analysis
SEQRISK_END_NAMESPACE
