#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqrisk/seqmodel/parameters.hpp"
#include "seqrisk/seqmodel/transformer.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace decoding {

using seqmodel::TokenSeq;

/// A decoded candidate. tokens run BOS ... EOS (or are truncated at max_len
/// without EOS); token_logprobs has one entry per token after BOS.
struct Hypothesis {
  TokenSeq tokens;
  std::vector<double> token_logprobs;
  double total_logprob = 0.0;
  double normalized_score = 0.0;

  bool finished() const;
  // Tokens without BOS/EOS/PAD.
  TokenSeq content() const;
};

struct DecodeConfig {
  int beam_size = 4;
  double length_norm_alpha = 0.6;
  // Longest hypothesis, counting BOS and EOS.
  int max_len = 32;
  std::uint64_t rng_seed = 0;
  // Intermediate pruning on raw totals (default) or on normalized scores.
  bool prune_on_normalized = false;

  void validate(int model_max_seq_len) const;
};

void to_json(nlohmann::json& j, const DecodeConfig& c);
void from_json(const nlohmann::json& j, DecodeConfig& c);

/// ((5 + len) / 6)^alpha, len counting the scored tokens.
double length_penalty(int len, double alpha);

/// Next-token distributions for a set of parallel prefixes of one source.
/// Every row starts from BOS; step() feeds the newest token of each row.
class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual int vocab_size() const = 0;
  // Maximum number of step() calls.
  virtual int max_steps() const = 0;
  virtual void reset(int rows) = 0;
  // Returns row-major log-probabilities [rows, V].
  virtual std::vector<double> step(std::span<const int> tokens) = 0;
  virtual void reorder(std::span<const int> parents) = 0;
};

/// StepModel over a transformer and one encoded source (KV-cached).
class TransformerStepModel : public StepModel {
 public:
  TransformerStepModel(const seqmodel::ParameterStore& params, std::span<const int> src);

  int vocab_size() const override;
  int max_steps() const override;
  void reset(int rows) override;
  std::vector<double> step(std::span<const int> tokens) override;
  void reorder(std::span<const int> parents) override;

 private:
  const seqmodel::ParameterStore& params_;
  numkit::Tensor memory_;
  std::unique_ptr<seqmodel::IncrementalDecoder> decoder_;
};

Hypothesis greedy(StepModel& model, const DecodeConfig& cfg);
// Ranked best first by normalized score; at most beam_size entries.
std::vector<Hypothesis> beam_search(StepModel& model, const DecodeConfig& cfg);
Hypothesis sample_decode(StepModel& model, const DecodeConfig& cfg);
// `count` independent ancestral samples drawn as parallel rows from one seed.
std::vector<Hypothesis> sample_many(StepModel& model, int count, int max_len, std::uint64_t seed);

Hypothesis greedy(const seqmodel::ParameterStore& params, std::span<const int> src, const DecodeConfig& cfg);
std::vector<Hypothesis> beam_search(const seqmodel::ParameterStore& params, std::span<const int> src,
                                    const DecodeConfig& cfg);
Hypothesis sample_decode(const seqmodel::ParameterStore& params, std::span<const int> src, const DecodeConfig& cfg);

/// Beam search for k > 1, greedy argmax for k = 1; returns the best hypothesis.
Hypothesis translate(const seqmodel::ParameterStore& params, std::span<const int> src, const DecodeConfig& cfg);

struct SequenceScore {
  double total_logprob = 0.0;
  std::vector<double> token_logprobs;
};

/// Teacher-forced log-probability of tgt[1..] given its prefixes. tgt starts
/// with BOS; it normally ends with EOS but truncated sequences are accepted.
SequenceScore score_sequence(const seqmodel::ParameterStore& params, std::span<const int> src,
                             std::span<const int> tgt);

/// Draws an index from log-probabilities with a uniform variate u in [0, 1).
int draw_from_logprobs(std::span<const double> logprobs, double u);
double uniform01(std::uint64_t bits);

}  // namespace decoding
SEQRISK_END_NAMESPACE
