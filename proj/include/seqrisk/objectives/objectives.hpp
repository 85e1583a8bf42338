#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqrisk/datagen/corpus.hpp"
#include "seqrisk/decoding/decoding.hpp"
#include "seqrisk/numkit/tensor.hpp"
#include "seqrisk/seqmodel/parameters.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace objectives {

using datagen::Corpus;
using datagen::SentencePair;
using decoding::Hypothesis;
using seqmodel::ParameterStore;
using seqmodel::TokenSeq;

struct MLEConfig {
  double label_smoothing = 0.1;
  // Peak rate of the warmup / inverse-square-root schedule.
  double learning_rate = 1e-3;
  int warmup_steps = 400;
  // Target tokens (including EOS) per batch.
  int token_batch_size = 1024;
  int max_epochs = 10;
  // Optional cap on optimizer steps; 0 lets max_epochs decide.
  int max_steps = 0;
  double gradient_clip_threshold = 1.0;

  void validate() const;
};

enum class SamplingStrategy { random, beam };

struct MRTConfig {
  int num_candidates = 4;
  double sharpness = 0.005;
  bool include_reference = false;
  SamplingStrategy sampling_strategy = SamplingStrategy::random;
  // Collapse identical sampled candidates before normalization.
  bool deduplicate = true;
  double learning_rate = 1e-4;
  int sentence_batch_size = 8;
  int max_steps = 200;
  double gradient_clip_threshold = 1.0;
  // Held-out evaluation cadence (steps) and sample size for best-checkpoint selection.
  int eval_interval = 50;
  int eval_size = 100;

  void validate() const;
};

void to_json(nlohmann::json& j, const MLEConfig& c);
void from_json(const nlohmann::json& j, MLEConfig& c);
void to_json(nlohmann::json& j, const MRTConfig& c);
void from_json(const nlohmann::json& j, MRTConfig& c);

struct TracePoint {
  long step = 0;
  double objective_value = 0.0;
  double learning_rate = 0.0;
};

void write_trace_csv(const std::filesystem::path& path, std::span<const TracePoint> trace);

/// Label-smoothed cross-entropy over rows of log-probabilities [N, V].
/// Target mass: (1 - eps) on the gold id plus eps spread uniformly over every
/// id except PAD. Rows whose gold id is PAD are ignored; the result is the
/// mean over the remaining rows.
numkit::Tensor smoothed_cross_entropy(const numkit::Tensor& logprobs, std::span<const int> gold, double epsilon);

/// Mean per-token loss of a batch under teacher forcing (graph-attached).
numkit::Tensor mle_loss(const ParameterStore& params, std::span<const SentencePair> batch, double epsilon,
                        const seqmodel::ForwardOptions& options = {});

/// exp(alpha * l_i) / sum_j exp(alpha * l_j), in log space.
std::vector<double> sharpened_distribution(std::span<const double> logprobs, double alpha);
/// Row-wise version over candidate log-probabilities [B, n]; entries with
/// valid == 0 receive zero probability.
numkit::Tensor sharpened_distribution(const numkit::Tensor& logprobs, double alpha,
                                      std::span<const std::uint8_t> valid = {});

/// Delta = 1 - smoothed sentence BLEU on content tokens.
double cost_delta(std::span<const int> candidate, std::span<const int> reference);

/// One source's sub-space with its costs and sharpened probabilities.
struct RiskBatch {
  TokenSeq source;
  TokenSeq reference;  // content ids
  std::vector<Hypothesis> candidates;
  std::vector<double> costs;
  std::vector<double> probabilities;
};

std::vector<Hypothesis> sample_subspace(const ParameterStore& params, std::span<const int> src,
                                        std::span<const int> ref, const MRTConfig& cfg, std::uint64_t seed);

/// Samples a sub-space and fills costs and P~ (from the stored log-probs).
RiskBatch build_risk_batch(const ParameterStore& params, const SentencePair& pair, const MRTConfig& cfg,
                           std::uint64_t seed);

/// Sum_i P~_i * Delta_i for candidate log-probabilities [B, n] (graph-attached),
/// averaged over the B rows.
numkit::Tensor risk_from_logprobs(const numkit::Tensor& logprobs, std::span<const double> costs, double alpha,
                                  std::span<const std::uint8_t> valid = {});
/// Closed-form dR/dl_i = alpha * P~_i * (Delta_i - R) for one sub-space.
std::vector<double> risk_gradient(std::span<const double> logprobs, std::span<const double> costs, double alpha);

/// Teacher-forced candidate log-probabilities (graph-attached) and mean risk
/// over the batches.
numkit::Tensor mrt_risk(const ParameterStore& params, std::span<const RiskBatch> batches, double alpha);

struct MLEResult {
  std::vector<TracePoint> trace;
  std::vector<double> epoch_mean_loss;
};

struct MRTResult {
  std::vector<TracePoint> trace;
  // (step, held-out mean Delta of greedy translations); step 0 is the start.
  std::vector<std::pair<long, double>> heldout;
  long best_step = 0;
};

MLEResult train_mle(ParameterStore& params, const Corpus& corpus, const MLEConfig& cfg, std::uint64_t seed);

/// Fine-tunes with fresh optimizer state and a constant learning rate. When a
/// held-out set is given, params end at the evaluated step with the lowest
/// held-out cost.
MRTResult finetune_mrt(ParameterStore& params, const Corpus& corpus, const MRTConfig& cfg, std::uint64_t seed,
                       const Corpus* heldout = nullptr);

/// Mean 1 - sentence BLEU of greedy translations.
double mean_greedy_cost(const ParameterStore& params, std::span<const SentencePair> pairs);

}  // namespace objectives
SEQRISK_END_NAMESPACE
