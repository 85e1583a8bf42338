#include "seqrisk/decoding/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "seqrisk/json_fields.hpp"
#include "seqrisk/numkit/graph.hpp"
#include "seqrisk/numkit/ops.hpp"
#include "seqrisk/seqmodel/vocabulary.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace decoding {

using seqmodel::Vocabulary;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Hypothesis start_hypothesis() {
  Hypothesis h;
  h.tokens = {Vocabulary::kBos};
  return h;
}

void finalize(Hypothesis& h, double alpha) {
  h.normalized_score = h.total_logprob / length_penalty(static_cast<int>(h.token_logprobs.size()), alpha);
}

Hypothesis extend(const Hypothesis& h, int token, double logprob) {
  Hypothesis out = h;
  out.tokens.push_back(token);
  out.token_logprobs.push_back(logprob);
  out.total_logprob += logprob;
  return out;
}

int step_budget(const StepModel& model, const DecodeConfig& cfg) {
  return std::min(cfg.max_len - 1, model.max_steps());
}

bool better_final(const Hypothesis& a, const Hypothesis& b) {
  if (a.normalized_score != b.normalized_score) return a.normalized_score > b.normalized_score;
  return a.tokens < b.tokens;
}

}  // namespace

bool Hypothesis::finished() const { return tokens.size() >= 2 && tokens.back() == Vocabulary::kEos; }

TokenSeq Hypothesis::content() const { return seqmodel::strip_specials(tokens); }

void DecodeConfig::validate(int model_max_seq_len) const {
  if (beam_size < 1) throw ConfigError("decode.beam_size: must be at least 1");
  if (!(length_norm_alpha >= 0.0)) throw ConfigError("decode.length_norm_alpha: must be non-negative");
  if (max_len < 2) throw ConfigError("decode.max_len: must be at least 2 (BOS plus one token)");
  if (model_max_seq_len > 0 && max_len > model_max_seq_len) {
    throw ConfigError("decode.max_len: " + std::to_string(max_len) + " exceeds model max_seq_len " +
                      std::to_string(model_max_seq_len));
  }
}

void to_json(nlohmann::json& j, const DecodeConfig& c) {
  j = nlohmann::json{{"beam_size", c.beam_size},
                     {"length_norm_alpha", c.length_norm_alpha},
                     {"max_len", c.max_len},
                     {"rng_seed", c.rng_seed},
                     {"prune_on_normalized", c.prune_on_normalized}};
}

void from_json(const nlohmann::json& j, DecodeConfig& c) {
  JsonFields f(j, "decode");
  f.get("beam_size", c.beam_size);
  f.get("length_norm_alpha", c.length_norm_alpha);
  f.get("max_len", c.max_len);
  f.get("rng_seed", c.rng_seed);
  f.get("prune_on_normalized", c.prune_on_normalized);
  f.reject_unknown();
}

double length_penalty(int len, double alpha) { return std::pow((5.0 + len) / 6.0, alpha); }

TransformerStepModel::TransformerStepModel(const seqmodel::ParameterStore& params, std::span<const int> src)
    : params_(params) {
  const numkit::Graph::NoGrad no_grad;
  memory_ = seqmodel::encode(params, src);
}

int TransformerStepModel::vocab_size() const { return params_.config().vocab_size; }

int TransformerStepModel::max_steps() const { return params_.config().max_seq_len; }

void TransformerStepModel::reset(int rows) {
  decoder_ = std::make_unique<seqmodel::IncrementalDecoder>(params_, memory_, rows);
}

std::vector<double> TransformerStepModel::step(std::span<const int> tokens) {
  if (!decoder_) throw ContractError("TransformerStepModel::step before reset");
  const numkit::Tensor lp = decoder_->step(tokens);
  return std::vector<double>(lp.values().begin(), lp.values().end());
}

void TransformerStepModel::reorder(std::span<const int> parents) {
  if (!decoder_) throw ContractError("TransformerStepModel::reorder before reset");
  decoder_->reorder(parents);
}

Hypothesis greedy(StepModel& model, const DecodeConfig& cfg) {
  cfg.validate(0);
  const int v = model.vocab_size();
  model.reset(1);
  Hypothesis h = start_hypothesis();
  const int budget = step_budget(model, cfg);
  for (int t = 0; t < budget && !h.finished(); ++t) {
    const int feed = h.tokens.back();
    const std::vector<double> lp = model.step(std::span<const int>(&feed, 1));
    const int best = static_cast<int>(std::max_element(lp.begin(), lp.begin() + v) - lp.begin());
    h = extend(h, best, lp[static_cast<std::size_t>(best)]);
  }
  finalize(h, cfg.length_norm_alpha);
  return h;
}

std::vector<Hypothesis> beam_search(StepModel& model, const DecodeConfig& cfg) {
  cfg.validate(0);
  const int v = model.vocab_size();
  const int k = cfg.beam_size;
  const int budget = step_budget(model, cfg);
  const double best_possible_penalty = length_penalty(budget, cfg.length_norm_alpha);

  model.reset(1);
  std::vector<Hypothesis> live{start_hypothesis()};
  std::vector<Hypothesis> done;

  struct Candidate {
    double key;
    int row;
    int token;
  };
  std::vector<Candidate> candidates;

  bool stopped_early = false;
  for (int t = 0; t < budget && !live.empty(); ++t) {
    std::vector<int> feed;
    for (const auto& h : live) feed.push_back(h.tokens.back());
    const std::vector<double> lp = model.step(feed);

    candidates.clear();
    const double norm = length_penalty(t + 1, cfg.length_norm_alpha);
    for (int r = 0; r < static_cast<int>(live.size()); ++r) {
      for (int tok = 0; tok < v; ++tok) {
        const double total = live[static_cast<std::size_t>(r)].total_logprob + lp[static_cast<std::size_t>(r * v + tok)];
        if (total == kNegInf) continue;
        candidates.push_back({cfg.prune_on_normalized ? total / norm : total, r, tok});
      }
    }
    // Lexicographic order on the extended sequences breaks score ties.
    auto ranks_before = [&](const Candidate& a, const Candidate& b) {
      if (a.key != b.key) return a.key > b.key;
      const TokenSeq& pa = live[static_cast<std::size_t>(a.row)].tokens;
      const TokenSeq& pb = live[static_cast<std::size_t>(b.row)].tokens;
      if (pa != pb) return pa < pb;
      return a.token < b.token;
    };
    const auto slots = std::min(candidates.size(), static_cast<std::size_t>(k) - done.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(slots), candidates.end(),
                      ranks_before);

    std::vector<Hypothesis> next;
    std::vector<int> parents;
    for (std::size_t i = 0; i < slots; ++i) {
      const Candidate& c = candidates[i];
      Hypothesis h = extend(live[static_cast<std::size_t>(c.row)], c.token,
                            lp[static_cast<std::size_t>(c.row * v + c.token)]);
      if (c.token == Vocabulary::kEos) {
        finalize(h, cfg.length_norm_alpha);
        done.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
        parents.push_back(c.row);
      }
    }
    live = std::move(next);
    if (static_cast<int>(done.size()) >= k || live.empty()) break;

    // No continuation of a live hypothesis can outrank the worst finished one.
    if (!done.empty()) {
      double worst_done = done.front().normalized_score;
      for (const auto& h : done) worst_done = std::min(worst_done, h.normalized_score);
      double best_live = kNegInf;
      for (const auto& h : live) best_live = std::max(best_live, h.total_logprob / best_possible_penalty);
      if (best_live < worst_done) {
        stopped_early = true;
        break;
      }
    }
    if (t + 1 < budget) model.reorder(parents);
  }
  if (!stopped_early) {
    for (auto& h : live) {
      finalize(h, cfg.length_norm_alpha);
      done.push_back(std::move(h));
    }
  }
  std::sort(done.begin(), done.end(), better_final);
  if (static_cast<int>(done.size()) > k) done.resize(static_cast<std::size_t>(k));
  return done;
}

double uniform01(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

int draw_from_logprobs(std::span<const double> logprobs, double u) {
  double total = 0.0;
  for (double lp : logprobs) total += std::exp(lp);
  const double target = u * total;
  double cumulative = 0.0;
  int last_positive = -1;
  for (std::size_t i = 0; i < logprobs.size(); ++i) {
    const double p = std::exp(logprobs[i]);
    if (p <= 0.0) continue;
    cumulative += p;
    last_positive = static_cast<int>(i);
    if (target < cumulative) return last_positive;
  }
  if (last_positive < 0) throw NumericalError("draw_from_logprobs: distribution has no mass");
  return last_positive;
}

std::vector<Hypothesis> sample_many(StepModel& model, int count, int max_len, std::uint64_t seed) {
  if (count < 1) throw ContractError("sample_many: count must be at least 1");
  if (max_len < 2) throw ContractError("sample_many: max_len must be at least 2");
  const int v = model.vocab_size();
  std::mt19937_64 rng(seed);
  std::vector<Hypothesis> out(static_cast<std::size_t>(count), start_hypothesis());
  std::vector<int> alive(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) alive[static_cast<std::size_t>(i)] = i;

  model.reset(count);
  const int budget = std::min(max_len - 1, model.max_steps());
  for (int t = 0; t < budget && !alive.empty(); ++t) {
    std::vector<int> feed;
    for (int i : alive) feed.push_back(out[static_cast<std::size_t>(i)].tokens.back());
    const std::vector<double> lp = model.step(feed);
    std::vector<int> still_alive, parents;
    for (std::size_t r = 0; r < alive.size(); ++r) {
      const std::span<const double> row(lp.data() + r * static_cast<std::size_t>(v), static_cast<std::size_t>(v));
      const int tok = draw_from_logprobs(row, uniform01(rng()));
      Hypothesis& h = out[static_cast<std::size_t>(alive[r])];
      h = extend(h, tok, row[static_cast<std::size_t>(tok)]);
      if (tok != Vocabulary::kEos) {
        still_alive.push_back(alive[r]);
        parents.push_back(static_cast<int>(r));
      }
    }
    alive = std::move(still_alive);
    if (!alive.empty() && t + 1 < budget) model.reorder(parents);
  }
  for (auto& h : out) finalize(h, 0.0);
  return out;
}

Hypothesis sample_decode(StepModel& model, const DecodeConfig& cfg) {
  cfg.validate(0);
  Hypothesis h = sample_many(model, 1, cfg.max_len, cfg.rng_seed).front();
  finalize(h, cfg.length_norm_alpha);
  return h;
}

Hypothesis greedy(const seqmodel::ParameterStore& params, std::span<const int> src, const DecodeConfig& cfg) {
  cfg.validate(params.config().max_seq_len);
  TransformerStepModel model(params, src);
  return greedy(model, cfg);
}

std::vector<Hypothesis> beam_search(const seqmodel::ParameterStore& params, std::span<const int> src,
                                    const DecodeConfig& cfg) {
  cfg.validate(params.config().max_seq_len);
  TransformerStepModel model(params, src);
  return beam_search(model, cfg);
}

Hypothesis sample_decode(const seqmodel::ParameterStore& params, std::span<const int> src, const DecodeConfig& cfg) {
  cfg.validate(params.config().max_seq_len);
  TransformerStepModel model(params, src);
  return sample_decode(model, cfg);
}

Hypothesis translate(const seqmodel::ParameterStore& params, std::span<const int> src, const DecodeConfig& cfg) {
  if (cfg.beam_size == 1) return greedy(params, src, cfg);
  return beam_search(params, src, cfg).front();
}

SequenceScore score_sequence(const seqmodel::ParameterStore& params, std::span<const int> src,
                             std::span<const int> tgt) {
  if (tgt.size() < 2 || tgt.front() != Vocabulary::kBos) {
    throw ContractError("score_sequence: target must start with BOS and contain at least one more token");
  }
  const int v = params.config().vocab_size;
  for (int id : tgt) {
    if (id < 0 || id >= v) throw VocabularyError("score_sequence: target id " + std::to_string(id) + " out of range");
  }
  const numkit::Graph::NoGrad no_grad;
  const TokenSeq source(src.begin(), src.end());
  const TokenSeq inputs(tgt.begin(), tgt.end() - 1);
  const seqmodel::EncodedBatch enc = seqmodel::encode_batch(params, std::span<const TokenSeq>(&source, 1));
  const numkit::Tensor lp = seqmodel::decode_batch(params, enc, std::span<const TokenSeq>(&inputs, 1));
  SequenceScore out;
  const auto values = lp.values();
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const double x = values[t * static_cast<std::size_t>(v) + static_cast<std::size_t>(tgt[t + 1])];
    out.token_logprobs.push_back(x);
    out.total_logprob += x;
  }
  return out;
}

}  // namespace decoding
SEQRISK_END_NAMESPACE
