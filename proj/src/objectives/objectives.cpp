#include "seqrisk/objectives/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "seqrisk/json_fields.hpp"
#include "seqrisk/metrics/metrics.hpp"
#include "seqrisk/numkit/graph.hpp"
#include "seqrisk/numkit/ops.hpp"
#include "seqrisk/objectives/optimizer.hpp"
#include "seqrisk/seqmodel/vocabulary.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace objectives {

using numkit::Graph;
using numkit::Tensor;
using seqmodel::Vocabulary;

namespace {

constexpr Scalar kExcluded = Scalar(-1e9);

std::vector<std::vector<std::size_t>> make_token_batches(const Corpus& corpus, int token_budget,
                                                         std::mt19937_64& rng) {
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  // Sort within pools of shuffled sentences so batches hold similar lengths.
  constexpr std::size_t kPool = 2048;
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += kPool) {
    const auto end = std::min(order.size(), start + kPool);
    std::vector<std::size_t> pool(order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(end));
    std::stable_sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
      const auto& pa = corpus[a];
      const auto& pb = corpus[b];
      if (pa.target.size() != pb.target.size()) return pa.target.size() < pb.target.size();
      return pa.source.size() < pb.source.size();
    });
    std::vector<std::size_t> current;
    std::size_t longest = 0;
    for (std::size_t idx : pool) {
      const std::size_t len = corpus[idx].target.size() + 1;
      const std::size_t padded = std::max(longest, len) * (current.size() + 1);
      if (!current.empty() && padded > static_cast<std::size_t>(token_budget)) {
        batches.push_back(std::move(current));
        current.clear();
        longest = 0;
      }
      current.push_back(idx);
      longest = std::max(longest, len);
    }
    if (!current.empty()) batches.push_back(std::move(current));
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

std::string format_number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

[[noreturn]] void diverged(const char* loop, long step, const std::exception& e) {
  throw NumericalError(std::string(loop) + " diverged at step " + std::to_string(step) + ": " + e.what());
}

}  // namespace

void MLEConfig::validate() const {
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("mle.label_smoothing: must be in [0, 1)");
  if (!(learning_rate >= 0.0)) throw ConfigError("mle.learning_rate: must be non-negative");
  if (warmup_steps < 0) throw ConfigError("mle.warmup_steps: must be non-negative");
  if (token_batch_size < 1) throw ConfigError("mle.token_batch_size: must be positive");
  if (max_epochs < 1) throw ConfigError("mle.max_epochs: must be positive");
  if (max_steps < 0) throw ConfigError("mle.max_steps: must be non-negative");
  if (!(gradient_clip_threshold >= 0.0)) throw ConfigError("mle.gradient_clip_threshold: must be non-negative");
}

void MRTConfig::validate() const {
  if (num_candidates < 1) throw ConfigError("mrt.num_candidates: must be at least 1");
  if (!(sharpness > 0.0)) throw ConfigError("mrt.sharpness: must be positive");
  if (!(learning_rate >= 0.0)) throw ConfigError("mrt.learning_rate: must be non-negative");
  if (sentence_batch_size < 1) throw ConfigError("mrt.sentence_batch_size: must be positive");
  if (max_steps < 0) throw ConfigError("mrt.max_steps: must be non-negative");
  if (!(gradient_clip_threshold >= 0.0)) throw ConfigError("mrt.gradient_clip_threshold: must be non-negative");
  if (eval_interval < 1) throw ConfigError("mrt.eval_interval: must be positive");
  if (eval_size < 1) throw ConfigError("mrt.eval_size: must be positive");
}

void to_json(nlohmann::json& j, const MLEConfig& c) {
  j = nlohmann::json{{"label_smoothing", c.label_smoothing}, {"learning_rate", c.learning_rate},
                     {"warmup_steps", c.warmup_steps},       {"token_batch_size", c.token_batch_size},
                     {"max_epochs", c.max_epochs},           {"max_steps", c.max_steps},
                     {"gradient_clip_threshold", c.gradient_clip_threshold}};
}

void from_json(const nlohmann::json& j, MLEConfig& c) {
  JsonFields f(j, "mle");
  f.get("label_smoothing", c.label_smoothing);
  f.get("learning_rate", c.learning_rate);
  f.get("warmup_steps", c.warmup_steps);
  f.get("token_batch_size", c.token_batch_size);
  f.get("max_epochs", c.max_epochs);
  f.get("max_steps", c.max_steps);
  f.get("gradient_clip_threshold", c.gradient_clip_threshold);
  f.reject_unknown();
}

void to_json(nlohmann::json& j, const MRTConfig& c) {
  j = nlohmann::json{{"num_candidates", c.num_candidates},
                     {"sharpness", c.sharpness},
                     {"include_reference", c.include_reference},
                     {"sampling_strategy", c.sampling_strategy == SamplingStrategy::random ? "random" : "beam"},
                     {"deduplicate", c.deduplicate},
                     {"learning_rate", c.learning_rate},
                     {"sentence_batch_size", c.sentence_batch_size},
                     {"max_steps", c.max_steps},
                     {"gradient_clip_threshold", c.gradient_clip_threshold},
                     {"eval_interval", c.eval_interval},
                     {"eval_size", c.eval_size}};
}

void from_json(const nlohmann::json& j, MRTConfig& c) {
  JsonFields f(j, "mrt");
  f.get("num_candidates", c.num_candidates);
  f.get("sharpness", c.sharpness);
  f.get("include_reference", c.include_reference);
  std::string strategy = c.sampling_strategy == SamplingStrategy::random ? "random" : "beam";
  f.get("sampling_strategy", strategy);
  if (strategy == "random") {
    c.sampling_strategy = SamplingStrategy::random;
  } else if (strategy == "beam") {
    c.sampling_strategy = SamplingStrategy::beam;
  } else {
    throw ConfigError("mrt.sampling_strategy: expected \"random\" or \"beam\", got \"" + strategy + "\"");
  }
  f.get("deduplicate", c.deduplicate);
  f.get("learning_rate", c.learning_rate);
  f.get("sentence_batch_size", c.sentence_batch_size);
  f.get("max_steps", c.max_steps);
  f.get("gradient_clip_threshold", c.gradient_clip_threshold);
  f.get("eval_interval", c.eval_interval);
  f.get("eval_size", c.eval_size);
  f.reject_unknown();
}

void write_trace_csv(const std::filesystem::path& path, std::span<const TracePoint> trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,objective_value,learning_rate\n";
  for (const auto& p : trace) {
    out << p.step << ',' << format_number(p.objective_value) << ',' << format_number(p.learning_rate) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Tensor smoothed_cross_entropy(const Tensor& logprobs, std::span<const int> gold, double epsilon) {
  if (logprobs.rank() != 2) throw ShapeError("smoothed_cross_entropy: expected [N, V], got " +
                                             numkit::shape_string(logprobs.shape()));
  const int n = logprobs.dim(0), v = logprobs.dim(1);
  if (static_cast<int>(gold.size()) != n) throw ShapeError("smoothed_cross_entropy: one gold id per row required");
  if (v < 2) throw ShapeError("smoothed_cross_entropy: need at least two classes");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ContractError("smoothed_cross_entropy: epsilon must be in [0, 1)");

  int count = 0;
  for (int g : gold) {
    if (g < 0 || g >= v) throw VocabularyError("smoothed_cross_entropy: gold id " + std::to_string(g) + " out of range");
    if (g != Vocabulary::kPad) ++count;
  }
  if (count == 0) throw ContractError("smoothed_cross_entropy: no non-PAD target positions");

  Tensor weights({n});
  for (int i = 0; i < n; ++i) {
    weights.mutable_values()[static_cast<std::size_t>(i)] =
        gold[static_cast<std::size_t>(i)] == Vocabulary::kPad ? Scalar(0) : Scalar(1) / static_cast<Scalar>(count);
  }
  Tensor per_row = numkit::scale(numkit::pick(logprobs, gold), static_cast<Scalar>(-(1.0 - epsilon)));
  if (epsilon > 0.0) {
    Tensor support({v, 1});
    for (int i = 0; i < v; ++i) support.mutable_values()[static_cast<std::size_t>(i)] = i == Vocabulary::kPad ? 0 : 1;
    const Tensor spread = numkit::matmul(logprobs, support).reshape({n});
    per_row = numkit::add(per_row, numkit::scale(spread, static_cast<Scalar>(-epsilon / (v - 1))));
  }
  return numkit::sum(numkit::multiply(per_row, weights));
}

Tensor mle_loss(const ParameterStore& params, std::span<const SentencePair> batch, double epsilon,
                const seqmodel::ForwardOptions& options) {
  if (batch.empty()) throw ContractError("mle_loss: empty batch");
  std::vector<TokenSeq> sources, inputs;
  std::size_t longest = 0;
  for (const auto& pair : batch) {
    if (pair.target.empty()) throw ContractError("mle_loss: empty target");
    sources.push_back(pair.source);
    TokenSeq in{Vocabulary::kBos};
    in.insert(in.end(), pair.target.begin(), pair.target.end());
    longest = std::max(longest, in.size());
    inputs.push_back(std::move(in));
  }
  std::vector<int> gold(batch.size() * longest, Vocabulary::kPad);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& tgt = batch[b].target;
    std::copy(tgt.begin(), tgt.end(), gold.begin() + static_cast<std::ptrdiff_t>(b * longest));
    gold[b * longest + tgt.size()] = Vocabulary::kEos;
  }
  const auto enc = seqmodel::encode_batch(params, sources, options);
  const Tensor lp = seqmodel::decode_batch(params, enc, inputs, options);
  const int v = params.config().vocab_size;
  return smoothed_cross_entropy(lp.reshape({static_cast<int>(gold.size()), v}), gold, epsilon);
}

std::vector<double> sharpened_distribution(std::span<const double> logprobs, double alpha) {
  if (logprobs.empty()) throw ContractError("sharpened_distribution: empty candidate list");
  if (!(alpha > 0.0)) throw ContractError("sharpened_distribution: alpha must be positive");
  double top = alpha * logprobs[0];
  for (double l : logprobs) top = std::max(top, alpha * l);
  std::vector<double> out;
  double total = 0.0;
  for (double l : logprobs) {
    out.push_back(std::exp(alpha * l - top));
    total += out.back();
  }
  for (double& p : out) p /= total;
  return out;
}

Tensor sharpened_distribution(const Tensor& logprobs, double alpha, std::span<const std::uint8_t> valid) {
  if (!(alpha > 0.0)) throw ContractError("sharpened_distribution: alpha must be positive");
  Tensor x = numkit::scale(logprobs, static_cast<Scalar>(alpha));
  if (!valid.empty()) {
    if (valid.size() != logprobs.numel()) throw ShapeError("sharpened_distribution: validity mask size mismatch");
    std::vector<std::uint8_t> excluded(valid.size());
    for (std::size_t i = 0; i < valid.size(); ++i) excluded[i] = valid[i] ? 0 : 1;
    x = numkit::masked_fill(x, excluded, kExcluded);
  }
  return numkit::softmax(x);
}

double cost_delta(std::span<const int> candidate, std::span<const int> reference) {
  const TokenSeq hyp = seqmodel::strip_specials(candidate);
  const TokenSeq ref = seqmodel::strip_specials(reference);
  if (ref.empty()) throw ContractError("cost_delta: empty reference");
  return 1.0 - metrics::smoothed_sentence_bleu(hyp, ref);
}

std::vector<Hypothesis> sample_subspace(const ParameterStore& params, std::span<const int> src,
                                        std::span<const int> ref, const MRTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Graph::NoGrad no_grad;
  const int max_len = params.config().max_seq_len;
  decoding::TransformerStepModel model(params, src);
  std::vector<Hypothesis> drawn;
  if (cfg.sampling_strategy == SamplingStrategy::random) {
    drawn = decoding::sample_many(model, cfg.num_candidates, max_len, seed);
  } else {
    decoding::DecodeConfig dc;
    dc.beam_size = cfg.num_candidates;
    dc.length_norm_alpha = 0.0;
    dc.max_len = max_len;
    drawn = decoding::beam_search(model, dc);
  }

  std::vector<Hypothesis> out;
  std::set<TokenSeq> seen;
  for (auto& h : drawn) {
    if (cfg.deduplicate && !seen.insert(h.tokens).second) continue;
    out.push_back(std::move(h));
  }
  if (cfg.include_reference) {
    const TokenSeq framed_ref = datagen::framed(ref);
    const bool present = std::any_of(out.begin(), out.end(), [&](const Hypothesis& h) { return h.tokens == framed_ref; });
    if (!present) {
      const auto score = decoding::score_sequence(params, src, framed_ref);
      Hypothesis h;
      h.tokens = framed_ref;
      h.token_logprobs = score.token_logprobs;
      h.total_logprob = score.total_logprob;
      h.normalized_score = score.total_logprob;
      out.push_back(std::move(h));
    }
  }
  return out;
}

RiskBatch build_risk_batch(const ParameterStore& params, const SentencePair& pair, const MRTConfig& cfg,
                           std::uint64_t seed) {
  RiskBatch rb;
  rb.source = pair.source;
  rb.reference = pair.target;
  rb.candidates = sample_subspace(params, pair.source, pair.target, cfg, seed);
  std::vector<double> lps;
  for (const auto& h : rb.candidates) {
    rb.costs.push_back(cost_delta(h.tokens, pair.target));
    lps.push_back(h.total_logprob);
  }
  rb.probabilities = sharpened_distribution(lps, cfg.sharpness);
  return rb;
}

Tensor risk_from_logprobs(const Tensor& logprobs, std::span<const double> costs, double alpha,
                          std::span<const std::uint8_t> valid) {
  if (logprobs.rank() != 2) throw ShapeError("risk_from_logprobs: expected [B, n], got " +
                                             numkit::shape_string(logprobs.shape()));
  if (costs.size() != logprobs.numel()) throw ShapeError("risk_from_logprobs: one cost per candidate required");
  Tensor cost_tensor(logprobs.shape());
  for (std::size_t i = 0; i < costs.size(); ++i) {
    const bool ok = valid.empty() || valid[i];
    cost_tensor.mutable_values()[i] = ok ? static_cast<Scalar>(costs[i]) : Scalar(0);
  }
  const Tensor p = sharpened_distribution(logprobs, alpha, valid);
  return numkit::mean(numkit::sum_last(numkit::multiply(p, cost_tensor)));
}

std::vector<double> risk_gradient(std::span<const double> logprobs, std::span<const double> costs, double alpha) {
  if (logprobs.size() != costs.size()) throw ContractError("risk_gradient: one cost per candidate required");
  const std::vector<double> p = sharpened_distribution(logprobs, alpha);
  double risk = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) risk += p[i] * costs[i];
  std::vector<double> grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) grad[i] = alpha * p[i] * (costs[i] - risk);
  return grad;
}

Tensor mrt_risk(const ParameterStore& params, std::span<const RiskBatch> batches, double alpha) {
  if (batches.empty()) throw ContractError("mrt_risk: no risk batches");
  std::size_t width = 0;
  for (const auto& rb : batches) {
    if (rb.candidates.empty()) throw ContractError("mrt_risk: empty sub-space");
    if (rb.costs.size() != rb.candidates.size()) throw ContractError("mrt_risk: one cost per candidate required");
    width = std::max(width, rb.candidates.size());
  }
  const std::size_t b = batches.size();
  std::vector<TokenSeq> sources;
  std::vector<int> row_source;
  std::vector<TokenSeq> inputs;
  std::vector<double> costs;
  std::vector<std::uint8_t> valid;
  std::size_t longest = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const RiskBatch& rb = batches[i];
    sources.push_back(rb.source);
    for (std::size_t j = 0; j < width; ++j) {
      const bool real = j < rb.candidates.size();
      const TokenSeq& tokens = rb.candidates[real ? j : 0].tokens;
      if (tokens.size() < 2 || tokens.front() != Vocabulary::kBos) throw ContractError("mrt_risk: malformed candidate");
      row_source.push_back(static_cast<int>(i));
      inputs.emplace_back(tokens.begin(), tokens.end() - 1);
      longest = std::max(longest, inputs.back().size());
      costs.push_back(real ? rb.costs[j] : 0.0);
      valid.push_back(real ? 1 : 0);
    }
  }
  const std::size_t rows = inputs.size();
  std::vector<int> gold(rows * longest, Vocabulary::kPad);
  Tensor token_mask({static_cast<int>(rows * longest)});
  for (std::size_t r = 0; r < rows; ++r) {
    const RiskBatch& rb = batches[r / width];
    const std::size_t j = r % width;
    const TokenSeq& tokens = rb.candidates[j < rb.candidates.size() ? j : 0].tokens;
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      gold[r * longest + t - 1] = tokens[t];
      token_mask.mutable_values()[r * longest + t - 1] = 1;
    }
  }

  const auto enc = seqmodel::encode_batch(params, sources);
  const auto expanded = seqmodel::select_rows(enc, row_source);
  const Tensor lp = seqmodel::decode_batch(params, expanded, inputs);
  const int v = params.config().vocab_size;
  const Tensor picked = numkit::multiply(numkit::pick(lp.reshape({static_cast<int>(gold.size()), v}), gold), token_mask);
  const Tensor seq_lp = numkit::sum_last(picked.reshape({static_cast<int>(rows), static_cast<int>(longest)}));
  return risk_from_logprobs(seq_lp.reshape({static_cast<int>(b), static_cast<int>(width)}), costs, alpha, valid);
}

MLEResult train_mle(ParameterStore& params, const Corpus& corpus, const MLEConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (corpus.empty()) throw ContractError("train_mle: empty corpus");
  std::mt19937_64 order_rng(derive_seed(seed, "mle.order"));
  std::mt19937_64 dropout_rng(derive_seed(seed, "mle.dropout"));
  const seqmodel::ForwardOptions options{&dropout_rng};
  Adam adam(params);
  params.set_requires_grad(true);

  MLEResult result;
  long step = 0;
  bool done = false;
  for (int epoch = 0; epoch < cfg.max_epochs && !done; ++epoch) {
    const auto batches = make_token_batches(corpus, cfg.token_batch_size, order_rng);
    double epoch_sum = 0.0;
    long epoch_steps = 0;
    for (const auto& indices : batches) {
      ++step;
      const double lr = inverse_sqrt_schedule(step, cfg.learning_rate, cfg.warmup_steps);
      std::vector<SentencePair> batch;
      for (std::size_t i : indices) batch.push_back(corpus[i]);
      double value = 0.0;
      try {
        Graph graph;
        Tensor loss;
        {
          const Graph::Scope scope(graph);
          loss = mle_loss(params, batch, cfg.label_smoothing, options);
        }
        value = loss.item();
        params.zero_grad();
        graph.backward(loss);
        adam.step(params, lr, cfg.gradient_clip_threshold);
      } catch (const NumericalError& e) {
        diverged("MLE training", step, e);
      }
      result.trace.push_back({step, value, lr});
      epoch_sum += value;
      ++epoch_steps;
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        done = true;
        break;
      }
    }
    result.epoch_mean_loss.push_back(epoch_sum / static_cast<double>(std::max(1L, epoch_steps)));
  }
  params.zero_grad();
  params.set_requires_grad(false);
  params.set_step_count(params.step_count() + step);
  return result;
}

double mean_greedy_cost(const ParameterStore& params, std::span<const SentencePair> pairs) {
  if (pairs.empty()) throw ContractError("mean_greedy_cost: no pairs");
  decoding::DecodeConfig dc;
  dc.beam_size = 1;
  dc.max_len = params.config().max_seq_len;
  double total = 0.0;
  for (const auto& pair : pairs) total += cost_delta(decoding::greedy(params, pair.source, dc).tokens, pair.target);
  return total / static_cast<double>(pairs.size());
}

MRTResult finetune_mrt(ParameterStore& params, const Corpus& corpus, const MRTConfig& cfg, std::uint64_t seed,
                       const Corpus* heldout) {
  cfg.validate();
  if (corpus.empty()) throw ContractError("finetune_mrt: empty corpus");
  std::mt19937_64 order_rng(derive_seed(seed, "mrt.order"));
  Adam adam(params);
  MRTResult result;

  std::span<const SentencePair> eval;
  if (heldout != nullptr && !heldout->empty()) {
    eval = std::span<const SentencePair>(heldout->data(), std::min(heldout->size(), static_cast<std::size_t>(cfg.eval_size)));
  }
  std::optional<ParameterStore> best;
  double best_cost = 0.0;
  if (!eval.empty()) {
    best_cost = mean_greedy_cost(params, eval);
    result.heldout.emplace_back(0, best_cost);
    best = params.clone();
  }

  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  const long start_count = params.step_count();
  for (long step = 1; step <= cfg.max_steps; ++step) {
    std::vector<RiskBatch> batches;
    for (int i = 0; i < cfg.sentence_batch_size; ++i) {
      if (cursor == order.size()) {
        order.resize(corpus.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      const SentencePair& pair = corpus[order[cursor++]];
      const std::uint64_t sample_seed = derive_seed(seed, "mrt.sample." + std::to_string(step) + "." + std::to_string(i));
      batches.push_back(build_risk_batch(params, pair, cfg, sample_seed));
    }
    double value = 0.0;
    try {
      params.set_requires_grad(true);
      Graph graph;
      Tensor risk;
      {
        const Graph::Scope scope(graph);
        risk = mrt_risk(params, batches, cfg.sharpness);
      }
      value = risk.item();
      params.zero_grad();
      graph.backward(risk);
      adam.step(params, cfg.learning_rate, cfg.gradient_clip_threshold);
      params.set_requires_grad(false);
    } catch (const NumericalError& e) {
      diverged("MRT fine-tuning", step, e);
    }
    result.trace.push_back({step, value, cfg.learning_rate});
    params.set_step_count(start_count + step);

    if (!eval.empty() && (step % cfg.eval_interval == 0 || step == cfg.max_steps)) {
      const double cost = mean_greedy_cost(params, eval);
      result.heldout.emplace_back(step, cost);
      if (cost < best_cost) {
        best_cost = cost;
        best = params.clone();
        result.best_step = step;
      }
    }
  }
  params.zero_grad();
  params.set_requires_grad(false);
  if (best) params = std::move(*best);
  if (eval.empty()) result.best_step = cfg.max_steps;
  return result;
}

}  // namespace objectives
SEQRISK_END_NAMESPACE
