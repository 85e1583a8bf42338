#include "seqrisk/analysis/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>

#include <nlohmann/json.hpp>

#include "seqrisk/metrics/metrics.hpp"
#include "seqrisk/numkit/graph.hpp"
#include "seqrisk/seqmodel/transformer.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace analysis {

using seqmodel::Vocabulary;

namespace {

constexpr std::size_t kScoreBatch = 64;

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void accumulate(std::vector<CurvePoint>& points, const std::vector<double>& probs, int max_t) {
  const int n = std::min<int>(max_t, static_cast<int>(probs.size()));
  for (int t = 0; t < n; ++t) {
    CurvePoint& p = points[static_cast<std::size_t>(t)];
    const double prob = probs[static_cast<std::size_t>(t)];
    p.mean_prob += prob;
    p.mean_logprob += std::log(std::max(prob, 1e-300));
    ++p.count;
  }
}

void finish(UncertaintyCurve& curve) {
  std::vector<CurvePoint> kept;
  for (auto& p : curve.points) {
    if (p.count == 0) continue;
    p.mean_prob /= static_cast<double>(p.count);
    p.mean_logprob /= static_cast<double>(p.count);
    kept.push_back(p);
  }
  curve.points = std::move(kept);
}

}  // namespace

std::string format_number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

bool DistractorAssignment::any_fallback() const {
  return std::any_of(length_fallback.begin(), length_fallback.end(), [](bool b) { return b; });
}

DistractorAssignment assign_distractors(std::span<const SentencePair> pairs, std::span<const SentencePair> pool,
                                        std::uint64_t seed, int per_reference) {
  if (pool.empty()) throw ContractError("assign_distractors: empty distractor pool");
  if (per_reference < 1) throw ContractError("assign_distractors: need at least one distractor per reference");
  std::map<std::size_t, std::vector<int>> by_length;
  for (std::size_t i = 0; i < pool.size(); ++i) by_length[pool[i].target.size()].push_back(static_cast<int>(i));

  std::mt19937_64 rng(seed);
  DistractorAssignment out;
  for (const auto& pair : pairs) {
    const std::size_t len = pair.target.size();
    auto it = by_length.find(len);
    bool fallback = false;
    if (it == by_length.end()) {
      fallback = true;
      auto above = by_length.lower_bound(len);
      if (above == by_length.begin()) {
        it = above;
      } else if (above == by_length.end()) {
        it = std::prev(above);
      } else {
        auto below = std::prev(above);
        it = (len - below->first <= above->first - len) ? below : above;
      }
    }
    std::vector<int> chosen;
    for (int m = 0; m < per_reference; ++m) {
      const auto& candidates = it->second;
      chosen.push_back(candidates[static_cast<std::size_t>(rng() % candidates.size())]);
    }
    out.pool_index.push_back(std::move(chosen));
    out.length_fallback.push_back(fallback);
  }
  return out;
}

std::vector<std::vector<double>> token_probabilities(const ParameterStore& params, std::span<const TokenSeq> sources,
                                                     std::span<const TokenSeq> targets) {
  if (sources.size() != targets.size()) throw ContractError("token_probabilities: sources and targets differ in count");
  const numkit::Graph::NoGrad no_grad;
  const int v = params.config().vocab_size;
  std::vector<std::vector<double>> out;
  for (std::size_t start = 0; start < sources.size(); start += kScoreBatch) {
    const std::size_t end = std::min(sources.size(), start + kScoreBatch);
    std::vector<TokenSeq> src(sources.begin() + static_cast<std::ptrdiff_t>(start),
                              sources.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<TokenSeq> inputs;
    std::size_t longest = 0;
    for (std::size_t i = start; i < end; ++i) {
      TokenSeq in{Vocabulary::kBos};
      in.insert(in.end(), targets[i].begin(), targets[i].end());
      longest = std::max(longest, in.size());
      inputs.push_back(std::move(in));
    }
    const auto enc = seqmodel::encode_batch(params, src);
    const auto lp = seqmodel::decode_batch(params, enc, inputs);
    const auto values = lp.values();
    for (std::size_t b = 0; b < inputs.size(); ++b) {
      const TokenSeq& tgt = targets[start + b];
      std::vector<double> probs;
      for (std::size_t t = 0; t <= tgt.size(); ++t) {
        const int gold = t < tgt.size() ? tgt[t] : Vocabulary::kEos;
        const std::size_t at = (b * longest + t) * static_cast<std::size_t>(v) + static_cast<std::size_t>(gold);
        probs.push_back(std::exp(static_cast<double>(values[at])));
      }
      out.push_back(std::move(probs));
    }
  }
  return out;
}

UncertaintyResult uncertainty_curves(const ParameterStore& params, std::span<const SentencePair> pairs,
                                     std::span<const SentencePair> pool, int max_t, std::uint64_t seed,
                                     const std::string& model_tag, int per_reference) {
  if (max_t < 1) throw ContractError("uncertainty_curves: max_t must be positive");
  UncertaintyResult r;
  r.assignment = assign_distractors(pairs, pool, seed, per_reference);
  r.references = {"references", model_tag, max_t, std::vector<CurvePoint>(static_cast<std::size_t>(max_t))};
  r.distractors = {"distractors", model_tag, max_t, std::vector<CurvePoint>(static_cast<std::size_t>(max_t))};
  for (int t = 0; t < max_t; ++t) {
    r.references.points[static_cast<std::size_t>(t)].t = t;
    r.distractors.points[static_cast<std::size_t>(t)].t = t;
  }

  std::vector<TokenSeq> sources, targets, dsources, dtargets;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    sources.push_back(pairs[i].source);
    targets.push_back(pairs[i].target);
    for (int idx : r.assignment.pool_index[i]) {
      dsources.push_back(pairs[i].source);
      dtargets.push_back(pool[static_cast<std::size_t>(idx)].target);
    }
  }
  for (const auto& probs : token_probabilities(params, sources, targets)) accumulate(r.references.points, probs, max_t);
  for (const auto& probs : token_probabilities(params, dsources, dtargets)) {
    accumulate(r.distractors.points, probs, max_t);
  }
  finish(r.references);
  finish(r.distractors);
  return r;
}

double curve_gap(const UncertaintyResult& result, int from_t) {
  std::map<int, double> refs;
  for (const auto& p : result.references.points) refs[p.t] = p.mean_prob;
  double total = 0.0;
  int n = 0;
  for (const auto& p : result.distractors.points) {
    if (p.t < from_t) continue;
    auto it = refs.find(p.t);
    if (it == refs.end()) continue;
    total += it->second - p.mean_prob;
    ++n;
  }
  if (n == 0) throw ContractError("curve_gap: no time steps at or beyond " + std::to_string(from_t));
  return total / n;
}

double adequacy_overlap(std::span<const int> hypothesis, std::span<const int> reference) {
  if (reference.empty()) throw ContractError("adequacy_overlap: empty reference");
  std::map<int, int> available;
  for (int id : hypothesis) ++available[id];
  long found = 0;
  for (int id : reference) {
    auto it = available.find(id);
    if (it != available.end() && it->second > 0) {
      --it->second;
      ++found;
    }
  }
  return static_cast<double>(found) / static_cast<double>(reference.size());
}

HallucinationJudgment judge(const TokenSeq& source, const TokenSeq& hypothesis, const TokenSeq& reference,
                            const datagen::TargetGrammar& grammar, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ContractError("hallucination threshold must be in (0, 1)");
  HallucinationJudgment j;
  j.source = source;
  j.hypothesis = seqmodel::strip_specials(hypothesis);
  j.reference = reference;
  j.fluency = grammar.check(j.hypothesis);
  j.overlap = adequacy_overlap(j.hypothesis, reference);
  j.is_hallucination = j.fluency != datagen::Fluency::disfluent && j.overlap < tau;
  return j;
}

HallucinationReport judge_translations(std::span<const TokenSeq> hypotheses, std::span<const SentencePair> testset,
                                       const datagen::TargetGrammar& grammar, double tau) {
  if (hypotheses.size() != testset.size()) throw ContractError("judge_translations: one hypothesis per test pair");
  if (testset.empty()) throw ContractError("judge_translations: empty test set");
  HallucinationReport r;
  long count = 0;
  for (std::size_t i = 0; i < testset.size(); ++i) {
    r.judgments.push_back(judge(testset[i].source, hypotheses[i], testset[i].target, grammar, tau));
    if (r.judgments.back().is_hallucination) ++count;
  }
  r.rate = static_cast<double>(count) / static_cast<double>(testset.size());
  return r;
}

std::vector<TokenSeq> translate_all(const ParameterStore& params, std::span<const SentencePair> testset,
                                    const decoding::DecodeConfig& cfg) {
  std::vector<TokenSeq> out;
  out.reserve(testset.size());
  for (const auto& pair : testset) out.push_back(decoding::translate(params, pair.source, cfg).content());
  return out;
}

HallucinationReport hallucination_rate(const ParameterStore& params, std::span<const SentencePair> testset,
                                       const decoding::DecodeConfig& cfg, const datagen::TargetGrammar& grammar,
                                       double tau) {
  const auto hyps = translate_all(params, testset, cfg);
  return judge_translations(hyps, testset, grammar, tau);
}

std::vector<SweepRow> beam_sweep(const ParameterStore& params, std::span<const SentencePair> testset,
                                 std::span<const int> ks, const decoding::DecodeConfig& cfg,
                                 const datagen::TargetGrammar& grammar, double tau) {
  if (ks.empty()) throw ContractError("beam_sweep: no beam sizes");
  std::vector<TokenSeq> refs;
  for (const auto& p : testset) refs.push_back(p.target);
  std::vector<SweepRow> rows;
  for (int k : ks) {
    if (k < 1) throw ContractError("beam_sweep: beam sizes must be at least 1");
    decoding::DecodeConfig dc = cfg;
    dc.beam_size = k;
    const auto hyps = translate_all(params, testset, dc);
    const auto report = judge_translations(hyps, testset, grammar, tau);
    rows.push_back({k, metrics::corpus_bleu(hyps, refs), report.rate});
  }
  return rows;
}

double compare_hallucination_significance(std::span<const HallucinationJudgment> a,
                                          std::span<const HallucinationJudgment> b) {
  if (a.empty() || b.empty()) throw ContractError("compare_hallucination_significance: empty judgment set");
  auto count = [](std::span<const HallucinationJudgment> js) {
    return static_cast<long>(std::count_if(js.begin(), js.end(), [](const auto& j) { return j.is_hallucination; }));
  };
  const long ha = count(a), hb = count(b);
  return metrics::fisher_exact_two_tailed({ha, static_cast<long>(a.size()) - ha, hb, static_cast<long>(b.size()) - hb});
}

void write_curves_csv(const std::filesystem::path& path, std::span<const UncertaintyCurve> curves, CurveValue value) {
  const bool logs = value == CurveValue::log_probability;
  auto out = open_output(path);
  out << (logs ? "t,mean_logprob,count,label,model_tag\n" : "t,mean_prob,count,label,model_tag\n");
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      out << p.t << ',' << format_number(logs ? p.mean_logprob : p.mean_prob) << ',' << p.count << ',' << c.label << ','
          << c.model_tag << '\n';
    }
  }
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
  auto out = open_output(path);
  out << "k,bleu,hallucination_rate\n";
  for (const auto& r : rows) out << r.k << ',' << format_number(r.bleu) << ',' << format_number(r.hallucination_rate) << '\n';
}

void write_judgments_jsonl(const std::filesystem::path& path, std::span<const HallucinationJudgment> judgments,
                           const Vocabulary& vocab) {
  auto out = open_output(path);
  auto text = [&](const TokenSeq& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? " " : "") + vocab.token(ids[i]);
    return s;
  };
  for (const auto& j : judgments) {
    const nlohmann::json line{{"source", text(j.source)},
                              {"hypothesis", text(j.hypothesis)},
                              {"fluency", datagen::to_string(j.fluency)},
                              {"overlap", j.overlap},
                              {"is_hallucination", j.is_hallucination}};
    out << line.dump() << '\n';
  }
}

void write_assignment_csv(const std::filesystem::path& path, const DistractorAssignment& assignment) {
  auto out = open_output(path);
  out << "reference_index,distractor_index,length_fallback\n";
  for (std::size_t i = 0; i < assignment.pool_index.size(); ++i) {
    for (int idx : assignment.pool_index[i]) {
      out << i << ',' << idx << ',' << (assignment.length_fallback[i] ? 1 : 0) << '\n';
    }
  }
}

}  // namespace analysis
SEQRISK_END_NAMESPACE
