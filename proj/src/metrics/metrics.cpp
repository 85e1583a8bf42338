#include "seqrisk/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

SEQRISK_BEGIN_NAMESPACE
namespace metrics {

namespace {

void check_order(int max_n) {
  if (max_n < 1 || max_n > kMaxOrder) throw ContractError("BLEU order must be in 1.." + std::to_string(kMaxOrder));
}

std::map<std::vector<int>, long> ngram_histogram(std::span<const int> seq, int n) {
  std::map<std::vector<int>, long> hist;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= seq.size(); ++i) {
    ++hist[std::vector<int>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                            seq.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return hist;
}

double brevity_penalty(long hyp_len, long ref_len) {
  if (hyp_len >= ref_len) return 1.0;
  return std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
}

double log_choose(long n, long k) {
  return std::lgamma(static_cast<double>(n + 1)) - std::lgamma(static_cast<double>(k + 1)) -
         std::lgamma(static_cast<double>(n - k + 1));
}

}  // namespace

NGramCounts& NGramCounts::operator+=(const NGramCounts& other) {
  for (int n = 0; n < kMaxOrder; ++n) {
    matches[static_cast<std::size_t>(n)] += other.matches[static_cast<std::size_t>(n)];
    totals[static_cast<std::size_t>(n)] += other.totals[static_cast<std::size_t>(n)];
  }
  hyp_len += other.hyp_len;
  ref_len += other.ref_len;
  return *this;
}

NGramCounts count_ngrams(std::span<const int> hyp, std::span<const int> ref, int max_n) {
  check_order(max_n);
  NGramCounts c;
  c.hyp_len = static_cast<long>(hyp.size());
  c.ref_len = static_cast<long>(ref.size());
  for (int n = 1; n <= max_n; ++n) {
    const auto hyp_hist = ngram_histogram(hyp, n);
    const auto ref_hist = ngram_histogram(ref, n);
    long matched = 0, total = 0;
    for (const auto& [gram, count] : hyp_hist) {
      total += count;
      if (auto it = ref_hist.find(gram); it != ref_hist.end()) matched += std::min(count, it->second);
    }
    c.matches[static_cast<std::size_t>(n - 1)] = matched;
    c.totals[static_cast<std::size_t>(n - 1)] = total;
  }
  return c;
}

double smoothed_sentence_bleu(std::span<const int> hyp, std::span<const int> ref, int max_n) {
  if (ref.empty()) throw ContractError("smoothed_sentence_bleu: empty reference");
  check_order(max_n);
  if (hyp.empty()) return 0.0;
  const NGramCounts c = count_ngrams(hyp, ref, max_n);
  if (c.matches[0] == 0) return 0.0;
  double log_sum = std::log(static_cast<double>(c.matches[0]) / static_cast<double>(c.totals[0]));
  for (int n = 2; n <= max_n; ++n) {
    const auto i = static_cast<std::size_t>(n - 1);
    log_sum += std::log(static_cast<double>(c.matches[i] + 1) / static_cast<double>(c.totals[i] + 1));
  }
  return brevity_penalty(c.hyp_len, c.ref_len) * std::exp(log_sum / max_n);
}

double bleu_from_counts(const NGramCounts& c, int max_n) {
  check_order(max_n);
  if (c.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto i = static_cast<std::size_t>(n - 1);
    if (c.matches[i] == 0 || c.totals[i] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(c.matches[i]) / static_cast<double>(c.totals[i]));
  }
  return brevity_penalty(c.hyp_len, c.ref_len) * std::exp(log_sum / max_n);
}

double corpus_bleu(std::span<const std::vector<int>> hyps, std::span<const std::vector<int>> refs, int max_n) {
  if (hyps.size() != refs.size()) {
    throw ContractError("corpus_bleu: " + std::to_string(hyps.size()) + " hypotheses for " +
                        std::to_string(refs.size()) + " references");
  }
  if (hyps.empty()) throw ContractError("corpus_bleu: empty corpus");
  NGramCounts pooled;
  for (std::size_t i = 0; i < hyps.size(); ++i) pooled += count_ngrams(hyps[i], refs[i], max_n);
  return bleu_from_counts(pooled, max_n);
}

double cohen_kappa(double p_agree, double p_expected) {
  if (!(p_expected >= 0.0 && p_expected < 1.0)) throw ContractError("cohen_kappa: P(E) must be in [0, 1)");
  if (!(p_agree >= 0.0 && p_agree <= 1.0)) throw ContractError("cohen_kappa: P(A) must be in [0, 1]");
  return (p_agree - p_expected) / (1.0 - p_expected);
}

double fisher_exact_two_tailed(const ContingencyTable2x2& t) {
  if (t.a < 0 || t.b < 0 || t.c < 0 || t.d < 0) throw ContractError("fisher_exact_two_tailed: negative count");
  if (t.total() == 0) return 1.0;
  const long row1 = t.a + t.b, row2 = t.c + t.d, col1 = t.a + t.c, n = t.total();
  const double log_denominator = log_choose(n, col1);
  auto log_point = [&](long a) { return log_choose(row1, a) + log_choose(row2, col1 - a) - log_denominator; };
  const double observed = log_point(t.a);
  // Relative slack so that exact ties computed through lgamma still count.
  const double threshold = observed + 1e-9;
  double p = 0.0, rest = 0.0;
  for (long a = std::max(0L, col1 - row2); a <= std::min(row1, col1); ++a) {
    const double lp = log_point(a);
    (lp <= threshold ? p : rest) += std::exp(lp);
  }
  // Normalizing by the total cancels lgamma rounding, so p is exactly 1 when
  // every table is at least as extreme.
  return p / (p + rest);
}

}  // namespace metrics
SEQRISK_END_NAMESPACE
