#pragma once

#include <array>
#include <span>
#include <vector>

#include "seqrisk/core.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace metrics {

constexpr int kMaxOrder = 4;

/// Clipped n-gram matches and hypothesis n-gram totals for n = 1..max_n.
struct NGramCounts {
  std::array<long, kMaxOrder> matches{};
  std::array<long, kMaxOrder> totals{};
  long hyp_len = 0;
  long ref_len = 0;

  NGramCounts& operator+=(const NGramCounts& other);
};

NGramCounts count_ngrams(std::span<const int> hyp, std::span<const int> ref, int max_n = kMaxOrder);

/// Sentence BLEU with add-one smoothing on n >= 2 precisions (unigram
/// precision unsmoothed) and brevity penalty min(1, exp(1 - |ref|/|hyp|)).
/// Empty hypothesis scores 0; empty reference is a ContractError.
double smoothed_sentence_bleu(std::span<const int> hyp, std::span<const int> ref, int max_n = kMaxOrder);

/// Unsmoothed BLEU over pooled counts; 0 when any pooled precision is 0.
double corpus_bleu(std::span<const std::vector<int>> hyps, std::span<const std::vector<int>> refs,
                   int max_n = kMaxOrder);
double bleu_from_counts(const NGramCounts& counts, int max_n = kMaxOrder);

/// K = (P(A) - P(E)) / (1 - P(E)).
double cohen_kappa(double p_agree, double p_expected);

struct ContingencyTable2x2 {
  long a = 0, b = 0;
  long c = 0, d = 0;

  long total() const { return a + b + c + d; }
};

/// Two-tailed Fisher exact test: total hypergeometric probability (fixed
/// margins) of tables no more likely than the observed one.
double fisher_exact_two_tailed(const ContingencyTable2x2& table);

}  // namespace metrics
SEQRISK_END_NAMESPACE
