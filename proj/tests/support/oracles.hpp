#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "seqrisk/decoding/decoding.hpp"
#include "seqrisk/numkit/graph.hpp"
#include "seqrisk/numkit/tensor.hpp"
#include "seqrisk/seqmodel/vocabulary.hpp"

namespace oracle {

using seqrisk::decoding::Hypothesis;
using seqrisk::numkit::Tensor;
using TokenSeq = std::vector<int>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Finite differences

struct GradCheck {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
/// turning rounding noise into large relative errors.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients of a scalar loss with central differences
/// over every element of `inputs`.
inline GradCheck gradcheck(const std::vector<Tensor>& inputs, const std::function<Tensor()>& loss, double h = 1e-3,
                           double floor = 1e-6) {
  namespace nk = seqrisk::numkit;
  for (const auto& t : inputs) t.zero_grad();
  {
    nk::Graph g;
    const nk::Graph::Scope scope(g);
    g.backward(loss());
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  auto value = [&] {
    const nk::Graph::NoGrad no_grad;
    return static_cast<double>(loss().item());
  };
  GradCheck out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor t = inputs[i];
    auto values = t.mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const auto saved = values[j];
      values[j] = saved + h;
      const double plus = value();
      values[j] = saved - h;
      const double minus = value();
      values[j] = saved;
      const double numeric = (plus - minus) / (2 * h);
      out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[i][j], numeric, floor));
      out.max_abs_error = std::max(out.max_abs_error, std::abs(analytic[i][j] - numeric));
      ++out.checked;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decoding

/// Next-token log-probabilities as a pure function of the prefix.
using PrefixTable = std::function<std::vector<double>(const TokenSeq& prefix)>;

/// StepModel backed by a prefix table; keeps full prefixes, no caching.
class TableStepModel : public seqrisk::decoding::StepModel {
 public:
  TableStepModel(int vocab, int max_steps, PrefixTable table)
      : vocab_(vocab), max_steps_(max_steps), table_(std::move(table)) {}

  int vocab_size() const override { return vocab_; }
  int max_steps() const override { return max_steps_; }
  void reset(int rows) override { rows_.assign(static_cast<std::size_t>(rows), TokenSeq{}); }
  std::vector<double> step(std::span<const int> tokens) override {
    if (tokens.size() != rows_.size()) throw std::logic_error("TableStepModel: row count mismatch");
    std::vector<double> out;
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      rows_[r].push_back(tokens[r]);
      const auto lp = table_(rows_[r]);
      out.insert(out.end(), lp.begin(), lp.end());
    }
    return out;
  }
  void reorder(std::span<const int> parents) override {
    std::vector<TokenSeq> next;
    for (int p : parents) next.push_back(rows_.at(static_cast<std::size_t>(p)));
    rows_ = std::move(next);
  }

 private:
  int vocab_;
  int max_steps_;
  PrefixTable table_;
  std::vector<TokenSeq> rows_;
};

/// Random normalized table over ids {EOS, 4..V-1}; PAD, BOS and UNK get no
/// mass. Values depend only on the prefix and the seed.
inline PrefixTable random_table(int vocab, std::uint64_t seed) {
  return [vocab, seed](const TokenSeq& prefix) {
    std::uint64_t h = seed;
    for (int id : prefix) h = h * 1000003u + static_cast<std::uint64_t>(id) + 17u;
    std::mt19937_64 rng(h);
    std::vector<double> w(static_cast<std::size_t>(vocab), 0.0);
    double total = 0.0;
    for (int id = 0; id < vocab; ++id) {
      if (id != seqrisk::seqmodel::Vocabulary::kEos && id < seqrisk::seqmodel::Vocabulary::kNumSpecials) continue;
      w[static_cast<std::size_t>(id)] = std::exponential_distribution<double>(1.0)(rng);
      total += w[static_cast<std::size_t>(id)];
    }
    std::vector<double> lp(static_cast<std::size_t>(vocab), kNegInf);
    for (int id = 0; id < vocab; ++id) {
      if (w[static_cast<std::size_t>(id)] > 0) lp[static_cast<std::size_t>(id)] = std::log(w[static_cast<std::size_t>(id)] / total);
    }
    return lp;
  };
}

inline double length_penalty(int len, double alpha) { return std::pow((5.0 + len) / 6.0, alpha); }

/// Every complete output of at most max_len tokens (BOS included): sequences
/// ending in EOS, plus unfinished sequences cut at max_len.
inline std::vector<Hypothesis> enumerate_outputs(int vocab, int max_len, const PrefixTable& table, double alpha) {
  std::vector<Hypothesis> out;
  std::function<void(Hypothesis)> walk = [&](Hypothesis h) {
    const bool ended = h.tokens.size() > 1 && h.tokens.back() == seqrisk::seqmodel::Vocabulary::kEos;
    if (ended || static_cast<int>(h.tokens.size()) == max_len) {
      h.normalized_score = h.total_logprob / length_penalty(static_cast<int>(h.token_logprobs.size()), alpha);
      out.push_back(h);
      return;
    }
    const auto lp = table(h.tokens);
    for (int id = 0; id < vocab; ++id) {
      if (lp[static_cast<std::size_t>(id)] == kNegInf) continue;
      Hypothesis next = h;
      next.tokens.push_back(id);
      next.token_logprobs.push_back(lp[static_cast<std::size_t>(id)]);
      next.total_logprob += lp[static_cast<std::size_t>(id)];
      walk(std::move(next));
    }
  };
  Hypothesis start;
  start.tokens = {seqrisk::seqmodel::Vocabulary::kBos};
  walk(start);
  std::sort(out.begin(), out.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.normalized_score != b.normalized_score) return a.normalized_score > b.normalized_score;
    return a.tokens < b.tokens;
  });
  return out;
}

/// Shrinking-beam search written directly over whole prefixes: every step
/// enumerates all one-token extensions, keeps the best (k - finished) by raw
/// total, retires EOS extensions, and stops when k are finished or the
/// budget is spent. No early stopping.
inline std::vector<Hypothesis> reference_beam(int vocab, int max_len, int k, const PrefixTable& table, double alpha) {
  using seqrisk::seqmodel::Vocabulary;
  Hypothesis start;
  start.tokens = {Vocabulary::kBos};
  std::vector<Hypothesis> live{start}, done;
  for (int t = 0; t < max_len - 1 && !live.empty() && static_cast<int>(done.size()) < k; ++t) {
    std::vector<Hypothesis> expansions;
    for (const auto& h : live) {
      const auto lp = table(h.tokens);
      for (int id = 0; id < vocab; ++id) {
        if (lp[static_cast<std::size_t>(id)] == kNegInf) continue;
        Hypothesis next = h;
        next.tokens.push_back(id);
        next.token_logprobs.push_back(lp[static_cast<std::size_t>(id)]);
        next.total_logprob += lp[static_cast<std::size_t>(id)];
        expansions.push_back(std::move(next));
      }
    }
    std::sort(expansions.begin(), expansions.end(), [](const Hypothesis& a, const Hypothesis& b) {
      if (a.total_logprob != b.total_logprob) return a.total_logprob > b.total_logprob;
      return a.tokens < b.tokens;
    });
    expansions.resize(std::min(expansions.size(), static_cast<std::size_t>(k) - done.size()));
    live.clear();
    for (auto& h : expansions) (h.tokens.back() == Vocabulary::kEos ? done : live).push_back(std::move(h));
  }
  for (auto& h : live) done.push_back(std::move(h));
  for (auto& h : done) h.normalized_score = h.total_logprob / length_penalty(static_cast<int>(h.token_logprobs.size()), alpha);
  std::sort(done.begin(), done.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.normalized_score != b.normalized_score) return a.normalized_score > b.normalized_score;
    return a.tokens < b.tokens;
  });
  if (static_cast<int>(done.size()) > k) done.resize(static_cast<std::size_t>(k));
  return done;
}

// ---------------------------------------------------------------------------
// Fisher exact test by enumeration with exact integer weights.

/// C(n, k) exactly (n <= 60 fits in 64 bits for the sizes used here).
inline std::uint64_t choose(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  return r;
}

/// Sum of hypergeometric probabilities of all tables with the observed
/// margins whose probability does not exceed the observed table's. Weights
/// C(r1, a) C(r2, c) are compared as exact integers.
inline double fisher_by_enumeration(long a, long b, long c, long d) {
  const int r1 = static_cast<int>(a + b), r2 = static_cast<int>(c + d), c1 = static_cast<int>(a + c);
  const int n = r1 + r2;
  const std::uint64_t observed = choose(r1, static_cast<int>(a)) * choose(r2, static_cast<int>(c));
  std::uint64_t tail = 0;
  for (int x = std::max(0, c1 - r2); x <= std::min(r1, c1); ++x) {
    const std::uint64_t w = choose(r1, x) * choose(r2, c1 - x);
    if (w <= observed) tail += w;
  }
  return std::min(1.0, static_cast<double>(tail) / static_cast<double>(choose(n, c1)));
}

}  // namespace oracle
