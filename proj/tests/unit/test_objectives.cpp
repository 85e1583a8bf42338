#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "seqrisk/datagen/datagen.hpp"
#include "seqrisk/numkit/ops.hpp"
#include "seqrisk/objectives/objectives.hpp"
#include "seqrisk/objectives/optimizer.hpp"

namespace {

using namespace seqrisk;
using numkit::Tensor;
using objectives::MRTConfig;
using seqmodel::ModelConfig;
using seqmodel::ParameterStore;
using seqmodel::TokenSeq;
using seqmodel::Vocabulary;

std::vector<double> softmax_oracle(const std::vector<double>& l, double alpha) {
  std::vector<long double> e;
  long double z = 0;
  for (double x : l) {
    e.push_back(std::exp(static_cast<long double>(alpha) * x));
    z += e.back();
  }
  std::vector<double> out;
  for (auto x : e) out.push_back(static_cast<double>(x / z));
  return out;
}

TEST(SharpenedDistribution, SingleCandidate) {
  EXPECT_EQ(objectives::sharpened_distribution(std::vector<double>{-3.5}, 0.005), std::vector<double>{1.0});
}

TEST(SharpenedDistribution, NormalizesWithinTolerance) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-60.0, 0.0);
  for (double alpha : {1e-9, 0.005, 0.5, 1.0, 3.0}) {
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> l(1 + rng() % 8);
      for (auto& x : l) x = u(rng);
      double s = 0;
      for (double p : objectives::sharpened_distribution(l, alpha)) {
        EXPECT_GE(p, 0.0);
        s += p;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(SharpenedDistribution, UniformLimitForTinyAlpha) {
  for (double p : objectives::sharpened_distribution(std::vector<double>{-1.0, -40.0}, 1e-9)) EXPECT_NEAR(p, 0.5, 1e-6);
}

TEST(SharpenedDistribution, PreservesOrder) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-30.0, 0.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> l(2 + rng() % 6);
    for (auto& x : l) x = u(rng);
    const auto p = objectives::sharpened_distribution(l, 0.5);
    for (std::size_t i = 0; i < l.size(); ++i) {
      for (std::size_t j = 0; j < l.size(); ++j) {
        if (l[i] > l[j]) EXPECT_GT(p[i], p[j]);
      }
    }
  }
}

TEST(SharpenedDistribution, TwoCandidateExample) {
  const auto p = objectives::sharpened_distribution(std::vector<double>{-1.0, -2.0}, 0.5);
  EXPECT_NEAR(p[0], 0.6225, 1e-4);
  EXPECT_NEAR(p[1], 0.3775, 1e-4);
  const auto want = softmax_oracle({-1.0, -2.0}, 0.5);
  EXPECT_NEAR(p[0], want[0], 1e-12);
}

TEST(SharpenedDistribution, AlphaOneIsRenormalizedProbability) {
  const std::vector<double> probs{0.2, 0.05, 0.01};
  std::vector<double> l;
  for (double q : probs) l.push_back(std::log(q));
  const auto p = objectives::sharpened_distribution(l, 1.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], probs[i] / 0.26, 1e-12);
}

TEST(SharpenedDistribution, RejectsBadInput) {
  EXPECT_THROW(objectives::sharpened_distribution(std::vector<double>{}, 0.5), ContractError);
  EXPECT_THROW(objectives::sharpened_distribution(std::vector<double>{-1.0}, 0.0), ContractError);
}

TEST(SharpenedDistribution, TensorVersionMatchesAndMasks) {
  const Tensor l({1, 3}, {-1.0f, -2.0f, -0.5f});
  const std::vector<std::uint8_t> valid{1, 1, 0};
  const auto p = objectives::sharpened_distribution(l, 0.5, valid).to_vector();
  EXPECT_NEAR(p[0], 0.6225, 1e-4);
  EXPECT_NEAR(p[1], 0.3775, 1e-4);
  EXPECT_EQ(p[2], 0.0f);
}

double risk_of(const std::vector<double>& l, const std::vector<double>& costs, double alpha) {
  const Tensor lp({1, static_cast<int>(l.size())}, std::vector<Scalar>(l.begin(), l.end()));
  return objectives::risk_from_logprobs(lp, costs, alpha).item();
}

TEST(Risk, ConstantCost) {
  EXPECT_NEAR(risk_of({-1, -4, -9}, {0.3, 0.3, 0.3}, 0.5), 0.3, 1e-6);
}

TEST(Risk, DotProductExample) {
  // l chosen so that P~ = [0.6225, 0.3775] at alpha 0.5.
  EXPECT_NEAR(risk_of({-1, -2}, {0.2, 0.9}, 0.5), 0.4642, 1e-4);
}

TEST(Risk, BoundedByCosts) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> l(1 + rng() % 6), c(l.size());
    for (auto& x : l) x = -20 * u(rng);
    for (auto& x : c) x = u(rng);
    const double r = risk_of(l, c, 1.0);
    EXPECT_GE(r, *std::min_element(c.begin(), c.end()) - 1e-6);
    EXPECT_LE(r, *std::max_element(c.begin(), c.end()) + 1e-6);
  }
}

TEST(Risk, LoweringWorstCandidateLowersRisk) {
  const std::vector<double> c{0.1, 0.8, 0.4};
  EXPECT_LT(risk_of({-2, -3.5, -2.5}, c, 0.5), risk_of({-2, -3, -2.5}, c, 0.5));
}

TEST(Risk, ClosedFormGradientSignAndSum) {
  const std::vector<double> l{-1, -2, -4}, c{0.1, 0.9, 0.5};
  const auto g = objectives::risk_gradient(l, c, 0.5);
  EXPECT_LT(g[0], 0.0);
  EXPECT_GT(g[1], 0.0);
  EXPECT_NEAR(g[0] + g[1] + g[2], 0.0, 1e-12);
}

TEST(CostDelta, PerfectAndDisjoint) {
  const TokenSeq ref{10, 11, 12, 13};
  EXPECT_EQ(objectives::cost_delta(ref, ref), 0.0);
  EXPECT_NEAR(objectives::cost_delta(TokenSeq{20, 21, 22, 23}, ref), 1.0, 1e-12);
  const TokenSeq framed{Vocabulary::kBos, 10, 11, 12, 13, Vocabulary::kEos};
  EXPECT_EQ(objectives::cost_delta(framed, ref), 0.0);
  EXPECT_THROW(objectives::cost_delta(ref, TokenSeq{}), ContractError);
}

TEST(SmoothedCrossEntropy, UniformRowsGiveLogV) {
  const int v = 7;
  const Tensor lp = Tensor::full({3, v}, static_cast<Scalar>(-std::log(7.0)));
  const std::vector<int> gold{4, 5, 2};
  for (double eps : {0.0, 0.1, 0.5}) {
    EXPECT_NEAR(objectives::smoothed_cross_entropy(lp, gold, eps).item(), std::log(7.0), 1e-6);
  }
}

TEST(SmoothedCrossEntropy, HandSummedNll) {
  const std::vector<double> p0{0.0, 0.1, 0.2, 0.3, 0.4}, p1{0.0, 0.5, 0.25, 0.125, 0.125};
  std::vector<Scalar> v;
  for (const auto* row : {&p0, &p1}) {
    for (double q : *row) v.push_back(static_cast<Scalar>(std::log(std::max(q, 1e-30))));
  }
  const std::vector<int> gold{3, 2};
  EXPECT_NEAR(objectives::smoothed_cross_entropy(Tensor({2, 5}, v), gold, 0.0).item(),
              -(std::log(0.3) + std::log(0.25)) / 2, 1e-6);
}

TEST(SmoothedCrossEntropy, ExplicitTargetDotProduct) {
  // Four non-PAD ids; 0.7 on gold, 0.1 on each other id.
  const std::vector<double> probs{1e-12, 0.1, 0.7, 0.1, 0.1};
  std::vector<Scalar> row;
  for (double q : probs) row.push_back(static_cast<Scalar>(std::log(q)));
  const double eps = 0.1;
  double want = 0;
  for (int i = 1; i < 5; ++i) {
    const double target = (i == 2 ? 1 - eps : 0.0) + eps / 4;
    want -= target * std::log(probs[i]);
  }
  EXPECT_NEAR(want, -(0.925 * std::log(0.7) + 0.075 * std::log(0.1)), 1e-12);
  EXPECT_NEAR(objectives::smoothed_cross_entropy(Tensor({1, 5}, row), std::vector<int>{2}, eps).item(), want, 1e-5);
}

TEST(SmoothedCrossEntropy, PadRowsIgnored) {
  const Tensor lp({2, 5}, {-1, -2, -3, -4, -5, -9, -9, -9, -9, -9});
  const auto with_pad = objectives::smoothed_cross_entropy(lp, std::vector<int>{2, Vocabulary::kPad}, 0.0).item();
  EXPECT_NEAR(with_pad, 3.0, 1e-6);
  EXPECT_THROW(objectives::smoothed_cross_entropy(lp, std::vector<int>{0, 0}, 0.0), ContractError);
  EXPECT_THROW(objectives::smoothed_cross_entropy(lp, std::vector<int>{1, 1}, 1.0), ContractError);
}

ModelConfig toy_config(int vocab) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 16;
  c.num_heads = 2;
  c.enc_layers = c.dec_layers = 1;
  c.ffn_dim = 32;
  c.max_seq_len = 16;
  c.dropout_rate = 0;
  return c;
}

TEST(MleLoss, UnsmoothedEqualsMeanGoldNll) {
  const auto p = ParameterStore::initialize(toy_config(14), 1);
  const datagen::Corpus batch{{{4, 5, 6}, {7, 8}, "t"}, {{9}, {10, 11, 12}, "t"}};
  double total = 0;
  int count = 0;
  for (const auto& pair : batch) {
    const TokenSeq tgt = datagen::framed(pair.target);
    const auto lp = seqmodel::forward_teacher_forced(p, pair.source, tgt).to_vector();
    for (std::size_t t = 0; t + 1 < tgt.size(); ++t, ++count) total -= lp[t * 14 + tgt[t + 1]];
  }
  EXPECT_NEAR(objectives::mle_loss(p, batch, 0.0).item(), total / count, 1e-5);
  EXPECT_GE(objectives::mle_loss(p, batch, 0.1).item(), 0.0);
  EXPECT_THROW(objectives::mle_loss(p, datagen::Corpus{}, 0.0), ContractError);
}

// A small domain and a briefly pre-trained model shared by the sampling and MRT tests.
struct ToyData {
  std::vector<datagen::DomainSpec> specs;
  Vocabulary vocab;
  datagen::Splits splits;

  ToyData() {
    datagen::DomainSpec s;
    s.name = "toy";
    for (int i = 0; i < 6; ++i) s.functions.push_back({"f" + std::to_string(i), "F" + std::to_string(i), i % 3});
    for (int i = 0; i < 8; ++i) s.lexicon.push_back({"c" + std::to_string(i), "C" + std::to_string(i)});
    s.min_phrases = 1;
    s.max_phrases = 3;
    s.frequent_functions = {0, 1, 2, 3, 4, 5};
    specs.push_back(s);
    vocab = datagen::build_vocabulary(specs);
    splits = datagen::generate_splits(s, vocab, {800, 50, 0}, 5);
  }
};

struct ToyTask : ToyData {
  ParameterStore params = ParameterStore::initialize(toy_config(vocab.size()), 5);

  ToyTask() {
    objectives::MLEConfig cfg;
    cfg.learning_rate = 3e-3;
    cfg.warmup_steps = 20;
    cfg.token_batch_size = 256;
    cfg.max_steps = 60;
    cfg.max_epochs = 100;
    objectives::train_mle(params, splits.train, cfg, 5);
  }
};

const ToyTask& toy() {
  static const ToyTask task;
  return task;
}

TEST(SampleSubspace, SingletonAndDeterminism) {
  const auto& t = toy();
  const auto& pair = t.splits.dev[0];
  MRTConfig cfg;
  cfg.num_candidates = 1;
  EXPECT_EQ(objectives::sample_subspace(t.params, pair.source, pair.target, cfg, 3).size(), 1u);
  cfg.num_candidates = 4;
  const auto a = objectives::sample_subspace(t.params, pair.source, pair.target, cfg, 3);
  const auto b = objectives::sample_subspace(t.params, pair.source, pair.target, cfg, 3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tokens, b[i].tokens);
    EXPECT_EQ(a[i].total_logprob, b[i].total_logprob);
  }
}

TEST(SampleSubspace, DistinctCandidatesWithRecomputableScores) {
  const auto& t = toy();
  MRTConfig cfg;
  cfg.num_candidates = 4;
  for (int i = 0; i < 10; ++i) {
    const auto& pair = t.splits.dev[static_cast<std::size_t>(i)];
    const auto cands = objectives::sample_subspace(t.params, pair.source, pair.target, cfg, 100 + i);
    ASSERT_LE(cands.size(), 4u);
    ASSERT_GE(cands.size(), 1u);
    for (std::size_t a = 0; a < cands.size(); ++a) {
      for (std::size_t b = a + 1; b < cands.size(); ++b) EXPECT_NE(cands[a].tokens, cands[b].tokens);
      const auto rescored = decoding::score_sequence(t.params, pair.source, cands[a].tokens);
      EXPECT_NEAR(rescored.total_logprob, cands[a].total_logprob, 1e-5 * std::max(1.0, std::abs(rescored.total_logprob)));
    }
  }
}

TEST(SampleSubspace, ReferenceOnlyWhenRequested) {
  const auto& t = toy();
  const auto& pair = t.splits.dev[1];
  MRTConfig cfg;
  cfg.num_candidates = 2;
  const TokenSeq framed = datagen::framed(pair.target);
  auto has_ref = [&](const std::vector<decoding::Hypothesis>& c) {
    return std::any_of(c.begin(), c.end(), [&](const auto& h) { return h.tokens == framed; });
  };
  cfg.include_reference = true;
  EXPECT_TRUE(has_ref(objectives::sample_subspace(t.params, pair.source, pair.target, cfg, 9)));
}

TEST(RiskBatch, InvariantsHold) {
  const auto& t = toy();
  MRTConfig cfg;
  for (int i = 0; i < 10; ++i) {
    const auto rb = objectives::build_risk_batch(t.params, t.splits.dev[static_cast<std::size_t>(i)], cfg, 40 + i);
    ASSERT_EQ(rb.costs.size(), rb.candidates.size());
    ASSERT_EQ(rb.probabilities.size(), rb.candidates.size());
    double s = 0;
    for (double p : rb.probabilities) s += p;
    EXPECT_NEAR(s, 1.0, 1e-6);
    for (double c : rb.costs) {
      EXPECT_GE(c, 0.0);
      EXPECT_LE(c, 1.0);
    }
  }
}

TEST(MrtRisk, MatchesStoredProbabilities) {
  const auto& t = toy();
  MRTConfig cfg;
  std::vector<objectives::RiskBatch> batches;
  double want = 0;
  for (int i = 0; i < 4; ++i) {
    batches.push_back(objectives::build_risk_batch(t.params, t.splits.dev[static_cast<std::size_t>(i)], cfg, 70 + i));
    for (std::size_t j = 0; j < batches.back().costs.size(); ++j) {
      want += batches.back().probabilities[j] * batches.back().costs[j];
    }
  }
  EXPECT_NEAR(objectives::mrt_risk(t.params, batches, cfg.sharpness).item(), want / 4, 1e-5);
}

TEST(Schedule, WarmupThenInverseSqrt) {
  EXPECT_DOUBLE_EQ(objectives::inverse_sqrt_schedule(1, 1e-3, 10), 1e-4);
  EXPECT_DOUBLE_EQ(objectives::inverse_sqrt_schedule(10, 1e-3, 10), 1e-3);
  EXPECT_NEAR(objectives::inverse_sqrt_schedule(40, 1e-3, 10), 5e-4, 1e-15);
}

TEST(Configs, ValidationAndStrictJson) {
  objectives::MLEConfig mle;
  mle.label_smoothing = 1.0;
  EXPECT_THROW(mle.validate(), ConfigError);
  MRTConfig mrt;
  mrt.sharpness = 0;
  EXPECT_THROW(mrt.validate(), ConfigError);
  mrt = MRTConfig{};
  mrt.num_candidates = 0;
  EXPECT_THROW(mrt.validate(), ConfigError);
  nlohmann::json j = MRTConfig{};
  EXPECT_EQ(j.at("sharpness").get<double>(), 0.005);
  EXPECT_EQ(j.at("num_candidates").get<int>(), 4);
  EXPECT_FALSE(j.at("include_reference").get<bool>());
  j["temperature"] = 1.0;
  EXPECT_THROW(j.get<MRTConfig>(), ConfigError);
}

TEST(TrainMle, SmoothingRaisesGoldNll) {
  const auto& t = toy();
  objectives::MLEConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.warmup_steps = 20;
  cfg.token_batch_size = 256;
  cfg.max_steps = 60;
  cfg.max_epochs = 100;
  auto plain = ParameterStore::initialize(toy_config(t.vocab.size()), 5);
  auto smooth = plain.clone();
  cfg.label_smoothing = 0.0;
  objectives::train_mle(plain, t.splits.train, cfg, 5);
  cfg.label_smoothing = 0.1;
  objectives::train_mle(smooth, t.splits.train, cfg, 5);
  const datagen::Corpus sample(t.splits.train.begin(), t.splits.train.begin() + 64);
  EXPECT_GE(objectives::mle_loss(smooth, sample, 0.0).item(), objectives::mle_loss(plain, sample, 0.0).item());
}

TEST(TrainMle, DeterministicTrace) {
  const auto& t = toy();
  objectives::MLEConfig cfg;
  cfg.token_batch_size = 256;
  cfg.max_steps = 10;
  auto a = ParameterStore::initialize(toy_config(t.vocab.size()), 6);
  auto b = a.clone();
  const auto ra = objectives::train_mle(a, t.splits.train, cfg, 8);
  const auto rb = objectives::train_mle(b, t.splits.train, cfg, 8);
  ASSERT_EQ(ra.trace.size(), rb.trace.size());
  for (std::size_t i = 0; i < ra.trace.size(); ++i) EXPECT_EQ(ra.trace[i].objective_value, rb.trace[i].objective_value);
  EXPECT_TRUE(a.bit_equal(b));
}

TEST(FinetuneMrt, ReducesHeldOutRiskAndIsDeterministic) {
  const auto& t = toy();
  MRTConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.max_steps = 200;
  cfg.eval_interval = 50;
  cfg.eval_size = 50;
  auto a = t.params.clone();
  const auto ra = objectives::finetune_mrt(a, t.splits.train, cfg, 3, &t.splits.dev);
  ASSERT_FALSE(ra.heldout.empty());
  EXPECT_EQ(ra.heldout.front().first, 0);
  double best = ra.heldout.front().second;
  for (const auto& [step, cost] : ra.heldout) {
    if (step == ra.best_step) best = cost;
  }
  EXPECT_LT(best, ra.heldout.front().second);
  EXPECT_EQ(ra.trace.size(), 200u);
  EXPECT_NEAR(objectives::mean_greedy_cost(a, std::span(t.splits.dev.data(), 50)), best, 1e-12);

  auto b = t.params.clone();
  const auto rb = objectives::finetune_mrt(b, t.splits.train, cfg, 3, &t.splits.dev);
  for (std::size_t i = 0; i < ra.trace.size(); ++i) ASSERT_EQ(ra.trace[i].objective_value, rb.trace[i].objective_value);
  EXPECT_TRUE(a.bit_equal(b));
}

}  // namespace
