#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "seqrisk/decoding/decoding.hpp"
#include "seqrisk/numkit/ops.hpp"
#include "seqrisk/objectives/objectives.hpp"
#include "seqrisk/seqmodel/transformer.hpp"
#include "seqrisk/seqmodel/vocabulary.hpp"

namespace {

using namespace seqrisk;
using seqmodel::ModelConfig;
using seqmodel::ParameterStore;
using seqmodel::TokenSeq;
using seqmodel::Vocabulary;

ModelConfig small_config(int vocab = 12) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 16;
  c.num_heads = 2;
  c.enc_layers = 2;
  c.dec_layers = 2;
  c.ffn_dim = 32;
  c.max_seq_len = 12;
  return c;
}

double logsumexp(std::span<const Scalar> row) {
  double m = row[0];
  for (Scalar x : row) m = std::max(m, static_cast<double>(x));
  double s = 0;
  for (Scalar x : row) s += std::exp(x - m);
  return m + std::log(s);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("seqrisk_test_" + name);
}

TEST(ModelConfig, Validation) {
  ModelConfig c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config(4);
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.max_seq_len = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, JsonRejectsUnknownFields) {
  nlohmann::json j = small_config();
  EXPECT_EQ(j.get<ModelConfig>(), small_config());
  j["depth"] = 3;
  EXPECT_THROW(j.get<ModelConfig>(), ConfigError);
}

TEST(Vocabulary, ReservedIdsAndRoundTrip) {
  Vocabulary v;
  EXPECT_EQ(v.id("<pad>"), Vocabulary::kPad);
  EXPECT_EQ(v.size(), Vocabulary::kNumSpecials);
  const int a = v.add("alpha");
  EXPECT_EQ(v.add("alpha"), a);
  EXPECT_EQ(v.id("missing"), Vocabulary::kUnk);
  EXPECT_THROW(v.add("two words"), ContractError);
  const auto path = temp_path("vocab.txt");
  v.add("beta");
  v.save(path);
  EXPECT_EQ(Vocabulary::load(path), v);
  std::filesystem::remove(path);
}

TEST(Vocabulary, StripSpecialsKeepsUnk) {
  const TokenSeq ids{Vocabulary::kBos, 5, Vocabulary::kUnk, 6, Vocabulary::kEos, Vocabulary::kPad};
  EXPECT_EQ(seqmodel::strip_specials(ids), (TokenSeq{5, Vocabulary::kUnk, 6}));
}

TEST(Encode, DeterministicWithoutDropout) {
  const auto p = ParameterStore::initialize(small_config(), 1);
  const TokenSeq src{4, 5, 6, 7};
  EXPECT_EQ(seqmodel::encode(p, src).to_vector(), seqmodel::encode(p, src).to_vector());
}

TEST(Encode, PositionSensitive) {
  const auto p = ParameterStore::initialize(small_config(), 1);
  EXPECT_NE(seqmodel::encode(p, TokenSeq{4, 5, 6}).to_vector(), seqmodel::encode(p, TokenSeq{5, 4, 6}).to_vector());
}

TEST(Encode, GoldenSnapshot) {
  const auto p = ParameterStore::initialize(small_config(), 1);
  const auto m = seqmodel::encode(p, TokenSeq{4, 5, 6}).to_vector();
  // Every fifth entry, recorded from the reference build.
  const std::vector<double> golden{0.1133834, 0.771464, -1.916795, -0.4632731, 0.7965737, 0.425457, -1.659088, 0.9029824};
  for (std::size_t i = 0; i < golden.size(); ++i) EXPECT_NEAR(m[i * 5], golden[i], 1e-5) << i;
}

TEST(Encode, RejectsBadInput) {
  const auto p = ParameterStore::initialize(small_config(), 1);
  EXPECT_THROW(seqmodel::encode(p, TokenSeq(13, 4)), LengthError);
  EXPECT_THROW(seqmodel::encode(p, TokenSeq{}), LengthError);
  EXPECT_THROW(seqmodel::encode(p, TokenSeq{4, 12}), VocabularyError);
}

TEST(TeacherForced, RowsNormalize) {
  const auto p = ParameterStore::initialize(small_config(), 2);
  const TokenSeq tgt{Vocabulary::kBos, 7, 8, 9, Vocabulary::kEos};
  const auto lp = seqmodel::forward_teacher_forced(p, TokenSeq{4, 5, 6}, tgt);
  ASSERT_EQ(lp.shape(), (numkit::Shape{5, 12}));
  for (int t = 0; t < 5; ++t) EXPECT_NEAR(logsumexp(lp.values().subspan(t * 12, 12)), 0.0, 1e-5);
}

TEST(TeacherForced, RequiresFraming) {
  const auto p = ParameterStore::initialize(small_config(), 2);
  EXPECT_THROW(seqmodel::forward_teacher_forced(p, TokenSeq{4}, TokenSeq{7, 8, Vocabulary::kEos}), ContractError);
  EXPECT_THROW(seqmodel::forward_teacher_forced(p, TokenSeq{4}, TokenSeq{Vocabulary::kBos, 7}), ContractError);
}

TEST(TeacherForced, ZeroOutputProjectionGivesUniformRows) {
  ModelConfig c = small_config();
  c.enc_layers = c.dec_layers = 1;
  c.tie_embeddings = false;
  auto p = ParameterStore::initialize(c, 3);
  for (const char* name : {"output.weight", "output.bias"}) {
    for (auto& x : p.get(name).mutable_values()) x = 0;
  }
  const auto lp = seqmodel::forward_teacher_forced(p, TokenSeq{4, 5}, TokenSeq{Vocabulary::kBos, 6, Vocabulary::kEos});
  for (Scalar x : lp.values()) EXPECT_NEAR(x, -std::log(12.0), 1e-6);
}

TEST(TeacherForced, CausalMaskOverAllPositions) {
  const auto p = ParameterStore::initialize(small_config(), 4);
  const TokenSeq src{4, 5, 6, 7};
  const TokenSeq tgt{Vocabulary::kBos, 8, 9, 10, 11, 4, Vocabulary::kEos};
  const auto base = seqmodel::forward_teacher_forced(p, src, tgt).to_vector();
  const int v = 12;
  for (std::size_t pos = 1; pos + 1 < tgt.size(); ++pos) {
    TokenSeq changed = tgt;
    changed[pos] = changed[pos] == 5 ? 6 : 5;
    const auto out = seqmodel::forward_teacher_forced(p, src, changed).to_vector();
    for (std::size_t t = 0; t < pos; ++t) {
      for (int k = 0; k < v; ++k) ASSERT_EQ(out[t * v + k], base[t * v + k]) << "pos " << pos << " row " << t;
    }
    bool differs = false;
    for (int k = 0; k < v; ++k) differs |= out[pos * v + k] != base[pos * v + k];
    EXPECT_TRUE(differs);
  }
}

TEST(DecodeStep, BosPrefixEqualsFirstRow) {
  const auto p = ParameterStore::initialize(small_config(), 5);
  const TokenSeq src{4, 5, 6};
  const auto memory = seqmodel::encode(p, src);
  const auto step = seqmodel::decode_step(p, memory, TokenSeq{Vocabulary::kBos}).to_vector();
  const auto tf = seqmodel::forward_teacher_forced(p, src, TokenSeq{Vocabulary::kBos, 7, Vocabulary::kEos}).to_vector();
  for (int k = 0; k < 12; ++k) EXPECT_NEAR(step[k], tf[k], 1e-5);
}

TEST(DecodeStep, MatchesTeacherForcedRowForRandomPrefixes) {
  const auto p = ParameterStore::initialize(small_config(), 6);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    TokenSeq src(1 + rng() % 6), tgt{Vocabulary::kBos};
    for (auto& x : src) x = 4 + static_cast<int>(rng() % 8);
    const int len = 1 + static_cast<int>(rng() % 6);
    for (int i = 0; i < len; ++i) tgt.push_back(4 + static_cast<int>(rng() % 8));
    tgt.push_back(Vocabulary::kEos);
    const auto memory = seqmodel::encode(p, src);
    const auto tf = seqmodel::forward_teacher_forced(p, src, tgt).to_vector();
    const std::size_t t = tgt.size() - 2;
    const auto step = seqmodel::decode_step(p, memory, std::span<const int>(tgt.data(), t + 1)).to_vector();
    for (int k = 0; k < 12; ++k) ASSERT_NEAR(step[k], tf[t * 12 + k], 1e-5);
  }
}

TEST(IncrementalDecoder, MatchesTeacherForcedRows) {
  const auto p = ParameterStore::initialize(small_config(), 7);
  const TokenSeq src{4, 9, 6, 5};
  const TokenSeq tgt{Vocabulary::kBos, 8, 9, 10, 11, Vocabulary::kEos};
  const auto tf = seqmodel::forward_teacher_forced(p, src, tgt).to_vector();
  seqmodel::IncrementalDecoder dec(p, seqmodel::encode(p, src), 2);
  for (std::size_t t = 0; t < tgt.size(); ++t) {
    const TokenSeq feed{tgt[t], tgt[t]};
    const auto lp = dec.step(feed).to_vector();
    for (int r = 0; r < 2; ++r) {
      for (int k = 0; k < 12; ++k) ASSERT_NEAR(lp[r * 12 + k], tf[t * 12 + k], 1e-5);
    }
  }
}

TEST(BatchedForward, MatchesSingleSentenceRows) {
  const auto p = ParameterStore::initialize(small_config(), 8);
  const std::vector<TokenSeq> srcs{{4, 5, 6}, {7}};
  const std::vector<TokenSeq> ins{{Vocabulary::kBos, 8, 9, 10}, {Vocabulary::kBos, 11}};
  const auto enc = seqmodel::encode_batch(p, srcs);
  const auto lp = seqmodel::decode_batch(p, enc, ins).to_vector();
  for (int b = 0; b < 2; ++b) {
    TokenSeq tgt = ins[b];
    tgt.push_back(Vocabulary::kEos);
    const auto tf = seqmodel::forward_teacher_forced(p, srcs[b], tgt).to_vector();
    for (std::size_t t = 0; t < ins[b].size(); ++t) {
      for (int k = 0; k < 12; ++k) ASSERT_NEAR(lp[(b * 4 + t) * 12 + k], tf[t * 12 + k], 1e-5);
    }
  }
}

TEST(Parameters, TiedEmbeddingsShareOneTensor) {
  auto tied = ParameterStore::initialize(small_config(), 9);
  EXPECT_FALSE(tied.contains("output.weight"));
  ModelConfig c = small_config();
  c.tie_embeddings = false;
  EXPECT_TRUE(ParameterStore::initialize(c, 9).contains("output.weight"));
  EXPECT_EQ(tied.num_scalars() + static_cast<std::size_t>(16 * 12), ParameterStore::initialize(c, 9).num_scalars());
}

TEST(Parameters, CloneIsIndependent) {
  auto p = ParameterStore::initialize(small_config(), 10);
  auto q = p.clone();
  EXPECT_TRUE(p.bit_equal(q));
  q.get("embed.weight").mutable_values()[0] += 1;
  EXPECT_FALSE(p.bit_equal(q));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto p = ParameterStore::initialize(small_config(), 11);
  p.set_step_count(1234);
  const auto path = temp_path("roundtrip.ckpt");
  p.save(path);
  const auto q = ParameterStore::load(path);
  EXPECT_TRUE(p.bit_equal(q));
  EXPECT_EQ(q.step_count(), 1234);
  EXPECT_EQ(q.config(), p.config());
  std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedFileIsFormatError) {
  const auto p = ParameterStore::initialize(small_config(), 12);
  const auto path = temp_path("truncated.ckpt");
  p.save(path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  EXPECT_THROW(ParameterStore::load(path), FormatError);
  std::ofstream(path) << "not a checkpoint\n";
  EXPECT_THROW(ParameterStore::load(path), FormatError);
  std::filesystem::remove(path);
}

TEST(Training, MemorizedPairAndPadMass) {
  ModelConfig c = small_config();
  c.dropout_rate = 0;
  auto p = ParameterStore::initialize(c, 13);
  const datagen::Corpus corpus{{{4, 5, 6}, {7, 8, 9}, "toy"}, {{6, 5}, {10, 11}, "toy"}};
  objectives::MLEConfig cfg;
  cfg.label_smoothing = 0;
  cfg.learning_rate = 3e-3;
  cfg.warmup_steps = 20;
  cfg.max_steps = 200;
  cfg.max_epochs = 200;
  const auto result = objectives::train_mle(p, corpus, cfg, 13);
  EXPECT_LT(result.trace.back().objective_value, 0.05);
  for (const auto& pair : corpus) {
    const TokenSeq tgt = datagen::framed(pair.target);
    const auto lp = seqmodel::forward_teacher_forced(p, pair.source, tgt).to_vector();
    for (std::size_t t = 0; t + 1 < tgt.size(); ++t) {
      EXPECT_GT(std::exp(lp[t * 12 + tgt[t + 1]]), 0.9);
      EXPECT_LT(std::exp(lp[t * 12 + Vocabulary::kPad]), 1e-6);
    }
  }
}

}  // namespace
