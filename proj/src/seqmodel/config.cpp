#include "seqrisk/seqmodel/config.hpp"

#include "seqrisk/json_fields.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace seqmodel {

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError("model." + field + ": " + why); };
  if (vocab_size < 5) fail("vocab_size", "must be at least 5 (four specials plus content)");
  if (embed_dim <= 0) fail("embed_dim", "must be positive");
  if (num_heads <= 0) fail("num_heads", "must be positive");
  if (embed_dim % num_heads != 0) fail("embed_dim", "must be divisible by num_heads");
  if (enc_layers < 0 || dec_layers < 1) fail("dec_layers", "need enc_layers >= 0 and dec_layers >= 1");
  if (ffn_dim <= 0) fail("ffn_dim", "must be positive");
  if (dropout_rate < 0 || dropout_rate >= 1) fail("dropout_rate", "must be in [0, 1)");
  if (max_seq_len < 2) fail("max_seq_len", "must be at least 2");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},   {"embed_dim", c.embed_dim},
                     {"num_heads", c.num_heads},     {"enc_layers", c.enc_layers},
                     {"dec_layers", c.dec_layers},   {"ffn_dim", c.ffn_dim},
                     {"dropout_rate", c.dropout_rate}, {"max_seq_len", c.max_seq_len},
                     {"tie_embeddings", c.tie_embeddings}, {"pre_norm", c.pre_norm}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  JsonFields f(j, "model");
  f.get("vocab_size", c.vocab_size);
  f.get("embed_dim", c.embed_dim);
  f.get("num_heads", c.num_heads);
  f.get("enc_layers", c.enc_layers);
  f.get("dec_layers", c.dec_layers);
  f.get("ffn_dim", c.ffn_dim);
  f.get("dropout_rate", c.dropout_rate);
  f.get("max_seq_len", c.max_seq_len);
  f.get("tie_embeddings", c.tie_embeddings);
  f.get("pre_norm", c.pre_norm);
  f.reject_unknown();
}

}  // namespace seqmodel
SEQRISK_END_NAMESPACE
