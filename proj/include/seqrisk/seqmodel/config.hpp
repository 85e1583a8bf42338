#pragma once

#include <nlohmann/json.hpp>

#include "seqrisk/core.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace seqmodel {

/// Transformer hyperparameters. Defaults are the desk-scale configuration.
struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 64;
  int num_heads = 2;
  int enc_layers = 2;
  int dec_layers = 2;
  int ffn_dim = 128;
  double dropout_rate = 0.1;
  int max_seq_len = 32;
  bool tie_embeddings = true;
  bool pre_norm = true;

  // Throws ContractError naming the offending field.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
// Missing fields keep their defaults; unknown fields are rejected.
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace seqmodel
SEQRISK_END_NAMESPACE
