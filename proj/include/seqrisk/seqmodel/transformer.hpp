#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "seqrisk/numkit/tensor.hpp"
#include "seqrisk/seqmodel/parameters.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace seqmodel {

using TokenSeq = std::vector<int>;

/// Dropout is active only when `rng` is set.
struct ForwardOptions {
  std::mt19937_64* rng = nullptr;
  bool training() const { return rng != nullptr; }
};

/// Encoder output for a padded batch of sources.
struct EncodedBatch {
  numkit::Tensor memory;             // [B, S, D]
  std::vector<std::uint8_t> padding;  // [B, S], 1 marks a padded position
  int batch = 0;
  int src_len = 0;
};

// Batched building blocks, used by training and by the per-sentence calls.
EncodedBatch encode_batch(const ParameterStore& params, std::span<const TokenSeq> sources,
                          const ForwardOptions& options = {});
// Repeats encoder rows, e.g. one source per sampled candidate.
EncodedBatch select_rows(const EncodedBatch& encoded, std::span<const int> rows);
// Decoder input sequences (BOS-initial, right-padded) -> log-probabilities
// [B, T, V]; row t of sequence b conditions on inputs[b][0..t].
numkit::Tensor decode_batch(const ParameterStore& params, const EncodedBatch& encoded,
                            std::span<const TokenSeq> inputs, const ForwardOptions& options = {});

/// Source -> memory [len, D].
numkit::Tensor encode(const ParameterStore& params, std::span<const int> src);

/// Log-distributions [|tgt|, V]; row t is conditioned on tgt[0..t] (gold
/// prefix), so it scores tgt[t + 1]. tgt must start with BOS and end with EOS.
numkit::Tensor forward_teacher_forced(const ParameterStore& params, std::span<const int> src,
                                      std::span<const int> tgt);

/// Next-token log-distribution [V] after a BOS-initial prefix, recomputed over
/// the whole prefix.
numkit::Tensor decode_step(const ParameterStore& params, const numkit::Tensor& memory, std::span<const int> prefix);

/// Cached incremental decoder over one source, with any number of parallel
/// rows (beam hypotheses or samples). No graph is recorded.
class IncrementalDecoder {
 public:
  IncrementalDecoder(const ParameterStore& params, const numkit::Tensor& memory, int rows);

  // Feeds one token per row; returns log-probabilities [rows, V].
  numkit::Tensor step(std::span<const int> tokens);
  // Row i of the new state continues row parents[i] of the old state.
  void reorder(std::span<const int> parents);

  int rows() const { return rows_; }
  int position() const { return position_; }

 private:
  struct LayerCache {
    numkit::Tensor cross_k, cross_v;  // [rows, H, S, dh]
    numkit::Tensor self_k, self_v;    // [rows, H, t, dh]
  };

  const ParameterStore& params_;
  numkit::Tensor output_weight_;  // [D, V]
  std::vector<LayerCache> layers_;
  int rows_;
  int position_ = 0;
};

// Sinusoidal position table [len, dim].
numkit::Tensor positional_encoding(int len, int dim);

void check_sequence(const ModelConfig& config, std::span<const int> ids, const char* what);

}  // namespace seqmodel
SEQRISK_END_NAMESPACE
