#include "seqrisk/seqmodel/transformer.hpp"

#include <cmath>
#include <string>

#include "seqrisk/numkit/ops.hpp"
#include "seqrisk/seqmodel/vocabulary.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace seqmodel {

using namespace numkit;

namespace {

constexpr Scalar kMasked = Scalar(-1e9);

Tensor linear(const ParameterStore& p, const std::string& prefix, const Tensor& x) {
  return add(matmul(x, p.get(prefix + ".weight")), p.get(prefix + ".bias"));
}

Tensor norm(const ParameterStore& p, const std::string& prefix, const Tensor& x) {
  return layer_norm(x, p.get(prefix + ".gain"), p.get(prefix + ".bias"));
}

Tensor drop(const ParameterStore& p, const Tensor& x, const ForwardOptions& opts) {
  if (!opts.training()) return x;
  return dropout(x, static_cast<Scalar>(p.config().dropout_rate), *opts.rng);
}

// [B, T, D] -> [B, H, T, D/H]
Tensor split_heads(const Tensor& x, int heads) {
  const int b = x.dim(0), t = x.dim(1), d = x.dim(2);
  return transpose(x.reshape({b, t, heads, d / heads}), 1, 2);
}

// [B, H, T, dh] -> [B, T, H*dh]
Tensor merge_heads(const Tensor& x) {
  const int b = x.dim(0), h = x.dim(1), t = x.dim(2), dh = x.dim(3);
  return transpose(x, 1, 2).reshape({b, t, h * dh});
}

Tensor attend(const ParameterStore& p, const Tensor& q, const Tensor& k, const Tensor& v,
              std::span<const std::uint8_t> mask, const ForwardOptions& opts) {
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(q.dim(-1)));
  Tensor scores = scale(matmul(q, transpose(k, 2, 3)), inv_sqrt);
  if (!mask.empty()) scores = masked_fill(scores, mask, kMasked);
  Tensor probs = drop(p, softmax(scores), opts);
  return matmul(probs, v);
}

Tensor feed_forward(const ParameterStore& p, const std::string& prefix, const Tensor& x, const ForwardOptions& opts) {
  Tensor h = drop(p, relu(linear(p, prefix + ".in", x)), opts);
  return linear(p, prefix + ".out", h);
}

// Residual sublayer in pre-norm or post-norm arrangement.
template <typename Fn>
Tensor residual(const ParameterStore& p, const std::string& norm_prefix, const Tensor& x, const ForwardOptions& opts,
                Fn&& sublayer) {
  if (p.config().pre_norm) return add(x, drop(p, sublayer(norm(p, norm_prefix, x)), opts));
  return norm(p, norm_prefix, add(x, drop(p, sublayer(x), opts)));
}

template <typename SelfAttn, typename CrossAttn>
Tensor decoder_layer(const ParameterStore& p, int layer, Tensor x, const ForwardOptions& opts, SelfAttn&& self_attn,
                     CrossAttn&& cross_attn) {
  const std::string prefix = "dec." + std::to_string(layer);
  x = residual(p, prefix + ".ln1", x, opts, self_attn);
  x = residual(p, prefix + ".ln2", x, opts, cross_attn);
  return residual(p, prefix + ".ln3", x, opts,
                  [&](const Tensor& h) { return feed_forward(p, prefix + ".ffn", h, opts); });
}

// Token ids [B*T] -> scaled embeddings plus positions, [B, T, D].
Tensor embed(const ParameterStore& p, std::span<const int> ids, int batch, int len, int first_position,
             const ForwardOptions& opts) {
  const int d = p.config().embed_dim;
  Tensor e = scale(embedding(p.get("embed.weight"), ids), std::sqrt(static_cast<Scalar>(d)));
  Tensor pos = positional_encoding(first_position + len, d);
  if (first_position > 0) {
    std::vector<int> rows;
    for (int i = first_position; i < first_position + len; ++i) rows.push_back(i);
    pos = index_select(pos, rows);
  }
  return drop(p, add(e.reshape({batch, len, d}), pos), opts);
}

Tensor output_weight(const ParameterStore& p) {
  if (p.config().tie_embeddings) return transpose(p.get("embed.weight"), 0, 1);
  return p.get("output.weight");
}

std::vector<int> padded(std::span<const TokenSeq> seqs, int len) {
  std::vector<int> ids(seqs.size() * static_cast<std::size_t>(len), Vocabulary::kPad);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    std::copy(seqs[b].begin(), seqs[b].end(), ids.begin() + static_cast<std::ptrdiff_t>(b * len));
  }
  return ids;
}

int max_length(std::span<const TokenSeq> seqs) {
  std::size_t len = 0;
  for (const auto& s : seqs) len = std::max(len, s.size());
  return static_cast<int>(len);
}

}  // namespace

void check_sequence(const ModelConfig& config, std::span<const int> ids, const char* what) {
  if (ids.empty()) throw LengthError(std::string(what) + " is empty");
  if (static_cast<int>(ids.size()) > config.max_seq_len) {
    throw LengthError(std::string(what) + " length " + std::to_string(ids.size()) + " exceeds max_seq_len " +
                      std::to_string(config.max_seq_len));
  }
  for (int id : ids) {
    if (id < 0 || id >= config.vocab_size) {
      throw VocabularyError(std::string(what) + " contains id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(config.vocab_size));
    }
  }
}

Tensor positional_encoding(int len, int dim) {
  Tensor pe({len, dim});
  auto v = pe.mutable_values();
  for (int pos = 0; pos < len; ++pos) {
    for (int i = 0; i < dim; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / dim);
      v[static_cast<std::size_t>(pos * dim + i)] = static_cast<Scalar>(std::sin(angle));
      if (i + 1 < dim) v[static_cast<std::size_t>(pos * dim + i + 1)] = static_cast<Scalar>(std::cos(angle));
    }
  }
  return pe;
}

EncodedBatch encode_batch(const ParameterStore& p, std::span<const TokenSeq> sources, const ForwardOptions& opts) {
  if (sources.empty()) throw ContractError("encode_batch: no sources");
  for (const auto& s : sources) check_sequence(p.config(), s, "source");
  const ModelConfig& c = p.config();
  EncodedBatch out;
  out.batch = static_cast<int>(sources.size());
  out.src_len = max_length(sources);
  const int b = out.batch, s = out.src_len, h = c.num_heads;
  const std::vector<int> ids = padded(sources, s);
  out.padding.assign(ids.size(), 0);
  for (std::size_t bi = 0; bi < sources.size(); ++bi) {
    for (std::size_t j = sources[bi].size(); j < static_cast<std::size_t>(s); ++j) out.padding[bi * s + j] = 1;
  }

  std::vector<std::uint8_t> mask(static_cast<std::size_t>(b) * h * s * s);
  for (int bi = 0; bi < b; ++bi) {
    for (int hi = 0; hi < h; ++hi) {
      for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) {
          mask[((static_cast<std::size_t>(bi) * h + hi) * s + i) * s + j] = out.padding[static_cast<std::size_t>(bi * s + j)];
        }
      }
    }
  }

  Tensor x = embed(p, ids, b, s, 0, opts);
  for (int l = 0; l < c.enc_layers; ++l) {
    const std::string prefix = "enc." + std::to_string(l);
    x = residual(p, prefix + ".ln1", x, opts, [&](const Tensor& hdn) {
      Tensor q = split_heads(linear(p, prefix + ".self_attn.q", hdn), h);
      Tensor k = split_heads(linear(p, prefix + ".self_attn.k", hdn), h);
      Tensor v = split_heads(linear(p, prefix + ".self_attn.v", hdn), h);
      return linear(p, prefix + ".self_attn.o", merge_heads(attend(p, q, k, v, mask, opts)));
    });
    x = residual(p, prefix + ".ln2", x, opts,
                 [&](const Tensor& hdn) { return feed_forward(p, prefix + ".ffn", hdn, opts); });
  }
  if (c.pre_norm && c.enc_layers > 0) x = norm(p, "enc.final_ln", x);
  out.memory = x;
  return out;
}

EncodedBatch select_rows(const EncodedBatch& encoded, std::span<const int> rows) {
  EncodedBatch out;
  out.batch = static_cast<int>(rows.size());
  out.src_len = encoded.src_len;
  out.memory = index_select(encoded.memory, rows);
  const auto s = static_cast<std::size_t>(encoded.src_len);
  for (int r : rows) {
    out.padding.insert(out.padding.end(), encoded.padding.begin() + static_cast<std::ptrdiff_t>(r * s),
                       encoded.padding.begin() + static_cast<std::ptrdiff_t>((r + 1) * s));
  }
  return out;
}

Tensor decode_batch(const ParameterStore& p, const EncodedBatch& enc, std::span<const TokenSeq> inputs,
                    const ForwardOptions& opts) {
  if (static_cast<int>(inputs.size()) != enc.batch) {
    throw ContractError("decode_batch: " + std::to_string(inputs.size()) + " target rows for " +
                        std::to_string(enc.batch) + " encoded sources");
  }
  for (const auto& t : inputs) {
    check_sequence(p.config(), t, "target");
    if (t.front() != Vocabulary::kBos) throw ContractError("target must begin with BOS");
  }
  const ModelConfig& c = p.config();
  const int b = enc.batch, t = max_length(inputs), s = enc.src_len, h = c.num_heads;
  const std::vector<int> ids = padded(inputs, t);

  std::vector<std::uint8_t> self_mask(static_cast<std::size_t>(b) * h * t * t);
  std::vector<std::uint8_t> cross_mask(static_cast<std::size_t>(b) * h * t * s);
  for (int bi = 0; bi < b; ++bi) {
    const int len = static_cast<int>(inputs[static_cast<std::size_t>(bi)].size());
    for (int hi = 0; hi < h; ++hi) {
      for (int i = 0; i < t; ++i) {
        const std::size_t row = (static_cast<std::size_t>(bi) * h + hi) * t + i;
        for (int j = 0; j < t; ++j) self_mask[row * t + j] = (j > i || j >= len) ? 1 : 0;
        for (int j = 0; j < s; ++j) cross_mask[row * s + j] = enc.padding[static_cast<std::size_t>(bi * s + j)];
      }
    }
  }

  Tensor x = embed(p, ids, b, t, 0, opts);
  for (int l = 0; l < c.dec_layers; ++l) {
    const std::string prefix = "dec." + std::to_string(l);
    auto self_attn = [&](const Tensor& hdn) {
      Tensor q = split_heads(linear(p, prefix + ".self_attn.q", hdn), h);
      Tensor k = split_heads(linear(p, prefix + ".self_attn.k", hdn), h);
      Tensor v = split_heads(linear(p, prefix + ".self_attn.v", hdn), h);
      return linear(p, prefix + ".self_attn.o", merge_heads(attend(p, q, k, v, self_mask, opts)));
    };
    auto cross_attn = [&](const Tensor& hdn) {
      Tensor q = split_heads(linear(p, prefix + ".cross_attn.q", hdn), h);
      Tensor k = split_heads(linear(p, prefix + ".cross_attn.k", enc.memory), h);
      Tensor v = split_heads(linear(p, prefix + ".cross_attn.v", enc.memory), h);
      return linear(p, prefix + ".cross_attn.o", merge_heads(attend(p, q, k, v, cross_mask, opts)));
    };
    x = decoder_layer(p, l, x, opts, self_attn, cross_attn);
  }
  if (c.pre_norm) x = norm(p, "dec.final_ln", x);
  return log_softmax(add(matmul(x, output_weight(p)), p.get("output.bias")));
}

Tensor encode(const ParameterStore& p, std::span<const int> src) {
  const TokenSeq seq(src.begin(), src.end());
  EncodedBatch enc = encode_batch(p, std::span<const TokenSeq>(&seq, 1));
  return enc.memory.reshape({enc.src_len, p.config().embed_dim});
}

Tensor forward_teacher_forced(const ParameterStore& p, std::span<const int> src, std::span<const int> tgt) {
  if (tgt.size() < 2 || tgt.front() != Vocabulary::kBos || tgt.back() != Vocabulary::kEos) {
    throw ContractError("teacher-forced target must be framed by BOS ... EOS");
  }
  const TokenSeq s(src.begin(), src.end());
  const TokenSeq t(tgt.begin(), tgt.end());
  EncodedBatch enc = encode_batch(p, std::span<const TokenSeq>(&s, 1));
  Tensor lp = decode_batch(p, enc, std::span<const TokenSeq>(&t, 1));
  return lp.reshape({static_cast<int>(t.size()), p.config().vocab_size});
}

Tensor decode_step(const ParameterStore& p, const Tensor& memory, std::span<const int> prefix) {
  if (memory.rank() != 2 || memory.dim(1) != p.config().embed_dim) {
    throw ShapeError("decode_step: memory must be [len, embed_dim], got " + shape_string(memory.shape()));
  }
  EncodedBatch enc;
  enc.batch = 1;
  enc.src_len = memory.dim(0);
  enc.memory = memory.reshape({1, memory.dim(0), memory.dim(1)});
  enc.padding.assign(static_cast<std::size_t>(enc.src_len), 0);
  const TokenSeq t(prefix.begin(), prefix.end());
  Tensor lp = decode_batch(p, enc, std::span<const TokenSeq>(&t, 1));
  const int v = p.config().vocab_size;
  const int last = static_cast<int>(t.size()) - 1;
  return index_select(lp.reshape({static_cast<int>(t.size()), v}), std::span<const int>(&last, 1)).reshape({v});
}

IncrementalDecoder::IncrementalDecoder(const ParameterStore& params, const Tensor& memory, int rows)
    : params_(params), rows_(rows) {
  if (rows < 1) throw ContractError("IncrementalDecoder needs at least one row");
  const Graph::NoGrad no_grad;
  const ModelConfig& c = params.config();
  if (memory.rank() != 2 || memory.dim(1) != c.embed_dim) {
    throw ShapeError("IncrementalDecoder: memory must be [len, embed_dim], got " + shape_string(memory.shape()));
  }
  output_weight_ = output_weight(params).detach();
  const Tensor mem = memory.reshape({1, memory.dim(0), memory.dim(1)});
  const std::vector<int> expand(static_cast<std::size_t>(rows), 0);
  for (int l = 0; l < c.dec_layers; ++l) {
    const std::string prefix = "dec." + std::to_string(l) + ".cross_attn";
    LayerCache cache;
    cache.cross_k = index_select(split_heads(linear(params, prefix + ".k", mem), c.num_heads), expand);
    cache.cross_v = index_select(split_heads(linear(params, prefix + ".v", mem), c.num_heads), expand);
    layers_.push_back(std::move(cache));
  }
}

Tensor IncrementalDecoder::step(std::span<const int> tokens) {
  const ModelConfig& c = params_.config();
  if (static_cast<int>(tokens.size()) != rows_) throw ContractError("IncrementalDecoder::step: one token per row");
  if (position_ >= c.max_seq_len) throw LengthError("incremental decoding beyond max_seq_len");
  for (int id : tokens) {
    if (id < 0 || id >= c.vocab_size) throw VocabularyError("decoder input id " + std::to_string(id) + " out of range");
  }
  const Graph::NoGrad no_grad;
  const ForwardOptions opts;
  const int h = c.num_heads;
  Tensor x = embed(params_, tokens, rows_, 1, position_, opts);
  for (int l = 0; l < c.dec_layers; ++l) {
    const std::string prefix = "dec." + std::to_string(l);
    LayerCache& cache = layers_[static_cast<std::size_t>(l)];
    auto self_attn = [&](const Tensor& hdn) {
      Tensor q = split_heads(linear(params_, prefix + ".self_attn.q", hdn), h);
      Tensor k = split_heads(linear(params_, prefix + ".self_attn.k", hdn), h);
      Tensor v = split_heads(linear(params_, prefix + ".self_attn.v", hdn), h);
      cache.self_k = cache.self_k.defined() ? concat(cache.self_k, k, 2) : k;
      cache.self_v = cache.self_v.defined() ? concat(cache.self_v, v, 2) : v;
      return linear(params_, prefix + ".self_attn.o", merge_heads(attend(params_, q, cache.self_k, cache.self_v, {}, opts)));
    };
    auto cross_attn = [&](const Tensor& hdn) {
      Tensor q = split_heads(linear(params_, prefix + ".cross_attn.q", hdn), h);
      return linear(params_, prefix + ".cross_attn.o",
                    merge_heads(attend(params_, q, cache.cross_k, cache.cross_v, {}, opts)));
    };
    x = decoder_layer(params_, l, x, opts, self_attn, cross_attn);
  }
  if (c.pre_norm) x = norm(params_, "dec.final_ln", x);
  ++position_;
  return log_softmax(add(matmul(x, output_weight_), params_.get("output.bias"))).reshape({rows_, c.vocab_size});
}

void IncrementalDecoder::reorder(std::span<const int> parents) {
  if (parents.empty()) throw ContractError("IncrementalDecoder::reorder: empty parent list");
  const Graph::NoGrad no_grad;
  for (LayerCache& cache : layers_) {
    cache.cross_k = index_select(cache.cross_k, parents);
    cache.cross_v = index_select(cache.cross_v, parents);
    if (cache.self_k.defined()) {
      cache.self_k = index_select(cache.self_k, parents);
      cache.self_v = index_select(cache.self_v, parents);
    }
  }
  rows_ = static_cast<int>(parents.size());
}

}  // namespace seqmodel
SEQRISK_END_NAMESPACE
