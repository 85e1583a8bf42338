#include "seqrisk/seqmodel/parameters.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "seqrisk/seqmodel/vocabulary.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace seqmodel {

using numkit::Shape;
using numkit::Tensor;

namespace {

constexpr const char* kFormat = "seqrisk-checkpoint/1";
// Initial output bias of PAD; its gradient is never positive, so PAD stays
// out of every output distribution.
constexpr Scalar kPadLogit = -1e4;

}  // namespace

ParameterStore::ParameterStore(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const int d = config_.embed_dim;
  const int f = config_.ffn_dim;
  auto attention = [&](const std::string& p) {
    for (const char* m : {"q", "k", "v", "o"}) {
      add(p + "." + m + ".weight", {d, d});
      add(p + "." + m + ".bias", {d});
    }
  };
  auto norm = [&](const std::string& p) {
    add(p + ".gain", {d});
    add(p + ".bias", {d});
  };
  auto ffn = [&](const std::string& p) {
    add(p + ".in.weight", {d, f});
    add(p + ".in.bias", {f});
    add(p + ".out.weight", {f, d});
    add(p + ".out.bias", {d});
  };

  add("embed.weight", {config_.vocab_size, d});
  for (int l = 0; l < config_.enc_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    norm(p + ".ln1");
    attention(p + ".self_attn");
    norm(p + ".ln2");
    ffn(p + ".ffn");
  }
  if (config_.pre_norm && config_.enc_layers > 0) norm("enc.final_ln");
  for (int l = 0; l < config_.dec_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    norm(p + ".ln1");
    attention(p + ".self_attn");
    norm(p + ".ln2");
    attention(p + ".cross_attn");
    norm(p + ".ln3");
    ffn(p + ".ffn");
  }
  if (config_.pre_norm) norm("dec.final_ln");
  if (!config_.tie_embeddings) add("output.weight", {d, config_.vocab_size});
  add("output.bias", {config_.vocab_size});

  for (auto& [name, t] : tensors_) {
    if (name.ends_with(".gain")) std::fill(t.mutable_values().begin(), t.mutable_values().end(), Scalar(1));
  }
}

void ParameterStore::add(const std::string& name, Shape shape) {
  if (index_.count(name)) throw ContractError("duplicate parameter name " + name);
  index_.emplace(name, tensors_.size());
  tensors_.emplace_back(name, Tensor(std::move(shape), true));
}

ParameterStore ParameterStore::initialize(const ModelConfig& config, std::uint64_t seed) {
  ParameterStore store(config);
  std::mt19937_64 rng(seed);
  for (auto& [name, t] : store.tensors_) {
    if (name == "output.bias") t.mutable_values()[Vocabulary::kPad] = kPadLogit;
    if (!name.ends_with(".weight")) continue;
    const double fan_in = t.shape()[0];
    const double fan_out = t.shape()[1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Scalar& v : t.mutable_values()) v = static_cast<Scalar>(dist(rng));
  }
  return store;
}

ParameterStore ParameterStore::clone() const {
  ParameterStore copy(config_);
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto src = tensors_[i].second.values();
    std::copy(src.begin(), src.end(), copy.tensors_[i].second.mutable_values().begin());
  }
  copy.step_count_ = step_count_;
  return copy;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + name);
  return tensors_[it->second].second;
}

Tensor& ParameterStore::get(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ParameterStore&>(*this).get(name));
}

std::size_t ParameterStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : tensors_) t.zero_grad();
}

void ParameterStore::set_requires_grad(bool on) {
  for (auto& [name, t] : tensors_) t.set_requires_grad(on);
}

void ParameterStore::save(const std::filesystem::path& path) const {
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["config"] = config_;
  manifest["step_count"] = step_count_;
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel() * sizeof(std::uint32_t);
  }
  manifest["tensors"] = entries;
  manifest["payload_bytes"] = offset;

  std::string payload;
  payload.reserve(offset);
  for (const auto& [name, t] : tensors_) {
    for (Scalar v : t.values()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int b = 0; b < 4; ++b) payload.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << manifest.dump() << '\n';
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

ParameterStore ParameterStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string header;
  std::getline(in, header);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const std::exception& e) {
    throw FormatError(path.string() + ": unreadable checkpoint manifest: " + e.what());
  }
  if (manifest.value("format", "") != kFormat) throw FormatError(path.string() + ": not a seqrisk checkpoint");
  ParameterStore store(manifest.at("config").get<ModelConfig>());
  store.step_count_ = manifest.at("step_count").get<std::int64_t>();
  const std::size_t payload_bytes = manifest.at("payload_bytes").get<std::size_t>();
  std::string payload(payload_bytes, '\0');
  in.read(payload.data(), static_cast<std::streamsize>(payload_bytes));
  if (static_cast<std::size_t>(in.gcount()) != payload_bytes) {
    throw FormatError(path.string() + ": truncated checkpoint payload");
  }
  const auto& entries = manifest.at("tensors");
  if (entries.size() != store.tensors_.size()) {
    throw FormatError(path.string() + ": tensor count does not match the model configuration");
  }
  for (const auto& e : entries) {
    const auto name = e.at("name").get<std::string>();
    if (!store.contains(name)) throw FormatError(path.string() + ": unexpected tensor " + name);
    Tensor& t = store.get(name);
    if (e.at("shape").get<Shape>() != t.shape()) throw FormatError(path.string() + ": shape mismatch for " + name);
    const std::size_t offset = e.at("offset").get<std::size_t>();
    if (offset + t.numel() * 4 > payload_bytes) throw FormatError(path.string() + ": tensor " + name + " overruns payload");
    auto dst = t.mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[offset + i * 4 + b])) << (8 * b);
      }
      dst[i] = static_cast<Scalar>(std::bit_cast<float>(bits));
    }
  }
  return store;
}

bool ParameterStore::bit_equal(const ParameterStore& other) const {
  if (!(config_ == other.config_) || step_count_ != other.step_count_ || tensors_.size() != other.tensors_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const auto& [na, a] = tensors_[i];
    const auto& [nb, b] = other.tensors_[i];
    if (na != nb || a.shape() != b.shape()) return false;
    if (std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(Scalar)) != 0) return false;
  }
  return true;
}

}  // namespace seqmodel
SEQRISK_END_NAMESPACE
