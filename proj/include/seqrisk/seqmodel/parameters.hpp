#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>

#include "seqrisk/numkit/graph.hpp"
#include "seqrisk/seqmodel/config.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace seqmodel {

/// Named model parameters plus the training step counter; the checkpoint unit.
///
/// Names and shapes are fixed at construction. Copying is explicit (clone)
/// because tensors are shared handles.
class ParameterStore {
 public:
  explicit ParameterStore(ModelConfig config);

  // Xavier-uniform weights, zero biases, unit layer-norm gains.
  static ParameterStore initialize(const ModelConfig& config, std::uint64_t seed);

  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  ParameterStore clone() const;

  const ModelConfig& config() const { return config_; }
  const numkit::NamedTensors& tensors() const { return tensors_; }
  numkit::NamedTensors& tensors() { return tensors_; }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const numkit::Tensor& get(const std::string& name) const;
  numkit::Tensor& get(const std::string& name);

  std::int64_t step_count() const { return step_count_; }
  void set_step_count(std::int64_t n) { step_count_ = n; }

  std::size_t num_scalars() const;
  void zero_grad();
  void set_requires_grad(bool on);

  // Manifest line (compact JSON) followed by raw little-endian float32 payloads.
  void save(const std::filesystem::path& path) const;
  static ParameterStore load(const std::filesystem::path& path);

  // True when names, shapes, step count, config and every value bit match.
  bool bit_equal(const ParameterStore& other) const;

 private:
  void add(const std::string& name, numkit::Shape shape);

  ModelConfig config_;
  numkit::NamedTensors tensors_;
  std::unordered_map<std::string, std::size_t> index_;
  std::int64_t step_count_ = 0;
};

}  // namespace seqmodel
SEQRISK_END_NAMESPACE
