#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

// The library is compiled twice from the same sources: the default float build
// and a double build used by the gradient checks. The inline namespace keeps
// both instantiations linkable into one binary.
#if defined(SEQRISK_DOUBLE_PRECISION)
#define SEQRISK_PRECISION_NS f64
#else
#define SEQRISK_PRECISION_NS f32
#endif

#define SEQRISK_BEGIN_NAMESPACE \
  namespace seqrisk {           \
  inline namespace SEQRISK_PRECISION_NS {
#define SEQRISK_END_NAMESPACE \
  }                           \
  }

SEQRISK_BEGIN_NAMESPACE

#if defined(SEQRISK_DOUBLE_PRECISION)
using Scalar = double;
#else
using Scalar = float;
#endif

/// Violated precondition of a public operation (empty batch, bad argument).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Incompatible tensor shapes.
class ShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Sequence longer than the model supports (or empty where tokens are required).
class LengthError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Token id outside the vocabulary.
class VocabularyError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// NaN/Inf produced by a forward operation or a diverging training run.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment or component configuration; the message names the field.
class ConfigError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Malformed file contents (corpus, checkpoint, config).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Derives an independent stream seed from a parent seed and a component label.
std::uint64_t derive_seed(std::uint64_t parent, const std::string& label);

/// Identifies the build for run manifests.
std::string build_identifier();

SEQRISK_END_NAMESPACE
