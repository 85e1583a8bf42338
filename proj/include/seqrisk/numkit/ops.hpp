#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "seqrisk/numkit/tensor.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace numkit {

// Differentiable primitives. Each records a backward rule into the active
// Graph when any operand requires a gradient, and throws NumericalError if
// its output is not finite.

// a[..., m, k] x b[k, n], or batched a[..., m, k] x b[..., k, n] with equal
// leading dimensions.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise with suffix broadcasting: b's shape must equal a trailing part
// of a's shape (or a's, in which case the roles swap).
Tensor add(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Scalar factor);

Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

// Along the last axis, max-subtracted.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

// Normalizes over the last axis, then applies gain and bias of shape [D].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps = Scalar(1e-5));

// Rows of table[V, D] selected by ids -> [ids.size(), D].
Tensor embedding(const Tensor& table, std::span<const int> ids);
// One entry per row of x[..., V] -> x.shape without the last axis.
Tensor pick(const Tensor& x, std::span<const int> ids);

Tensor transpose(const Tensor& x, int axis0, int axis1);
// Positions where mask != 0 are replaced by value; mask.size() must divide
// x.numel() and is repeated over the leading elements.
Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, Scalar value);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_last(const Tensor& x);

Tensor concat(const Tensor& a, const Tensor& b, int axis);
// Slices along axis 0.
Tensor index_select(const Tensor& x, std::span<const int> indices);

// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, Scalar rate, std::mt19937_64& rng);

}  // namespace numkit
SEQRISK_END_NAMESPACE
