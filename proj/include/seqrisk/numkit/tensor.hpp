#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "seqrisk/core.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace numkit {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor handle.
///
/// Copies share the underlying buffer; reshape() yields a view over the same
/// buffer (and the same gradient accumulator). Values are written once by the
/// producing op; only leaves (parameters, constants under construction) are
/// mutated afterwards.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad = false);

  static Tensor scalar(Scalar value);
  static Tensor full(Shape shape, Scalar value);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  // Negative axes count from the back.
  int dim(int axis) const;
  std::size_t numel() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  std::span<const Scalar> values() const;
  std::span<Scalar> mutable_values();
  Scalar item() const;
  std::vector<Scalar> to_vector() const;

  bool has_grad() const;
  std::span<const Scalar> grad() const;
  // Gradient accumulators are not part of the tensor's value, so they are
  // writable through const handles. Allocates zeros on first use.
  std::span<Scalar> mutable_grad() const;
  void zero_grad() const;

  Tensor reshape(Shape shape) const;
  // Independent copy without gradient tracking.
  Tensor detach() const;
  bool shares_storage(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  struct Storage {
    std::vector<Scalar> values;
    std::vector<Scalar> grad;
    bool requires_grad = false;
  };

  Shape shape_;
  std::shared_ptr<Storage> storage_;
};

}  // namespace numkit
SEQRISK_END_NAMESPACE
