#include "seqrisk/numkit/tensor.hpp"

#include <algorithm>
#include <sstream>

SEQRISK_BEGIN_NAMESPACE
namespace numkit {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) : shape_(std::move(shape)), storage_(std::make_shared<Storage>()) {
  storage_->values.assign(shape_numel(shape_), Scalar(0));
  storage_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad)
    : shape_(std::move(shape)), storage_(std::make_shared<Storage>()) {
  if (shape_numel(shape_) != values.size()) {
    throw ShapeError("tensor of shape " + shape_string(shape_) + " given " + std::to_string(values.size()) +
                     " values");
  }
  storage_->values = std::move(values);
  storage_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(Scalar value) { return Tensor({1}, std::vector<Scalar>{value}); }

Tensor Tensor::full(Shape shape, Scalar value) {
  Tensor t(std::move(shape));
  std::fill(t.storage_->values.begin(), t.storage_->values.end(), value);
  return t;
}

int Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("axis out of range for shape " + shape_string(shape_));
  return shape_[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::numel() const { return storage_ ? storage_->values.size() : 0; }

bool Tensor::requires_grad() const { return storage_ && storage_->requires_grad; }

void Tensor::set_requires_grad(bool on) { storage_->requires_grad = on; }

std::span<const Scalar> Tensor::values() const { return storage_->values; }

std::span<Scalar> Tensor::mutable_values() { return storage_->values; }

Scalar Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
  return storage_->values[0];
}

std::vector<Scalar> Tensor::to_vector() const { return storage_->values; }

bool Tensor::has_grad() const { return storage_ && !storage_->grad.empty(); }

std::span<const Scalar> Tensor::grad() const { return storage_->grad; }

std::span<Scalar> Tensor::mutable_grad() const {
  if (storage_->grad.empty()) storage_->grad.assign(storage_->values.size(), Scalar(0));
  return storage_->grad;
}

void Tensor::zero_grad() const { storage_->grad.clear(); }

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Tensor view = *this;
  view.shape_ = std::move(shape);
  return view;
}

Tensor Tensor::detach() const { return Tensor(shape_, storage_->values); }

}  // namespace numkit
SEQRISK_END_NAMESPACE
