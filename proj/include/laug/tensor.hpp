#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <memory>

#include "laug/common.hpp"
#include "laug/rng.hpp"

namespace laug {

template <class Scalar>
struct TensorNode {
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  bool tracked = false;  // produced by an op recorded on the active tape
};

// Dense row-major N-d array. A Tensor is a cheap handle onto a shared node;
// op results are never mutated after creation. Parameters are updated in
// place through mutable_data() by their owning optimizer only.
template <class Scalar>
class Tensor {
 public:
  using Node = TensorNode<Scalar>;

  Tensor() : node_(std::make_shared<Node>()) {}

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : node_(std::make_shared<Node>()) {
    validate_shape(shape);
    node_->shape = std::move(shape);
    node_->value.assign(static_cast<std::size_t>(numel(node_->shape)), fill);
  }

  Tensor(Shape shape, std::vector<Scalar> data) : node_(std::make_shared<Node>()) {
    validate_shape(shape);
    if (numel(shape) != static_cast<std::int64_t>(data.size()))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(data);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), Scalar(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }
  static Tensor full(Shape shape, Scalar v) { return Tensor(std::move(shape), v); }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, double mean = 0.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.node_->value) v = static_cast<Scalar>(rng.normal(mean, stddev));
    return t;
  }

  static Tensor rand_uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.node_->value) v = static_cast<Scalar>(rng.uniform(lo, hi));
    return t;
  }

  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }

  const Scalar* data() const { return node_->value.data(); }
  Scalar* mutable_data() { return node_->value.data(); }
  const std::vector<Scalar>& values() const { return node_->value; }

  Scalar operator[](std::int64_t i) const { return node_->value[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<Scalar>& grad() const {
    if (node_->grad.empty()) throw ValueError("tensor has no gradient");
    return node_->grad;
  }
  Tensor grad_tensor() const { return Tensor(node_->shape, grad()); }
  void zero_grad() { node_->grad.clear(); }

  bool all_finite() const {
    for (Scalar v : node_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
  void ensure_finite(const char* what) const {
    if (!all_finite()) throw NumericalAbort(std::string(what) + ": non-finite values detected");
  }

  // value copy detached from any tape, never requiring grad
  Tensor detach_copy() const {
    Tensor t;
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    return t;
  }

  Tensor clone() const {
    Tensor t = detach_copy();
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<Node>& node() const { return node_; }

  // Eigen views over the flat row-major payload
  using MatMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using MutMatMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using VecMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

  MatMap mat(std::int64_t rows, std::int64_t cols) const {
    if (rows * cols != size())
      throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " incompatible with tensor " + shape_str(shape()));
    return MatMap(data(), rows, cols);
  }
  MutMatMap mut_mat(std::int64_t rows, std::int64_t cols) {
    return MutMatMap(mutable_data(), rows, cols);
  }
  VecMap vec() const { return VecMap(data(), size()); }

 private:
  static void validate_shape(const Shape& shape) {
    for (auto d : shape)
      if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
  }

  std::shared_ptr<Node> node_;
};

template <class Scalar>
std::vector<Scalar>& grad_buffer(TensorNode<Scalar>& node) {
  if (node.grad.empty()) node.grad.assign(node.value.size(), Scalar(0));
  return node.grad;
}

template <class Scalar>
bool tensors_bitwise_equal(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(Scalar) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace laug
