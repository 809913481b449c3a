#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace geomatch {

#ifdef GEOMATCH_SINGLE_PRECISION
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

// One vertex of the dynamically built computation graph. Inputs are owned so
// that a result keeps its history alive until it goes out of scope.
struct Node {
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  // Allocates (zero-filled) gradient storage on first use.
  std::vector<Scalar>& grad_buffer();
};

}  // namespace detail

/// Dense row-major array with optional participation in reverse-mode
/// differentiation. Copies are shallow: two copies refer to one buffer, which
/// is how parameters are shared between branches of a siamese network.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value);

  const Shape& shape() const;
  std::size_t rank() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const Scalar> values() const;
  // Direct write access; only optimizers and loaders should use this.
  std::span<Scalar> mutable_values();
  // Empty span when no gradient has been accumulated.
  std::span<const Scalar> grad() const;
  void zero_grad();

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  Scalar item() const;
  Scalar at(std::initializer_list<std::size_t> index) const;

  // New leaf holding a copy of the values, cut from any graph.
  Tensor detach() const;
  bool same_storage(const Tensor& other) const;

  // Runs reverse accumulation from this scalar.
  void backward() const;

  // Builds a graph node. When gradients are disabled or no input requires
  // them, the backward closure is dropped and the result is a plain leaf.
  static Tensor from_op(Shape shape, std::vector<Scalar> values,
                        const std::vector<Tensor>& inputs,
                        std::function<void(detail::Node&)> backward_fn, const char* op);

  detail::Node& node() const;

 private:
  friend class GradTape;
  explicit Tensor(std::shared_ptr<detail::Node> node);
  std::shared_ptr<detail::Node> node_;
};

/// Reverse topological record of the graph under a root; replaying it calls
/// each backward closure exactly once, after all of its consumers.
class GradTape {
 public:
  explicit GradTape(const Tensor& root);

  void backward();
  std::size_t size() const { return order_.size(); }

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<detail::Node*> order_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace geomatch
