#include "geomatch/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "geomatch/errors.hpp"

namespace geomatch {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::vector<Scalar>& detail::Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), Scalar(0));
  return grad;
}

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {
  node_->shape = {};
  node_->value = {Scalar(0)};
}

Tensor::Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (shape_numel(shape) != values.size()) {
    throw InvalidArgument("tensor: shape " + shape_to_string(shape) + " holds " +
                          std::to_string(shape_numel(shape)) + " values, got " +
                          std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Scalar>(n, Scalar(0)), requires_grad);
}

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Scalar>(n, value), requires_grad);
}

Tensor Tensor::scalar(Scalar value) { return Tensor({}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::rank() const { return node_->shape.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw InvalidArgument("tensor: axis out of range");
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<const Scalar> Tensor::values() const { return node_->value; }
std::span<Scalar> Tensor::mutable_values() { return node_->value; }
std::span<const Scalar> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { node_->grad.clear(); }

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }

Scalar Tensor::item() const {
  if (numel() != 1) throw InvalidArgument("tensor: item() needs exactly one element");
  return node_->value[0];
}

Scalar Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw InvalidArgument("tensor: index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw InvalidArgument("tensor: index out of range");
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value, false); }

bool Tensor::same_storage(const Tensor& other) const { return node_ == other.node_; }

void Tensor::backward() const {
  if (numel() != 1) throw InvalidArgument("tensor: backward() needs a scalar root");
  GradTape tape(*this);
  tape.backward();
}

Tensor Tensor::from_op(Shape shape, std::vector<Scalar> values, const std::vector<Tensor>& inputs,
                       std::function<void(detail::Node&)> backward_fn, const char* op) {
  Tensor out(std::move(shape), std::move(values), false);
  out.node_->op = op;
  if (!g_grad_enabled) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->inputs.reserve(inputs.size());
  for (const auto& t : inputs) out.node_->inputs.push_back(t.node_);
  out.node_->backward_fn = std::move(backward_fn);
  return out;
}

detail::Node& Tensor::node() const { return *node_; }

GradTape::GradTape(const Tensor& root) : root_(root.node_) {
  // Iterative post-order DFS; reversing the post-order gives a valid
  // reverse topological order.
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root_.get(), 0);
  visited.insert(root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order_.begin(), order_.end());
}

void GradTape::backward() {
  if (!root_->requires_grad) return;
  root_->grad_buffer().assign(root_->value.size(), Scalar(1));
  for (detail::Node* node : order_) {
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace geomatch
