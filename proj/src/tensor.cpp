#include "tcaps/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "tcaps/error.hpp"

namespace tcaps {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

void check_finite(const char* op, std::span<const Real> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream msg;
      msg << op << ": non-finite " << what << " at flat index " << i;
      fail(ErrorCode::numeric, msg.str());
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real(0), requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_values(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<Real> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) fail(ErrorCode::shape, "tensor dims must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    fail(ErrorCode::shape, "tensor of shape " + shape_string(shape) + " needs " +
                               std::to_string(shape_numel(shape)) + " values, got " +
                               std::to_string(values.size()));
  }
  check_finite("tensor", values, "value");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  node->leaf = true;
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

Tensor Tensor::make_result(const char* op, Shape shape, std::vector<Real> values,
                           std::vector<Tensor> inputs,
                           std::function<void(detail::Node&)> backward_fn) {
  check_finite(op, values, "value");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = op;
  node->leaf = false;
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node_);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const {
  if (!node_) fail(ErrorCode::invalid_argument, "use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    fail(ErrorCode::shape, "axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const Real> Tensor::values() const {
  shape();
  return node_->values;
}

std::span<Real> Tensor::mutable_values() {
  shape();
  if (!node_->leaf) fail(ErrorCode::invalid_argument, "only leaf tensors may be mutated");
  return node_->values;
}

Real Tensor::item() const {
  if (numel() != 1) fail(ErrorCode::shape, "item() on tensor of shape " + shape_string(shape()));
  return node_->values[0];
}

Real Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) fail(ErrorCode::shape, "index rank does not match " + shape_string(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) fail(ErrorCode::shape, "index out of range for " + shape_string(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->values[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && node_->leaf; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const Real> Tensor::grad() const {
  shape();
  if (!node_->requires_grad) fail(ErrorCode::invalid_argument, "tensor does not require grad");
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
}

Tensor Tensor::detach() const {
  return from_values(shape(), std::vector<Real>(node_->values), false);
}

std::uint64_t Tensor::sequence() const { return node_ ? node_->seq : 0; }
const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

namespace {

std::vector<detail::Node*> collect_tape(const Tensor& loss) {
  std::vector<detail::Node*> nodes;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{loss.node().get()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  // Producers always carry smaller sequence numbers than their consumers.
  std::sort(nodes.begin(), nodes.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });
  return nodes;
}

}  // namespace

void backward(const Tensor& loss) {
  if (!loss.defined()) fail(ErrorCode::invalid_argument, "backward on undefined tensor");
  if (loss.numel() != 1) {
    fail(ErrorCode::shape, "backward needs a single-element loss, got " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    fail(ErrorCode::invalid_argument, "backward: loss does not depend on any tensor requiring grad");
  }
  auto tape = collect_tape(loss);
  for (auto* n : tape) {
    if (!n->leaf) n->grad.assign(n->values.size(), Real(0));
  }
  loss.node()->grad_buffer()[0] += Real(1);
  for (auto* n : tape) {
    if (n->backward_fn) n->backward_fn(*n);
  }
  for (auto* n : tape) {
    if (n->leaf) check_finite("backward", n->grad, "gradient");
  }
}

std::vector<std::uint64_t> tape_order(const Tensor& loss) {
  std::vector<std::uint64_t> order;
  if (!loss.requires_grad()) return order;
  for (auto* n : collect_tape(loss)) {
    if (!n->leaf) order.push_back(n->seq);
  }
  return order;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::config: return "config";
    case ErrorCode::io: return "io";
    case ErrorCode::format: return "format";
    case ErrorCode::checksum: return "checksum";
    case ErrorCode::version: return "version";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::shape: return "shape";
    case ErrorCode::internal: return "internal";
  }
  return "unknown";
}

}  // namespace tcaps
