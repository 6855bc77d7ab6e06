#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tcaps {

#ifdef TCAPS_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

enum class Mode { train, eval };

namespace detail {

struct Node {
  Shape shape;
  std::vector<Real> values;
  std::vector<Real> grad;  // empty until first touched by backward
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward_fn;

  std::vector<Real>& grad_buffer() {
    if (grad.size() != values.size()) grad.assign(values.size(), Real(0));
    return grad;
  }
};

}  // namespace detail

// Dense row-major array that records the operations producing it so that
// backward() can differentiate a scalar with respect to its leaves.
//
// Copies share storage. Values of non-leaf tensors are never mutated after
// construction; leaves (parameters) may be updated in place by optimizers.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<Real> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const Real> values() const;
  // Leaves only.
  std::span<Real> mutable_values();
  Real item() const;
  Real at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const Real> grad() const;
  void zero_grad();

  // Same values, no history, no grad requirement.
  Tensor detach() const;

  std::uint64_t sequence() const;
  const char* op_name() const;

  // Construction helper for operation implementations; not for callers.
  static Tensor make_result(const char* op, Shape shape, std::vector<Real> values,
                            std::vector<Tensor> inputs,
                            std::function<void(detail::Node&)> backward_fn);
  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Accumulates d(loss)/d(leaf) into the grad buffer of every leaf that
// requires grad. Intermediate grads are recomputed from zero on every call,
// leaf grads accumulate across calls until zero_grad().
void backward(const Tensor& loss);

// Sequence numbers of the recorded operations reachable from `loss`, in the
// order backward() visits them (reverse creation order, each node once).
std::vector<std::uint64_t> tape_order(const Tensor& loss);

bool grad_enabled();

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---------------------------------------------------------------------------
// Operations. All are differentiable in every Tensor argument. Shapes must
// match exactly; the only broadcasts are the per-channel/per-column bias and
// scale vectors named in each signature.

// input [N,C,H,W], weight [F,C,kH,kW], bias [F] -> [N,F,H',W'].
// Cross-correlation with zero padding.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t padding);

struct BatchNormState {
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
  Real momentum = Real(0.9);
  Real eps = Real(1e-5);

  static BatchNormState for_channels(std::size_t channels);
};

// input [N,C,H,W], gamma/beta [C]. Train mode normalizes with the biased
// batch variance and folds the unbiased estimate into the running stats:
// running = momentum * running + (1 - momentum) * batch.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Mode mode);

// Gradient at exactly 0 is 1.
Tensor leaky_relu(const Tensor& input, Real slope);
// max(0, x); gradient at exactly 0 is 0.
Tensor relu(const Tensor& input);

// input [N,D], weight [D,E], bias [E] -> [N,E].
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
Tensor add_scalar(const Tensor& a, Real value);

Tensor reshape(const Tensor& t, Shape new_shape);

// Euclidean norm along `axis`; the axis is removed from the result shape.
Tensor l2_norm(const Tensor& t, std::size_t axis);
Tensor softmax(const Tensor& t, std::size_t axis);
// Sum along `axis`; the axis is removed from the result shape.
Tensor reduce_sum(const Tensor& t, std::size_t axis);
Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);

// Rows [begin, end) along axis 0.
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end);
// Concatenation along axis 0; trailing dims must agree.
Tensor concat_rows(const std::vector<Tensor>& parts);

// a, b [N,E] -> [N], Euclidean distance per row. Gradient at zero distance is 0.
Tensor row_distance(const Tensor& a, const Tensor& b);

}  // namespace tcaps
