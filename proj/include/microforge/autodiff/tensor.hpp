#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mf::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

/// Raised when operand extents do not conform for an op.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when an op produces NaN or Inf.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Graph node. Ops create one per output; leaves are created by the user.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until a gradient arrives
    bool requires_grad = false;
    bool consumed = false;     // set once a backward pass has run through it
    bool marked = false;       // scratch flag for tape construction
    std::uint64_t seq = 0;     // creation order, strictly increasing per thread
    std::string kind = "leaf";
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const noexcept { return kind == "leaf"; }
    /// Zero-initialised gradient buffer, allocated on first use.
    std::span<double> grad_buffer();
};

/// Dense row-major 64-bit tensor handle with shared ownership of its node.
///
/// Values are immutable once an op has produced them. Leaves (parameters)
/// may be updated in place by optimizers and checkpoint loading through
/// mutable_values().
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rows() const;
    std::size_t cols() const;
    std::size_t size() const { return node_->value.size(); }

    std::span<const double> values() const { return node_->value; }
    std::span<double> mutable_values() { return node_->value; }
    double item() const;
    double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->grad_buffer(); }
    void clear_grad() { node_->grad.clear(); }

    /// New leaf sharing no graph history (values copied).
    Tensor detach() const;
    bool all_finite() const;

    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled() noexcept;

/// Topologically ordered list of the recorded ops reachable from a loss.
class Tape {
public:
    explicit Tape(const Tensor& loss);

    std::size_t size() const noexcept { return ops_.size(); }
    /// Ops in forward (creation) order.
    const std::vector<NodePtr>& ops() const noexcept { return ops_; }

    /// Runs every backward rule once in reverse order, then releases the
    /// graph. Calling it a second time is an error.
    void backward();

private:
    NodePtr loss_;
    std::vector<NodePtr> ops_;
    bool done_ = false;
};

/// Reverse pass from a scalar loss. Leaf gradients accumulate across calls
/// until cleared; the recorded graph is consumed.
void backward(const Tensor& loss);

namespace detail {
/// Creates an op output node; records inputs only when a gradient can flow.
NodePtr make_result(std::string kind, Shape shape, std::vector<double> value,
                    std::vector<NodePtr> inputs);
void check_finite(const Node& n);
}  // namespace detail

}  // namespace mf::ad
