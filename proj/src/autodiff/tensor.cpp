#include "microforge/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mf::ad {

namespace {
thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_next_seq = 1;
}  // namespace

std::size_t shape_size(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

std::span<double> Node::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    const std::size_t n = shape_size(shape);
    return from(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_size(shape) != values.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(values.size()));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    n->seq = t_next_seq++;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

std::size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("rows(): expected rank 2, got " + shape_str(shape()));
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("cols(): expected rank 2, got " + shape_str(shape()));
    return node_->shape[1];
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item(): tensor " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

bool Tensor::all_finite() const {
    return std::all_of(node_->value.begin(), node_->value.end(), [](double v) { return std::isfinite(v); });
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() noexcept { return t_grad_enabled; }

namespace detail {

NodePtr make_result(std::string kind, Shape shape, std::vector<double> value, std::vector<NodePtr> inputs) {
    auto n = std::make_shared<Node>();
    n->kind = std::move(kind);
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->seq = t_next_seq++;
    check_finite(*n);
    const bool needs = t_grad_enabled &&
                       std::any_of(inputs.begin(), inputs.end(), [](const NodePtr& p) { return p->requires_grad; });
    if (needs) {
        n->requires_grad = true;
        n->inputs = std::move(inputs);
    }
    return n;
}

void check_finite(const Node& n) {
    for (double v : n.value) {
        if (!std::isfinite(v)) throw NonFiniteError(n.kind + ": non-finite value in output " + shape_str(n.shape));
    }
}

}  // namespace detail

Tape::Tape(const Tensor& loss) : loss_(loss.node()) {
    if (!loss_) throw std::invalid_argument("backward: undefined loss tensor");
    if (loss_->value.size() != 1) {
        throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss_->shape));
    }
    if (loss_->consumed) throw std::logic_error("backward: graph already consumed by a previous backward pass");

    // Sequence numbers give a total order consistent with dependencies, so a
    // sort over the reachable set replaces a full topological search.
    std::vector<std::pair<std::uint64_t, NodePtr>> collected;
    std::vector<NodePtr> pending{loss_};
    while (!pending.empty()) {
        NodePtr n = std::move(pending.back());
        pending.pop_back();
        if (!n->backward_fn || n->marked) continue;
        n->marked = true;
        collected.emplace_back(n->seq, n);
        for (const auto& in : n->inputs) pending.push_back(in);
    }
    std::sort(collected.begin(), collected.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    ops_.reserve(collected.size());
    for (auto& [seq, n] : collected) {
        n->marked = false;
        ops_.push_back(std::move(n));
    }
}

void Tape::backward() {
    if (done_) throw std::logic_error("backward: tape already replayed");
    done_ = true;
    if (loss_->requires_grad) loss_->grad_buffer()[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        Node& n = **it;
        if (!n.grad.empty()) n.backward_fn(n);
    }
    for (auto& n : ops_) {
        n->backward_fn = nullptr;
        n->inputs.clear();
        n->grad.clear();
        n->grad.shrink_to_fit();
        n->consumed = true;
    }
    loss_->consumed = true;
}

void backward(const Tensor& loss) {
    Tape tape(loss);
    tape.backward();
}

}  // namespace mf::ad
