#include "ovseg/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "ovseg/errors.hpp"

namespace ovseg {

namespace {
thread_local bool g_grad_enabled = true;
}

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

std::vector<double>& detail::Node::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    for (auto d : shape)
        if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
    auto n = std::make_shared<detail::Node>();
    n->value.assign(static_cast<size_t>(ovseg::numel(shape)), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (static_cast<int64_t>(values.size()) != ovseg::numel(shape))
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from({}, {v}); }

const Shape& Tensor::shape() const { return node_->shape; }

int64_t Tensor::dim(int64_t axis) const {
    const auto r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("axis out of range for " + shape_str(shape()));
    return shape()[static_cast<size_t>(axis)];
}

int64_t Tensor::numel() const { return static_cast<int64_t>(node_->value.size()); }

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
    if (static_cast<int64_t>(index.size()) != rank()) throw ShapeError("index rank mismatch");
    int64_t off = 0;
    size_t i = 0;
    for (auto v : index) {
        const auto d = shape()[i++];
        if (v < 0 || v >= d) throw ShapeError("index out of range");
        off = off * d + v;
    }
    return node_->value[static_cast<size_t>(off)];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
    if (numel() != 1) throw ShapeError("backward() needs a scalar, got " + shape_str(shape()));
    if (!requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            auto* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor Tensor::clone() const { return from(shape(), node_->value, requires_grad()); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor detail::make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                           std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool track = false;
    if (g_grad_enabled)
        for (const auto& p : parents)
            if (p.requires_grad()) track = true;
    if (track) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward = std::move(backward);
    }
    return Tensor(std::move(n));
}

}  // namespace ovseg
