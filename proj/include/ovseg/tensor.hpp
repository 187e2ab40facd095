#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ovseg {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents that require grad.
    std::function<void(Node&)> backward;

    std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense row-major double tensor with optional reverse-mode gradient tracking.
///
/// Copies share the underlying node. Ops build a graph only while gradient
/// recording is enabled and at least one input requires grad.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int64_t rank() const { return static_cast<int64_t>(shape().size()); }
    // Negative axes count from the back.
    int64_t dim(int64_t axis) const;
    int64_t numel() const;

    std::span<const double> data() const;
    // Direct write access; only meaningful for leaves (inputs, parameters).
    std::span<double> mutable_data();
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    double item() const;
    double at(std::initializer_list<int64_t> index) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    void zero_grad();

    // Seeds d(this)/d(this) = 1 for a scalar and propagates to every leaf.
    void backward() const;

    // Same values, no history.
    Tensor detach() const;
    Tensor clone() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

namespace detail {

// Builds an op result. History is attached only when recording is on and some
// parent requires grad; otherwise `backward` is dropped.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward);

}  // namespace detail

}  // namespace ovseg
