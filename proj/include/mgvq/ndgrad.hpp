#pragma once

// Dense row-major tensors with first-order reverse-mode differentiation.
//
// Every primitive records a node on its output when any input tracks
// gradients. backward() walks the recorded graph once in reverse
// topological order and accumulates gradients additively into every tracked
// tensor. Reductions and matmul accumulate in double regardless of the
// storage type.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mgvq::nd {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class OpKind {
    add,
    sub,
    mul,
    matmul,
    leaky_relu,
    reshape,
    concat_channel,
    slice_channel,
    reduce_mean,
    reduce_sum,
    square,
    sqrt,
    scalar_mul,
    add_scalar,
    tanh,
    gather,
    substitute,
};

std::string_view op_name(OpKind kind);

inline constexpr double kLeakySlope = 0.2;

// While alive, primitives on this thread record no graph nodes.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool active();

private:
    bool previous_;
};

template <class T>
class BasicTensor;

namespace detail {

template <class T>
struct Storage;

template <class T>
struct Node {
    OpKind kind;
    std::vector<std::shared_ptr<Storage<T>>> parents;
    // Receives the output storage (data and grad) and accumulates into parents.
    std::function<void(const Storage<T>& out)> backprop;
};

template <class T>
struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient is assigned
    bool requires_grad = false;
    std::shared_ptr<Node<T>> node;

    bool tracks() const { return requires_grad || node != nullptr; }
    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

}  // namespace detail

template <class T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor();
    BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static BasicTensor zeros(Shape shape, bool requires_grad = false);
    static BasicTensor full(Shape shape, T value, bool requires_grad = false);
    static BasicTensor scalar(T value) { return full({1}, value); }

    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const T> data() const { return impl_->data; }
    // Mutating data invalidates any graph already built through this tensor.
    std::span<T> mutable_data() { return impl_->data; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const T> grad() const { return impl_->grad; }
    std::span<T> mutable_grad() { return impl_->grad_buffer(); }
    void zero_grad() { impl_->grad.clear(); }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }
    bool tracks() const { return impl_->tracks(); }

    // Producing primitive; nullptr for leaves.
    const detail::Node<T>* node() const { return impl_->node.get(); }

    T item() const;

    // Same values, no graph history, no gradient tracking.
    BasicTensor detach() const;
    // Deep copy of values, preserving requires_grad but not the graph.
    BasicTensor clone() const;

    bool same_storage(const BasicTensor& other) const { return impl_ == other.impl_; }

    const std::shared_ptr<detail::Storage<T>>& storage() const { return impl_; }
    static BasicTensor wrap(std::shared_ptr<detail::Storage<T>> impl) { return BasicTensor(std::move(impl)); }

private:
    explicit BasicTensor(std::shared_ptr<detail::Storage<T>> impl) : impl_(std::move(impl)) {}

    std::shared_ptr<detail::Storage<T>> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Converts element type; the result is a fresh leaf.
template <class To, class From>
BasicTensor<To> cast(const BasicTensor<From>& t) {
    std::vector<To> out(t.data().begin(), t.data().end());
    return BasicTensor<To>(t.shape(), std::move(out), t.requires_grad());
}

// Primitives. All shapes must match exactly unless stated otherwise.
template <class T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
// (m x k) * (k x n)
template <class T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
// Gradient at exactly zero takes the negative-slope branch.
template <class T> BasicTensor<T> leaky_relu(const BasicTensor<T>& a, double slope = kLeakySlope);
template <class T> BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
// Concatenation / slicing along the last axis.
template <class T> BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts);
template <class T> BasicTensor<T> slice_channels(const BasicTensor<T>& a, std::size_t begin, std::size_t end);
template <class T> BasicTensor<T> mean(const BasicTensor<T>& a);
template <class T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <class T> BasicTensor<T> square(const BasicTensor<T>& a);
template <class T> BasicTensor<T> sqrt(const BasicTensor<T>& a);
template <class T> BasicTensor<T> scale(const BasicTensor<T>& a, double s);
template <class T> BasicTensor<T> add_scalar(const BasicTensor<T>& a, double s);
template <class T> BasicTensor<T> tanh(const BasicTensor<T>& a);
// out[i] = a[flat_index[i]]; backward scatter-adds. Covers row lookup,
// bias tiling and patch permutation.
template <class T> BasicTensor<T> gather(const BasicTensor<T>& a, std::span<const std::uint32_t> flat_index, Shape out_shape);
// Forward value of `value`, gradient routed unchanged to `grad_target`.
// `value` never receives gradient through this node.
template <class T> BasicTensor<T> substitute(const BasicTensor<T>& value, const BasicTensor<T>& grad_target);

// Attribute-carrying description of one primitive application.
struct PrimitiveOp {
    OpKind kind = OpKind::add;
    double slope = kLeakySlope;          // leaky_relu
    double scalar = 1.0;                 // scalar_mul, add_scalar
    std::size_t begin = 0, end = 0;      // slice_channel
    Shape shape;                         // reshape, gather
    std::vector<std::uint32_t> indices;  // gather
};

template <class T>
BasicTensor<T> forward(const PrimitiveOp& op, const std::vector<BasicTensor<T>>& inputs);

// Accumulates d(loss)/d(t) into every tracked tensor reachable from loss.
template <class T>
void backward(const BasicTensor<T>& loss);

// Max over coordinates of |analytic - central| / max(1e-8, |analytic| + |central|).
template <class T>
double grad_check(const std::function<BasicTensor<T>(const BasicTensor<T>&)>& f,
                  const BasicTensor<T>& x, double step);

}  // namespace mgvq::nd
